/** Presentation helpers for the trace panel: unit formatting only.
 *
 * Every number shown comes straight from the service trace; the client never
 * derives timings of its own.
 */

import { QueryTrace } from "./api.js";

export function formatMs(value: number): string {
  return `${value.toFixed(1)} ms`;
}

export interface TraceLine {
  label: string;
  value: string;
}

export function traceLines(trace: QueryTrace): TraceLine[] {
  const lines: TraceLine[] = [
    { label: "inference", value: formatMs(trace.inference_ms) },
    { label: "data lookup", value: formatMs(trace.data_lookup_ms) },
    { label: "backend logic", value: formatMs(trace.backend_logic_ms) },
    { label: "cache", value: trace.cache_hit ? "hit" : "miss" },
  ];
  for (const record of trace.calls) {
    lines.push({
      label: record.error ? "call (failed)" : "call",
      value: record.error ? `${record.call} — ${record.error}` : record.call,
    });
  }
  return lines;
}
