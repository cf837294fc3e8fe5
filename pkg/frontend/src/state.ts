/** Chat session state: ordered entries, one in-flight query, client-side queue.
 *
 * Assistant text is always the service response body verbatim; this module
 * never invents or rewrites answer content.
 */

import {
  ApiClient,
  QueryResponse,
  QueryTrace,
  ServiceUnavailable,
} from "./api.js";

export type Role = "user" | "assistant" | "system-refusal" | "error";

export interface ChatEntry {
  role: Role;
  text: string;
  trace?: QueryTrace;
  reason?: string; // refusal reason or retry hint
}

export interface PendingQuestion {
  question: string;
  point?: { lat: number; lon: number };
}

export class ChatSession {
  readonly entries: ChatEntry[] = [];
  private queue: PendingQuestion[] = [];
  private inflight = false;

  constructor(
    private readonly client: ApiClient,
    private readonly onChange: () => void = () => {},
  ) {}

  get busy(): boolean {
    return this.inflight || this.queue.length > 0;
  }

  /** Queue a question; at most one request is ever in flight. */
  submit(question: string, point?: { lat: number; lon: number }): void {
    const trimmed = question.trim();
    if (!trimmed) {
      return;
    }
    this.entries.push({ role: "user", text: trimmed });
    this.queue.push({ question: trimmed, point });
    this.onChange();
    void this.pump();
  }

  /** Resolves once everything queued so far has been answered. */
  async settle(): Promise<void> {
    while (this.busy) {
      await new Promise((resolve) => setTimeout(resolve, 10));
    }
  }

  private async pump(): Promise<void> {
    if (this.inflight) {
      return;
    }
    const next = this.queue.shift();
    if (!next) {
      return;
    }
    this.inflight = true;
    try {
      const response = await this.client.query(next.question, next.point);
      this.entries.push(entryFor(response));
    } catch (err) {
      if (err instanceof ServiceUnavailable) {
        this.entries.push({
          role: "error",
          text: next.question,
          reason: `request failed, try again: ${err.message}`,
        });
      } else {
        throw err;
      }
    } finally {
      this.inflight = false;
      this.onChange();
    }
    void this.pump();
  }
}

function entryFor(response: QueryResponse): ChatEntry {
  const verdict = response.trace.guardrail?.verdict ?? "allowed";
  if (verdict !== "allowed") {
    return {
      role: "system-refusal",
      text: response.answer,
      trace: response.trace,
      reason: response.trace.guardrail?.reason ?? verdict,
    };
  }
  return { role: "assistant", text: response.answer, trace: response.trace };
}
