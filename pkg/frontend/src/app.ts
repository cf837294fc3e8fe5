/** DOM wiring for the single-page app: map left, chat right, buttons below.
 *
 * All state flows through ChatSession; answer text goes into the DOM via
 * textContent so the service response stays verbatim, markup and all.
 */

import { ApiClient, LocationNotFound, TemplateInfo } from "./api.js";
import { MapSelection, mountMap } from "./map.js";
import { ChatEntry, ChatSession } from "./state.js";
import { traceLines } from "./trace.js";

// Default slot fills for predefined questions; {location} comes from the map.
const SLOT_DEFAULTS: Record<string, string> = {
  category: "hospital",
  mode: "drive",
  metric: "distance",
};

export function fillSlots(text: string, location?: string): string {
  let result = text;
  for (const [slot, value] of Object.entries(SLOT_DEFAULTS)) {
    result = result.split(`{${slot}}`).join(value);
  }
  if (location) {
    result = result.split("{location}").join(location);
  }
  return result;
}

export interface AppHandle {
  session: ChatSession;
  ready: Promise<void>;
  selection: () => MapSelection | null;
  elements: {
    chatLog: HTMLElement;
    input: HTMLInputElement;
    form: HTMLFormElement;
    buttons: HTMLElement;
    mapSvg: SVGSVGElement;
    mapLabel: HTMLElement;
    status: HTMLElement;
  };
}

export function initApp(root: HTMLElement, client: ApiClient): AppHandle {
  const doc = root.ownerDocument;
  root.innerHTML = `
    <div class="pane" id="map-pane">
      <h2>Region map</h2>
      <svg id="map" role="button" aria-label="region map"></svg>
      <div id="map-label" class="muted">click the map to pick a place</div>
    </div>
    <div class="pane" id="chat-pane">
      <h2>Ask about access to services</h2>
      <div id="chat-log" aria-live="polite"></div>
      <form id="ask-form">
        <input id="question-input" autocomplete="off"
               placeholder="e.g. What is the nearest hospital from Durango?" />
        <button type="submit">Ask</button>
      </form>
      <div id="template-buttons"></div>
      <div id="status-bar" class="muted"></div>
    </div>`;

  const chatLog = root.querySelector("#chat-log") as HTMLElement;
  const input = root.querySelector("#question-input") as HTMLInputElement;
  const form = root.querySelector("#ask-form") as HTMLFormElement;
  const buttons = root.querySelector("#template-buttons") as HTMLElement;
  const mapSvg = root.querySelector("#map") as SVGSVGElement;
  const mapLabel = root.querySelector("#map-label") as HTMLElement;
  const status = root.querySelector("#status-bar") as HTMLElement;

  let selection: MapSelection | null = null;
  let activeTemplate: TemplateInfo | null = null;

  const session = new ChatSession(client, () => {
    renderChat(chatLog, session.entries, doc);
    status.textContent = session.busy ? "thinking..." : "";
  });

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const question = input.value;
    if (!question.trim()) {
      return;
    }
    input.value = "";
    session.submit(question, selection?.point);
    void session.settle().then(() => {
      const last = session.entries[session.entries.length - 1];
      if (last && last.role === "error") {
        input.value = last.text; // preserve the input for a retry
      }
    });
  });

  mountMap(mapSvg, (point) => {
    void client
      .geocode(point.lat, point.lon)
      .then((place) => {
        selection = { point: { lat: place.lat, lon: place.lon }, name: place.name };
        mapLabel.textContent = place.name;
        mapLabel.classList.remove("muted");
        if (activeTemplate) {
          input.value = fillSlots(activeTemplate.text, selection.name);
        }
      })
      .catch((err) => {
        if (err instanceof LocationNotFound) {
          mapLabel.textContent = "no known place there";
          mapLabel.classList.add("muted");
          return;
        }
        throw err;
      });
  });

  const ready = client
    .templates()
    .then((templates) => {
      for (const template of templates) {
        const button = doc.createElement("button");
        button.type = "button";
        button.className = "template-button";
        button.dataset.templateId = template.id;
        button.textContent = fillSlots(template.text, selection?.name);
        button.addEventListener("click", () => {
          activeTemplate = template;
          input.value = fillSlots(template.text, selection?.name);
          input.focus();
        });
        buttons.appendChild(button);
      }
    })
    .catch(() => {
      status.textContent = "service unavailable: template buttons disabled";
    });

  return {
    session,
    ready,
    selection: () => selection,
    elements: { chatLog, input, form, buttons, mapSvg, mapLabel, status },
  };
}

const ROLE_LABEL: Record<ChatEntry["role"], string> = {
  user: "you",
  assistant: "assistant",
  "system-refusal": "refused",
  error: "error",
};

function renderChat(log: HTMLElement, entries: ChatEntry[], doc: Document): void {
  log.innerHTML = "";
  for (const entry of entries) {
    const item = doc.createElement("div");
    item.className = `entry entry-${entry.role}`;

    const label = doc.createElement("span");
    label.className = "role";
    label.textContent = ROLE_LABEL[entry.role];
    item.appendChild(label);

    const text = doc.createElement("p");
    text.className = "text";
    text.textContent = entry.text; // verbatim, never interpreted as markup
    item.appendChild(text);

    if (entry.reason) {
      const reason = doc.createElement("p");
      reason.className = "reason muted";
      reason.textContent = entry.reason;
      item.appendChild(reason);
    }

    if (entry.trace) {
      const details = doc.createElement("details"); // collapsed by default
      const summary = doc.createElement("summary");
      summary.textContent = entry.trace.cache_hit
        ? "trace (cached)"
        : "trace";
      details.appendChild(summary);
      const list = doc.createElement("dl");
      for (const line of traceLines(entry.trace)) {
        const term = doc.createElement("dt");
        term.textContent = line.label;
        const value = doc.createElement("dd");
        value.textContent = line.value;
        list.appendChild(term);
        list.appendChild(value);
      }
      details.appendChild(list);
      item.appendChild(details);
    }
    log.appendChild(item);
  }
  log.scrollTop = log.scrollHeight;
}
