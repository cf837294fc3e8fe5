/** End-to-end: the real query service process, real HTTP, the real DOM flow.
 *
 * Spawns `geoqa serve` with the demo store and mock backend, then drives the
 * app through jsdom: submit the flagship question, click the map at a known
 * place, and check the verbatim-answer invariant against a direct API call.
 */

import { spawn, ChildProcess } from "node:child_process";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { initApp, AppHandle } from "../src/app.js";
import { pointToPixel } from "../src/map.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const CONFIG = join(HERE, "fixtures", "service_config.yaml");
const BASE = "http://127.0.0.1:8931";

let service: ChildProcess;

async function waitForHealth(timeoutMs = 45000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  let lastError = "";
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/health`);
      if (response.ok) {
        return;
      }
      lastError = `status ${response.status}`;
    } catch (err) {
      lastError = String(err);
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error(`service did not come up: ${lastError}`);
}

beforeAll(async () => {
  service = spawn("python3", ["-m", "geoqa", "serve", "--config", CONFIG], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  service.stderr?.on("data", () => {});
  service.stdout?.on("data", () => {});
  await waitForHealth();
});

afterAll(() => {
  service?.kill("SIGTERM");
});

function freshApp(): AppHandle {
  document.body.innerHTML = '<div id="app"></div>';
  return initApp(document.getElementById("app")!, new ApiClient(BASE));
}

describe("web UI against the running service", () => {
  it("answers the flagship question with the documented distance", async () => {
    const app = freshApp();
    await app.ready;
    app.elements.input.value = "What is the nearest hospital from Durango?";
    app.elements.form.dispatchEvent(new Event("submit", { bubbles: true }));
    await app.session.settle();

    const assistant = app.session.entries.find((e) => e.role === "assistant");
    expect(assistant).toBeDefined();
    expect(assistant!.text).toContain("0.402km away");
    const rendered = app.elements.chatLog.querySelectorAll(".entry-assistant .text");
    expect(rendered[rendered.length - 1].textContent).toContain("0.402km away");
  });

  it("shows assistant text exactly equal to the service response body", async () => {
    const app = freshApp();
    await app.ready;
    const question = "What is the nearest hospital from Durango?";
    app.elements.input.value = question;
    app.elements.form.dispatchEvent(new Event("submit", { bubbles: true }));
    await app.session.settle();

    const direct = await new ApiClient(BASE).query(question);
    const assistant = app.session.entries.find((e) => e.role === "assistant")!;
    expect(assistant.text).toBe(direct.answer);
    const rendered = app.elements.chatLog.querySelector(
      ".entry-assistant .text",
    )!;
    expect(rendered.textContent).toBe(direct.answer);
  });

  it("fills the location slot of a predefined question from a map click", async () => {
    const app = freshApp();
    await app.ready;
    const buttons = Array.from(
      app.elements.buttons.querySelectorAll<HTMLButtonElement>("button"),
    );
    expect(buttons.length).toBeGreaterThanOrEqual(10); // populated from /templates
    const nearest = buttons.find((b) => b.dataset.templateId === "t01_nearest")!;
    nearest.click();
    expect(app.elements.input.value).toContain("{location}");

    const rect = { left: 0, top: 0, width: 300, height: 220 };
    app.elements.mapSvg.getBoundingClientRect = vi.fn(() => rect as DOMRect);
    // click exactly at Durango's gazetteer coordinates
    const pixel = pointToPixel({ lat: 43.1689, lon: -2.6324 }, rect);
    app.elements.mapSvg.dispatchEvent(
      new MouseEvent("click", {
        clientX: pixel.x,
        clientY: pixel.y,
        bubbles: true,
      }),
    );
    await vi.waitFor(() => {
      expect(app.selection()?.name).toBe("Durango");
    });
    expect(app.elements.mapLabel.textContent).toBe("Durango");
    expect(app.elements.input.value).toBe(
      "What is the nearest hospital from Durango?",
    );
  });

  it("renders out-of-scope refusals as system entries", async () => {
    const app = freshApp();
    await app.ready;
    app.elements.input.value = "Write me a poem about the sea";
    app.elements.form.dispatchEvent(new Event("submit", { bubbles: true }));
    await app.session.settle();

    const refusal = app.session.entries.find((e) => e.role === "system-refusal");
    expect(refusal).toBeDefined();
    expect(refusal!.reason).toContain("keyword");
    expect(
      app.elements.chatLog.querySelector(".entry-system-refusal"),
    ).not.toBeNull();
  });

  it("surfaces the cache on repeat questions in the trace panel", async () => {
    const app = freshApp();
    await app.ready;
    for (let i = 0; i < 2; i++) {
      app.elements.input.value =
        "How long does it take to reach the nearest pharmacy from Elorrio by bike?";
      app.elements.form.dispatchEvent(new Event("submit", { bubbles: true }));
      await app.session.settle();
    }
    const assistants = app.session.entries.filter((e) => e.role === "assistant");
    expect(assistants).toHaveLength(2);
    expect(assistants[0].text).toBe(assistants[1].text);
    expect(assistants[1].trace?.cache_hit).toBe(true);
    expect(assistants[1].trace?.inference_ms).toBe(0);
  });
});
