/** Flow control: every state change round-trips through the server; the
 * session id lives in the URL hash so reloading resumes the conversation. */

import { ApiError, DiagnosisApi } from "./api";
import { renderIntro, renderView } from "./render";
import { deriveView } from "./state";

export class App {
  constructor(
    private api: DiagnosisApi,
    private root: HTMLElement,
    private setHash: (h: string) => void = (h) => (location.hash = h),
  ) {}

  async boot(sessionId: string | null): Promise<void> {
    if (!sessionId) {
      renderIntro(this.root);
      this.wireIntro();
      return;
    }
    try {
      await this.refresh(sessionId);
    } catch {
      renderIntro(this.root);
      this.wireIntro();
    }
  }

  private wireIntro(): void {
    const go = this.root.querySelector("#start-session") as HTMLButtonElement | null;
    const input = this.root.querySelector("#phrase-input") as HTMLInputElement | null;
    if (!go || !input) return;
    go.addEventListener("click", () => void this.start(input.value));
    input.addEventListener("keydown", (ev) => {
      if ((ev as KeyboardEvent).key === "Enter") void this.start(input.value);
    });
  }

  async start(raw: string): Promise<void> {
    const phrases = raw
      .split(",")
      .map((p) => p.trim())
      .filter(Boolean);
    if (!phrases.length) return;
    try {
      const opened = await this.api.openSession(phrases);
      if (opened.unmapped.length && opened.mapped.length === 0) {
        renderIntro(this.root, opened.unmapped);
        this.wireIntro();
        return;
      }
      this.setHash(opened.session_id);
      await this.advance(opened.session_id);
    } catch (err) {
      if (err instanceof ApiError) {
        renderIntro(this.root, phrases);
        this.wireIntro();
        return;
      }
      throw err;
    }
  }

  /** Fetch suggestions when collecting, then re-render from the transcript. */
  async advance(sessionId: string): Promise<void> {
    const t0 = await this.api.transcript(sessionId);
    if (t0.status === "collecting") {
      await this.api.suggestions(sessionId);
    }
    await this.refresh(sessionId);
  }

  async refresh(sessionId: string): Promise<void> {
    const transcript = await this.api.transcript(sessionId);
    const view = deriveView(transcript);
    renderView(this.root, view);
    if (view.pending) this.wireSelection(sessionId);
  }

  private wireSelection(sessionId: string): void {
    const submit = this.root.querySelector("#submit-selection") as HTMLButtonElement | null;
    if (!submit) return;
    submit.addEventListener("click", () => void this.submitSelection(sessionId));
  }

  async submitSelection(sessionId: string): Promise<void> {
    const boxes = Array.from(
      this.root.querySelectorAll<HTMLInputElement>("input[type=checkbox]"),
    );
    const selected = boxes.filter((b) => b.checked).map((b) => b.value);
    await this.api.answer(sessionId, selected);
    await this.advance(sessionId);
  }
}

export function mount(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app root");
  const api = new DiagnosisApi("");
  const app = new App(api, root);
  const sessionId = location.hash.replace(/^#/, "") || null;
  void app.boot(sessionId);
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mount();
}
