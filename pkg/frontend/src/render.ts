/** DOM rendering: rebuilt wholesale from the view on every state change. */

import type { SessionView } from "./state";
import { formatProbability, isFinal } from "./state";

export function renderView(root: HTMLElement, view: SessionView | null, error?: string): void {
  root.replaceChildren();
  if (error) {
    const e = el("div", "error");
    e.textContent = error;
    root.appendChild(e);
  }
  if (!view) return;

  const evidence = el("div", "evidence");
  evidence.appendChild(heading(`Reported symptoms (round ${view.round}/${view.maxRounds})`));
  const chips = el("div", "chips");
  for (const s of view.evidence) chips.appendChild(chip(s.id, "evidence-chip"));
  evidence.appendChild(chips);
  root.appendChild(evidence);

  view.rounds.forEach((round, i) => {
    const sec = el("div", "round");
    sec.appendChild(heading(`Round ${i + 1}`));
    const shown = el("div", "chips");
    const picked = new Set(round.selected.map((s) => s.id));
    for (const s of round.shown) {
      shown.appendChild(chip(s.id, picked.has(s.id) ? "chip picked" : "chip"));
    }
    if (round.shown.length === 0) {
      shown.appendChild(chip("(no suggestions)", "chip muted"));
    }
    sec.appendChild(shown);
    root.appendChild(sec);
  });

  if (view.pending) {
    const ask = el("div", "ask");
    ask.appendChild(heading("Do any of these apply?"));
    const box = el("div", "chips");
    for (const s of view.pending) {
      const label = el("label", "chip toggle") as HTMLLabelElement;
      const input = document.createElement("input");
      input.type = "checkbox";
      input.value = s.id;
      input.dataset.symptom = s.id;
      label.appendChild(input);
      label.appendChild(document.createTextNode(s.id));
      box.appendChild(label);
    }
    ask.appendChild(box);
    const none = document.createElement("button");
    none.id = "submit-selection";
    none.textContent = "Continue";
    ask.appendChild(none);
    root.appendChild(ask);
  }

  if (isFinal(view)) {
    root.appendChild(renderDiagnosis(view));
  }
}

export function renderDiagnosis(view: SessionView): HTMLElement {
  const box = el("div", "diagnosis");
  box.id = "diagnosis";
  if (view.lowConfidence) {
    const banner = el("div", "banner low-confidence");
    banner.id = "low-confidence-banner";
    banner.textContent =
      view.status === "exhausted"
        ? "No more questions available; confidence is low."
        : "Round limit reached; confidence is low.";
    box.appendChild(banner);
  }
  box.appendChild(heading("Likely conditions"));
  const list = el("div", "bars");
  for (const t of view.top) {
    const row = el("div", "bar-row");
    row.dataset.disease = t.disease;
    row.dataset.probability = formatProbability(t.probability);
    const name = el("span", "bar-name");
    name.textContent = t.disease;
    const bar = el("span", "bar");
    bar.style.width = `${Math.round(t.probability * 100)}%`;
    const val = el("span", "bar-value");
    val.textContent = formatProbability(t.probability);
    row.append(name, bar, val);
    list.appendChild(row);
  }
  box.appendChild(list);
  const conf = el("div", "confidence");
  conf.id = "confidence";
  conf.textContent =
    view.confidence === null ? "" : `confidence ${formatProbability(view.confidence)}`;
  box.appendChild(conf);
  return box;
}

export function renderIntro(root: HTMLElement, unmapped: string[] = []): void {
  root.replaceChildren();
  const box = el("div", "intro");
  box.appendChild(heading("Describe your symptoms"));
  if (unmapped.length) {
    const warn = el("div", "error");
    warn.id = "unmapped-warning";
    warn.textContent = `Not recognized: ${unmapped.join(", ")}. Try different wording.`;
    box.appendChild(warn);
  }
  const input = document.createElement("input");
  input.id = "phrase-input";
  input.placeholder = "e.g. fever, headache, runny nose";
  const go = document.createElement("button");
  go.id = "start-session";
  go.textContent = "Start";
  box.append(input, go);
  root.appendChild(box);
}

function el(tag: string, cls: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = cls;
  return node;
}

function chip(text: string, cls: string): HTMLElement {
  const node = el("span", cls);
  node.textContent = text;
  return node;
}

function heading(text: string): HTMLElement {
  const h = el("h3", "");
  h.textContent = text;
  return h;
}
