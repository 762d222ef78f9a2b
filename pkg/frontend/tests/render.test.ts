import { beforeEach, describe, expect, it } from "vitest";

import type { Transcript } from "../src/api";
import { renderDiagnosis, renderIntro, renderView } from "../src/render";
import { deriveView } from "../src/state";

function finished(lowConfidence: boolean, status = "diagnosed"): Transcript {
  return {
    session_id: "x",
    status,
    round: 2,
    max_rounds: 5,
    symptoms: [{ id: "s0", index: 0 }],
    shown: [[{ id: "s1", index: 1 }]],
    selections: [[{ id: "s1", index: 1 }]],
    confidence: lowConfidence ? 0.31 : 0.92,
    low_confidence: lowConfidence,
    top: [
      { disease: "d2", index: 2, probability: 0.612345 },
      { disease: "d0", index: 0, probability: 0.3 },
    ],
  };
}

describe("renderDiagnosis", () => {
  beforeEach(() => {
    document.body.innerHTML = "<div id='app'></div>";
  });

  it("confident diagnosis has no banner", () => {
    const box = renderDiagnosis(deriveView(finished(false)));
    expect(box.querySelector("#low-confidence-banner")).toBeNull();
  });

  it("forced exit shows the banner", () => {
    const box = renderDiagnosis(deriveView(finished(true)));
    expect(box.querySelector("#low-confidence-banner")).not.toBeNull();
  });

  it("probabilities render to three decimals matching the payload", () => {
    const box = renderDiagnosis(deriveView(finished(false)));
    const rows = Array.from(box.querySelectorAll<HTMLElement>(".bar-row"));
    expect(rows.map((r) => r.dataset.probability)).toEqual(["0.612", "0.300"]);
    expect(rows.map((r) => r.dataset.disease)).toEqual(["d2", "d0"]);
  });

  it("rendered bars sum to at most one", () => {
    const box = renderDiagnosis(deriveView(finished(false)));
    const total = Array.from(box.querySelectorAll<HTMLElement>(".bar-row"))
      .map((r) => Number(r.dataset.probability))
      .reduce((a, b) => a + b, 0);
    expect(total).toBeLessThanOrEqual(1.0 + 1e-9);
  });
});

describe("renderView", () => {
  beforeEach(() => {
    document.body.innerHTML = "<div id='app'></div>";
  });

  it("pending suggestions render as toggles plus a continue button", () => {
    const root = document.getElementById("app")!;
    const t = finished(false);
    t.status = "collecting";
    t.round = 1;
    t.shown = [[{ id: "s1", index: 1 }], [{ id: "s3", index: 3 }, { id: "s4", index: 4 }]];
    renderView(root, deriveView(t));
    const boxes = root.querySelectorAll("input[type=checkbox]");
    expect(boxes).toHaveLength(2);
    expect(root.querySelector("#submit-selection")).not.toBeNull();
    expect(root.querySelector("#diagnosis")).toBeNull();
  });

  it("final view renders the diagnosis block", () => {
    const root = document.getElementById("app")!;
    renderView(root, deriveView(finished(false)));
    expect(root.querySelector("#diagnosis")).not.toBeNull();
  });

  it("intro surfaces unmapped phrases for rewording", () => {
    const root = document.getElementById("app")!;
    renderIntro(root, ["martian flu"]);
    const warn = root.querySelector("#unmapped-warning");
    expect(warn?.textContent).toContain("martian flu");
    expect(root.querySelector("#start-session")).not.toBeNull();
  });
});
