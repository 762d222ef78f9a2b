/** View derivation: the rendered state is a pure function of the server
 * transcript, so a page refresh mid-session reconstructs the same view. */

import type { DiseaseProb, SymptomRef, Transcript } from "./api";

export interface RoundView {
  shown: SymptomRef[];
  selected: SymptomRef[];
  answered: boolean;
}

export interface SessionView {
  sessionId: string;
  status: "collecting" | "diagnosed" | "exhausted";
  round: number;
  maxRounds: number;
  evidence: SymptomRef[];
  rounds: RoundView[];
  pending: SymptomRef[] | null; // suggestions awaiting an answer
  confidence: number | null;
  lowConfidence: boolean;
  top: DiseaseProb[];
}

export function deriveView(t: Transcript): SessionView {
  const rounds: RoundView[] = [];
  for (let i = 0; i < t.shown.length; i++) {
    const answered = i < t.selections.length;
    rounds.push({
      shown: t.shown[i],
      selected: answered ? t.selections[i] : [],
      answered,
    });
  }
  let pending: SymptomRef[] | null = null;
  if (t.status === "collecting" && t.shown.length === t.round + 1) {
    pending = t.shown[t.shown.length - 1];
    rounds.pop();
  }
  return {
    sessionId: t.session_id,
    status: t.status as SessionView["status"],
    round: t.round,
    maxRounds: t.max_rounds,
    evidence: t.symptoms,
    rounds,
    pending,
    confidence: t.confidence,
    lowConfidence: t.low_confidence,
    top: t.top,
  };
}

export function formatProbability(p: number): string {
  return p.toFixed(3);
}

/** Diagnosis is displayable once the session has left the collecting state. */
export function isFinal(view: SessionView): boolean {
  return view.status === "diagnosed" || view.status === "exhausted";
}

export function probabilitySum(top: DiseaseProb[]): number {
  return top.reduce((acc, t) => acc + t.probability, 0);
}
