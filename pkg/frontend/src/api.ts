/** Typed client for the diagnosis service; these five endpoints are the
 * only request paths the UI ever touches. */

export interface SymptomRef {
  id: string;
  index: number;
}

export interface DiseaseProb {
  disease: string;
  index: number;
  probability: number;
}

export interface OpenResponse {
  session_id: string;
  mapped: SymptomRef[];
  unmapped: string[];
}

export interface SuggestionsResponse {
  round: number;
  status: string;
  suggestions: { id: string; index: number; name: string }[];
}

export interface AnswerResponse {
  status: string;
  round: number;
  confidence: number | null;
  low_confidence: boolean;
  top: DiseaseProb[];
}

export interface Transcript {
  session_id: string;
  status: string;
  round: number;
  max_rounds: number;
  symptoms: SymptomRef[];
  shown: SymptomRef[][];
  selections: SymptomRef[][];
  confidence: number | null;
  low_confidence: boolean;
  top: DiseaseProb[];
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const res = await fetch(base + path, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (typeof body.detail === "string") detail = body.detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export class DiagnosisApi {
  constructor(private base: string = "") {}

  openSession(phrases: string[]): Promise<OpenResponse> {
    return request(this.base, "/api/session", {
      method: "POST",
      body: JSON.stringify({ phrases }),
    });
  }

  suggestions(sessionId: string): Promise<SuggestionsResponse> {
    return request(this.base, `/api/session/${sessionId}/suggestions`);
  }

  answer(sessionId: string, selected: string[]): Promise<AnswerResponse> {
    return request(this.base, `/api/session/${sessionId}/answer`, {
      method: "POST",
      body: JSON.stringify({ selected }),
    });
  }

  transcript(sessionId: string): Promise<Transcript> {
    return request(this.base, `/api/session/${sessionId}`);
  }

  health(): Promise<{ status: string }> {
    return request(this.base, "/healthz");
  }
}
