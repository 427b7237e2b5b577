// Typed client for the listening-service JSON/WAV endpoints.

export interface TrialDescriptor {
  number: number;
  intervals: string[];
  reference_interval: number;
  selectable_intervals: number[];
  inter_stimulus_gap_s: number;
  reversals_at_final_step: number;
  reversals_needed: number;
}

export type SessionStatus = "awaiting_response" | "finished" | "aborted";

export interface SessionState {
  session_id: string;
  status: SessionStatus;
  completed_trials: number;
  condition: Record<string, number>;
  trial?: TrialDescriptor;
  threshold_db?: number;
}

export interface ResponseFeedback {
  trial: number;
  chosen: number;
  correct: boolean;
  status: SessionStatus;
  next_trial?: TrialDescriptor;
  threshold_db?: number;
  reversals_at_final_step?: number;
  reversals_needed?: number;
}

export interface StartSessionRequest {
  experiment: string;
  ipd: string;
  tuning: string;
  seed?: number;
}

/** Everything the track flow needs from the backend. */
export interface ServiceApi {
  startSession(req: StartSessionRequest): Promise<SessionState>;
  getSession(sessionId: string): Promise<SessionState>;
  postResponse(
    sessionId: string,
    trial: number,
    chosen: number,
  ): Promise<ResponseFeedback>;
  audioUrl(path: string): string;
  noiseUrl(): string;
}

export class HttpServiceApi implements ServiceApi {
  constructor(private baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) {
      throw new Error(`${path} failed: ${response.status}`);
    }
    return (await response.json()) as T;
  }

  startSession(req: StartSessionRequest): Promise<SessionState> {
    return this.request<SessionState>("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  getSession(sessionId: string): Promise<SessionState> {
    return this.request<SessionState>(`/sessions/${sessionId}`);
  }

  postResponse(
    sessionId: string,
    trial: number,
    chosen: number,
  ): Promise<ResponseFeedback> {
    return this.request<ResponseFeedback>(`/sessions/${sessionId}/response`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ trial, chosen }),
    });
  }

  audioUrl(path: string): string {
    return this.baseUrl + path;
  }

  noiseUrl(): string {
    return this.baseUrl + "/noise.wav";
  }
}
