// In-memory stand-in for the listening service, mirroring its staircase
// rules (1-up/2-down, steps 5 -> 2 -> 1, done after eight 1-dB
// reversals, threshold = mean level over those last eight reversals).

import type {
  ResponseFeedback,
  ServiceApi,
  SessionState,
  StartSessionRequest,
  TrialDescriptor,
} from "../src/api.js";

interface Reversal {
  level: number;
  step: number;
}

export class MockService implements ServiceApi {
  level = 65;
  step = 5;
  private consecutiveCorrect = 0;
  private lastDirection: "up" | "down" | null = null;
  private reversals: Reversal[] = [];
  trialNumber = 1;
  status: SessionState["status"] = "awaiting_response";
  thresholdDb: number | null = null;
  responseCount = 0;

  /** target interval (2 or 3) per trial, deterministic for the tests */
  targetInterval(trial: number): number {
    return 2 + ((trial * 7) % 2);
  }

  private descriptor(): TrialDescriptor {
    const n = this.trialNumber;
    return {
      number: n,
      intervals: [1, 2, 3].map(
        (k) => `/sessions/mock/trial/${n}/interval/${k}.wav`,
      ),
      reference_interval: 1,
      selectable_intervals: [2, 3],
      inter_stimulus_gap_s: 0,
      reversals_at_final_step:
        this.reversals.filter((r) => r.step === 1).length,
      reversals_needed: 8,
    };
  }

  state(): SessionState {
    const state: SessionState = {
      session_id: "mock",
      status: this.status,
      completed_trials: this.trialNumber - 1,
      condition: { f0: 40, mistuning: 0 },
    };
    if (this.status === "awaiting_response") {
      state.trial = this.descriptor();
    }
    if (this.status === "finished" && this.thresholdDb !== null) {
      state.threshold_db = this.thresholdDb;
    }
    return state;
  }

  async startSession(_req: StartSessionRequest): Promise<SessionState> {
    return this.state();
  }

  async getSession(sessionId: string): Promise<SessionState> {
    if (sessionId !== "mock") {
      throw new Error("unknown session");
    }
    return this.state();
  }

  async postResponse(
    _sessionId: string,
    trial: number,
    chosen: number,
  ): Promise<ResponseFeedback> {
    if (this.status !== "awaiting_response" || trial !== this.trialNumber) {
      throw new Error("not the pending trial");
    }
    if (chosen !== 2 && chosen !== 3) {
      throw new Error("interval 1 cannot be selected");
    }
    this.responseCount += 1;
    const correct = chosen === this.targetInterval(trial);
    this.advance(correct);
    const feedback: ResponseFeedback = {
      trial,
      chosen,
      correct,
      status: this.status,
      reversals_at_final_step:
        this.reversals.filter((r) => r.step === 1).length,
      reversals_needed: 8,
    };
    if (this.status === "finished") {
      feedback.threshold_db = this.thresholdDb ?? undefined;
    } else {
      feedback.next_trial = this.descriptor();
    }
    return feedback;
  }

  private advance(correct: boolean): void {
    this.trialNumber += 1;
    if (correct && this.consecutiveCorrect + 1 < 2) {
      this.consecutiveCorrect = 1;
      return;
    }
    const direction = correct ? "down" : "up";
    this.consecutiveCorrect = 0;
    if (this.lastDirection !== null && direction !== this.lastDirection) {
      this.reversals.push({ level: this.level, step: this.step });
    }
    const n = this.reversals.length;
    this.step = n >= 4 ? 1 : n >= 2 ? 2 : 5;
    this.level += direction === "up" ? this.step : -this.step;
    this.lastDirection = direction;
    const oneDb = this.reversals.filter((r) => r.step === 1);
    if (oneDb.length >= 8) {
      this.status = "finished";
      const tail = this.reversals.slice(-8);
      this.thresholdDb =
        tail.reduce((acc, r) => acc + r.level, 0) / tail.length;
    }
  }

  audioUrl(path: string): string {
    return path;
  }

  noiseUrl(): string {
    return "/noise.wav";
  }
}
