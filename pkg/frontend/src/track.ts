// Adaptive-track flow: fetch trial -> play intervals 1..3 -> collect a
// 2-or-3 choice -> show feedback -> repeat until the service reports a
// finished track, then show the threshold screen.
//
// The flow is stateless with respect to the staircase: every decision
// about levels, reversals and termination lives in the service. A page
// refresh resumes from the stored session id with no lost trials.

import type {
  ResponseFeedback,
  ServiceApi,
  SessionState,
  StartSessionRequest,
  TrialDescriptor,
} from "./api.js";
import type { IntervalPlayer } from "./audio.js";

export type FlowPhase =
  | "idle"
  | "playing"
  | "awaiting-choice"
  | "feedback"
  | "finished"
  | "aborted"
  | "error";

export interface TrackFlowOptions {
  feedbackMs?: number;
  storage?: Pick<Storage, "getItem" | "setItem" | "removeItem">;
  storageKey?: string;
}

export class TrackFlow {
  phase: FlowPhase = "idle";
  sessionId: string | null = null;

  private trial: TrialDescriptor | null = null;
  private readonly feedbackMs: number;
  private readonly storage: TrackFlowOptions["storage"];
  private readonly storageKey: string;

  private readonly status: HTMLElement;
  private readonly markers: HTMLElement[];
  private readonly buttons: HTMLButtonElement[];
  private readonly banner: HTMLElement;
  private readonly progress: HTMLElement;
  private readonly result: HTMLElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ServiceApi,
    private readonly player: IntervalPlayer,
    options: TrackFlowOptions = {},
  ) {
    this.feedbackMs = options.feedbackMs ?? 700;
    this.storage = options.storage;
    this.storageKey = options.storageKey ?? "maskrel-session";

    root.innerHTML = `
      <div id="status" role="status"></div>
      <div id="markers">
        <span class="marker" id="marker-1">1</span>
        <span class="marker" id="marker-2">2</span>
        <span class="marker" id="marker-3">3</span>
      </div>
      <div id="choices">
        <button id="choose-1" disabled title="reference interval">1</button>
        <button id="choose-2" disabled>2</button>
        <button id="choose-3" disabled>3</button>
      </div>
      <div id="feedback" aria-live="polite"></div>
      <div id="progress"></div>
      <div id="result" hidden></div>
    `;
    this.status = this.query("#status");
    this.markers = [1, 2, 3].map((k) => this.query(`#marker-${k}`));
    this.buttons = [1, 2, 3].map(
      (k) => this.query(`#choose-${k}`) as HTMLButtonElement,
    );
    this.banner = this.query("#feedback");
    this.progress = this.query("#progress");
    this.result = this.query("#result");

    this.buttons[1].addEventListener("click", () => void this.choose(2));
    this.buttons[2].addEventListener("click", () => void this.choose(3));
    root.ownerDocument.addEventListener("keydown", (event) => {
      if (event.key === "2") void this.choose(2);
      if (event.key === "3") void this.choose(3);
    });
  }

  private query(selector: string): HTMLElement {
    const el = this.root.querySelector(selector);
    if (!el) throw new Error(`missing element ${selector}`);
    return el as HTMLElement;
  }

  /** Start a new track, or resume the one stored for this tab. */
  async run(request: StartSessionRequest): Promise<void> {
    this.player.startNoiseLoop(this.api.noiseUrl());
    const stored = this.storage?.getItem(this.storageKey) ?? null;
    let state: SessionState | null = null;
    if (stored) {
      try {
        state = await this.api.getSession(stored);
      } catch {
        this.storage?.removeItem(this.storageKey);
      }
    }
    if (!state || state.status === "finished" || state.status === "aborted") {
      state = await this.api.startSession(request);
      this.storage?.setItem(this.storageKey, state.session_id);
    }
    this.sessionId = state.session_id;
    if (state.status === "finished") {
      this.showResult(state.threshold_db ?? NaN);
      return;
    }
    if (!state.trial) {
      this.fail("session has no pending trial");
      return;
    }
    await this.presentTrial(state.trial);
  }

  private async presentTrial(trial: TrialDescriptor): Promise<void> {
    this.trial = trial;
    this.phase = "playing";
    this.setButtonsEnabled(false);
    this.banner.textContent = "";
    this.status.textContent = `Trial ${trial.number}: listen`;
    this.progress.textContent =
      `Reversals at final step: ${trial.reversals_at_final_step}` +
      ` / ${trial.reversals_needed}`;
    const urls = trial.intervals.map((p) => this.api.audioUrl(p));
    try {
      await this.player.playSequence(
        urls,
        trial.inter_stimulus_gap_s * 1000,
        (index) => this.highlightMarker(index),
      );
    } catch (err) {
      this.fail(`audio playback failed: ${String(err)}`);
      return;
    }
    this.highlightMarker(-1);
    this.phase = "awaiting-choice";
    this.setButtonsEnabled(true);
    this.status.textContent =
      `Trial ${trial.number}: which interval held the target, 2 or 3?`;
  }

  /** Ignores input unless a choice is currently allowed. */
  async choose(interval: 2 | 3): Promise<void> {
    if (this.phase !== "awaiting-choice" || !this.sessionId || !this.trial) {
      return;
    }
    this.phase = "feedback";
    this.setButtonsEnabled(false);
    let feedback: ResponseFeedback;
    try {
      feedback = await this.api.postResponse(
        this.sessionId,
        this.trial.number,
        interval,
      );
    } catch (err) {
      this.fail(`response rejected: ${String(err)}`);
      return;
    }
    this.banner.textContent = feedback.correct ? "correct" : "wrong";
    this.banner.className = feedback.correct ? "good" : "bad";
    await new Promise((r) => setTimeout(r, this.feedbackMs));
    if (feedback.status === "finished") {
      this.storage?.removeItem(this.storageKey);
      this.showResult(feedback.threshold_db ?? NaN);
      return;
    }
    if (feedback.status === "aborted" || !feedback.next_trial) {
      this.phase = "aborted";
      this.status.textContent = "Track aborted";
      return;
    }
    await this.presentTrial(feedback.next_trial);
  }

  private showResult(threshold: number): void {
    this.phase = "finished";
    this.player.stopNoiseLoop();
    this.status.textContent = "Track complete";
    this.result.hidden = false;
    this.result.textContent =
      `Threshold: ${threshold.toFixed(2)} dB SPL ` +
      "(mean level over the last eight reversals)";
  }

  private fail(message: string): void {
    this.phase = "error";
    this.status.textContent = message;
  }

  private highlightMarker(active: number): void {
    this.markers.forEach((marker, i) => {
      marker.classList.toggle("active", i === active);
    });
  }

  private setButtonsEnabled(enabled: boolean): void {
    // interval 1 is the reference and is never selectable
    this.buttons[0].disabled = true;
    this.buttons[1].disabled = !enabled;
    this.buttons[2].disabled = !enabled;
  }
}
