// Audio playback: the three trial intervals in order with a fixed gap,
// plus the continuous background-noise loop underneath.

export interface IntervalPlayer {
  /** Play the urls strictly in sequence; report interval starts. */
  playSequence(
    urls: string[],
    gapMs: number,
    onIntervalStart: (index: number) => void,
  ): Promise<void>;
  startNoiseLoop(url: string): void;
  stopNoiseLoop(): void;
}

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

function playOnce(url: string): Promise<void> {
  return new Promise((resolve, reject) => {
    const audio = new Audio(url);
    audio.addEventListener("ended", () => resolve(), { once: true });
    audio.addEventListener(
      "error",
      () => reject(new Error(`playback failed for ${url}`)),
      { once: true },
    );
    void audio.play().catch(reject);
  });
}

export class HtmlAudioPlayer implements IntervalPlayer {
  private noise: HTMLAudioElement | null = null;

  async playSequence(
    urls: string[],
    gapMs: number,
    onIntervalStart: (index: number) => void,
  ): Promise<void> {
    for (let i = 0; i < urls.length; i++) {
      if (i > 0) {
        await sleep(gapMs);
      }
      onIntervalStart(i);
      await playOnce(urls[i]);
    }
  }

  startNoiseLoop(url: string): void {
    if (this.noise) {
      return;
    }
    this.noise = new Audio(url);
    this.noise.loop = true;
    void this.noise.play().catch(() => {
      // autoplay may be blocked until the first user gesture; the flow
      // retries when the listener starts the track
      this.noise = null;
    });
  }

  stopNoiseLoop(): void {
    this.noise?.pause();
    this.noise = null;
  }
}
