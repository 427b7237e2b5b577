import { HttpServiceApi } from "./api.js";
import { HtmlAudioPlayer } from "./audio.js";
import { TrackFlow } from "./track.js";

function param(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

window.addEventListener("DOMContentLoaded", () => {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const flow = new TrackFlow(root, new HttpServiceApi(), new HtmlAudioPlayer(), {
    storage: window.sessionStorage,
  });
  const start = document.getElementById("start") as HTMLButtonElement;
  start.addEventListener("click", () => {
    start.disabled = true;
    void flow.run({
      experiment: param("experiment", "exp2"),
      ipd: param("ipd", "diotic"),
      tuning: param("tuning", "harmonic"),
    });
  });
});
