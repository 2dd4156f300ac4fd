/**
 * Browser entry point: wires pointer input to the orbit state and the
 * frame loop, and paints returned PNG frames into an <img>.
 *
 * Served by the render service itself (its static-asset handler), so the
 * service origin is simply the page origin.
 */

import {
  QualityScale,
  SceneInfo,
  ViewerState,
  dollyBy,
  orbitBy,
  panBy,
  poseFromState,
  scaledSize,
  stateFromSceneInfo,
  withScale,
} from "./state.js";
import { FrameLoop, FrameStatus, fetchSceneInfo } from "./net.js";

function mustGet<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function describeStatus(s: FrameStatus): { text: string; error: boolean } {
  switch (s.kind) {
    case "idle":
      return { text: "", error: false };
    case "rendering":
      return { text: "rendering...", error: false };
    case "ok":
      return { text: `${s.latencyMs.toFixed(0)} ms`, error: false };
    case "invalid":
      return { text: `rejected: ${s.message}`, error: true };
    case "retrying":
      return {
        text: `connection lost (${s.message}); retry ${s.attempt} in ${s.delayMs} ms`,
        error: true,
      };
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** Wait out the service's background scene load before asking for info. */
async function waitUntilReady(baseUrl: string, onWaiting: () => void): Promise<void> {
  for (;;) {
    try {
      const resp = await fetch(`${baseUrl}/health`);
      const body = (await resp.json()) as { status?: string };
      if (body.status === "ok") return;
    } catch {
      // server unreachable; keep polling
    }
    onWaiting();
    await sleep(500);
  }
}

async function boot(): Promise<void> {
  const frame = mustGet<HTMLImageElement>("frame");
  const banner = mustGet<HTMLDivElement>("banner");
  const sceneLabel = mustGet<HTMLDivElement>("scene-label");
  const poseLabel = mustGet<HTMLDivElement>("pose-label");
  const qualitySel = mustGet<HTMLSelectElement>("quality");

  const baseUrl = window.location.origin;
  await waitUntilReady(baseUrl, () => {
    banner.textContent = "scene loading on the server...";
    banner.className = "banner";
  });
  const info = (await fetchSceneInfo(baseUrl)) as SceneInfo;
  let state: ViewerState = stateFromSceneInfo(info);
  sceneLabel.textContent =
    `${info.name}: ${info.n_sources} sources, ` +
    `${info.resolution[0]}x${info.resolution[1]}`;

  let lastUrl: string | null = null;
  const loop = new FrameLoop({
    baseUrl,
    onFrame: (png) => {
      const url = URL.createObjectURL(new Blob([png as BlobPart], { type: "image/png" }));
      frame.src = url;
      if (lastUrl) URL.revokeObjectURL(lastUrl);
      lastUrl = url;
    },
    onStatus: (s) => {
      const { text, error } = describeStatus(s);
      banner.textContent = text;
      banner.className = error ? "banner error" : "banner";
    },
  });

  const push = (next: ViewerState): void => {
    state = next;
    const { width, height } = scaledSize(state);
    poseLabel.textContent =
      `az ${state.azimuthDeg.toFixed(1)} el ${state.elevationDeg.toFixed(1)} ` +
      `r ${state.radius.toFixed(2)} (${width}x${height})`;
    loop.request(poseFromState(state));
  };

  // pointer input: primary drag orbits, right/shift drag pans
  let dragging: "orbit" | "pan" | null = null;
  let lastX = 0;
  let lastY = 0;
  frame.addEventListener("pointerdown", (ev) => {
    dragging = ev.button === 2 || ev.shiftKey ? "pan" : "orbit";
    lastX = ev.clientX;
    lastY = ev.clientY;
    frame.setPointerCapture(ev.pointerId);
    ev.preventDefault();
  });
  frame.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const dx = ev.clientX - lastX;
    const dy = ev.clientY - lastY;
    lastX = ev.clientX;
    lastY = ev.clientY;
    push(dragging === "orbit" ? orbitBy(state, dx, dy) : panBy(state, dx, dy));
  });
  frame.addEventListener("pointerup", () => {
    dragging = null;
  });
  frame.addEventListener("contextmenu", (ev) => ev.preventDefault());
  frame.addEventListener(
    "wheel",
    (ev) => {
      ev.preventDefault();
      push(dollyBy(state, ev.deltaY));
    },
    { passive: false },
  );

  qualitySel.addEventListener("change", () => {
    push(withScale(state, Number(qualitySel.value) as QualityScale));
  });

  push(state);
}

boot().catch((err) => {
  const banner = document.getElementById("banner");
  if (banner) {
    banner.textContent = `failed to start: ${err instanceof Error ? err.message : err}`;
    banner.className = "banner error";
  }
});
