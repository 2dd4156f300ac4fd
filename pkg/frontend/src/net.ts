/**
 * Render-request loop between the viewer state and the render service.
 *
 * Contract:
 *   - pose changes are debounced (default 50 ms) so drags do not flood
 *     the service with intermediate poses
 *   - at most one render request is in flight; poses arriving while a
 *     request is pending coalesce so only the latest goes out next
 *   - every issued request carries a monotonically increasing sequence
 *     number and a response is displayed only if it is newer than the
 *     frame currently shown; late arrivals are discarded as stale
 *   - a pose identical to the most recently accepted one is skipped
 *   - HTTP 400 surfaces the service's error message as an `invalid`
 *     status and is not retried (the pose itself is bad)
 *   - network failures surface a `retrying` status and the request is
 *     retried with exponential backoff until a pose succeeds
 *
 * Transport and timers are injectable so unit tests can run the loop
 * against fake clocks and scripted responses.
 */

import { PoseQuery, poseKey } from "./state.js";

export type FrameStatus =
  | { kind: "idle" }
  | { kind: "rendering" }
  | { kind: "ok"; latencyMs: number }
  | { kind: "invalid"; message: string }
  | { kind: "retrying"; attempt: number; delayMs: number; message: string };

export interface FrameLoopStats {
  /** request() calls accepted or skipped. */
  requested: number;
  duplicateSkipped: number;
  /** HTTP requests actually issued. */
  sent: number;
  /** Frames handed to onFrame. */
  displayed: number;
  /** Responses dropped because a newer frame was already shown or the
   * request had been abandoned. */
  staleDiscarded: number;
  /** 400 responses. */
  invalid: number;
  /** Network-level failures (rejections, timeouts, non-400 errors). */
  failures: number;
  /** Concurrency high-water mark; the loop keeps this at 1. */
  maxConcurrent: number;
}

export interface FrameLoopOptions {
  /** Service origin, e.g. "http://127.0.0.1:8008". */
  baseUrl: string;
  /** Receives the PNG bytes of each newly displayed frame. */
  onFrame: (png: Uint8Array, seq: number, pose: PoseQuery) => void;
  /** Receives status transitions for the UI banner. */
  onStatus?: (status: FrameStatus) => void;
  fetchFn?: typeof fetch;
  now?: () => number;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
  debounceMs?: number;
  /** Abandon a request after this long and retry; a late response from
   * an abandoned request is discarded. */
  timeoutMs?: number;
  retryMs?: number;
  maxRetryMs?: number;
}

interface PendingRequest {
  seq: number;
  pose: PoseQuery;
  settled: boolean;
}

export class FrameLoop {
  private readonly baseUrl: string;
  private readonly onFrame: FrameLoopOptions["onFrame"];
  private readonly onStatus: (s: FrameStatus) => void;
  private readonly fetchFn: typeof fetch;
  private readonly now: () => number;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;
  private readonly debounceMs: number;
  private readonly timeoutMs: number;
  private readonly retryMs: number;
  private readonly maxRetryMs: number;

  private seqCounter = 0;
  private displayedSeq = 0;
  private inFlightNow = false;
  private concurrent = 0;
  private pendingPose: PoseQuery | null = null;
  private latestKey = "";
  private debounceHandle: unknown = null;
  private retryHandle: unknown = null;
  private consecutiveFailures = 0;
  private disposed = false;

  readonly stats: FrameLoopStats = {
    requested: 0,
    duplicateSkipped: 0,
    sent: 0,
    displayed: 0,
    staleDiscarded: 0,
    invalid: 0,
    failures: 0,
    maxConcurrent: 0,
  };

  constructor(opts: FrameLoopOptions) {
    this.baseUrl = opts.baseUrl.replace(/\/+$/, "");
    this.onFrame = opts.onFrame;
    this.onStatus = opts.onStatus ?? (() => {});
    this.fetchFn = opts.fetchFn ?? fetch.bind(globalThis);
    this.now = opts.now ?? (() => Date.now());
    this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = opts.clearTimer ?? ((h) => clearTimeout(h as number));
    this.debounceMs = opts.debounceMs ?? 50;
    this.timeoutMs = opts.timeoutMs ?? 15000;
    this.retryMs = opts.retryMs ?? 500;
    this.maxRetryMs = opts.maxRetryMs ?? 8000;
  }

  get inFlight(): boolean {
    return this.inFlightNow;
  }

  /** Queue a pose for rendering; debounced and deduplicated. */
  request(pose: PoseQuery): void {
    if (this.disposed) return;
    this.stats.requested += 1;
    const key = poseKey(pose);
    if (key === this.latestKey) {
      this.stats.duplicateSkipped += 1;
      return;
    }
    this.latestKey = key;
    this.pendingPose = pose;
    if (this.debounceHandle !== null) this.clearTimer(this.debounceHandle);
    this.debounceHandle = this.setTimer(() => {
      this.debounceHandle = null;
      this.fire();
    }, this.debounceMs);
  }

  /** Stop all timers; in-flight responses are ignored from here on. */
  dispose(): void {
    this.disposed = true;
    if (this.debounceHandle !== null) this.clearTimer(this.debounceHandle);
    if (this.retryHandle !== null) this.clearTimer(this.retryHandle);
    this.debounceHandle = null;
    this.retryHandle = null;
  }

  private fire(): void {
    if (this.disposed || this.inFlightNow || this.pendingPose === null) return;
    const pose = this.pendingPose;
    this.pendingPose = null;
    const req: PendingRequest = { seq: ++this.seqCounter, pose, settled: false };
    this.inFlightNow = true;
    this.concurrent += 1;
    this.stats.maxConcurrent = Math.max(this.stats.maxConcurrent, this.concurrent);
    this.stats.sent += 1;
    this.onStatus({ kind: "rendering" });
    const start = this.now();

    const ctrl = typeof AbortController !== "undefined" ? new AbortController() : null;
    const timeoutHandle = this.setTimer(() => {
      if (req.settled || this.disposed) return;
      req.settled = true;
      ctrl?.abort();
      this.finishRequest();
      this.handleFailure(pose, "request timed out");
    }, this.timeoutMs);

    this.fetchFn(`${this.baseUrl}/render`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(pose),
      signal: ctrl?.signal ?? undefined,
    })
      .then(async (resp) => ({ resp, body: new Uint8Array(await resp.arrayBuffer()) }))
      .then(({ resp, body }) => {
        this.clearTimer(timeoutHandle);
        if (this.disposed) return;
        if (req.settled) {
          // the timeout already abandoned this request
          this.stats.staleDiscarded += 1;
          return;
        }
        req.settled = true;
        this.finishRequest();
        if (resp.ok) this.handleFrame(req.seq, pose, body, start);
        else if (resp.status === 400) this.handleInvalid(body);
        else this.handleFailure(pose, `http ${resp.status}`);
      })
      .catch((err: unknown) => {
        this.clearTimer(timeoutHandle);
        if (this.disposed || req.settled) return;
        req.settled = true;
        this.finishRequest();
        this.handleFailure(pose, err instanceof Error ? err.message : String(err));
      });
  }

  private finishRequest(): void {
    this.inFlightNow = false;
    this.concurrent -= 1;
  }

  private handleFrame(seq: number, pose: PoseQuery, png: Uint8Array, start: number): void {
    this.consecutiveFailures = 0;
    if (seq > this.displayedSeq) {
      this.displayedSeq = seq;
      this.stats.displayed += 1;
      this.onFrame(png, seq, pose);
      this.onStatus({ kind: "ok", latencyMs: this.now() - start });
    } else {
      this.stats.staleDiscarded += 1;
    }
    this.fire();
  }

  private handleInvalid(body: Uint8Array): void {
    this.consecutiveFailures = 0;
    this.stats.invalid += 1;
    let message = "render request rejected";
    try {
      const parsed = JSON.parse(new TextDecoder().decode(body)) as { error?: string };
      if (parsed.error) message = parsed.error;
    } catch {
      // not JSON; keep the generic message
    }
    this.onStatus({ kind: "invalid", message });
    this.fire();
  }

  private handleFailure(pose: PoseQuery, message: string): void {
    if (this.disposed) return;
    this.stats.failures += 1;
    this.consecutiveFailures += 1;
    // newest pose wins; re-queue the failed one only if nothing newer arrived
    if (this.pendingPose === null) this.pendingPose = pose;
    const delay = Math.min(
      this.maxRetryMs,
      this.retryMs * Math.pow(2, this.consecutiveFailures - 1),
    );
    this.onStatus({
      kind: "retrying",
      attempt: this.consecutiveFailures,
      delayMs: delay,
      message,
    });
    if (this.retryHandle !== null) this.clearTimer(this.retryHandle);
    this.retryHandle = this.setTimer(() => {
      this.retryHandle = null;
      this.fire();
    }, delay);
  }
}

/** Fetch and validate /scene-info. */
export async function fetchSceneInfo(
  baseUrl: string,
  fetchFn: typeof fetch = fetch.bind(globalThis),
): Promise<unknown> {
  const resp = await fetchFn(`${baseUrl.replace(/\/+$/, "")}/scene-info`, { method: "GET" });
  if (!resp.ok) throw new Error(`scene-info failed: http ${resp.status}`);
  return resp.json();
}
