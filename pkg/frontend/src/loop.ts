/** Frame scheduling with a progressive quality ladder.
 *
 * Invariants:
 *   - at most one render request is in flight;
 *   - while the camera is moving, frames use the interactive resolution;
 *   - after `idleMs` without interaction exactly one settled (full
 *     resolution) frame is requested;
 *   - responses taken for an outdated camera are dropped, not displayed,
 *     and a fresh request is issued.
 *
 * The transport and clock are injected so the policy is testable without a
 * browser or a live service.
 */

import type { PoseJson, RenderedFrame } from "./types";

export interface FrameRequest {
  scene: string;
  pose: PoseJson;
  tauT: number;
  kind: "interactive" | "settled";
}

export type Transport = (req: FrameRequest) => Promise<RenderedFrame>;

export interface QualityLadder {
  interactive: number; // square frame edge while the camera moves
  settled: number; // edge once the camera has been idle
}

export interface LoopOptions {
  transport: Transport;
  now: () => number;
  onFrame: (frame: RenderedFrame, req: FrameRequest) => void;
  onError?: (err: unknown) => void;
  ladder?: QualityLadder;
  idleMs?: number;
  tauT?: number;
}

export class FrameLoop {
  private transport: Transport;
  private now: () => number;
  private onFrame: (frame: RenderedFrame, req: FrameRequest) => void;
  private onError: (err: unknown) => void;
  readonly ladder: QualityLadder;
  readonly idleMs: number;
  private tauT: number;

  private sceneId = "";
  private poseFor: ((edge: number) => PoseJson) | null = null;
  private version = 0; // bumped on every camera/scene mutation
  private lastInteraction = -Infinity;
  private inflight = false;
  private settledDone = false;

  // counters exposed for tests and the HUD
  requestsSent = 0;
  framesShown = 0;
  framesDropped = 0;
  lastRenderMillis = 0;

  constructor(opts: LoopOptions) {
    this.transport = opts.transport;
    this.now = opts.now;
    this.onFrame = opts.onFrame;
    this.onError = opts.onError ?? (() => undefined);
    this.ladder = opts.ladder ?? { interactive: 128, settled: 256 };
    this.idleMs = opts.idleMs ?? 300;
    this.tauT = opts.tauT ?? 0.01;
  }

  get inFlight(): boolean {
    return this.inflight;
  }

  setScene(id: string): void {
    this.sceneId = id;
    this.interacted();
  }

  /** Register the current camera as a pose factory (edge -> pose). */
  setCamera(poseFor: (edge: number) => PoseJson): void {
    this.poseFor = poseFor;
    this.interacted();
  }

  setTauT(tau: number): void {
    this.tauT = tau;
    this.interacted();
  }

  private interacted(): void {
    this.version += 1;
    this.lastInteraction = this.now();
    this.settledDone = false;
  }

  /** Advance the loop; call from requestAnimationFrame or a test clock. */
  update(): void {
    if (this.inflight || this.poseFor === null || this.sceneId === "") return;
    const idle = this.now() - this.lastInteraction >= this.idleMs;
    if (idle && this.settledDone) return; // stationary camera: nothing to do
    const kind: FrameRequest["kind"] = idle ? "settled" : "interactive";
    const edge = idle ? this.ladder.settled : this.ladder.interactive;
    const req: FrameRequest = {
      scene: this.sceneId,
      pose: this.poseFor(edge),
      tauT: this.tauT,
      kind,
    };
    const requestVersion = this.version;
    this.inflight = true;
    this.requestsSent += 1;
    this.transport(req).then(
      (frame) => {
        this.inflight = false;
        if (requestVersion !== this.version) {
          this.framesDropped += 1; // stale: camera moved while rendering
          return;
        }
        this.lastRenderMillis = frame.renderMillis;
        this.framesShown += 1;
        if (req.kind === "settled") this.settledDone = true;
        this.onFrame(frame, req);
      },
      (err) => {
        this.inflight = false;
        this.onError(err); // surface and keep looping
      },
    );
  }
}
