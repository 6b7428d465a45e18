// View session: owns the orbit state and the request lifecycle.
//
// Concurrency contract: at most one live render request. A new interaction
// cancels the previous request (newest wins) and issues a fresh one. Display
// is guarded by sequence number, so a cancelled request whose response still
// arrives (cancellation is best-effort at the transport) can never clobber a
// newer frame. Quality ladder: interactions render at dragScale, and idleMs
// after the last interaction a full-quality pass re-renders at idleScale.

import { isAbort, type RenderParams, type ServerMeta, type Transport } from "./api.js";
import {
  defaultState,
  onDrag,
  onZoom,
  radiusFromAabb,
  type OrbitState,
} from "./orbit.js";

export interface SessionOptions {
  width: number;
  height: number;
  dragScale?: number;
  idleScale?: number;
  idleMs?: number;
}

export interface Frame {
  bytes: Uint8Array;
  seq: number;
  scale: number;
  params: RenderParams;
}

export type BadgeKind = "ok" | "loading" | "error";

export interface Badge {
  kind: BadgeKind;
  message: string;
}

export interface SessionHooks {
  onFrame?: (frame: Frame) => void;
  onBadge?: (badge: Badge) => void;
  onMeta?: (meta: ServerMeta) => void;
}

const DRAG_SCALE = 8;
const IDLE_SCALE = 1;
const IDLE_MS = 300;

export class ViewSession {
  state: OrbitState = defaultState();
  meta: ServerMeta | null = null;

  private readonly dragScale: number;
  private readonly idleScale: number;
  private readonly idleMs: number;
  private seq = 0;
  private shownSeq = 0;
  private inflight: AbortController | null = null;
  private idleTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly transport: Transport,
    private readonly opts: SessionOptions,
    private readonly hooks: SessionHooks = {},
  ) {
    this.dragScale = opts.dragScale ?? DRAG_SCALE;
    this.idleScale = opts.idleScale ?? IDLE_SCALE;
    this.idleMs = opts.idleMs ?? IDLE_MS;
  }

  async loadMeta(): Promise<boolean> {
    this.badge({ kind: "loading", message: "connecting" });
    try {
      this.meta = await this.transport.meta();
    } catch (err) {
      this.badge({ kind: "error", message: `server unreachable: ${String(err)}` });
      return false;
    }
    this.state = {
      ...this.state,
      radius: radiusFromAabb(this.meta.aabb.lo, this.meta.aabb.hi),
    };
    this.badge({ kind: "ok", message: "" });
    this.hooks.onMeta?.(this.meta);
    return true;
  }

  drag(dx: number, dy: number): void {
    this.state = onDrag(this.state, dx, dy);
    this.interact();
  }

  zoom(factor: number): void {
    this.state = onZoom(this.state, factor);
    this.interact();
  }

  // full-quality render of the current pose (initial frame, manual refresh)
  refresh(): void {
    this.render(this.idleScale);
  }

  dispose(): void {
    if (this.idleTimer !== null) clearTimeout(this.idleTimer);
    this.idleTimer = null;
    this.inflight?.abort();
    this.inflight = null;
  }

  private interact(): void {
    this.render(this.dragScale);
    if (this.idleTimer !== null) clearTimeout(this.idleTimer);
    this.idleTimer = setTimeout(() => {
      this.idleTimer = null;
      this.render(this.idleScale);
    }, this.idleMs);
  }

  private render(scale: number): void {
    this.inflight?.abort();
    const ctl = new AbortController();
    this.inflight = ctl;
    const mySeq = ++this.seq;
    const params: RenderParams = {
      azimuth: this.state.azimuth,
      elevation: this.state.elevation,
      radius: this.state.radius,
      width: this.opts.width,
      height: this.opts.height,
      scale,
    };
    this.transport.render(params, ctl.signal).then(
      (bytes) => {
        if (this.inflight === ctl) this.inflight = null;
        if (mySeq <= this.shownSeq) return; // stale: a newer frame is already up
        this.shownSeq = mySeq;
        this.hooks.onFrame?.({ bytes, seq: mySeq, scale, params });
        this.badge({ kind: "ok", message: "" });
      },
      (err) => {
        if (this.inflight === ctl) this.inflight = null;
        // cancelled by a newer interaction, or outcome already superseded
        if (isAbort(err) || mySeq !== this.seq) return;
        this.badge({ kind: "error", message: String(err) });
      },
    );
  }

  private badge(b: Badge): void {
    this.hooks.onBadge?.(b);
  }
}
