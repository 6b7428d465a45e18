import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { HttpError, type RenderParams, type ServerMeta, type Transport } from "../src/api.js";
import { ViewSession, type Badge, type Frame } from "../src/session.js";

const META: ServerMeta = {
  aabb: { lo: [-1, -1, -1], hi: [1, 1, 1] },
  intrinsics: { width: 64, height: 64, focal: 70 },
  preset: "tiny-test",
  param_count: 77647,
  checkpoint_hash: "deadbeef",
  scene_mode: "aabb-360",
  step: 300,
};

interface Pending {
  params: RenderParams;
  aborted: boolean;
  resolve: (bytes: Uint8Array) => void;
  reject: (err: unknown) => void;
}

// Manually-pumped transport. honorAbort=false simulates a transport whose
// cancellation is best-effort: the request keeps running and may still
// resolve late, which is exactly the out-of-order case the session must eat.
function fakeTransport(opts: { honorAbort?: boolean; failMeta?: boolean } = {}) {
  const honorAbort = opts.honorAbort ?? true;
  const issued: Pending[] = [];
  const transport: Transport = {
    async meta() {
      if (opts.failMeta) throw new Error("connection refused");
      return META;
    },
    render(params, signal) {
      return new Promise<Uint8Array>((resolve, reject) => {
        const entry: Pending = { params, aborted: false, resolve, reject };
        signal?.addEventListener("abort", () => {
          entry.aborted = true;
          if (honorAbort) reject(new DOMException("cancelled", "AbortError"));
        });
        issued.push(entry);
      });
    },
  };
  return { transport, issued };
}

function collector() {
  const frames: Frame[] = [];
  const badges: Badge[] = [];
  return {
    frames,
    badges,
    hooks: {
      onFrame: (f: Frame) => frames.push(f),
      onBadge: (b: Badge) => badges.push(b),
    },
  };
}

const OPTS = { width: 64, height: 64 };

function png(tag: number): Uint8Array {
  return new Uint8Array([137, 80, 78, 71, tag]);
}

async function settle(): Promise<void> {
  for (let i = 0; i < 5; i++) await Promise.resolve();
}

beforeEach(() => {
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
});

describe("quality ladder", () => {
  it("drags render at scale 8, then a scale-1 pass 300ms after the last drag", async () => {
    const { transport, issued } = fakeTransport();
    const col = collector();
    const s = new ViewSession(transport, OPTS, col.hooks);

    s.drag(10, 0);
    expect(issued).toHaveLength(1);
    expect(issued[0]!.params.scale).toBe(8);
    issued[0]!.resolve(png(1));
    await settle();

    await vi.advanceTimersByTimeAsync(299);
    expect(issued).toHaveLength(1); // idle pass not yet due
    await vi.advanceTimersByTimeAsync(1);
    expect(issued).toHaveLength(2);
    expect(issued[1]!.params.scale).toBe(1);
    expect(issued[1]!.params.azimuth).toBe(s.state.azimuth);
    issued[1]!.resolve(png(2));
    await settle();

    expect(col.frames.map((f) => f.scale)).toEqual([8, 1]);
  });

  it("keeps resetting the idle timer while the user is still dragging", async () => {
    const { transport, issued } = fakeTransport();
    const s = new ViewSession(transport, OPTS, collector().hooks);

    s.drag(1, 0);
    await vi.advanceTimersByTimeAsync(200);
    s.drag(1, 0);
    await vi.advanceTimersByTimeAsync(200);
    // two drag requests, no idle pass yet: the second drag re-armed the timer
    expect(issued.filter((r) => r.params.scale === 1)).toHaveLength(0);
    expect(issued).toHaveLength(2);

    await vi.advanceTimersByTimeAsync(100);
    expect(issued.filter((r) => r.params.scale === 1)).toHaveLength(1);
  });

  it("refresh renders the current pose at full quality", () => {
    const { transport, issued } = fakeTransport();
    const s = new ViewSession(transport, OPTS, collector().hooks);
    s.refresh();
    expect(issued).toHaveLength(1);
    expect(issued[0]!.params.scale).toBe(1);
  });
});

describe("single flight and sequence guarding", () => {
  it("a new drag cancels the in-flight request", async () => {
    const { transport, issued } = fakeTransport();
    const col = collector();
    const s = new ViewSession(transport, OPTS, col.hooks);

    s.drag(5, 0);
    s.drag(5, 0);
    await settle();
    expect(issued).toHaveLength(2);
    expect(issued[0]!.aborted).toBe(true);
    expect(issued[1]!.aborted).toBe(false);

    issued[1]!.resolve(png(2));
    await settle();
    expect(col.frames).toHaveLength(1);
    // the cancellation itself must not surface as an error
    expect(col.badges.filter((b) => b.kind === "error")).toHaveLength(0);
  });

  it("never displays a late response from a superseded request", async () => {
    const { transport, issued } = fakeTransport({ honorAbort: false });
    const col = collector();
    const s = new ViewSession(transport, OPTS, col.hooks);

    s.drag(5, 0); // request 1, keeps running despite cancellation
    s.drag(5, 0); // request 2
    issued[1]!.resolve(png(2));
    await settle();
    expect(col.frames).toHaveLength(1);

    issued[0]!.resolve(png(1)); // request 1 lands out of order
    await settle();
    expect(col.frames).toHaveLength(1); // still only the newer frame
    expect(col.frames[0]!.bytes).toEqual(png(2));
  });

  it("displayed sequence numbers strictly increase across a storm", async () => {
    const { transport, issued } = fakeTransport({ honorAbort: false });
    const col = collector();
    const s = new ViewSession(transport, OPTS, col.hooks);

    for (let i = 0; i < 5; i++) s.drag(1, 0);
    // resolve in reverse: only the newest may display
    for (let i = issued.length - 1; i >= 0; i--) issued[i]!.resolve(png(i));
    await settle();

    const seqs = col.frames.map((f) => f.seq);
    expect(seqs).toEqual([...seqs].sort((a, b) => a - b));
    expect(new Set(seqs).size).toBe(seqs.length);
    expect(col.frames).toHaveLength(1);
    expect(col.frames[0]!.seq).toBe(5);
  });

  it("a stale failure is not surfaced once a newer request exists", async () => {
    const { transport, issued } = fakeTransport({ honorAbort: false });
    const col = collector();
    const s = new ViewSession(transport, OPTS, col.hooks);

    s.drag(1, 0);
    s.drag(1, 0);
    issued[0]!.reject(new Error("socket reset"));
    issued[1]!.resolve(png(2));
    await settle();

    expect(col.badges.filter((b) => b.kind === "error")).toHaveLength(0);
    expect(col.frames).toHaveLength(1);
  });
});

describe("errors", () => {
  it("network failure shows an error badge and preserves the orbit state", async () => {
    const { transport, issued } = fakeTransport();
    const col = collector();
    const s = new ViewSession(transport, OPTS, col.hooks);

    s.drag(10, -5);
    const pose = { ...s.state };
    issued[0]!.reject(new TypeError("fetch failed"));
    await settle();

    const errors = col.badges.filter((b) => b.kind === "error");
    expect(errors).toHaveLength(1);
    expect(errors[0]!.message).toContain("fetch failed");
    expect(s.state).toEqual(pose);

    // the session still works afterwards
    s.drag(1, 0);
    expect(issued).toHaveLength(2);
    issued[1]!.resolve(png(7));
    await settle();
    expect(col.frames).toHaveLength(1);
  });

  it("a 413 surfaces as an error badge", async () => {
    const { transport, issued } = fakeTransport();
    const col = collector();
    const s = new ViewSession(transport, OPTS, col.hooks);

    s.refresh();
    issued[0]!.reject(new HttpError(413, "4000x4000 exceeds 4000000 pixel budget"));
    await settle();

    const errors = col.badges.filter((b) => b.kind === "error");
    expect(errors).toHaveLength(1);
    expect(errors[0]!.message).toContain("pixel budget");
  });
});

describe("loadMeta", () => {
  it("initializes the radius from the AABB diagonal x2 and reports the preset", async () => {
    const { transport } = fakeTransport();
    const metas: ServerMeta[] = [];
    const col = collector();
    const s = new ViewSession(transport, OPTS, {
      ...col.hooks,
      onMeta: (m) => metas.push(m),
    });

    expect(await s.loadMeta()).toBe(true);
    expect(s.state.radius).toBeCloseTo(4 * Math.sqrt(3), 12);
    expect(metas).toHaveLength(1);
    expect(metas[0]!.preset).toBe("tiny-test");
    expect(metas[0]!.param_count).toBe(77647);
    expect(col.badges.at(-1)!.kind).toBe("ok");
  });

  it("an unreachable server yields false and an error badge", async () => {
    const { transport } = fakeTransport({ failMeta: true });
    const col = collector();
    const s = new ViewSession(transport, OPTS, col.hooks);

    expect(await s.loadMeta()).toBe(false);
    expect(col.badges.at(-1)!.kind).toBe("error");
    expect(col.badges.at(-1)!.message).toContain("unreachable");
  });
});

describe("dispose", () => {
  it("cancels the in-flight request and the pending idle pass", async () => {
    const { transport, issued } = fakeTransport();
    const s = new ViewSession(transport, OPTS, collector().hooks);

    s.drag(1, 0);
    s.dispose();
    expect(issued[0]!.aborted).toBe(true);
    await vi.advanceTimersByTimeAsync(1000);
    expect(issued).toHaveLength(1); // idle pass never fired
  });
});
