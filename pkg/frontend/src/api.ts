// Thin fetch wrapper for the render service. Everything the session layer
// needs is behind Transport so tests can substitute fakes and instrumentation.

export interface ServerMeta {
  aabb: { lo: number[]; hi: number[] };
  intrinsics: { width: number; height: number; focal: number };
  preset: string;
  param_count: number;
  checkpoint_hash: string;
  scene_mode: string;
  step: number;
}

export interface RenderParams {
  azimuth: number;
  elevation: number;
  radius: number;
  width: number;
  height: number;
  scale: number;
}

export interface Transport {
  meta(): Promise<ServerMeta>;
  render(p: RenderParams, signal?: AbortSignal): Promise<Uint8Array>;
}

export class HttpError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "HttpError";
  }
}

export function isAbort(err: unknown): boolean {
  return err instanceof DOMException && err.name === "AbortError";
}

async function errorBody(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { error?: string };
    if (body && typeof body.error === "string") return body.error;
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `HTTP ${res.status}`;
}

export function httpTransport(baseUrl: string): Transport {
  const base = baseUrl.replace(/\/+$/, "");
  return {
    async meta() {
      const res = await fetch(`${base}/meta`);
      if (!res.ok) throw new HttpError(res.status, await errorBody(res));
      return (await res.json()) as ServerMeta;
    },
    async render(p: RenderParams, signal?: AbortSignal) {
      const res = await fetch(`${base}/render`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          orbit: { azimuth: p.azimuth, elevation: p.elevation, radius: p.radius },
          width: p.width,
          height: p.height,
          scale: p.scale,
        }),
        signal,
      });
      if (!res.ok) throw new HttpError(res.status, await errorBody(res));
      return new Uint8Array(await res.arrayBuffer());
    },
  };
}
