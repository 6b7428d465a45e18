// Browser entry point: wires pointer events to a ViewSession and displays
// returned PNGs. Pure fetch-and-display; all rendering happens server-side.

import { httpTransport } from "./api.js";
import { ViewSession } from "./session.js";

const VIEW_W = 256;
const VIEW_H = 256;

function el<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function main(): void {
  const server =
    new URLSearchParams(location.search).get("server") ?? "http://127.0.0.1:7860";

  const img = el<HTMLImageElement>("frame");
  const banner = el<HTMLDivElement>("banner");
  const badge = el<HTMLDivElement>("badge");
  const retry = el<HTMLButtonElement>("retry");
  const stage = el<HTMLDivElement>("stage");

  let lastUrl = "";
  const session = new ViewSession(
    httpTransport(server),
    { width: VIEW_W, height: VIEW_H },
    {
      onFrame(frame) {
        // atomic swap: only replace src once the new blob URL exists
        const url = URL.createObjectURL(
          new Blob([frame.bytes.slice().buffer], { type: "image/png" }),
        );
        img.src = url;
        if (lastUrl) URL.revokeObjectURL(lastUrl);
        lastUrl = url;
        img.style.imageRendering = frame.scale > 1 ? "pixelated" : "auto";
      },
      onBadge(b) {
        badge.textContent = b.message;
        badge.dataset.kind = b.kind;
        retry.hidden = b.kind !== "error" || session.meta !== null;
      },
      onMeta(meta) {
        banner.textContent =
          `${meta.preset} · ${meta.param_count.toLocaleString()} params · ` +
          `step ${meta.step}`;
      },
    },
  );

  async function connect(): Promise<void> {
    banner.textContent = server;
    if (await session.loadMeta()) session.refresh();
  }
  retry.addEventListener("click", () => void connect());

  let dragging = false;
  let px = 0;
  let py = 0;
  stage.addEventListener("pointerdown", (e) => {
    dragging = true;
    px = e.clientX;
    py = e.clientY;
    stage.setPointerCapture(e.pointerId);
  });
  stage.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    session.drag(e.clientX - px, e.clientY - py);
    px = e.clientX;
    py = e.clientY;
  });
  const stop = (e: PointerEvent): void => {
    dragging = false;
    stage.releasePointerCapture(e.pointerId);
  };
  stage.addEventListener("pointerup", stop);
  stage.addEventListener("pointercancel", stop);
  stage.addEventListener("wheel", (e) => {
    e.preventDefault();
    session.zoom(Math.exp(e.deltaY * 0.0015));
  });

  void connect();
}

main();
