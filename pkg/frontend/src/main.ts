/** Browser entry point: connect to the serve endpoint over WebSocket and
 * wire the canvases, status banner, keyboard, and sliders. */

import { TeleopClient } from "./client.js";
import { KeyboardInput, bindSlider } from "./input.js";
import { drawSideView, drawSparkline, drawTopDown } from "./render.js";
import { WebSocketTransport } from "./transport.js";

function canvas2d(id: string): [HTMLCanvasElement, CanvasRenderingContext2D] {
  const el = document.getElementById(id) as HTMLCanvasElement;
  return [el, el.getContext("2d")!];
}

function main(): void {
  const params = new URLSearchParams(window.location.search);
  const host = params.get("host") ?? window.location.hostname ?? "127.0.0.1";
  const port = params.get("port") ?? "8765";
  const url = `ws://${host || "127.0.0.1"}:${port}`;

  const client = new TeleopClient(() => new WebSocketTransport(url));
  new KeyboardInput(client);

  const banner = document.getElementById("banner")!;
  const meta = document.getElementById("meta")!;
  const readout = document.getElementById("readout")!;
  const [topEl, topCtx] = canvas2d("topdown");
  const [sideEl, sideCtx] = canvas2d("sideview");
  const [sparkEl, sparkCtx] = canvas2d("sparkline");

  bindSlider(client, document.getElementById("vx") as HTMLInputElement, "vx");
  bindSlider(client, document.getElementById("vy") as HTMLInputElement, "vy");
  bindSlider(client, document.getElementById("wz") as HTMLInputElement, "wz");
  (document.getElementById("reset") as HTMLButtonElement).onclick = () =>
    client.sendReset();

  client.onStateUpdate = () => {
    const ui = client.state;
    banner.textContent =
      ui.status === "connected"
        ? `connected to ${url}`
        : ui.status === "connecting"
          ? `connecting to ${url}...`
          : `disconnected - retrying in ${ui.retryInSeconds.toFixed(1)} s`;
    banner.className = ui.status;
    if (ui.info) {
      meta.textContent =
        `${ui.info.model} / iteration ${ui.info.iteration} / ` +
        `${ui.info.control_hz} Hz control, ${ui.info.state_hz} Hz telemetry`;
      for (const [id, range] of [["vx", ui.info.command_ranges.vx],
                                 ["vy", ui.info.command_ranges.vy],
                                 ["wz", ui.info.command_ranges.yaw_rate]] as const) {
        const el = document.getElementById(id) as HTMLInputElement;
        el.min = String(range[0]);
        el.max = String(range[1]);
      }
    }
  };

  let lastTick = performance.now();
  const frame = () => {
    const now = performance.now();
    client.tick((now - lastTick) / 1000);
    lastTick = now;
    const ui = client.state;
    drawTopDown(topCtx, ui, topEl.width, topEl.height);
    drawSideView(sideCtx, ui, sideEl.width, sideEl.height);
    drawSparkline(sparkCtx, ui, sparkEl.width, sparkEl.height);
    if (ui.latest) {
      const s = ui.latest;
      readout.textContent =
        `t=${s.time.toFixed(2)}s  cmd=[${s.command.map((v) => v.toFixed(2)).join(", ")}]  ` +
        `setpoint=[${ui.setpoint.vx.toFixed(2)}, ${ui.setpoint.vy.toFixed(2)}, ` +
        `${ui.setpoint.wz.toFixed(2)}] ${ui.commandApplied ? "(applied)" : "(pending)"}  ` +
        `reward=${s.reward.toFixed(4)}`;
    }
    requestAnimationFrame(frame);
  };

  client.connect();
  requestAnimationFrame(frame);
}

main();
