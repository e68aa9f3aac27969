// Browser wiring: socket, buttons, canvas redraw loop.

import { parseServerMessage } from "./protocol.js";
import { buildScene, cameraFor, paint } from "./renderer.js";
import { ACK_TIMEOUT_MS, CockpitViewModel } from "./viewmodel.js";

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const historyEl = document.getElementById("history")!;
const errorEl = document.getElementById("error")!;

const params = new URLSearchParams(window.location.search);
const port = params.get("port") ?? "8700";
const vm = new CockpitViewModel();

const socket = new WebSocket(`ws://127.0.0.1:${port}/`);
vm.attach({ send: (text) => socket.send(text) });
socket.onmessage = (event) => {
  const msg = parseServerMessage(String(event.data));
  if (msg) vm.handleMessage(msg);
};
socket.onclose = () => vm.onClose();

const buttons: Record<string, { kind: Parameters<CockpitViewModel["command"]>[0]; params?: object }> = {
  "btn-start": { kind: "start" },
  "btn-pause": { kind: "pause" },
  "btn-reset": { kind: "reset" },
  "btn-overtake": { kind: "trigger_overtake" },
  "btn-abort": { kind: "trigger_abort" },
  "btn-spawn": { kind: "spawn_oncoming", params: { speed: 8.0, gap: 60.0 } },
};

for (const [id, spec] of Object.entries(buttons)) {
  const el = document.getElementById(id) as HTMLButtonElement;
  el.addEventListener("click", () => {
    vm.command(spec.kind, spec.params ?? {});
    refreshButtons();
  });
}

const speedEl = document.getElementById("speed") as HTMLInputElement;
speedEl.addEventListener("change", () => {
  const factor = Number(speedEl.value);
  if (factor > 0) vm.command("set_speed_factor", { factor });
});

function refreshButtons(): void {
  for (const [id, spec] of Object.entries(buttons)) {
    (document.getElementById(id) as HTMLButtonElement).disabled =
      !vm.canSend(spec.kind);
  }
}

function refreshHud(): void {
  statusEl.textContent =
    `${vm.connection}${vm.scenarioName ? " · " + vm.scenarioName : ""}` +
    (vm.ended ? " · finished" : "");
  errorEl.textContent = vm.lastError;
  const recent = vm.history.slice(-8).reverse();
  historyEl.innerHTML = recent
    .map((r) => `<li class="${r.status}">#${r.id} ${r.kind} — ${r.status}</li>`)
    .join("");
}

function tick(): void {
  vm.expireStale();
  if (vm.latestFrame) {
    const cam = cameraFor(vm.latestFrame, canvas.width, canvas.height);
    paint(ctx, buildScene(vm.latestFrame), cam);
  }
  refreshButtons();
  refreshHud();
  requestAnimationFrame(tick);
}

setInterval(() => vm.expireStale(), ACK_TIMEOUT_MS / 4);
requestAnimationFrame(tick);
