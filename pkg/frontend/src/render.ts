/** 2-D schematic rendering: a top-down track with heading and command
 * vectors, a side-view leg skeleton with contact dots, and a reward
 * sparkline over the last ten seconds. */

import type { StateMessage } from "./protocol.js";
import type { UiState } from "./state.js";

// A1-like schematic geometry (metres); rendering only
const HIP_X = 0.183;
const THIGH_LEN = 0.2;
const CALF_LEN = 0.2;

function quatToYawPitch(q: [number, number, number, number]) {
  const [w, x, y, z] = q;
  const yaw = Math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z));
  const pitch = Math.asin(Math.max(-1, Math.min(1, 2 * (w * y - z * x))));
  return { yaw, pitch };
}

export function drawTopDown(ctx: CanvasRenderingContext2D, ui: UiState,
                            w: number, h: number): void {
  ctx.clearRect(0, 0, w, h);
  const st = ui.latest;
  if (!st) return;
  const scale = 60; // px per metre
  const history = ui.history.toArray();
  const cx = w / 2 - st.base_pos[0] * scale;
  const cy = h / 2 + st.base_pos[1] * scale;

  ctx.strokeStyle = "#4a6";
  ctx.beginPath();
  history.forEach((s, i) => {
    const px = cx + s.base_pos[0] * scale;
    const py = cy - s.base_pos[1] * scale;
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  });
  ctx.stroke();

  const { yaw } = quatToYawPitch(st.base_quat);
  const px = cx + st.base_pos[0] * scale;
  const py = cy - st.base_pos[1] * scale;
  ctx.save();
  ctx.translate(px, py);
  ctx.rotate(-yaw);
  ctx.fillStyle = "#ddd";
  ctx.fillRect(-HIP_X * scale, -0.09 * scale, 2 * HIP_X * scale, 0.18 * scale);
  ctx.strokeStyle = "#e66";
  ctx.beginPath();
  ctx.moveTo(0, 0);
  ctx.lineTo(0.3 * scale, 0);
  ctx.stroke();
  // commanded velocity vector in the body frame
  ctx.strokeStyle = "#39f";
  ctx.beginPath();
  ctx.moveTo(0, 0);
  ctx.lineTo(st.command[0] * 0.4 * scale, -st.command[1] * 0.4 * scale);
  ctx.stroke();
  ctx.restore();
}

/** Side view: base line plus front/rear legs from the pitch-plane joint
 * angles; feet and knees get contact dots. */
export function drawSideView(ctx: CanvasRenderingContext2D, ui: UiState,
                             w: number, h: number): void {
  ctx.clearRect(0, 0, w, h);
  const st = ui.latest;
  if (!st) return;
  const scale = 220;
  const groundY = h - 24;
  const baseX = w / 2;
  const baseY = groundY - st.base_pos[2] * scale;
  const { pitch } = quatToYawPitch(st.base_quat);

  ctx.strokeStyle = "#888";
  ctx.beginPath();
  ctx.moveTo(0, groundY);
  ctx.lineTo(w, groundY);
  ctx.stroke();

  // trunk
  const bodyDx = Math.cos(pitch) * HIP_X * scale;
  const bodyDy = Math.sin(pitch) * HIP_X * scale;
  ctx.strokeStyle = "#eee";
  ctx.lineWidth = 5;
  ctx.beginPath();
  ctx.moveTo(baseX - bodyDx, baseY + bodyDy);
  ctx.lineTo(baseX + bodyDx, baseY - bodyDy);
  ctx.stroke();
  ctx.lineWidth = 2;

  // legs: (leg index, thigh, calf) with FL/FR at the front hip
  const legs = [
    { hip: +1, thigh: st.joint_pos[1], calf: st.joint_pos[2], contact: st.foot_contact[0], color: "#8cf" },
    { hip: +1, thigh: st.joint_pos[4], calf: st.joint_pos[5], contact: st.foot_contact[1], color: "#58a" },
    { hip: -1, thigh: st.joint_pos[7], calf: st.joint_pos[8], contact: st.foot_contact[2], color: "#fa8" },
    { hip: -1, thigh: st.joint_pos[10], calf: st.joint_pos[11], contact: st.foot_contact[3], color: "#a75" },
  ];
  for (const leg of legs) {
    const hx = baseX + leg.hip * bodyDx;
    const hy = baseY - leg.hip * bodyDy;
    // joint angle 0 points straight down; +thigh pitches the leg backward
    const a1 = pitch + leg.thigh;
    const kx = hx - Math.sin(a1) * THIGH_LEN * scale;
    const ky = hy + Math.cos(a1) * THIGH_LEN * scale;
    const a2 = a1 + leg.calf;
    const fx = kx - Math.sin(a2) * CALF_LEN * scale;
    const fy = ky + Math.cos(a2) * CALF_LEN * scale;
    ctx.strokeStyle = leg.color;
    ctx.beginPath();
    ctx.moveTo(hx, hy);
    ctx.lineTo(kx, ky);
    ctx.lineTo(fx, fy);
    ctx.stroke();
    ctx.fillStyle = leg.contact ? "#2e2" : "#444";
    ctx.beginPath();
    ctx.arc(fx, fy, 4, 0, 2 * Math.PI);
    ctx.fill();
  }
}

export function drawSparkline(ctx: CanvasRenderingContext2D, ui: UiState,
                              w: number, h: number): void {
  ctx.clearRect(0, 0, w, h);
  const states = ui.history.toArray();
  if (states.length < 2) return;
  const rewards = states.map((s: StateMessage) => s.reward);
  const lo = Math.min(...rewards);
  const hi = Math.max(...rewards);
  const span = hi - lo || 1;
  ctx.strokeStyle = "#fc6";
  ctx.beginPath();
  rewards.forEach((r, i) => {
    const x = (i / (rewards.length - 1)) * w;
    const y = h - ((r - lo) / span) * (h - 4) - 2;
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}
