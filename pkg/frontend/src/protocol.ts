/** Wire protocol types for the quadtorque serve endpoint (one JSON object
 * per TCP line or WebSocket text frame). */

export interface CommandRanges {
  vx: [number, number];
  vy: [number, number];
  yaw_rate: [number, number];
}

export interface InfoMessage {
  type: "info";
  model: string;
  iteration: number;
  obs_dim: number;
  act_dim: number;
  control_hz: number;
  state_hz: number;
  command_ranges: CommandRanges;
  fingerprint: string;
}

export interface StateMessage {
  type: "state";
  time: number;
  base_pos: [number, number, number];
  base_quat: [number, number, number, number];
  joint_pos: number[];
  foot_contact: number[];
  torques: number[];
  reward: number;
  command: [number, number, number];
}

export interface ErrorMessage {
  type: "error";
  error: string;
}

export type ServerMessage = InfoMessage | StateMessage | ErrorMessage;

export interface Command {
  vx: number;
  vy: number;
  wz: number;
}

export function clampCommand(cmd: Command, ranges: CommandRanges): Command {
  const clip = (v: number, [lo, hi]: [number, number]) =>
    Math.min(hi, Math.max(lo, v));
  return {
    vx: clip(cmd.vx, ranges.vx),
    vy: clip(cmd.vy, ranges.vy),
    wz: clip(cmd.wz, ranges.yaw_rate),
  };
}

export function parseServerMessage(line: string): ServerMessage | null {
  try {
    const msg = JSON.parse(line);
    if (msg && typeof msg.type === "string") return msg as ServerMessage;
  } catch {
    /* tolerate partial lines from reconnects */
  }
  return null;
}
