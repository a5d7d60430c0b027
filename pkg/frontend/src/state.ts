/** Client-side state: connection status, latest robot state, commanded
 * setpoint, and a bounded history ring for the sparkline. */

import type { Command, InfoMessage, StateMessage } from "./protocol.js";

export type ConnectionStatus =
  | "connecting"
  | "connected"
  | "disconnected";

export class RingBuffer<T> {
  private items: T[] = [];
  constructor(readonly capacity: number) {}

  push(item: T): void {
    this.items.push(item);
    if (this.items.length > this.capacity) this.items.shift();
  }

  get length(): number {
    return this.items.length;
  }

  last(): T | undefined {
    return this.items[this.items.length - 1];
  }

  toArray(): readonly T[] {
    return this.items;
  }

  clear(): void {
    this.items = [];
  }
}

export interface UiState {
  status: ConnectionStatus;
  info: InfoMessage | null;
  latest: StateMessage | null;
  setpoint: Command;           // slew-limited value actually sent
  target: Command;             // what the inputs ask for
  commandApplied: boolean;     // last sent command echoed by a state message
  retryInSeconds: number;      // countdown while disconnected
  history: RingBuffer<StateMessage>;
}

/** 10 s of state at the 50 Hz stream rate. */
export const HISTORY_CAPACITY = 500;

export function initialUiState(): UiState {
  return {
    status: "connecting",
    info: null,
    latest: null,
    setpoint: { vx: 0, vy: 0, wz: 0 },
    target: { vx: 0, vy: 0, wz: 0 },
    commandApplied: true,
    retryInSeconds: 0,
    history: new RingBuffer<StateMessage>(HISTORY_CAPACITY),
  };
}

/** Move `current` toward `goal` by at most rate*dt per axis, so keyboard
 * taps turn into joystick-like ramps. */
export function slewToward(
  current: Command,
  goal: Command,
  rate: number,
  dt: number,
): Command {
  const stepTo = (c: number, g: number) => {
    const maxStep = rate * dt;
    const d = g - c;
    if (Math.abs(d) <= maxStep) return g;
    return c + Math.sign(d) * maxStep;
  };
  return {
    vx: stepTo(current.vx, goal.vx),
    vy: stepTo(current.vy, goal.vy),
    wz: stepTo(current.wz, goal.wz),
  };
}

/** The server rounds echoed commands to 4 decimals on the wire, so match
 * with a tolerance above that quantization. */
export function commandsEqual(a: Command, b: [number, number, number],
                              tol = 5e-4): boolean {
  return (
    Math.abs(a.vx - b[0]) <= tol &&
    Math.abs(a.vy - b[1]) <= tol &&
    Math.abs(a.wz - b[2]) <= tol
  );
}
