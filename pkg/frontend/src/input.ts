/** Keyboard and slider input.
 *
 * WASD drives forward/lateral velocity, Q/E the yaw rate; keys set the
 * target and the client's slew limiter ramps the setpoint. R resets the
 * episode. Sliders write the target directly.
 */

import type { TeleopClient } from "./client.js";

const KEY_TARGETS: Record<string, { axis: "vx" | "vy" | "wz"; sign: number }> = {
  w: { axis: "vx", sign: +1 },
  s: { axis: "vx", sign: -1 },
  a: { axis: "vy", sign: +1 },
  d: { axis: "vy", sign: -1 },
  q: { axis: "wz", sign: +1 },
  e: { axis: "wz", sign: -1 },
};

export class KeyboardInput {
  private pressed = new Set<string>();

  constructor(private readonly client: TeleopClient,
              target: GlobalEventHandlers = window) {
    target.onkeydown = (ev: KeyboardEvent) => this.onKey(ev.key, true, ev);
    target.onkeyup = (ev: KeyboardEvent) => this.onKey(ev.key, false, ev);
  }

  private onKey(key: string, down: boolean, ev: KeyboardEvent): void {
    const k = key.toLowerCase();
    if (k === "r" && down) {
      this.client.sendReset();
      return;
    }
    if (!(k in KEY_TARGETS)) return;
    ev.preventDefault();
    if (down) this.pressed.add(k);
    else this.pressed.delete(k);
    this.applyPressed();
  }

  private applyPressed(): void {
    const ranges = this.client.state.info?.command_ranges;
    const span = {
      vx: ranges ? ranges.vx : [-1, 1],
      vy: ranges ? ranges.vy : [-1, 1],
      wz: ranges ? ranges.yaw_rate : [-3.14, 3.14],
    };
    const goal = { vx: 0, vy: 0, wz: 0 };
    for (const k of this.pressed) {
      const { axis, sign } = KEY_TARGETS[k];
      goal[axis] = sign > 0 ? span[axis][1] : span[axis][0];
    }
    this.client.setTarget(goal);
  }
}

export function bindSlider(client: TeleopClient, el: HTMLInputElement,
                           axis: "vx" | "vy" | "wz"): void {
  el.oninput = () => client.setTarget({ [axis]: parseFloat(el.value) });
}
