/** Teleoperation client: connects to a serve endpoint, keeps UiState up to
 * date, reconnects with backoff, and sends clamped, slew-limited commands
 * that are marked "applied" once a state message echoes them. */

import {
  clampCommand,
  parseServerMessage,
  type Command,
  type ServerMessage,
} from "./protocol.js";
import {
  commandsEqual,
  initialUiState,
  slewToward,
  type UiState,
} from "./state.js";
import type { Transport, TransportFactory } from "./transport.js";

export interface ClientOptions {
  slewRate?: number;          // command units per second, default 1.0
  reconnectDelayMs?: number;  // initial backoff, doubles to a cap
  maxReconnectDelayMs?: number;
}

export class TeleopClient {
  readonly state: UiState = initialUiState();
  onStateUpdate: () => void = () => {};
  private transport: Transport | null = null;
  private lastSent: Command | null = null;
  private reconnectDelay: number;
  private readonly options: Required<ClientOptions>;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;

  constructor(private readonly factory: TransportFactory,
              options: ClientOptions = {}) {
    this.options = {
      slewRate: options.slewRate ?? 1.0,
      reconnectDelayMs: options.reconnectDelayMs ?? 500,
      maxReconnectDelayMs: options.maxReconnectDelayMs ?? 5000,
    };
    this.reconnectDelay = this.options.reconnectDelayMs;
  }

  connect(): void {
    this.closed = false;
    this.state.status = "connecting";
    this.onStateUpdate();
    const transport = this.factory();
    this.transport = transport;
    transport.onOpen = () => {
      this.state.status = "connected";
      this.state.retryInSeconds = 0;
      this.reconnectDelay = this.options.reconnectDelayMs;
      this.onStateUpdate();
    };
    transport.onLine = (line) => {
      const msg = parseServerMessage(line);
      if (msg) this.handleMessage(msg);
    };
    transport.onClose = () => {
      this.state.status = "disconnected";
      this.onStateUpdate();
      if (!this.closed) this.scheduleReconnect();
    };
  }

  close(): void {
    this.closed = true;
    if (this.retryTimer) clearTimeout(this.retryTimer);
    this.transport?.close();
  }

  private scheduleReconnect(): void {
    const delay = this.reconnectDelay;
    this.reconnectDelay = Math.min(this.reconnectDelay * 2,
                                   this.options.maxReconnectDelayMs);
    this.state.retryInSeconds = delay / 1000;
    this.onStateUpdate();
    this.retryTimer = setTimeout(() => this.connect(), delay);
  }

  private handleMessage(msg: ServerMessage): void {
    if (msg.type === "info") {
      this.state.info = msg;
    } else if (msg.type === "state") {
      this.state.latest = msg;
      this.state.history.push(msg);
      if (this.lastSent && commandsEqual(this.lastSent, msg.command)) {
        this.state.commandApplied = true;
      }
    }
    this.onStateUpdate();
  }

  /** Set where the inputs want the command to go; the setpoint ramps there. */
  setTarget(cmd: Partial<Command>): void {
    Object.assign(this.state.target, cmd);
  }

  /** Advance the slew limiter and send the setpoint if it moved; call this
   * on a timer (the browser uses requestAnimationFrame). */
  tick(dtSeconds: number): void {
    const ranges = this.state.info?.command_ranges;
    const goal = ranges ? clampCommand(this.state.target, ranges)
                        : this.state.target;
    const next = slewToward(this.state.setpoint, goal,
                            this.options.slewRate, dtSeconds);
    const moved =
      next.vx !== this.state.setpoint.vx ||
      next.vy !== this.state.setpoint.vy ||
      next.wz !== this.state.setpoint.wz;
    this.state.setpoint = next;
    if (moved || (this.lastSent === null && this.state.status === "connected")) {
      this.sendCommand(next);
    }
  }

  /** Clamp and transmit immediately (sliders use this on release). */
  sendCommand(cmd: Command): void {
    const ranges = this.state.info?.command_ranges;
    const clamped = ranges ? clampCommand(cmd, ranges) : cmd;
    this.state.setpoint = clamped;
    this.lastSent = clamped;
    this.state.commandApplied = false;
    this.transport?.send(JSON.stringify({ type: "command", ...clamped }));
    this.onStateUpdate();
  }

  sendReset(): void {
    this.transport?.send(JSON.stringify({ type: "reset" }));
  }
}
