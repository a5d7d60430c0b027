/** Node-only transport: newline-delimited JSON over a plain TCP socket.
 * Used by the integration tests and any headless tooling. */

import * as net from "node:net";

import type { Transport } from "./transport.js";

export class TcpTransport implements Transport {
  onLine: (line: string) => void = () => {};
  onOpen: () => void = () => {};
  onClose: () => void = () => {};
  private sock: net.Socket;
  private buffer = "";

  constructor(host: string, port: number) {
    this.sock = net.createConnection({ host, port });
    this.sock.setNoDelay(true);
    this.sock.on("connect", () => this.onOpen());
    this.sock.on("close", () => this.onClose());
    this.sock.on("error", () => {
      /* close follows */
    });
    this.sock.on("data", (chunk) => {
      this.buffer += chunk.toString("utf-8");
      let idx: number;
      while ((idx = this.buffer.indexOf("\n")) >= 0) {
        const line = this.buffer.slice(0, idx);
        this.buffer = this.buffer.slice(idx + 1);
        if (line.trim()) this.onLine(line);
      }
    });
  }

  send(line: string): void {
    this.sock.write(line.endsWith("\n") ? line : line + "\n");
  }

  close(): void {
    this.sock.destroy();
  }
}
