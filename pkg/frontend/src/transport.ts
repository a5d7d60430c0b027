/** Transport abstraction: the client logic is identical over a browser
 * WebSocket and a raw TCP socket (used by the Node tests). */

export interface Transport {
  send(line: string): void;
  close(): void;
  onLine: (line: string) => void;
  onOpen: () => void;
  onClose: () => void;
}

export type TransportFactory = () => Transport;

/** Browser transport: one JSON message per WebSocket text frame. */
export class WebSocketTransport implements Transport {
  onLine: (line: string) => void = () => {};
  onOpen: () => void = () => {};
  onClose: () => void = () => {};
  private ws: WebSocket;

  constructor(url: string) {
    this.ws = new WebSocket(url);
    this.ws.onopen = () => this.onOpen();
    this.ws.onclose = () => this.onClose();
    this.ws.onerror = () => {
      /* close fires right after; the client handles reconnecting */
    };
    this.ws.onmessage = (ev: MessageEvent) => {
      for (const line of String(ev.data).split("\n")) {
        if (line.trim()) this.onLine(line);
      }
    };
  }

  send(line: string): void {
    if (this.ws.readyState === WebSocket.OPEN) this.ws.send(line);
  }

  close(): void {
    this.ws.close();
  }
}
