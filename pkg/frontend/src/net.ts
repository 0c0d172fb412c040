// WebSocket wrapper with automatic reconnection. The socket type is
// structural so tests can drive a fake without a browser.

export interface WsLike {
  readyState: number;
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => WsLike;
export type Scheduler = (fn: () => void, ms: number) => void;

export interface NetHandlers {
  onMessage(raw: string): void;
  onStatus(connected: boolean): void;
}

export const OPEN = 1;

export class Reconnector {
  private sock: WsLike | null = null;
  private stopped = false;
  private attempt = 0;

  constructor(
    private url: string,
    private handlers: NetHandlers,
    private makeSocket: SocketFactory,
    private schedule: Scheduler = (fn, ms) => {
      setTimeout(fn, ms);
    },
  ) {}

  start(): void {
    this.open();
  }

  send(msg: string): boolean {
    if (this.sock !== null && this.sock.readyState === OPEN) {
      this.sock.send(msg);
      return true;
    }
    return false;
  }

  stop(): void {
    this.stopped = true;
    if (this.sock !== null) this.sock.close();
  }

  retryDelayMs(): number {
    return Math.min(5000, 250 * 2 ** this.attempt);
  }

  private open(): void {
    if (this.stopped) return;
    const s = this.makeSocket(this.url);
    this.sock = s;
    s.onopen = () => {
      this.attempt = 0;
      this.handlers.onStatus(true);
    };
    s.onmessage = (ev) => {
      this.handlers.onMessage(String(ev.data));
    };
    s.onclose = () => {
      this.handlers.onStatus(false);
      if (this.stopped) return;
      const delay = this.retryDelayMs();
      this.attempt += 1;
      this.schedule(() => this.open(), delay);
    };
    s.onerror = () => {
      // the close handler owns recovery
    };
  }
}
