/**
 * Reconnecting frame client. One socket, request/response matched by
 * request_id, exponential backoff on loss. While offline, only the owner's
 * control actions (KILL and SET_PARAMS) queue for delivery on reconnect;
 * everything else fails fast and is retried by its caller.
 */

import { CodeError, Frame, Payload, decodeFrame, encodeFrame, makeFrame } from "./frames.js";

export interface WireSocket {
  send(line: string): void;
  close(): void;
  onLine: (line: string) => void;
  onClose: () => void;
}

export type SocketFactory = () => Promise<WireSocket>;

const QUEUEABLE = new Set(["KILL", "SET_PARAMS"]);

interface Pending {
  frame: Frame;
  queueable: boolean;
  resolve: (frame: Frame) => void;
  reject: (err: Error) => void;
}

export interface ClientOptions {
  backoffBaseMs?: number;
  backoffMaxMs?: number;
  autoReconnect?: boolean;
  sleep?: (ms: number) => Promise<void>;
}

const realSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class ConsoleClient {
  connected = false;
  /** Frames the server pushed without a matching request. */
  onEvent: (frame: Frame) => void = () => {};
  onStateChange: (connected: boolean) => void = () => {};

  private socket: WireSocket | null = null;
  private pending = new Map<string, Pending>();
  private offlineQueue: Pending[] = [];
  private seq = 0;
  private attempts = 0;
  private closed = false;
  private waiters: Array<() => void> = [];

  constructor(private factory: SocketFactory, private options: ClientOptions = {}) {}

  async connect(): Promise<void> {
    const socket = await this.factory();
    socket.onLine = (line) => this.handleLine(line);
    socket.onClose = () => this.handleClose();
    this.socket = socket;
    this.connected = true;
    this.attempts = 0;
    this.onStateChange(true);
    for (const waiter of this.waiters.splice(0)) waiter();
    this.flushQueue();
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }

  /** Resolves as soon as the client is connected again. */
  waitConnected(): Promise<void> {
    if (this.connected) return Promise.resolve();
    return new Promise((resolve) => this.waiters.push(resolve));
  }

  request(type: string, payload: Payload): Promise<Frame> {
    this.seq += 1;
    const frame = makeFrame(type, `r${this.seq}`, payload);
    const queueable = QUEUEABLE.has(type);
    return new Promise<Frame>((resolve, reject) => {
      const entry: Pending = { frame, queueable, resolve, reject };
      if (!this.connected || this.socket === null) {
        if (queueable) {
          this.offlineQueue.push(entry);
        } else {
          reject(new CodeError("OFFLINE", "not connected"));
        }
        return;
      }
      this.pending.set(frame.request_id, entry);
      this.socket.send(encodeFrame(frame));
    });
  }

  private handleLine(line: string): void {
    let frame: Frame;
    try {
      frame = decodeFrame(line);
    } catch {
      return; // a garbled line never kills the console
    }
    const entry = this.pending.get(frame.request_id);
    if (entry === undefined) {
      this.onEvent(frame);
      return;
    }
    this.pending.delete(frame.request_id);
    if (frame.type === "ERROR") {
      const payload = frame.payload as { code?: string; message?: string };
      entry.reject(new CodeError(payload.code ?? "ERROR", payload.message ?? ""));
    } else {
      entry.resolve(frame);
    }
  }

  private handleClose(): void {
    if (!this.connected && this.socket === null) return;
    this.connected = false;
    this.socket = null;
    this.onStateChange(false);
    for (const [requestId, entry] of [...this.pending]) {
      this.pending.delete(requestId);
      if (entry.queueable) {
        this.offlineQueue.push(entry); // control actions survive the outage
      } else {
        entry.reject(new CodeError("DISCONNECTED", "connection lost"));
      }
    }
    if (this.options.autoReconnect !== false && !this.closed) {
      void this.reconnectLoop();
    }
  }

  private async reconnectLoop(): Promise<void> {
    const base = this.options.backoffBaseMs ?? 250;
    const max = this.options.backoffMaxMs ?? 8000;
    const sleep = this.options.sleep ?? realSleep;
    while (!this.connected && !this.closed) {
      const delay = Math.min(base * 2 ** this.attempts, max);
      this.attempts += 1;
      await sleep(delay);
      try {
        await this.connect();
      } catch {
        // still down, back off further
      }
    }
  }

  private flushQueue(): void {
    const queued = this.offlineQueue.splice(0);
    for (const entry of queued) {
      if (this.socket === null) {
        this.offlineQueue.push(entry);
        continue;
      }
      this.pending.set(entry.frame.request_id, entry);
      this.socket.send(encodeFrame(entry.frame));
    }
  }
}
