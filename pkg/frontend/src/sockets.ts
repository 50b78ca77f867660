/**
 * Socket adapters. The console speaks newline-delimited JSON lines; in the
 * browser that rides a WebSocket (one frame line per message), in Node a
 * plain TCP stream straight to the servers.
 */

import { SocketFactory, WireSocket } from "./client.js";

export function webSocketFactory(url: string): SocketFactory {
  return () =>
    new Promise<WireSocket>((resolve, reject) => {
      const ws = new WebSocket(url);
      const wire: WireSocket = {
        send: (line) => ws.send(line),
        close: () => ws.close(),
        onLine: () => {},
        onClose: () => {},
      };
      ws.onopen = () => resolve(wire);
      ws.onerror = () => reject(new Error(`cannot reach ${url}`));
      ws.onmessage = (message) => {
        for (const line of String(message.data).split("\n")) {
          if (line.trim().length > 0) wire.onLine(line);
        }
      };
      ws.onclose = () => wire.onClose();
    });
}

/** Node-only: dial the server's TCP frame endpoint directly. */
export function tcpSocketFactory(host: string, port: number): SocketFactory {
  return async () => {
    const net = await import("node:net");
    return new Promise<WireSocket>((resolve, reject) => {
      const socket = net.createConnection({ host, port });
      let buffer = "";
      const wire: WireSocket = {
        send: (line) => socket.write(line),
        close: () => socket.destroy(),
        onLine: () => {},
        onClose: () => {},
      };
      socket.on("connect", () => resolve(wire));
      socket.on("error", (err: Error) => reject(err));
      socket.on("data", (chunk: Buffer) => {
        buffer += chunk.toString("utf-8");
        let index;
        while ((index = buffer.indexOf("\n")) >= 0) {
          const line = buffer.slice(0, index);
          buffer = buffer.slice(index + 1);
          if (line.trim().length > 0) wire.onLine(line);
        }
      });
      socket.on("close", () => wire.onClose());
    });
  };
}
