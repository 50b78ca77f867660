/**
 * The wire protocol shared with the servers: one JSON object per line with
 * exactly the keys type, request_id, payload, encoded canonically (sorted
 * keys, no whitespace, ASCII-escaped) so recorded frames compare byte for
 * byte against golden files on either side of the wire.
 */

export const FRAME_TYPES = new Set([
  "CREATE", "GET", "PUT", "DELETE", "SYNC_BEGIN", "SYNC_TRANSFER", "PREPARE",
  "VOTE", "COMMIT", "ABORT", "ACK", "ERROR",
  "LOAD", "TRANSITION", "MESSAGE", "MIGRATE", "SHUTDOWN", "STATUS",
  "REGISTER", "ORDER", "KILL", "SET_PARAMS", "SUBSCRIBE_MD",
  "SUBSCRIBE_REPORTS", "EVENT", "TICK",
  "AVAIL_REPORT", "RANK", "LOGIN", "HEARTBEAT",
]);

export type Payload = { [key: string]: unknown };

export interface Frame {
  type: string;
  request_id: string;
  payload: Payload;
}

export function makeFrame(type: string, requestId: string, payload: Payload = {}): Frame {
  if (!FRAME_TYPES.has(type)) {
    throw new Error(`undocumented frame type ${type}`);
  }
  return { type, request_id: requestId, payload };
}

function asciiQuote(text: string): string {
  // JSON.stringify escapes control characters and quotes; anything outside
  // ASCII is escaped to \uXXXX to match the server's encoder.
  return JSON.stringify(text).replace(/[-￿]/g,
    (ch) => "\\u" + ch.charCodeAt(0).toString(16).padStart(4, "0"));
}

export function canonicalJson(value: unknown): string {
  if (value === null) return "null";
  switch (typeof value) {
    case "boolean":
      return value ? "true" : "false";
    case "number":
      if (!Number.isFinite(value)) throw new Error("non-finite number in frame");
      return Number.isInteger(value) ? String(value) : JSON.stringify(value);
    case "string":
      return asciiQuote(value);
    case "object":
      if (Array.isArray(value)) {
        return "[" + value.map(canonicalJson).join(",") + "]";
      }
      const record = value as Record<string, unknown>;
      const body = Object.keys(record)
        .sort()
        .filter((key) => record[key] !== undefined)
        .map((key) => asciiQuote(key) + ":" + canonicalJson(record[key]))
        .join(",");
      return "{" + body + "}";
    default:
      throw new Error(`cannot encode ${typeof value} in frame`);
  }
}

export function encodeFrame(frame: Frame): string {
  return canonicalJson(frame) + "\n";
}

export function decodeFrame(line: string): Frame {
  const parsed: unknown = JSON.parse(line);
  if (
    typeof parsed !== "object" || parsed === null || Array.isArray(parsed) ||
    Object.keys(parsed).length !== 3
  ) {
    throw new Error("malformed frame");
  }
  const frame = parsed as Frame;
  if (
    typeof frame.type !== "string" || !FRAME_TYPES.has(frame.type) ||
    typeof frame.request_id !== "string" ||
    typeof frame.payload !== "object" || frame.payload === null
  ) {
    throw new Error("malformed frame");
  }
  return frame;
}

/** Error transported in an ERROR frame: carries the stable machine code. */
export class CodeError extends Error {
  constructor(public code: string, message: string) {
    super(message || code);
    this.name = "CodeError";
  }
}
