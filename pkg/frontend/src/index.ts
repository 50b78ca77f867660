export { CodeError, FRAME_TYPES, canonicalJson, decodeFrame, encodeFrame, makeFrame } from "./frames.js";
export type { Frame, Payload } from "./frames.js";
export { ConsoleClient } from "./client.js";
export type { ClientOptions, SocketFactory, WireSocket } from "./client.js";
export { ReportFeed } from "./reports.js";
export type { FillEvent, ReportEvent } from "./reports.js";
export { buildBlotter, overlayBlotters } from "./blotter.js";
export type { BlotterMarker, BlotterSeries, TeamBlotter } from "./blotter.js";
export { UiSessionState } from "./session.js";
export type { ServiceLevel } from "./session.js";
export { PrefsEditor, killAgent, migrateBriefcase } from "./actions.js";
export type { KillOutcome, KillReport, MigrateOutcome, PrefsState } from "./actions.js";
export { tcpSocketFactory, webSocketFactory } from "./sockets.js";
