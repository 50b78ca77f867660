import { describe, expect, it } from "vitest";

import { PrefsEditor, migrateBriefcase } from "../src/actions.js";
import { ConsoleClient } from "../src/client.js";
import { UiSessionState } from "../src/session.js";
import { MockServer } from "./mock.js";

function loginServer(): MockServer {
  const server = new MockServer();
  server.ack("LOGIN", { session_id: "s1", level: "FULL", priority: 1 });
  server.ack("HEARTBEAT", { level: "REDUCED" });
  return server;
}

describe("session state", () => {
  it("login stores the session and heartbeat tracks the level", async () => {
    const server = loginServer();
    const client = new ConsoleClient(server.factory(), { autoReconnect: false });
    await client.connect();
    const session = new UiSessionState("tok-alice");
    await session.login(client, 1);
    expect(session.sessionId).toBe("s1");
    expect(session.indicator()).toBe("live");
    await session.heartbeat(client);
    expect(session.level).toBe("REDUCED");
    expect(session.indicator()).toBe("reduced");
  });

  it("indicator follows the last LEVEL event received", async () => {
    const session = new UiSessionState("tok-alice");
    session.sessionId = "s1";
    session.applyEvent({ type: "EVENT", request_id: "x", payload: {
      events: [
        { type: "LEVEL", session_id: "s1", level: "REDUCED" },
        { type: "LEVEL", session_id: "someone-else", level: "SNAPSHOT_ONLY" },
      ],
    }});
    expect(session.level).toBe("REDUCED"); // other sessions' events ignored
    session.applyEvent({ type: "EVENT", request_id: "y", payload: {
      events: [{ type: "LEVEL", session_id: "s1", level: "SNAPSHOT_ONLY" }],
    }});
    expect(session.indicator()).toBe("snapshots only");
  });
});

describe("preference updates", () => {
  it("optimistic apply confirmed by the server shows the applied badge", async () => {
    const server = new MockServer();
    server.ack("SET_PARAMS", { params: { window: "5", clip: "2" }, tick: 21 });
    const client = new ConsoleClient(server.factory(), { autoReconnect: false });
    await client.connect();
    const prefs = new PrefsEditor("a1");
    prefs.loadFromServer({ window: "3", clip: "2" });
    const state = await prefs.apply(client, new UiSessionState("tok-alice"), { window: "5" });
    expect(state.params).toEqual({ window: "5", clip: "2" });
    expect(state.badge).toBe("applied at tick 21");
    expect(state.error).toBeNull();
  });

  it("server rejection rolls the optimistic value back", async () => {
    const server = new MockServer();
    server.on("SET_PARAMS", (frame) => ({
      type: "ERROR", request_id: frame.request_id,
      payload: { code: "BAD_REQUEST", message: "window must be >= 2" },
    }));
    const client = new ConsoleClient(server.factory(), { autoReconnect: false });
    await client.connect();
    const prefs = new PrefsEditor("a1");
    prefs.loadFromServer({ window: "3" });
    const state = await prefs.apply(client, new UiSessionState("tok-alice"), { window: "0" });
    expect(state.params).toEqual({ window: "3" }); // rolled back
    expect(state.error).toContain("BAD_REQUEST");
  });

  it("a concurrent server-side change wins on the next apply", async () => {
    const server = new MockServer();
    // someone updated clip from the CLI; the server echoes the merged truth
    server.ack("SET_PARAMS", { params: { window: "5", clip: "9" }, tick: 30 });
    const client = new ConsoleClient(server.factory(), { autoReconnect: false });
    await client.connect();
    const prefs = new PrefsEditor("a1");
    prefs.loadFromServer({ window: "3", clip: "2" });
    const state = await prefs.apply(client, new UiSessionState("tok-alice"), { window: "5" });
    expect(state.params.clip).toBe("9"); // refreshed to the server value
  });
});

describe("migration action", () => {
  it("rolled back migration surfaces the reason", async () => {
    const server = new MockServer();
    server.ack("MIGRATE", { result: "ROLLED_BACK", reason: "DESTINATION_UNREACHABLE" });
    const client = new ConsoleClient(server.factory(), { autoReconnect: false });
    await client.connect();
    const outcome = await migrateBriefcase(client, new UiSessionState("tok-alice"), "bc-1", "B");
    expect(outcome).toEqual({ status: "ROLLED_BACK", reason: "DESTINATION_UNREACHABLE" });
  });

  it("completed migration records the new home server", async () => {
    const server = new MockServer();
    server.ack("MIGRATE", { result: "COMPLETED", destination: "127.0.0.1:7462" });
    const client = new ConsoleClient(server.factory(), { autoReconnect: false });
    await client.connect();
    const session = new UiSessionState("tok-alice");
    const outcome = await migrateBriefcase(client, session, "bc-1", "127.0.0.1:7462");
    expect(outcome.status).toBe("COMPLETED");
    expect(session.selectedServer).toBe("127.0.0.1:7462");
  });

  it("a timeout mid-migrate is surfaced, not swallowed", async () => {
    const server = new MockServer();
    server.on("MIGRATE", (frame) => ({
      type: "ERROR", request_id: frame.request_id,
      payload: { code: "TIMEOUT", message: "destination did not answer" },
    }));
    const client = new ConsoleClient(server.factory(), { autoReconnect: false });
    await client.connect();
    const outcome = await migrateBriefcase(client, new UiSessionState("tok-alice"), "bc-1", "B");
    expect(outcome.status).toBe("TIMEOUT");
  });
});
