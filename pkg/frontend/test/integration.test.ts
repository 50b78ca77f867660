/**
 * Cross-implementation check against a live server. Skipped unless
 * TRADECASE_SERVER=host:port points at a running trade server whose token
 * file contains tok-alice. Start one with:
 *
 *   tradecase trade-server --listen 127.0.0.1:7470 --tokens tokens.txt --serve \
 *     --agents 'maker:instrument=STK,base_price=100,seed=it'
 */

import { describe, expect, it } from "vitest";

import { killAgent } from "../src/actions.js";
import { buildBlotter } from "../src/blotter.js";
import { ConsoleClient } from "../src/client.js";
import { ReportFeed } from "../src/reports.js";
import { UiSessionState } from "../src/session.js";
import { tcpSocketFactory } from "../src/sockets.js";

const target = process.env.TRADECASE_SERVER;

describe.runIf(Boolean(target))("against a live trade server", () => {
  it("deploys, trades, renders, kills", async () => {
    const [host, port] = target!.split(":");
    const client = new ConsoleClient(tcpSocketFactory(host!, Number(port)), { autoReconnect: false });
    await client.connect();
    const session = new UiSessionState("tok-alice");
    await session.login(client, 1);
    expect(session.sessionId).not.toBeNull();

    const agentId = `it-${Date.now()}`;
    await client.request("REGISTER", {
      token: session.token, code_ref: "greedy", agent_id: agentId,
      params: { instrument: "STK", target_qty: "3" }, cash: 100000,
    });
    await client.request("TICK", { count: 4 });

    const feed = new ReportFeed(session.token);
    await feed.poll(client, agentId);
    const series = buildBlotter(agentId, feed.events(agentId));
    expect(series.empty).toBe(false);
    expect(series.finalPosition).toBe(3);

    const outcome = await killAgent(client, session, agentId);
    expect(outcome.status).toBe("KILLED");
    client.close();
  }, 15000);
});
