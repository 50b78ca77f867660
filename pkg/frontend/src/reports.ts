/**
 * Cursor-resumable report feeds: one monotone cursor per agent, events
 * appended exactly once. A failed poll never advances the cursor, so a
 * reconnected feed resumes with no gap and no duplicate.
 */

import { ConsoleClient } from "./client.js";

export interface ReportEvent {
  type: string;
  tick: number;
  [key: string]: unknown;
}

export interface FillEvent extends ReportEvent {
  type: "FILL";
  agent_id: string;
  order_id: string;
  venue_id: string;
  instrument: string;
  side: "BUY" | "SELL";
  price: number;
  qty: number;
  position: number;
  cash: number;
}

export class ReportFeed {
  private cursors = new Map<string, number>();
  private log = new Map<string, ReportEvent[]>();

  constructor(private token: string) {}

  cursor(agentId: string): number {
    return this.cursors.get(agentId) ?? 0;
  }

  events(agentId: string): ReportEvent[] {
    return this.log.get(agentId) ?? [];
  }

  fills(agentId: string): FillEvent[] {
    return this.events(agentId).filter((e): e is FillEvent => e.type === "FILL");
  }

  async poll(client: ConsoleClient, agentId: string): Promise<ReportEvent[]> {
    const cursor = this.cursor(agentId);
    const reply = await client.request("SUBSCRIBE_REPORTS", {
      agent_id: agentId,
      cursor,
      token: this.token,
    });
    const payload = reply.payload as { events: ReportEvent[]; next_cursor: number };
    const next = payload.next_cursor;
    if (next < cursor) {
      throw new Error(`cursor moved backwards: ${cursor} -> ${next}`);
    }
    const fresh = payload.events;
    if (fresh.length !== next - cursor) {
      throw new Error(`server sent ${fresh.length} events for cursor span ${next - cursor}`);
    }
    if (!this.log.has(agentId)) this.log.set(agentId, []);
    this.log.get(agentId)!.push(...fresh);
    this.cursors.set(agentId, next);
    return fresh;
  }
}
