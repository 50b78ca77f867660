/**
 * Console session state: the login, its priority and current service level,
 * which agents are on screen, and the selected servers. The level indicator
 * follows the last LEVEL event received, or the level echoed by a heartbeat.
 */

import { ConsoleClient } from "./client.js";
import { Frame } from "./frames.js";

export type ServiceLevel = "FULL" | "REDUCED" | "SNAPSHOT_ONLY";

export class UiSessionState {
  sessionId: string | null = null;
  priority = 2;
  level: ServiceLevel = "FULL";
  subscribedAgents = new Set<string>();
  selectedServer: string | null = null;
  selectedBriefcase: string | null = null;

  constructor(public token: string) {}

  async login(client: ConsoleClient, priority: number): Promise<void> {
    const reply = await client.request("LOGIN", { token: this.token, priority });
    const payload = reply.payload as { session_id: string; level: ServiceLevel; priority: number };
    this.sessionId = payload.session_id;
    this.priority = payload.priority;
    this.level = payload.level;
  }

  async heartbeat(client: ConsoleClient): Promise<ServiceLevel> {
    if (this.sessionId === null) throw new Error("not logged in");
    const reply = await client.request("HEARTBEAT", { session_id: this.sessionId });
    this.level = (reply.payload as { level: ServiceLevel }).level;
    return this.level;
  }

  /** Feed every EVENT frame through here; LEVEL changes move the indicator. */
  applyEvent(frame: Frame): void {
    const events = (frame.payload as { events?: Array<Record<string, unknown>> }).events ?? [];
    for (const event of events) {
      if (event.type === "LEVEL" && event.session_id === this.sessionId) {
        this.level = event.level as ServiceLevel;
      }
    }
  }

  indicator(): string {
    return { FULL: "live", REDUCED: "reduced", SNAPSHOT_ONLY: "snapshots only" }[this.level];
  }
}
