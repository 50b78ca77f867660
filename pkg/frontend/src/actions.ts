/**
 * Owner control actions. Kill and preference updates queue while offline
 * (the client handles that); migration and reads fail fast and surface the
 * outcome for the UI to render.
 */

import { ConsoleClient } from "./client.js";
import { CodeError } from "./frames.js";
import { UiSessionState } from "./session.js";

export interface KillReport {
  agent_id: string;
  cancelled_orders: string[];
  final_position: Record<string, number>;
  final_cash: number;
  tick: number;
}

export type KillOutcome =
  | { status: "KILLED"; report: KillReport }
  | { status: "CANCELLED" }
  | { status: "UNAUTHORIZED"; explanation: string }
  | { status: "ERROR"; code: string; message: string };

export async function killAgent(
  client: ConsoleClient,
  session: UiSessionState,
  agentId: string,
  confirm: () => boolean | Promise<boolean> = () => true,
): Promise<KillOutcome> {
  if (!(await confirm())) return { status: "CANCELLED" };
  try {
    const reply = await client.request("KILL", { agent_id: agentId, token: session.token });
    return { status: "KILLED", report: reply.payload as unknown as KillReport };
  } catch (err) {
    if (err instanceof CodeError && err.code === "UNAUTHORIZED") {
      return {
        status: "UNAUTHORIZED",
        explanation: "the marketplace kill policy does not allow this session to remove the agent",
      };
    }
    const code = err instanceof CodeError ? err.code : "ERROR";
    return { status: "ERROR", code, message: (err as Error).message };
  }
}

export interface PrefsState {
  params: Record<string, string>;
  badge: string | null;
  error: string | null;
}

/** Optimistic preference editor: applies locally at once, rolls back to the
 * server's value when the server refuses, refreshes on concurrent change. */
export class PrefsEditor {
  state: PrefsState = { params: {}, badge: null, error: null };

  constructor(private agentId: string) {}

  loadFromServer(params: Record<string, string>): void {
    this.state = { params: { ...params }, badge: null, error: null };
  }

  async apply(
    client: ConsoleClient,
    session: UiSessionState,
    updates: Record<string, string>,
  ): Promise<PrefsState> {
    const before = { ...this.state.params };
    this.state = { params: { ...before, ...updates }, badge: "applying...", error: null };
    try {
      const reply = await client.request("SET_PARAMS", {
        agent_id: this.agentId,
        params: updates,
        token: session.token,
      });
      const payload = reply.payload as { params: Record<string, string>; tick: number };
      this.state = {
        params: { ...payload.params },
        badge: `applied at tick ${payload.tick}`,
        error: null,
      };
    } catch (err) {
      const message = err instanceof CodeError ? `${err.code}: ${err.message}` : String(err);
      this.state = { params: before, badge: null, error: message };
    }
    return this.state;
  }
}

export type MigrateOutcome =
  | { status: "COMPLETED"; destination: string }
  | { status: "ROLLED_BACK"; reason: string }
  | { status: "TIMEOUT"; message: string }
  | { status: "ERROR"; code: string; message: string };

export async function migrateBriefcase(
  client: ConsoleClient,
  session: UiSessionState,
  briefcaseId: string,
  destination: string,
): Promise<MigrateOutcome> {
  try {
    const reply = await client.request("MIGRATE", {
      briefcase_id: briefcaseId,
      destination,
      token: session.token,
    });
    const payload = reply.payload as { result: string; destination?: string; reason?: string };
    if (payload.result === "COMPLETED") {
      session.selectedServer = destination; // destination is the new home
      return { status: "COMPLETED", destination };
    }
    return { status: "ROLLED_BACK", reason: payload.reason ?? "unknown" };
  } catch (err) {
    if (err instanceof CodeError && (err.code === "TIMEOUT" || err.code === "DISCONNECTED")) {
      return { status: "TIMEOUT", message: err.message };
    }
    const code = err instanceof CodeError ? err.code : "ERROR";
    return { status: "ERROR", code, message: (err as Error).message };
  }
}
