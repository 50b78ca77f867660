/**
 * Minimal DOM console. Connect to a frame endpoint bridged over WebSocket,
 * log in, watch agent blotters, and steer agents: kill, preferences,
 * briefcase migration. All protocol logic lives in the library modules;
 * this file only renders.
 */

import { PrefsEditor, killAgent, migrateBriefcase } from "./actions.js";
import { buildBlotter } from "./blotter.js";
import { ConsoleClient } from "./client.js";
import { ReportFeed } from "./reports.js";
import { UiSessionState } from "./session.js";
import { webSocketFactory } from "./sockets.js";

const el = (tag: string, text = "", cls = ""): HTMLElement => {
  const node = document.createElement(tag);
  node.textContent = text;
  if (cls) node.className = cls;
  return node;
};

function banner(root: HTMLElement, text: string, cls: string): void {
  const note = el("div", text, `banner ${cls}`);
  root.prepend(note);
  setTimeout(() => note.remove(), 6000);
}

async function start(): Promise<void> {
  const root = document.getElementById("app")!;
  const endpoint = (document.getElementById("endpoint") as HTMLInputElement).value;
  const token = (document.getElementById("token") as HTMLInputElement).value;
  const priority = Number((document.getElementById("priority") as HTMLInputElement).value);

  const session = new UiSessionState(token);
  const feed = new ReportFeed(token);
  const client = new ConsoleClient(webSocketFactory(endpoint));
  const level = el("span", "connecting...", "level");
  const status = el("div", "", "status");
  status.append("session: ", level);
  root.replaceChildren(status);

  client.onStateChange = (up) => {
    status.classList.toggle("offline", !up);
    if (!up) level.textContent = "reconnecting...";
  };
  await client.connect();
  await session.login(client, priority);
  level.textContent = session.indicator();

  const agents = new Map<string, HTMLElement>();
  const agentForm = el("div", "", "agent-form");
  const agentInput = el("input") as HTMLInputElement;
  agentInput.placeholder = "agent id";
  const watch = el("button", "watch agent");
  watch.onclick = () => {
    const agentId = agentInput.value.trim();
    if (agentId && !agents.has(agentId)) agents.set(agentId, agentCard(agentId));
  };
  agentForm.append(agentInput, watch);
  root.append(agentForm);

  function agentCard(agentId: string): HTMLElement {
    const card = el("div", "", "agent-card");
    card.append(el("h3", agentId));
    const table = el("table", "", "blotter");
    const summary = el("div", "no fills yet", "summary");
    const prefs = new PrefsEditor(agentId);
    const prefsInput = el("input") as HTMLInputElement;
    prefsInput.placeholder = "key=value";
    const applyBtn = el("button", "apply prefs");
    applyBtn.onclick = async () => {
      const [key, value] = prefsInput.value.split("=", 2);
      if (!key || value === undefined) return;
      const state = await prefs.apply(client, session, { [key]: value });
      banner(root, state.error ?? state.badge ?? "", state.error ? "error" : "ok");
    };
    const killBtn = el("button", "kill", "danger");
    killBtn.onclick = async () => {
      const outcome = await killAgent(client, session, agentId, () => confirm(`Remove ${agentId}?`));
      if (outcome.status === "KILLED") {
        card.classList.add("killed");
        summary.textContent = `KILLED at tick ${outcome.report.tick}, ` +
          `${outcome.report.cancelled_orders.length} orders cancelled`;
      } else if (outcome.status === "UNAUTHORIZED") {
        banner(root, outcome.explanation, "error");
      } else if (outcome.status !== "CANCELLED") {
        banner(root, `${outcome.status}`, "error");
      }
    };
    card.append(summary, table, prefsInput, applyBtn, killBtn);
    root.append(card);

    const render = () => {
      const series = buildBlotter(agentId, feed.events(agentId));
      table.replaceChildren(el("tr", "tick | side | qty | price | position | cash"));
      for (const m of series.markers) {
        table.append(el("tr", `${m.tick} | ${m.side} | ${m.qty} | ${m.price} | ${m.position} | ${m.cash}`));
      }
      if (!series.empty) {
        summary.textContent = series.frozenAtTick !== null
          ? `frozen at kill tick ${series.frozenAtTick}`
          : `position ${series.finalPosition}, cash ${series.finalCash}`;
      }
    };
    setInterval(async () => {
      try {
        const fresh = await feed.poll(client, agentId);
        if (fresh.length > 0) render();
      } catch {
        // offline or unauthorized; the status banner already shows it
      }
    }, 1000);
    return card;
  }

  const migrateForm = el("div", "", "migrate-form");
  const briefcaseInput = el("input") as HTMLInputElement;
  briefcaseInput.placeholder = "briefcase id";
  const destInput = el("input") as HTMLInputElement;
  destInput.placeholder = "destination host:port";
  const migrateBtn = el("button", "migrate environment");
  migrateBtn.onclick = async () => {
    const outcome = await migrateBriefcase(client, session, briefcaseInput.value, destInput.value);
    if (outcome.status === "COMPLETED") {
      banner(root, `environment now lives on ${outcome.destination}`, "ok");
    } else if (outcome.status === "ROLLED_BACK") {
      banner(root, `migration rolled back: ${outcome.reason}`, "error");
    } else {
      banner(root, `migration ${outcome.status}`, "error");
    }
  };
  migrateForm.append(briefcaseInput, destInput, migrateBtn);
  root.append(migrateForm);

  setInterval(async () => {
    try {
      await session.heartbeat(client);
      level.textContent = session.indicator();
    } catch {
      level.textContent = "reconnecting...";
    }
  }, 2000);
}

document.getElementById("connect")?.addEventListener("click", () => void start());
