/**
 * Blotter view model: fills become timeline markers with running position
 * and cash, one series per agent, overlayable for a team view. Pure data in,
 * pure data out; rendering is someone else's job.
 */

import { FillEvent, ReportEvent } from "./reports.js";

export interface BlotterMarker {
  tick: number;
  side: "BUY" | "SELL";
  price: number;
  qty: number;
  position: number;
  cash: number;
}

export interface BlotterSeries {
  agentId: string;
  empty: boolean;
  markers: BlotterMarker[];
  /** Running position, starting flat: [0, after fill 1, after fill 2, ...]. */
  positionSteps: number[];
  cashSteps: number[];
  finalPosition: number;
  finalCash: number | null;
  /** Tick of the KILL event when the agent was removed; the blotter freezes there. */
  frozenAtTick: number | null;
}

export function buildBlotter(agentId: string, events: ReportEvent[]): BlotterSeries {
  const markers: BlotterMarker[] = [];
  const positionSteps = [0];
  const cashSteps: number[] = [];
  let frozenAtTick: number | null = null;
  for (const event of events) {
    if (event.type === "FILL") {
      const fill = event as FillEvent;
      markers.push({
        tick: fill.tick,
        side: fill.side,
        price: fill.price,
        qty: fill.side === "BUY" ? fill.qty : -fill.qty,
        position: fill.position,
        cash: fill.cash,
      });
      positionSteps.push(fill.position);
      cashSteps.push(fill.cash);
    } else if (event.type === "KILL") {
      frozenAtTick = event.tick;
    }
  }
  return {
    agentId,
    empty: markers.length === 0,
    markers,
    positionSteps,
    cashSteps,
    finalPosition: positionSteps[positionSteps.length - 1] ?? 0,
    finalCash: cashSteps.length > 0 ? cashSteps[cashSteps.length - 1]! : null,
    frozenAtTick,
  };
}

export interface TeamBlotter {
  agents: string[];
  series: BlotterSeries[];
  legend: Array<{ agentId: string; fills: number; finalPosition: number }>;
}

export function overlayBlotters(series: BlotterSeries[]): TeamBlotter {
  const sorted = [...series].sort((a, b) => a.agentId.localeCompare(b.agentId));
  return {
    agents: sorted.map((s) => s.agentId),
    series: sorted,
    legend: sorted.map((s) => ({
      agentId: s.agentId,
      fills: s.markers.length,
      finalPosition: s.finalPosition,
    })),
  };
}
