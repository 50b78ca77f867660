import { describe, expect, it } from "vitest";

import { buildBlotter, overlayBlotters } from "../src/blotter.js";
import { ReportEvent } from "../src/reports.js";

function fill(tick: number, side: "BUY" | "SELL", qty: number, price: number,
              position: number, cash: number): ReportEvent {
  return { type: "FILL", tick, agent_id: "a1", order_id: `o${tick}`, venue_id: "V1",
           instrument: "STK", side, price, qty, position, cash };
}

describe("blotter view model", () => {
  it("two fills become two markers with position steps 0 -> 10 -> 5", () => {
    const events = [
      fill(1, "BUY", 10, 100, 10, 99_000),
      fill(3, "SELL", 5, 102, 5, 99_510),
    ];
    const series = buildBlotter("a1", events);
    expect(series.markers).toHaveLength(2);
    expect(series.markers.map((m) => m.qty)).toEqual([10, -5]);
    expect(series.positionSteps).toEqual([0, 10, 5]);
    expect(series.finalPosition).toBe(5);
    expect(series.finalCash).toBe(99_510);
    expect(series.empty).toBe(false);
  });

  it("no fills renders the empty state", () => {
    const series = buildBlotter("a1", []);
    expect(series.empty).toBe(true);
    expect(series.positionSteps).toEqual([0]);
    expect(series.finalCash).toBeNull();
  });

  it("a kill freezes the blotter at the kill tick", () => {
    const events: ReportEvent[] = [
      fill(1, "BUY", 10, 100, 10, 99_000),
      { type: "KILL", tick: 7, agent_id: "a1", cancelled_orders: ["o9"],
        final_position: { STK: 10 }, final_cash: 99_000 },
    ];
    const series = buildBlotter("a1", events);
    expect(series.frozenAtTick).toBe(7);
    expect(series.markers).toHaveLength(1);
  });

  it("team view overlays one series per agent with a legend", () => {
    const one = buildBlotter("bravo", [fill(1, "BUY", 2, 100, 2, 1000)]);
    const two = buildBlotter("alpha", [fill(2, "SELL", 3, 99, -3, 1300)]);
    const team = overlayBlotters([one, two]);
    expect(team.agents).toEqual(["alpha", "bravo"]);
    expect(team.series).toHaveLength(2);
    expect(team.legend).toEqual([
      { agentId: "alpha", fills: 1, finalPosition: -3 },
      { agentId: "bravo", fills: 1, finalPosition: 2 },
    ]);
  });
});
