/**
 * Dashboard conformance against the fixture server: breakpoints, sessions,
 * the four step actions, localization display, fix-and-replay, metric byte
 * fidelity, and event-replay idempotence.
 */

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { Dashboard } from "../src/app";
import { applyEvent, initialState } from "../src/state";
import { renderApp } from "../src/render";
import { FixtureServer, roundSummary, sessionState } from "./fixture";
import type { ApiEvent } from "../src/types";

let server: FixtureServer;
let dashboard: Dashboard;

beforeEach(async () => {
  server = new FixtureServer();
  dashboard = new Dashboard(new ApiClient("", server.fetch));
  await dashboard.start(server.socketFactory, "/events");
});

describe("timeline", () => {
  it("renders committed rounds in order", () => {
    const html = dashboard.render();
    const ids = [...html.matchAll(/data-round="(\d+)"/g)].map((m) => Number(m[1]));
    expect(ids).toEqual([0, 1, 2]);
    expect(html).toContain("head: main");
  });

  it("appends ROUND_COMMITTED events in round order", () => {
    server.emit("ROUND_COMMITTED", {
      round_id: 3,
      participants: [0, 1, 2, 3, 4],
      mean_training_loss: 0.625,
      aggregation_duration: 0.0015,
      global_digest: "digest-global-3",
    });
    const html = dashboard.render();
    const ids = [...html.matchAll(/data-round="(\d+)"/g)].map((m) => Number(m[1]));
    expect(ids).toEqual([0, 1, 2, 3]);
    expect(html).toContain("loss 0.625");
  });

  it("marks breakpoints once the server confirms them", async () => {
    await dashboard.setBreakpoint(1);
    expect(server.breakpoints).toEqual([{ round_id: 1, client_id: null }]);
    const html = dashboard.render();
    expect(html).toMatch(/class="round breakpoint[^"]*" data-round="1"/);
  });
});

describe("session stepping", () => {
  it("opens a session and executes all four step actions", async () => {
    await dashboard.openSession(1);
    expect(dashboard.state.session?.state.cursor.round).toBe(1);

    await dashboard.step("in");
    expect(dashboard.state.session?.state.cursor).toEqual({
      round: 1,
      granularity: "client",
      client_position: 1,
    });
    expect(dashboard.render()).toContain("position 1/5");

    await dashboard.step("next");
    expect(dashboard.state.session?.state.cursor.client_position).toBe(2);

    await dashboard.step("back");
    expect(dashboard.state.session?.state.cursor.client_position).toBe(1);

    await dashboard.step("out");
    expect(dashboard.state.session?.state.cursor).toEqual({
      round: 1,
      granularity: "round",
      client_position: null,
    });
  });

  it("shows boundary notes without moving", async () => {
    await dashboard.openSession(0);
    await dashboard.step("back");
    expect(dashboard.state.session?.state.cursor.round).toBe(0);
    expect(dashboard.render()).toContain("boundary");
  });

  it("disables controls while an action is pending", async () => {
    await dashboard.openSession(0);
    let sawDisabled = false;
    const slowFetch: typeof server.fetch = async (url, init) => {
      const html = renderApp({ ...dashboard.state, pendingAction: true });
      sawDisabled = html.includes("disabled");
      return server.fetch(url, init);
    };
    const busy = new Dashboard(new ApiClient("", slowFetch));
    await busy.start();
    await busy.openSession(0);
    await busy.step("next");
    expect(sawDisabled).toBe(true);
  });

  it("mirrors the server state verbatim, no recomputation", async () => {
    await dashboard.openSession(2);
    const expected = sessionState(2, "round", null);
    expect(dashboard.state.session?.state).toEqual(expected);
  });
});

describe("metric fidelity", () => {
  it("renders every displayed metric byte-equal to the payload", async () => {
    await dashboard.openSession(1);
    const html = dashboard.render();
    const state = sessionState(1, "round", null);
    for (const cid of state.participants) {
      const m = state.metrics[String(cid)];
      for (const value of [
        m.training_loss,
        m.response_time,
        m.dataset_size,
        m.learning_rate,
        m.epochs,
      ]) {
        expect(html).toContain(`<td>${String(value)}</td>`);
      }
    }
    expect(html).toContain(state.partial_global.digest);
  });
});

describe("localization", () => {
  it("displays a LOCALIZATION_RESULT with accusations, ties, and verdict", async () => {
    await dashboard.openSession(2);
    await dashboard.localize();
    const html = dashboard.render();
    const payload = server.localizationPayload(1, 2);
    expect(html).toContain(`verdict: client ${String(payload.verdict)}`);
    expect(html).toContain(`threshold ${String(payload.threshold)}`);
    for (const v of payload.per_input) {
      expect(html).toContain(`<td>${String(v.max_common_activations)}</td>`);
    }
    expect(html).toContain("tie");
  });

  it("also accepts the result as a streamed event", async () => {
    await dashboard.openSession(2);
    const sid = dashboard.state.session!.sessionId;
    server.emit("LOCALIZATION_RESULT", server.localizationPayload(sid, 2) as never);
    expect(dashboard.state.session?.localization?.verdict).toBe(3);
  });
});

describe("fix and replay", () => {
  it("confirms, applies, marks branches, and adopts the head", async () => {
    await dashboard.openSession(1);
    await dashboard.localize();
    dashboard.requestFix([3], 1);
    let html = dashboard.render();
    expect(html).toContain("remove clients 3 from round 1?");
    await dashboard.confirmFix();
    html = dashboard.render();
    expect(server.branches).toHaveLength(1);
    expect(html).toContain("fix applied: branch fix000");
    expect(html).toContain("head: fix000");
    // branch markers from from_round onward
    expect(html).toMatch(/data-round="1"[^<]*<span class="round-id">R1<\/span>[\s\S]*?branch-markers/);
    expect(html).not.toMatch(/data-round="0"[^>]*>[^!]*?branch-markers[^!]*?data-round="1"/);
    // the fixed session is closed; stepping is refused locally
    expect(dashboard.state.session?.closed).toBe(true);
  });

  it("cancel leaves state untouched", async () => {
    await dashboard.openSession(1);
    dashboard.requestFix([2], 0);
    dashboard.cancelFix();
    expect(dashboard.render()).not.toContain("confirm-fix");
    expect(server.branches).toHaveLength(0);
  });
});

describe("event stream", () => {
  it("breakpoint hits open the session panel", () => {
    server.emit("BREAKPOINT_HIT", {
      breakpoint_id: 1,
      round_id: 2,
      client_id: null,
      session_id: 9,
      state: sessionState(2, "round", null) as never,
    });
    const html = dashboard.render();
    expect(dashboard.state.session?.sessionId).toBe(9);
    expect(html).toContain("breakpoint hit at round 2");
    expect(html).toMatch(/class="round[^"]*cursor[^"]*" data-round="2"/);
  });

  it("replaying the same event stream renders an identical view", () => {
    const events: ApiEvent[] = [
      {
        kind: "ROUND_COMMITTED",
        seq: 0,
        payload: {
          round_id: 3,
          participants: [0, 1, 2],
          mean_training_loss: 0.5,
          aggregation_duration: 0.001,
          global_digest: "digest-global-3",
        },
      },
      {
        kind: "BREAKPOINT_HIT",
        seq: 1,
        payload: {
          breakpoint_id: 1,
          round_id: 3,
          client_id: null,
          session_id: 4,
          state: sessionState(3, "round", null) as never,
        },
      },
      {
        kind: "LOCALIZATION_RESULT",
        seq: 2,
        payload: server.localizationPayload(4, 3) as never,
      },
      {
        kind: "FIX_APPLIED",
        seq: 3,
        payload: {
          session_id: 4,
          branch: "fix000",
          mode: "reaggregate",
          from_round: 3,
          rounds: [3],
          carried_forward_rounds: [],
          head_digest: "digest-head-fix000",
          adopted: true,
          barred: [3],
        },
      },
    ];
    const renderOnce = () => {
      let state = initialState();
      state = {
        ...state,
        rounds: [0, 1, 2].map(roundSummary),
        head: "main",
        branches: [],
      };
      for (const event of events) {
        state = applyEvent(state, event);
      }
      return renderApp(state);
    };
    const first = renderOnce();
    const second = renderOnce();
    expect(second).toBe(first);
    expect(first).toContain("head: fix000");
    expect(first).toContain("verdict: client 3");
  });

  it("ignores duplicate sequence numbers", () => {
    const event: ApiEvent = {
      kind: "ROUND_COMMITTED",
      seq: 0,
      payload: {
        round_id: 7,
        participants: [0],
        mean_training_loss: 1,
        aggregation_duration: 0.001,
        global_digest: "d",
      },
    };
    let state = initialState();
    state = applyEvent(state, event);
    const again = applyEvent(state, event);
    expect(again.rounds).toHaveLength(1);
  });
});
