/**
 * Dashboard view-model: a pure reducer over API events and responses.
 *
 * State changes happen only on server-confirmed data (a response body or a
 * streamed event); there is no optimistic rendering and no arithmetic on
 * model numbers. Replaying the same event sequence over a fresh state
 * yields an identical view model.
 */

import type {
  ApiEvent,
  BranchInfo,
  FixBody,
  LocalizationBody,
  RoundSummary,
  SessionStateBody,
} from "./types.js";

export interface TimelineEntry {
  round: RoundSummary;
  hasBreakpoint: boolean;
  branchMarkers: string[]; // branch names covering this round
}

export interface SessionPanel {
  sessionId: number;
  state: SessionStateBody;
  note: string | null;
  closed: boolean;
  localization: LocalizationBody | null;
  fix: FixBody | null;
}

export interface DashboardState {
  rounds: RoundSummary[];
  branches: BranchInfo[];
  head: string;
  breakpoints: { round_id: number; client_id: number | null }[];
  session: SessionPanel | null;
  pendingAction: boolean;
  lastSeq: number | null;
  pendingFix: { faulty: number[]; fromRound: number } | null;
}

export function initialState(): DashboardState {
  return {
    rounds: [],
    branches: [],
    head: "main",
    breakpoints: [],
    session: null,
    pendingAction: false,
    lastSeq: null,
    pendingFix: null,
  };
}

/** Seed the timeline from GET /rounds. */
export function loadRounds(
  state: DashboardState,
  body: { rounds: RoundSummary[]; head: string; branches: BranchInfo[] },
): DashboardState {
  return { ...state, rounds: body.rounds, head: body.head, branches: body.branches };
}

/** Apply one streamed event; unknown kinds are ignored. */
export function applyEvent(state: DashboardState, event: ApiEvent): DashboardState {
  if (state.lastSeq !== null && event.seq <= state.lastSeq) {
    return state; // duplicate or reordered delivery; the stream is per-connection monotone
  }
  const next: DashboardState = { ...state, lastSeq: event.seq };
  switch (event.kind) {
    case "ROUND_COMMITTED": {
      const payload = event.payload as unknown as {
        round_id: number;
        participants: number[];
        mean_training_loss: number | null;
        aggregation_duration: number;
        global_digest: string;
      };
      const summary: RoundSummary = {
        round_id: payload.round_id,
        participants: payload.participants,
        num_participants: payload.participants.length,
        mean_training_loss: payload.mean_training_loss,
        aggregation_duration: payload.aggregation_duration,
        carried_forward: false,
        global_digest: payload.global_digest,
      };
      const rounds = state.rounds.filter((r) => r.round_id !== summary.round_id);
      rounds.push(summary);
      rounds.sort((a, b) => a.round_id - b.round_id);
      next.rounds = rounds;
      return next;
    }
    case "BREAKPOINT_HIT": {
      const payload = event.payload as unknown as {
        session_id: number;
        round_id: number;
        state: SessionStateBody;
      };
      next.session = {
        sessionId: payload.session_id,
        state: payload.state,
        note: `breakpoint hit at round ${payload.round_id}`,
        closed: false,
        localization: null,
        fix: null,
      };
      return next;
    }
    case "SESSION_STATE": {
      const payload = event.payload as unknown as {
        session_id: number;
        state?: SessionStateBody;
        note?: string | null;
        action?: string;
      };
      if (state.session && state.session.sessionId === payload.session_id && payload.state) {
        next.session = {
          ...state.session,
          state: payload.state,
          note: payload.note ?? null,
        };
      }
      if (state.session && payload.action === "resume") {
        next.session = { ...state.session, closed: true, note: "resumed; session closed" };
      }
      return next;
    }
    case "LOCALIZATION_RESULT": {
      const payload = event.payload as unknown as LocalizationBody;
      if (state.session && state.session.sessionId === payload.session_id) {
        next.session = { ...state.session, localization: payload };
      }
      return next;
    }
    case "FIX_APPLIED": {
      const payload = event.payload as unknown as FixBody;
      next.branches = [
        ...state.branches.filter((b) => b.name !== payload.branch),
        {
          name: payload.branch,
          from_round: payload.from_round,
          mode: payload.mode,
          faulty_ids: payload.barred,
        },
      ];
      if (payload.adopted) {
        next.head = payload.branch;
      }
      if (state.session && state.session.sessionId === payload.session_id) {
        next.session = { ...state.session, fix: payload, closed: true };
      }
      return next;
    }
    default:
      return next;
  }
}

/** Timeline entries in round order with breakpoint and branch markers; the
 * adopted-head pointer is state.head. */
export function timeline(state: DashboardState): TimelineEntry[] {
  return state.rounds.map((round) => ({
    round,
    hasBreakpoint: state.breakpoints.some((b) => b.round_id === round.round_id),
    branchMarkers: state.branches
      .filter((b) => round.round_id >= b.from_round)
      .map((b) => b.name),
  }));
}
