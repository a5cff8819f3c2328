/**
 * In-process fixture server implementing the documented fedtrace API for
 * dashboard tests: a FetchLike handler plus a socket factory whose events
 * the test can push.
 */

import type { FetchLike } from "../src/api";
import type { SocketLike } from "../src/events";
import type {
  ApiEvent,
  ClientMetricsBody,
  EventKind,
  RoundSummary,
  SessionStateBody,
} from "../src/types";

const PARTICIPANTS = [0, 1, 2, 3, 4];

function metrics(cid: number): ClientMetricsBody {
  return {
    training_loss: 0.8125 + cid * 0.0625,
    response_time: 0.1875 + cid * 0.03125,
    dataset_size: 250,
    learning_rate: 0.12,
    epochs: 12,
    batch_size: 32,
    weight_decay: 0,
  };
}

export function roundSummary(roundId: number): RoundSummary {
  return {
    round_id: roundId,
    participants: PARTICIPANTS,
    num_participants: PARTICIPANTS.length,
    mean_training_loss: 0.9375 - roundId * 0.0625,
    aggregation_duration: 0.0015,
    carried_forward: false,
    global_digest: `digest-global-${roundId}`,
  };
}

export function sessionState(
  round: number,
  granularity: "round" | "client",
  position: number | null,
): SessionStateBody {
  return {
    cursor: { round, granularity, client_position: position },
    participants: PARTICIPANTS,
    metrics: Object.fromEntries(PARTICIPANTS.map((cid) => [String(cid), metrics(cid)])),
    partial_global: { digest: `digest-partial-${round}-${position ?? "full"}`, num_params: 2410 },
    round_global_digest: `digest-global-${round}`,
  };
}

interface SessionRecord {
  round: number;
  granularity: "round" | "client";
  position: number | null;
  closed: boolean;
}

export class FixtureServer {
  rounds = [0, 1, 2].map(roundSummary);
  head = "main";
  branches: { name: string; from_round: number; mode: string; faulty_ids: number[] }[] = [];
  breakpoints: { round_id: number; client_id: number | null }[] = [];
  sessions = new Map<number, SessionRecord>();
  calls: string[] = [];
  private nextSession = 1;
  private sockets: FixtureSocket[] = [];

  localizationPayload(sessionId: number, round: number) {
    return {
      session_id: sessionId,
      round_id: round,
      verdict: 3,
      threshold: 0.003,
      suite_size: 3,
      per_input: [
        { input_index: 0, accused: 3, max_common_activations: 17, tie: false },
        { input_index: 1, accused: 3, max_common_activations: 12, tie: false },
        { input_index: 2, accused: 1, max_common_activations: 12, tie: true },
      ],
    };
  }

  /** FetchLike implementation covering the endpoints the dashboard uses. */
  fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    this.calls.push(`${method} ${url}`);

    const respond = (status: number, payload: unknown): Response =>
      ({
        ok: status < 400,
        status,
        json: async () => payload,
      }) as unknown as Response;

    if (method === "GET" && url.startsWith("/rounds")) {
      return respond(200, { rounds: this.rounds, head: this.head, branches: this.branches });
    }
    if (method === "POST" && url === "/breakpoints") {
      const existing = this.breakpoints.findIndex(
        (b) => b.round_id === body.round_id && b.client_id === body.client_id,
      );
      const id = existing >= 0 ? existing + 1 : this.breakpoints.push(body);
      return respond(200, { breakpoint_id: id, ...body });
    }
    if (method === "POST" && url === "/sessions") {
      if (!this.rounds.some((r) => r.round_id === body.round_id)) {
        return respond(404, { error: { code: "not_found", message: "no such round" } });
      }
      const id = this.nextSession++;
      this.sessions.set(id, { round: body.round_id, granularity: "round", position: null, closed: false });
      return respond(200, { session_id: id, state: sessionState(body.round_id, "round", null) });
    }
    const step = url.match(/^\/sessions\/(\d+)\/step$/);
    if (method === "POST" && step) {
      const session = this.sessions.get(Number(step[1]));
      if (!session) return respond(404, { error: { code: "not_found", message: "no session" } });
      if (session.closed) return respond(409, { error: { code: "conflict", message: "closed" } });
      let moved = true;
      let note: string | null = null;
      const latest = this.rounds[this.rounds.length - 1].round_id;
      if (body.direction === "next") {
        if (session.granularity === "round" && session.round < latest) session.round += 1;
        else if (session.granularity === "client" && (session.position ?? 0) < PARTICIPANTS.length)
          session.position = (session.position ?? 0) + 1;
        else { moved = false; note = "boundary"; }
      } else if (body.direction === "back") {
        if (session.granularity === "round" && session.round > 0) session.round -= 1;
        else if (session.granularity === "client" && (session.position ?? 0) > 0)
          session.position = (session.position ?? 0) - 1;
        else { moved = false; note = "boundary"; }
      } else if (body.direction === "in") {
        if (session.granularity === "round") { session.granularity = "client"; session.position = 1; }
        else { moved = false; note = "already at client granularity"; }
      } else if (body.direction === "out") {
        if (session.granularity === "client") { session.granularity = "round"; session.position = null; }
        else { moved = false; note = "already at round granularity"; }
      }
      return respond(200, {
        state: sessionState(session.round, session.granularity, session.position),
        moved,
        note,
      });
    }
    const resume = url.match(/^\/sessions\/(\d+)\/resume$/);
    if (method === "POST" && resume) {
      const session = this.sessions.get(Number(resume[1]));
      if (!session) return respond(404, { error: { code: "not_found", message: "no session" } });
      session.closed = true;
      return respond(200, { replayed_rounds: [session.round], caught_up_round: 2, closed: true });
    }
    const localize = url.match(/^\/sessions\/(\d+)\/localize$/);
    if (method === "POST" && localize) {
      const id = Number(localize[1]);
      const session = this.sessions.get(id);
      if (!session) return respond(404, { error: { code: "not_found", message: "no session" } });
      const payload = this.localizationPayload(id, session.round);
      this.emit("LOCALIZATION_RESULT", payload as unknown as Record<string, unknown>);
      return respond(200, payload);
    }
    const fix = url.match(/^\/sessions\/(\d+)\/fix$/);
    if (method === "POST" && fix) {
      const id = Number(fix[1]);
      const session = this.sessions.get(id);
      if (!session) return respond(404, { error: { code: "not_found", message: "no session" } });
      const branch = `fix${String(this.branches.length).padStart(3, "0")}`;
      this.branches.push({
        name: branch,
        from_round: body.from_round,
        mode: body.mode ?? "reaggregate",
        faulty_ids: body.faulty,
      });
      this.head = branch;
      session.closed = true;
      const payload = {
        session_id: id,
        branch,
        mode: body.mode ?? "reaggregate",
        from_round: body.from_round,
        rounds: this.rounds.filter((r) => r.round_id >= body.from_round).map((r) => r.round_id),
        carried_forward_rounds: [],
        head_digest: `digest-head-${branch}`,
        adopted: true,
        barred: body.faulty,
      };
      this.emit("FIX_APPLIED", payload as unknown as Record<string, unknown>);
      return respond(200, payload);
    }
    return respond(404, { error: { code: "not_found", message: `no route ${method} ${url}` } });
  };

  /** Socket factory; emitted events fan out to connected sockets. */
  socketFactory = (_url: string): SocketLike => {
    const socket = new FixtureSocket();
    this.sockets.push(socket);
    return socket;
  };

  emit(kind: EventKind, payload: Record<string, unknown>): void {
    for (const socket of this.sockets) {
      socket.push({ kind, seq: socket.seq++, payload });
    }
  }
}

class FixtureSocket implements SocketLike {
  onmessage: ((event: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;
  seq = 0;

  push(event: ApiEvent): void {
    this.onmessage?.({ data: JSON.stringify(event) });
  }

  close(): void {
    this.onclose?.();
  }
}
