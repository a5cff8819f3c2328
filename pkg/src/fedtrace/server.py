"""HTTP + WebSocket service over a telemetry store.

Exposes round summaries, breakpoints, debug sessions (open/step/resume/
localize/fix) and a monotone event stream. Model weights never cross the
wire: snapshots appear as content digests plus metadata. Sessions live in
process memory; telemetry is on disk, so a restart loses sessions but
never rounds. Bodies are JSON; errors carry machine-readable codes.
"""

from __future__ import annotations

import asyncio
import threading
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .debugger import (
    Breakpoint,
    BreakpointRegistry,
    DebugCursor,
    DebugSession,
    Granularity,
    SessionClosedError,
    open_session,
)
from .faultloc import LocalizationConfig, SelectionConfig, localize, select_test_inputs
from .seeding import derive_seed
from .sim import SessionRunner
from .telemetry import TelemetryStore

EVENT_KINDS = (
    "ROUND_COMMITTED",
    "BREAKPOINT_HIT",
    "SESSION_STATE",
    "LOCALIZATION_RESULT",
    "FIX_APPLIED",
)


class EventBus:
    """Fan-out of ApiEvents to websocket subscribers.

    Publishers may run on any thread (the live session coordinator runs in
    its own); each subscriber queue gets events in publish order and every
    connection numbers its own stream, so sequence numbers are strictly
    increasing per connection.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._subscribers: list[tuple[asyncio.AbstractEventLoop, asyncio.Queue]] = []
        self.history: list[dict] = []

    def subscribe(self) -> asyncio.Queue:
        loop = asyncio.get_running_loop()
        queue: asyncio.Queue = asyncio.Queue()
        with self._lock:
            self._subscribers.append((loop, queue))
        return queue

    def unsubscribe(self, queue: asyncio.Queue) -> None:
        with self._lock:
            self._subscribers = [(l, q) for (l, q) in self._subscribers if q is not queue]

    def publish(self, kind: str, payload: dict) -> None:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind}")
        event = {"kind": kind, "payload": payload}
        with self._lock:
            self.history.append(event)
            targets = list(self._subscribers)
        for loop, queue in targets:
            loop.call_soon_threadsafe(queue.put_nowait, event)


def _round_summary(store: TelemetryStore, round_id: int, branch: str | None = None) -> dict:
    rec = store.load_round(round_id, branch)
    return {
        "round_id": rec.round_id,
        "participants": list(rec.participant_ids),
        "num_participants": len(rec.participant_ids),
        "mean_training_loss": rec.mean_training_loss(),
        "aggregation_duration": rec.aggregation_duration,
        "carried_forward": rec.carried_forward,
        "global_digest": rec.global_snapshot.digest(),
    }


def _round_detail(store: TelemetryStore, round_id: int, branch: str | None = None) -> dict:
    rec = store.load_round(round_id, branch)
    body = _round_summary(store, round_id, branch)
    body["clients"] = {
        str(cid): {
            "training_loss": m.training_loss,
            "response_time": m.response_time,
            "dataset_size": m.dataset_size,
            "learning_rate": m.hyperparams.learning_rate,
            "epochs": m.hyperparams.epochs,
            "batch_size": m.hyperparams.batch_size,
            "weight_decay": m.hyperparams.weight_decay,
            "snapshot_digest": rec.client_snapshots[cid].digest(),
        }
        for cid, m in ((c, rec.client_metrics[c]) for c in rec.participant_ids)
    }
    return body


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message}})


class BreakpointBody(BaseModel):
    round_id: int
    client_id: int | None = None


class SessionBody(BaseModel):
    round_id: int
    granularity: str = "round"
    client_position: int | None = None


class StepBody(BaseModel):
    direction: str


class LocalizeBody(BaseModel):
    threshold: float = 0.003
    kappa: int = 10
    eta: int | None = None
    seed: int | None = None


class FixBody(BaseModel):
    faulty: list[int]
    from_round: int
    mode: str = "reaggregate"
    allow_return: bool = False


def create_app(
    store: TelemetryStore,
    runner: SessionRunner | None = None,
    run_in_background: bool = False,
    frontend_dir: str | None = None,
) -> FastAPI:
    """Build the service around one telemetry store, optionally driving a
    live session (runner) in a background thread. When frontend_dir points
    at the built dashboard, it is served under /ui."""
    app = FastAPI(title="fedtrace", version="0.1.0")
    bus = EventBus()
    breakpoints = BreakpointRegistry()
    sessions: dict[int, DebugSession] = {}
    state = {"next_session_id": 1, "live_thread": None}

    app.state.store = store
    app.state.bus = bus
    app.state.breakpoints = breakpoints
    app.state.sessions = sessions
    app.state.runner = runner

    def _spawn_session(cursor: DebugCursor) -> tuple[int, DebugSession]:
        session = DebugSession(store, cursor, runner=runner)
        sid = state["next_session_id"]
        state["next_session_id"] += 1
        sessions[sid] = session
        return sid, session

    def _on_round(record) -> None:
        bus.publish(
            "ROUND_COMMITTED",
            {
                "round_id": record.round_id,
                "participants": list(record.participant_ids),
                "mean_training_loss": record.mean_training_loss(),
                "aggregation_duration": record.aggregation_duration,
                "global_digest": record.global_snapshot.digest(),
            },
        )
        for bp_id, bp in breakpoints.hits(record):
            if bp.client_id is None:
                cursor = DebugCursor(record.round_id, Granularity.ROUND, None)
            else:
                pos = record.participant_ids.index(bp.client_id) + 1
                cursor = DebugCursor(record.round_id, Granularity.CLIENT, pos)
            sid, session = _spawn_session(cursor)
            bus.publish(
                "BREAKPOINT_HIT",
                {
                    "breakpoint_id": bp_id,
                    "round_id": record.round_id,
                    "client_id": bp.client_id,
                    "session_id": sid,
                    "state": session.state_view().to_dict(),
                },
            )

    if runner is not None:
        previous = runner.on_round
        def chained(record):
            if previous is not None:
                previous(record)
            _on_round(record)
        runner.on_round = chained
        if run_in_background:
            thread = threading.Thread(target=runner.run, daemon=True, name="fedtrace-live")
            state["live_thread"] = thread

            @app.on_event("startup")
            async def _start_live():
                thread.start()

    # -- rounds -----------------------------------------------------------

    @app.get("/rounds")
    def get_rounds(branch: str | None = None):
        try:
            if branch is not None:
                store.branch_info(branch)  # unknown branch -> 404, not an empty list
            ids = store.round_ids(branch)
        except FileNotFoundError:
            return _error(404, "not_found", f"unknown branch {branch}")
        return {
            "rounds": [_round_summary(store, rid, branch) for rid in ids],
            "head": store.head() or "main",
            "branches": [
                {
                    "name": b.name,
                    "from_round": b.from_round,
                    "mode": b.mode,
                    "faulty_ids": list(b.faulty_ids),
                }
                for b in store.branches()
            ],
        }

    @app.get("/rounds/{round_id}")
    def get_round(round_id: int, branch: str | None = None):
        try:
            return _round_detail(store, round_id, branch)
        except KeyError:
            return _error(404, "not_found", f"round {round_id} not recorded")

    # -- breakpoints --------------------------------------------------------

    @app.post("/breakpoints")
    def post_breakpoint(body: BreakpointBody):
        try:
            bp = Breakpoint(round_id=body.round_id, client_id=body.client_id)
        except ValueError as exc:
            return _error(422, "invalid", str(exc))
        bp_id = breakpoints.add(bp)
        return {"breakpoint_id": bp_id, "round_id": bp.round_id, "client_id": bp.client_id}

    @app.get("/breakpoints")
    def get_breakpoints():
        return {
            "breakpoints": [
                {"breakpoint_id": bp_id, "round_id": bp.round_id, "client_id": bp.client_id}
                for bp_id, bp in breakpoints.all()
            ]
        }

    # -- sessions -----------------------------------------------------------

    def _session_or_error(session_id: int):
        session = sessions.get(session_id)
        if session is None:
            return None, _error(404, "not_found", f"no session {session_id}")
        if session.closed:
            return None, _error(409, "conflict", f"session {session_id} is closed")
        return session, None

    @app.post("/sessions")
    def post_session(body: SessionBody):
        try:
            granularity = Granularity(body.granularity)
            if granularity == Granularity.CLIENT:
                cursor = DebugCursor(body.round_id, granularity, body.client_position or 1)
            else:
                cursor = DebugCursor(body.round_id, granularity, None)
            sid, session = _spawn_session(cursor)
        except KeyError as exc:
            return _error(404, "not_found", str(exc.args[0]))
        except ValueError as exc:
            return _error(422, "invalid", str(exc))
        view = session.state_view().to_dict()
        bus.publish("SESSION_STATE", {"session_id": sid, "state": view, "action": "open"})
        return {"session_id": sid, "state": view}

    @app.post("/sessions/{session_id}/step")
    def post_step(session_id: int, body: StepBody):
        session, err = _session_or_error(session_id)
        if err is not None:
            return err
        steps = {
            "next": session.step_next,
            "back": session.step_back,
            "in": session.step_in,
            "out": session.step_out,
        }
        step = steps.get(body.direction)
        if step is None:
            return _error(422, "invalid", f"direction must be one of {sorted(steps)}")
        try:
            result = step()
        except SessionClosedError as exc:
            return _error(409, "conflict", str(exc))
        view = result.view.to_dict()
        bus.publish(
            "SESSION_STATE",
            {
                "session_id": session_id,
                "state": view,
                "action": f"step_{body.direction}",
                "moved": result.moved,
                "note": result.note,
            },
        )
        return {"state": view, "moved": result.moved, "note": result.note}

    @app.post("/sessions/{session_id}/resume")
    def post_resume(session_id: int):
        session, err = _session_or_error(session_id)
        if err is not None:
            return err
        try:
            summary = session.resume()
        except RuntimeError as exc:
            return _error(409, "conflict", str(exc))
        bus.publish(
            "SESSION_STATE",
            {
                "session_id": session_id,
                "action": "resume",
                "replayed_rounds": list(summary.replayed_rounds),
                "caught_up_round": summary.caught_up_round,
            },
        )
        return {
            "replayed_rounds": list(summary.replayed_rounds),
            "caught_up_round": summary.caught_up_round,
            "closed": True,
        }

    @app.post("/sessions/{session_id}/localize")
    def post_localize(session_id: int, body: LocalizeBody):
        session, err = _session_or_error(session_id)
        if err is not None:
            return err
        record = store.load_round(session.cursor.round_index)
        clients = dict(record.client_snapshots)
        arch = next(iter(clients.values())).arch
        seed = body.seed if body.seed is not None else derive_seed("serve", record.round_id)
        try:
            suite = select_test_inputs(
                clients,
                SelectionConfig(
                    shape=(arch.input_dim,), kappa=body.kappa, eta=body.eta, seed=seed
                ),
            )
            report = localize(
                clients, suite, LocalizationConfig(activation_threshold=body.threshold)
            )
        except (ValueError, RuntimeError) as exc:
            return _error(422, "invalid", str(exc))
        payload = {
            "session_id": session_id,
            "round_id": record.round_id,
            "verdict": report.verdict,
            "threshold": report.threshold,
            "suite_size": len(suite),
            "per_input": [
                {
                    "input_index": v.input_index,
                    "accused": v.accused,
                    "max_common_activations": v.max_common_activations,
                    "tie": v.tie,
                }
                for v in report.per_input
            ],
        }
        bus.publish("LOCALIZATION_RESULT", payload)
        return payload

    @app.post("/sessions/{session_id}/fix")
    def post_fix(session_id: int, body: FixBody):
        session, err = _session_or_error(session_id)
        if err is not None:
            return err
        try:
            summary = session.fix_and_replay(
                body.faulty,
                body.from_round,
                mode=body.mode,
                bar_faulty=not body.allow_return,
            )
        except (ValueError, RuntimeError) as exc:
            return _error(422, "invalid", str(exc))
        payload = {
            "session_id": session_id,
            "branch": summary.branch,
            "mode": summary.mode,
            "from_round": summary.from_round,
            "rounds": list(summary.rounds),
            "carried_forward_rounds": list(summary.carried_forward_rounds),
            "head_digest": summary.head_digest,
            "adopted": summary.adopted,
            "barred": list(summary.barred),
        }
        bus.publish("FIX_APPLIED", payload)
        return payload

    if frontend_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=frontend_dir, html=True), name="ui")

    # -- events ---------------------------------------------------------------

    @app.websocket("/events")
    async def events(ws: WebSocket, replay: int = 0):
        await ws.accept()
        queue = bus.subscribe()
        seq = 0
        try:
            if replay:
                for event in list(bus.history):
                    await ws.send_json({"kind": event["kind"], "seq": seq, "payload": event["payload"]})
                    seq += 1
            while True:
                event = await queue.get()
                await ws.send_json({"kind": event["kind"], "seq": seq, "payload": event["payload"]})
                seq += 1
        except WebSocketDisconnect:
            pass
        finally:
            bus.unsubscribe(queue)

    return app


def serve(
    store_dir: str,
    host: str = "127.0.0.1",
    port: int = 8631,
    runner: SessionRunner | None = None,
    frontend_dir: str | None = None,
) -> None:
    import uvicorn

    store = TelemetryStore(store_dir)
    app = create_app(
        store,
        runner=runner,
        run_in_background=runner is not None,
        frontend_dir=frontend_dir,
    )
    uvicorn.run(app, host=host, port=port, log_level="warning")
