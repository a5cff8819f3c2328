"""Replay debugging over recorded telemetry.

Sessions are read-only simulations spawned from committed rounds: the live
run never pauses and never sees them. A cursor addresses either a whole
round or a position inside the round's incremental aggregation, where the
partial global model is the dataset-size-weighted average of the first k
client snapshots. Fix-and-replay writes corrected rounds to a branch (the
originals stay immutable) and atomically adopts the branch head.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable

from .model import ModelSnapshot
from .sim import (
    SessionConfig,
    SessionRunner,
    fedavg,
    session_config_from_sections,
    simulated_aggregation_duration,
)
from .telemetry import ClientMetrics, RoundRecord, TelemetryStore


class Granularity(str, Enum):
    ROUND = "round"
    CLIENT = "client"


@dataclass(frozen=True)
class Breakpoint:
    round_id: int
    client_id: int | None = None

    def __post_init__(self):
        if self.round_id < 0:
            raise ValueError("round_id must be >= 0")

    def matches(self, record: RoundRecord) -> bool:
        if record.round_id != self.round_id:
            return False
        return self.client_id is None or self.client_id in record.participant_ids


class BreakpointRegistry:
    """Registered breakpoints; registration is idempotent."""

    def __init__(self):
        self._by_bp: dict[Breakpoint, int] = {}

    def add(self, bp: Breakpoint) -> int:
        if bp not in self._by_bp:
            self._by_bp[bp] = len(self._by_bp) + 1
        return self._by_bp[bp]

    def all(self) -> list[tuple[int, Breakpoint]]:
        return sorted((bp_id, bp) for bp, bp_id in self._by_bp.items())

    def hits(self, record: RoundRecord) -> list[tuple[int, Breakpoint]]:
        return [(bp_id, bp) for bp_id, bp in self.all() if bp.matches(record)]


@dataclass
class DebugCursor:
    round_index: int
    granularity: Granularity = Granularity.ROUND
    client_position: int | None = None  # 0..len(participants), CLIENT only

    def __post_init__(self):
        if self.round_index < 0:
            raise ValueError("round_index must be >= 0")
        if (self.granularity == Granularity.CLIENT) != (self.client_position is not None):
            raise ValueError("client_position is required exactly at CLIENT granularity")
        if self.client_position is not None and self.client_position < 0:
            raise ValueError("client_position must be >= 0")


@dataclass
class StateView:
    """What the debugger shows at a cursor: the round's reported metrics and
    the (partial) global model at that point of the aggregation."""

    cursor: DebugCursor
    participant_ids: tuple[int, ...]
    metrics: dict[int, ClientMetrics]
    partial_global: ModelSnapshot
    round_global: ModelSnapshot

    def to_dict(self) -> dict:
        return {
            "cursor": {
                "round": self.cursor.round_index,
                "granularity": self.cursor.granularity.value,
                "client_position": self.cursor.client_position,
            },
            "participants": list(self.participant_ids),
            "metrics": {
                str(cid): {
                    "training_loss": m.training_loss,
                    "response_time": m.response_time,
                    "dataset_size": m.dataset_size,
                    "learning_rate": m.hyperparams.learning_rate,
                    "epochs": m.hyperparams.epochs,
                    "batch_size": m.hyperparams.batch_size,
                    "weight_decay": m.hyperparams.weight_decay,
                }
                for cid, m in sorted(self.metrics.items())
            },
            "partial_global": {
                "digest": self.partial_global.digest(),
                "num_params": self.partial_global.num_params,
            },
            "round_global_digest": self.round_global.digest(),
        }


@dataclass
class StepResult:
    view: StateView
    moved: bool
    note: str | None = None


@dataclass
class ResumeSummary:
    replayed_rounds: tuple[int, ...]
    caught_up_round: int | None


@dataclass
class FixSummary:
    branch: str
    mode: str
    from_round: int
    rounds: tuple[int, ...]
    carried_forward_rounds: tuple[int, ...]
    head_digest: str
    adopted: bool
    barred: tuple[int, ...]


class SessionClosedError(RuntimeError):
    pass


class DebugSession:
    """One debugging cursor over committed telemetry; never mutates records."""

    def __init__(
        self,
        store: TelemetryStore,
        cursor: DebugCursor,
        runner: SessionRunner | None = None,
    ):
        self.store = store
        self.runner = runner  # live coordinator handle, for fix adoption
        self.mode = "attached_live" if runner is not None else "detached"
        self.fix_applied = False
        self.closed = False
        self._validate_round(cursor.round_index)
        self.cursor = self._clamp(cursor)

    # -- plumbing -------------------------------------------------------

    def _validate_round(self, round_id: int) -> None:
        if round_id not in set(self.store.round_ids()):
            raise KeyError(f"round {round_id} is not committed")

    def _record(self) -> RoundRecord:
        return self.store.load_round(self.cursor.round_index)

    def _clamp(self, cursor: DebugCursor) -> DebugCursor:
        if cursor.granularity == Granularity.CLIENT:
            count = len(self.store.load_round(cursor.round_index).participant_ids)
            pos = min(max(cursor.client_position or 0, 0), count)
            return DebugCursor(cursor.round_index, Granularity.CLIENT, pos)
        return DebugCursor(cursor.round_index, Granularity.ROUND, None)

    def _check_open(self) -> None:
        if self.closed:
            raise SessionClosedError("debug session is closed")

    # -- views ----------------------------------------------------------

    def state_view(self) -> StateView:
        self._check_open()
        record = self._record()
        cursor = self.cursor
        if cursor.granularity == Granularity.ROUND:
            partial = record.global_snapshot
        else:
            partial = self.partial_global(cursor.client_position)
        return StateView(
            cursor=DebugCursor(cursor.round_index, cursor.granularity, cursor.client_position),
            participant_ids=record.participant_ids,
            metrics=dict(record.client_metrics),
            partial_global=partial,
            round_global=record.global_snapshot,
        )

    def partial_global(self, k: int) -> ModelSnapshot:
        """Weighted average of the round's first k client snapshots; k=0 is
        the global model entering the round, k=len(participants) reproduces
        the stored round global bit-exactly."""
        record = self._record()
        if not 0 <= k <= len(record.participant_ids):
            raise ValueError(f"client position {k} out of range")
        if k == 0:
            return self.store.global_before(record.round_id)
        prefix = record.participant_ids[:k]
        return fedavg(
            [record.client_snapshots[cid] for cid in prefix],
            [float(record.client_metrics[cid].dataset_size) for cid in prefix],
        )

    # -- stepping ---------------------------------------------------------

    def step_next(self) -> StepResult:
        self._check_open()
        c = self.cursor
        if c.granularity == Granularity.ROUND:
            latest = self.store.latest_round()
            if c.round_index >= latest:
                return StepResult(self.state_view(), False, "already at latest committed round")
            self.cursor = DebugCursor(c.round_index + 1, Granularity.ROUND, None)
            return StepResult(self.state_view(), True)
        count = len(self._record().participant_ids)
        if c.client_position >= count:
            return StepResult(self.state_view(), False, "all clients already aggregated")
        self.cursor = DebugCursor(c.round_index, Granularity.CLIENT, c.client_position + 1)
        return StepResult(self.state_view(), True)

    def step_back(self) -> StepResult:
        self._check_open()
        c = self.cursor
        if c.granularity == Granularity.ROUND:
            if c.round_index <= 0:
                return StepResult(self.state_view(), False, "already at round 0")
            self.cursor = DebugCursor(c.round_index - 1, Granularity.ROUND, None)
            return StepResult(self.state_view(), True)
        if c.client_position <= 0:
            return StepResult(self.state_view(), False, "before the first client")
        self.cursor = DebugCursor(c.round_index, Granularity.CLIENT, c.client_position - 1)
        return StepResult(self.state_view(), True)

    def step_in(self) -> StepResult:
        self._check_open()
        c = self.cursor
        if c.granularity == Granularity.CLIENT:
            return StepResult(self.state_view(), False, "already at client granularity")
        self.cursor = DebugCursor(c.round_index, Granularity.CLIENT, 1)
        return StepResult(self.state_view(), True)

    def step_out(self) -> StepResult:
        self._check_open()
        c = self.cursor
        if c.granularity == Granularity.ROUND:
            return StepResult(self.state_view(), False, "already at round granularity")
        self.cursor = DebugCursor(c.round_index, Granularity.ROUND, None)
        return StepResult(self.state_view(), True)

    # -- exits ------------------------------------------------------------

    def resume(self, on_replay: Callable[[RoundRecord], None] | None = None) -> ResumeSummary:
        """Replay committed rounds from the cursor to the latest, then close.
        Refused once a fix was applied: fix_and_replay is the only exit."""
        self._check_open()
        if self.fix_applied:
            raise RuntimeError("a fix was applied in this session; resume is refused")
        start = self.cursor.round_index
        latest = self.store.latest_round()
        replayed = []
        for rid in range(start, latest + 1):
            record = self.store.load_round(rid)
            replayed.append(rid)
            if on_replay is not None:
                on_replay(record)
        self.cursor = DebugCursor(latest, Granularity.ROUND, None)
        self.closed = True
        return ResumeSummary(replayed_rounds=tuple(replayed), caught_up_round=latest)

    def fix_and_replay(
        self,
        faulty: Iterable[int],
        from_round: int,
        mode: str = "reaggregate",
        adopt: bool = True,
        bar_faulty: bool = True,
        branch_name: str | None = None,
        workers: int = 1,
    ) -> FixSummary:
        self._check_open()
        faulty = frozenset(int(c) for c in faulty)
        if not faulty:
            raise ValueError("faulty set must be nonempty")
        latest = self.store.latest_round()
        if latest is None or not 0 <= from_round <= latest:
            raise ValueError(f"from_round {from_round} is not committed")
        historical: set[int] = set()
        for rid in self.store.round_ids():
            historical.update(self.store.load_round(rid).participant_ids)
        unknown = faulty - historical
        if unknown:
            raise ValueError(f"clients never participated: {sorted(unknown)}")

        if mode == "reaggregate":
            summary = reaggregate_branch(self.store, faulty, from_round, branch_name)
        elif mode == "retrain":
            summary = retrain_branch(self.store, faulty, from_round, branch_name, workers=workers)
        else:
            raise ValueError(f"unknown fix mode: {mode}")

        barred: tuple[int, ...] = ()
        if adopt:
            self.store.set_head(summary.branch)
            if self.runner is not None:
                bar = faulty if bar_faulty else frozenset()
                self.runner.adopt(self.store.head_global(), bar=bar)
                barred = tuple(sorted(bar))
            elif bar_faulty:
                barred = tuple(sorted(faulty))
        self.fix_applied = True
        self.closed = True
        return FixSummary(
            branch=summary.branch,
            mode=mode,
            from_round=from_round,
            rounds=summary.rounds,
            carried_forward_rounds=summary.carried_forward_rounds,
            head_digest=summary.head_digest,
            adopted=adopt,
            barred=barred,
        )


def open_session(
    store: TelemetryStore,
    at: DebugCursor | int,
    runner: SessionRunner | None = None,
) -> DebugSession:
    cursor = at if isinstance(at, DebugCursor) else DebugCursor(int(at), Granularity.ROUND, None)
    return DebugSession(store, cursor, runner=runner)


@dataclass
class BranchSummary:
    branch: str
    rounds: tuple[int, ...]
    carried_forward_rounds: tuple[int, ...]
    head_digest: str


def reaggregate_branch(
    store: TelemetryStore,
    faulty: frozenset[int],
    from_round: int,
    name: str | None = None,
) -> BranchSummary:
    """Pure telemetry transform: recompute every global from round
    `from_round` on without the faulty clients' recorded snapshots. Rounds
    whose participants were all faulty carry the previous global forward."""
    info = store.create_branch(from_round, "reaggregate", tuple(sorted(faulty)), name)
    prev_global = store.global_before(from_round)
    rounds: list[int] = []
    carried: list[int] = []
    for rid in store.round_ids():
        if rid < from_round:
            continue
        rec = store.load_round(rid)
        keep = tuple(cid for cid in rec.participant_ids if cid not in faulty)
        if keep:
            snaps = {cid: rec.client_snapshots[cid] for cid in keep}
            metrics = {cid: rec.client_metrics[cid] for cid in keep}
            new_global = fedavg(
                [snaps[cid] for cid in keep],
                [float(metrics[cid].dataset_size) for cid in keep],
            )
            branch_rec = RoundRecord(
                round_id=rid,
                participant_ids=keep,
                client_snapshots=snaps,
                client_metrics=metrics,
                global_snapshot=new_global,
                aggregation_duration=simulated_aggregation_duration(
                    len(keep), new_global.num_params
                ),
            )
        else:
            carried.append(rid)
            branch_rec = RoundRecord(
                round_id=rid,
                participant_ids=(),
                client_snapshots={},
                client_metrics={},
                global_snapshot=prev_global,
                aggregation_duration=simulated_aggregation_duration(0, prev_global.num_params),
                carried_forward=True,
            )
        store.record_round(branch_rec, branch=info.name)
        prev_global = branch_rec.global_snapshot
        rounds.append(rid)
    return BranchSummary(
        branch=info.name,
        rounds=tuple(rounds),
        carried_forward_rounds=tuple(carried),
        head_digest=prev_global.digest(),
    )


def retrain_branch(
    store: TelemetryStore,
    faulty: frozenset[int],
    from_round: int,
    name: str | None = None,
    workers: int = 1,
) -> BranchSummary:
    """Re-run the simulated session from `from_round` with the faulty clients
    excluded from participant selection. Possible in simulation because
    clients retain their shards (rebuilt from the recorded session config)."""
    sections = store.session_sections()
    if sections is None:
        raise RuntimeError("store has no recorded session config; cannot retrain")
    cfg: SessionConfig = session_config_from_sections(sections)
    info = store.create_branch(from_round, "retrain", tuple(sorted(faulty)), name)
    runner = SessionRunner(
        cfg,
        store,
        branch=info.name,
        start_round=from_round,
        initial_global=store.global_before(from_round),
        excluded=faulty,
        write_meta=False,
        workers=workers,
    )
    final = runner.run()
    rounds = tuple(range(from_round, cfg.num_rounds))
    return BranchSummary(
        branch=info.name,
        rounds=rounds,
        carried_forward_rounds=(),
        head_digest=final.digest(),
    )
