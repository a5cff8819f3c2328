"""Append-only round telemetry store.

One directory per round holding a plain-text manifest (participants,
per-client metrics, durations) plus one snapshot (manifest + float32 blob)
per client model and one for the round's global model. Records are staged
in a scratch directory and atomically renamed into place, so readers only
ever see committed rounds; committed rounds are immutable.

Corrected timelines produced by fix-and-replay live under branches/<name>
with the same per-round layout; original rounds are never rewritten. A HEAD
pointer records which timeline is currently adopted.
"""

from __future__ import annotations

import concurrent.futures
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .kvio import (
    dump_kv,
    fmt_bool,
    fmt_float,
    fmt_ints,
    parse_bool,
    parse_ints,
    read_kv,
    write_kv,
)
from .model import (
    ModelArch,
    ModelSnapshot,
    TrainConfig,
    load_snapshot,
    read_snapshot_blob,
    save_snapshot,
    snapshot_manifest_fields,
    write_snapshot_blob,
)

STORE_FORMAT = "fedtrace-store-v1"
MAIN = None  # branch=None addresses the main timeline


@dataclass(frozen=True)
class ClientMetrics:
    """What a simulated client reports to the aggregator alongside its model."""

    client_id: int
    training_loss: float
    response_time: float
    dataset_size: int
    hyperparams: TrainConfig

    def __post_init__(self):
        if self.dataset_size <= 0:
            raise ValueError("dataset_size must be positive")
        if self.response_time < 0:
            raise ValueError("response_time must be >= 0")


@dataclass
class RoundRecord:
    """Everything recorded for one round: per-client snapshots and metrics
    plus the aggregated global model."""

    round_id: int
    participant_ids: tuple[int, ...]
    client_snapshots: dict[int, ModelSnapshot]
    client_metrics: dict[int, ClientMetrics]
    global_snapshot: ModelSnapshot
    aggregation_duration: float
    carried_forward: bool = False  # branch rounds where every participant was removed

    def __post_init__(self):
        ids = set(self.participant_ids)
        if set(self.client_snapshots) != ids or set(self.client_metrics) != ids:
            raise ValueError("participant ids, snapshots and metrics must agree")
        if self.round_id < 0:
            raise ValueError("round_id must be >= 0")
        arch = self.global_snapshot.arch
        if any(s.arch != arch for s in self.client_snapshots.values()):
            raise ValueError("all snapshots in a round must share the global's arch")

    def dataset_weights(self) -> list[float]:
        return [float(self.client_metrics[cid].dataset_size) for cid in self.participant_ids]

    def mean_training_loss(self) -> float | None:
        if not self.participant_ids:
            return None
        losses = [self.client_metrics[cid].training_loss for cid in self.participant_ids]
        return sum(losses) / len(losses)

    def same_bits(self, other: "RoundRecord") -> bool:
        if (
            self.round_id != other.round_id
            or self.participant_ids != other.participant_ids
            or self.carried_forward != other.carried_forward
            or fmt_float(self.aggregation_duration) != fmt_float(other.aggregation_duration)
            or self.client_metrics != other.client_metrics
        ):
            return False
        if not self.global_snapshot.same_bits(other.global_snapshot):
            return False
        return all(
            self.client_snapshots[cid].same_bits(other.client_snapshots[cid])
            for cid in self.participant_ids
        )


@dataclass(frozen=True)
class BranchInfo:
    name: str
    from_round: int
    mode: str
    faulty_ids: tuple[int, ...]


@dataclass
class IntegrityReport:
    records_checked: int = 0
    failures: list[tuple[str, int, str]] = field(default_factory=list)  # (timeline, round, reason)

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def first_divergence(self) -> tuple[str, int, str] | None:
        return self.failures[0] if self.failures else None


class RoundOrderError(ValueError):
    """round_id is not the next expected id for the timeline."""


def _round_dirname(round_id: int) -> str:
    return f"round_{round_id:05d}"


def _client_basename(client_id: int) -> str:
    return f"client_{client_id:05d}"


# snapshots this large get written by a small thread pool; below it the
# executor spin-up costs more than it saves
_PARALLEL_WRITE_PARAMS = 1 << 18


class TelemetryStore:
    """Filesystem-backed store; a single writer and any number of readers."""

    def __init__(
        self,
        root: str | Path,
        create: bool = False,
        sync: bool = False,
        write_workers: int = 4,
    ):
        self.root = Path(root)
        self.sync = sync
        self.write_workers = max(1, write_workers)
        self._write_lock = threading.Lock()
        marker = self.root / "store.ini"
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
            (self.root / "rounds").mkdir(exist_ok=True)
            (self.root / "tmp").mkdir(exist_ok=True)
            if not marker.exists():
                write_kv(marker, {"store": {"format": STORE_FORMAT}})
        elif not marker.exists():
            raise FileNotFoundError(f"no telemetry store at {self.root}")

    # -- paths ---------------------------------------------------------

    def _rounds_dir(self, branch: str | None) -> Path:
        if branch is None:
            return self.root / "rounds"
        return self.root / "branches" / branch / "rounds"

    def _round_dir(self, round_id: int, branch: str | None) -> Path:
        return self._rounds_dir(branch) / _round_dirname(round_id)

    # -- session metadata ----------------------------------------------

    def put_session_config(self, sections: dict) -> None:
        write_kv(self.root / "session.ini", sections)

    def session_sections(self) -> dict[str, dict[str, str]] | None:
        path = self.root / "session.ini"
        return read_kv(path) if path.exists() else None

    def put_initial_snapshot(self, snapshot: ModelSnapshot) -> None:
        save_snapshot(snapshot, self.root / "initial")

    def initial_snapshot(self) -> ModelSnapshot:
        return load_snapshot(self.root / "initial")

    # -- recording -----------------------------------------------------

    def round_ids(self, branch: str | None = MAIN) -> list[int]:
        rounds_dir = self._rounds_dir(branch)
        if not rounds_dir.exists():
            return []
        ids = []
        for entry in rounds_dir.iterdir():
            if entry.is_dir() and entry.name.startswith("round_"):
                ids.append(int(entry.name.split("_", 1)[1]))
        return sorted(ids)

    def latest_round(self, branch: str | None = MAIN) -> int | None:
        ids = self.round_ids(branch)
        return ids[-1] if ids else None

    def _expected_next(self, branch: str | None) -> int:
        latest = self.latest_round(branch)
        if latest is not None:
            return latest + 1
        if branch is None:
            return 0
        return self.branch_info(branch).from_round

    def record_round(self, rec: RoundRecord, branch: str | None = MAIN) -> int:
        """Commit a round durably; visible to readers only once complete."""
        with self._write_lock:
            expected = self._expected_next(branch)
            if rec.round_id != expected:
                raise RoundOrderError(
                    f"expected round {expected} next on "
                    f"{'main' if branch is None else branch}, got {rec.round_id}"
                )
            staging = self.root / "tmp" / f"{branch or 'main'}-{_round_dirname(rec.round_id)}"
            if staging.exists():
                _rmtree(staging)
            staging.mkdir(parents=True)
            self._write_round_files(staging, rec)
            final = self._round_dir(rec.round_id, branch)
            final.parent.mkdir(parents=True, exist_ok=True)
            if self.sync:
                _sync_tree(staging)
            os.replace(staging, final)
            if self.sync:
                _fsync_dir(final.parent)
            return rec.round_id

    def _write_round_files(self, dest: Path, rec: RoundRecord) -> None:
        # one manifest per round; snapshots are bare blobs described by it
        sections: dict[str, dict[str, str]] = {
            "round": {
                "round_id": str(rec.round_id),
                "participants": fmt_ints(rec.participant_ids),
                "aggregation_duration": fmt_float(rec.aggregation_duration),
                "carried_forward": fmt_bool(rec.carried_forward),
            },
            "snapshots": snapshot_manifest_fields(rec.global_snapshot.arch),
        }
        for cid in rec.participant_ids:
            m = rec.client_metrics[cid]
            sections[f"client.{cid}"] = {
                "training_loss": fmt_float(m.training_loss),
                "response_time": fmt_float(m.response_time),
                "dataset_size": str(m.dataset_size),
                "learning_rate": fmt_float(m.hyperparams.learning_rate),
                "epochs": str(m.hyperparams.epochs),
                "batch_size": str(m.hyperparams.batch_size),
                "weight_decay": fmt_float(m.hyperparams.weight_decay),
                "seed": str(m.hyperparams.seed),
            }
        (dest / "manifest.ini").write_text(dump_kv(sections), encoding="utf-8")
        jobs = [(rec.global_snapshot, dest / "global.bin")]
        jobs += [
            (rec.client_snapshots[cid], dest / f"{_client_basename(cid)}.bin")
            for cid in rec.participant_ids
        ]
        big = rec.global_snapshot.num_params >= _PARALLEL_WRITE_PARAMS
        if big and self.write_workers > 1 and len(jobs) > 1:
            with concurrent.futures.ThreadPoolExecutor(self.write_workers) as pool:
                list(pool.map(lambda job: write_snapshot_blob(*job), jobs))
        else:
            for snap, path in jobs:
                write_snapshot_blob(snap, path)

    # -- reading ---------------------------------------------------------

    def load_round(self, round_id: int, branch: str | None = MAIN) -> RoundRecord:
        rdir = self._round_dir(round_id, branch)
        if not rdir.exists():
            raise KeyError(f"round {round_id} not recorded on {'main' if branch is None else branch}")
        sections = read_kv(rdir / "manifest.ini")
        head = sections["round"]
        arch = ModelArch(parse_ints(sections["snapshots"]["layer_sizes"]))
        participant_ids = parse_ints(head["participants"])
        metrics: dict[int, ClientMetrics] = {}
        snapshots: dict[int, ModelSnapshot] = {}
        for cid in participant_ids:
            raw = sections[f"client.{cid}"]
            metrics[cid] = ClientMetrics(
                client_id=cid,
                training_loss=float(raw["training_loss"]),
                response_time=float(raw["response_time"]),
                dataset_size=int(raw["dataset_size"]),
                hyperparams=TrainConfig(
                    learning_rate=float(raw["learning_rate"]),
                    epochs=int(raw["epochs"]),
                    batch_size=int(raw["batch_size"]),
                    weight_decay=float(raw["weight_decay"]),
                    seed=int(raw["seed"]),
                ),
            )
            snapshots[cid] = read_snapshot_blob(arch, rdir / f"{_client_basename(cid)}.bin")
        return RoundRecord(
            round_id=int(head["round_id"]),
            participant_ids=participant_ids,
            client_snapshots=snapshots,
            client_metrics=metrics,
            global_snapshot=read_snapshot_blob(arch, rdir / "global.bin"),
            aggregation_duration=float(head["aggregation_duration"]),
            carried_forward=parse_bool(head.get("carried_forward", "false")),
        )

    def load_timeline_round(self, round_id: int, branch: str | None = MAIN) -> RoundRecord:
        """Round as seen by a timeline: branch rounds shadow main from
        branch.from_round onward, earlier rounds come from main."""
        if branch is not None and round_id >= self.branch_info(branch).from_round:
            return self.load_round(round_id, branch)
        return self.load_round(round_id, MAIN)

    def global_before(self, round_id: int, branch: str | None = MAIN) -> ModelSnapshot:
        """Global model entering `round_id` (previous round's output, or the
        session's initial model for round 0)."""
        if round_id <= 0:
            return self.initial_snapshot()
        return self.load_timeline_round(round_id - 1, branch).global_snapshot

    # -- branches --------------------------------------------------------

    def branches(self) -> list[BranchInfo]:
        bdir = self.root / "branches"
        if not bdir.exists():
            return []
        return sorted(
            (self.branch_info(p.name) for p in bdir.iterdir() if p.is_dir()),
            key=lambda info: info.name,
        )

    def branch_info(self, name: str) -> BranchInfo:
        meta = read_kv(self.root / "branches" / name / "branch.ini")["branch"]
        return BranchInfo(
            name=name,
            from_round=int(meta["from_round"]),
            mode=meta["mode"],
            faulty_ids=parse_ints(meta["faulty_ids"]),
        )

    def create_branch(
        self, from_round: int, mode: str, faulty_ids: tuple[int, ...], name: str | None = None
    ) -> BranchInfo:
        with self._write_lock:
            if name is None:
                existing = {b.name for b in self.branches()}
                idx = 0
                while f"fix{idx:03d}" in existing:
                    idx += 1
                name = f"fix{idx:03d}"
            bdir = self.root / "branches" / name
            if bdir.exists():
                raise ValueError(f"branch {name} already exists")
            (bdir / "rounds").mkdir(parents=True)
            write_kv(
                bdir / "branch.ini",
                {
                    "branch": {
                        "from_round": str(from_round),
                        "mode": mode,
                        "faulty_ids": fmt_ints(sorted(faulty_ids)),
                    }
                },
            )
            return BranchInfo(name, from_round, mode, tuple(sorted(faulty_ids)))

    def set_head(self, branch: str | None) -> None:
        """Atomically adopt a timeline as the current one."""
        if branch is not None:
            self.branch_info(branch)  # must exist
        tmp = self.root / "tmp" / "HEAD.ini"
        tmp.write_text(dump_kv({"head": {"branch": branch or "main"}}), encoding="utf-8")
        os.replace(tmp, self.root / "HEAD.ini")

    def head(self) -> str | None:
        path = self.root / "HEAD.ini"
        if not path.exists():
            return None
        name = read_kv(path)["head"]["branch"]
        return None if name == "main" else name

    def head_global(self) -> ModelSnapshot:
        branch = self.head()
        latest = self.latest_round(branch)
        if latest is None:
            return self.initial_snapshot()
        return self.load_round(latest, branch).global_snapshot

    # -- integrity -------------------------------------------------------

    def verify_integrity(self, branch: str | None = MAIN) -> IntegrityReport:
        """Re-derive every stored global from its client snapshots and
        dataset-size weights; bit-exact equality or the round is flagged."""
        from .sim import fedavg  # local import; sim depends on this module

        timeline = "main" if branch is None else branch
        report = IntegrityReport()
        ids = self.round_ids(branch)
        if branch is None and ids and ids[0] != 0:
            report.failures.append((timeline, ids[0], "first round is not 0"))
        for prev_id, rid in zip([None, *ids], ids):
            if prev_id is not None and rid != prev_id + 1:
                report.failures.append((timeline, rid, f"gap after round {prev_id}"))
        for rid in ids:
            rec = self.load_round(rid, branch)
            report.records_checked += 1
            if rec.carried_forward:
                prev = self.global_before(rid, branch)
                if not rec.global_snapshot.same_bits(prev):
                    report.failures.append((timeline, rid, "carried-forward global differs"))
                continue
            snaps = [rec.client_snapshots[cid] for cid in rec.participant_ids]
            rebuilt = fedavg(snaps, rec.dataset_weights())
            if not rebuilt.same_bits(rec.global_snapshot):
                report.failures.append((timeline, rid, "stored global != fedavg of clients"))
        return report

    def verify_all(self) -> IntegrityReport:
        report = self.verify_integrity(MAIN)
        for info in self.branches():
            sub = self.verify_integrity(info.name)
            report.records_checked += sub.records_checked
            report.failures.extend(sub.failures)
        return report


def _rmtree(path: Path) -> None:
    for child in path.iterdir():
        if child.is_dir():
            _rmtree(child)
        else:
            child.unlink()
    path.rmdir()


def _sync_tree(path: Path) -> None:
    for child in path.rglob("*"):
        if child.is_file():
            fd = os.open(child, os.O_RDONLY)
            try:
                os.fsync(fd)
            finally:
                os.close(fd)
    _fsync_dir(path)


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)
