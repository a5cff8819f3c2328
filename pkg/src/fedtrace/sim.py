"""Standard federated learning simulation.

Per round: broadcast the global model, train each sampled client on its
(possibly noise-injected) shard, aggregate with dataset-size-weighted
FedAvg, commit a RoundRecord to the telemetry store. Everything is seeded,
so a session is bit-reproducible. The timing fields persisted in telemetry
(response_time, aggregation_duration) are simulated from the workload, not
measured: clients run in-process and replay fidelity demands byte-equal
stores across reruns. Measured wall-clock durations are returned separately
where benchmarks need them.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import backend
from .data import (
    LabeledDataset,
    PartitionMode,
    PartitionPlan,
    load_idx,
    noisy_shards,
    partition,
    synthetic_blobs,
)
from .kvio import fmt_float, fmt_ints, parse_ints
from .model import ModelArch, ModelSnapshot, TrainConfig, init_model, predict_labels, train_local
from .seeding import derive_seed
from .telemetry import ClientMetrics, RoundRecord, TelemetryStore


@dataclass(frozen=True)
class FaultSpec:
    """Which clients get label noise, and how much."""

    client_ids: frozenset[int] = frozenset()
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "client_ids", frozenset(int(c) for c in self.client_ids))
        if not (0.0 <= self.noise_rate <= 1.0):
            raise ValueError("noise_rate must be in [0, 1]")


@dataclass(frozen=True)
class DataConfig:
    """Default data source: seeded synthetic blobs; kind=idx reads IDX files.

    Blobs draw train and test from one generated pool so both share the
    same class means.
    """

    kind: str = "blobs"
    num_classes: int = 10
    dim: int = 64
    train_examples: int = 2500
    test_examples: int = 1000
    seed: int = 0
    mean_scale: float = 1.0
    spread: float = 0.45
    images_path: str = ""
    labels_path: str = ""

    def build(self) -> tuple[LabeledDataset, LabeledDataset | None]:
        if self.kind == "blobs":
            total = self.train_examples + self.test_examples
            full = synthetic_blobs(
                self.num_classes, self.dim, total, self.seed, self.mean_scale, self.spread
            )
            train = full.subset(np.arange(self.train_examples))
            test = (
                full.subset(np.arange(self.train_examples, total))
                if self.test_examples
                else None
            )
            return train, test
        if self.kind == "idx":
            return load_idx(self.images_path, self.labels_path), None
        raise ValueError(f"unknown data kind: {self.kind}")


@dataclass(frozen=True)
class SessionConfig:
    num_rounds: int
    clients_per_round: int
    arch: ModelArch
    train_cfg: TrainConfig
    partition: PartitionPlan
    faults: FaultSpec = FaultSpec()
    master_seed: int = 0
    data: DataConfig = DataConfig()

    def __post_init__(self):
        if self.num_rounds < 1:
            raise ValueError("num_rounds must be >= 1")
        if not (2 <= self.clients_per_round <= self.partition.num_clients):
            raise ValueError("need 2 <= clients_per_round <= num_clients")
        bad = [c for c in self.faults.client_ids if not 0 <= c < self.partition.num_clients]
        if bad:
            raise ValueError(f"faulty client ids outside session clients: {bad}")

    @property
    def num_clients(self) -> int:
        return self.partition.num_clients


# -- config file round trip (plain key = value sections) -------------------


def session_config_to_sections(cfg: SessionConfig) -> dict[str, dict[str, str]]:
    return {
        "session": {
            "num_rounds": str(cfg.num_rounds),
            "clients_per_round": str(cfg.clients_per_round),
            "master_seed": str(cfg.master_seed),
        },
        "arch": {"layer_sizes": fmt_ints(cfg.arch.layer_sizes)},
        "train_cfg": {
            "learning_rate": fmt_float(cfg.train_cfg.learning_rate),
            "epochs": str(cfg.train_cfg.epochs),
            "batch_size": str(cfg.train_cfg.batch_size),
            "weight_decay": fmt_float(cfg.train_cfg.weight_decay),
            "seed": str(cfg.train_cfg.seed),
        },
        "partition": {
            "mode": cfg.partition.mode.value,
            "num_clients": str(cfg.partition.num_clients),
            "seed": str(cfg.partition.seed),
            "min_fraction": fmt_float(cfg.partition.min_fraction),
        },
        "faults": {
            "client_ids": fmt_ints(sorted(cfg.faults.client_ids)),
            "noise_rate": fmt_float(cfg.faults.noise_rate),
            "seed": str(cfg.faults.seed),
        },
        "data": {
            "kind": cfg.data.kind,
            "num_classes": str(cfg.data.num_classes),
            "dim": str(cfg.data.dim),
            "train_examples": str(cfg.data.train_examples),
            "test_examples": str(cfg.data.test_examples),
            "seed": str(cfg.data.seed),
            "mean_scale": fmt_float(cfg.data.mean_scale),
            "spread": fmt_float(cfg.data.spread),
            "images_path": cfg.data.images_path,
            "labels_path": cfg.data.labels_path,
        },
    }


def session_config_from_sections(sections: dict[str, dict[str, str]]) -> SessionConfig:
    s = sections["session"]
    t = sections["train_cfg"]
    p = sections["partition"]
    f = sections.get("faults", {})
    d = sections.get("data", {})
    return SessionConfig(
        num_rounds=int(s["num_rounds"]),
        clients_per_round=int(s["clients_per_round"]),
        master_seed=int(s.get("master_seed", "0")),
        arch=ModelArch(parse_ints(sections["arch"]["layer_sizes"])),
        train_cfg=TrainConfig(
            learning_rate=float(t["learning_rate"]),
            epochs=int(t["epochs"]),
            batch_size=int(t["batch_size"]),
            weight_decay=float(t.get("weight_decay", "0.0")),
            seed=int(t.get("seed", "0")),
        ),
        partition=PartitionPlan(
            mode=PartitionMode(p["mode"]),
            num_clients=int(p["num_clients"]),
            seed=int(p.get("seed", "0")),
            min_fraction=float(p.get("min_fraction", "0.3")),
        ),
        faults=FaultSpec(
            client_ids=frozenset(parse_ints(f.get("client_ids", ""))),
            noise_rate=float(f.get("noise_rate", "0.0")),
            seed=int(f.get("seed", "0")),
        ),
        data=DataConfig(
            kind=d.get("kind", "blobs"),
            num_classes=int(d.get("num_classes", "10")),
            dim=int(d.get("dim", "64")),
            train_examples=int(d.get("train_examples", "2500")),
            test_examples=int(d.get("test_examples", "1000")),
            seed=int(d.get("seed", "0")),
            mean_scale=float(d.get("mean_scale", "1.0")),
            spread=float(d.get("spread", "0.45")),
            images_path=d.get("images_path", ""),
            labels_path=d.get("labels_path", ""),
        ),
    )


# -- aggregation ------------------------------------------------------------


def fedavg(snapshots: list[ModelSnapshot], weights: list[float] | None = None) -> ModelSnapshot:
    """Weighted elementwise average of comparable snapshots.

    Accumulates in float64 in the given order, divides by the weight sum,
    casts back to float32; callers wanting reproducible bits pass snapshots
    in ascending client-id order. Weights default to uniform; FL rounds pass
    client dataset sizes.
    """
    if not snapshots:
        raise ValueError("fedavg needs at least one snapshot")
    arch = snapshots[0].arch
    for snap in snapshots[1:]:
        if snap.arch != arch:
            raise ValueError("snapshots must share one architecture")
    if weights is None:
        weights = [1.0] * len(snapshots)
    if len(weights) != len(snapshots):
        raise ValueError("one weight per snapshot required")
    ws = [float(w) for w in weights]
    if any(not np.isfinite(w) or w <= 0 for w in ws):
        raise ValueError("weights must be positive and finite")

    accumulators = [np.zeros(arr.shape, dtype=np.float64) for arr in snapshots[0].arrays()]
    total = 0.0
    for snap, w in zip(snapshots, ws):
        backend.weighted_sum_inplace(accumulators, snap.arrays(), w)
        total += w
    averaged = [(acc / total).astype(np.float32) for acc in accumulators]
    weights_out = averaged[0::2]
    biases_out = averaged[1::2]
    return ModelSnapshot(arch, weights_out, biases_out)


def evaluate(model: ModelSnapshot, test: LabeledDataset) -> float:
    """Fraction of test examples whose predicted label matches."""
    if len(test) == 0:
        raise ValueError("test set must be nonempty")
    if test.input_dim != model.arch.input_dim:
        raise ValueError("test input dim does not match arch")
    preds = predict_labels(model, test.inputs)
    return float(np.mean(preds == test.labels))


# -- simulated telemetry timings ---------------------------------------------


def simulated_response_time(num_examples: int, epochs: int, seed: int) -> float:
    """Deterministic stand-in for a client's wall-clock training time."""
    rng = np.random.default_rng(seed)
    jitter = float(rng.uniform(0.9, 1.1))
    return 0.05 + 2.5e-5 * num_examples * max(epochs, 1) * jitter


def simulated_aggregation_duration(num_participants: int, num_params: int) -> float:
    return 0.001 + 2.5e-9 * num_participants * num_params


# -- round / session execution ------------------------------------------------


def _train_one_client(
    cid: int,
    global_model: ModelSnapshot,
    shard: LabeledDataset,
    cfg: TrainConfig,
    rt_seed: int,
) -> tuple[ModelSnapshot, ClientMetrics, float]:
    snapshot, result = train_local(global_model, shard.inputs, shard.labels, cfg)
    metrics = ClientMetrics(
        client_id=cid,
        training_loss=result.final_loss,
        response_time=simulated_response_time(len(shard), cfg.epochs, rt_seed),
        dataset_size=len(shard),
        hyperparams=cfg,
    )
    return snapshot, metrics, result.seconds


def run_round(
    global_model: ModelSnapshot,
    round_id: int,
    participants: list[int],
    shards: dict[int, LabeledDataset],
    train_cfg: TrainConfig,
    master_seed: int,
    workers: int = 1,
) -> RoundRecord:
    """Train every participant from the incoming global model and aggregate.

    Results are merged in ascending client-id order regardless of worker
    scheduling, so the record is schedule-independent.
    """
    if not participants:
        raise ValueError("round needs at least one participant")
    ordered = tuple(sorted(participants))
    missing = [cid for cid in ordered if cid not in shards]
    if missing:
        raise ValueError(f"no shards for participants {missing}")

    jobs = {
        cid: (
            global_model,
            shards[cid],
            train_cfg.with_seed(derive_seed(master_seed, "train", round_id, cid)),
            derive_seed(master_seed, "rt", round_id, cid),
        )
        for cid in ordered
    }
    results: dict[int, tuple[ModelSnapshot, ClientMetrics, float]] = {}
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                cid: pool.submit(_train_one_client, cid, *args) for cid, args in jobs.items()
            }
            for cid, fut in futures.items():
                try:
                    results[cid] = fut.result()
                except Exception as exc:
                    raise RuntimeError(f"client {cid} failed in round {round_id}: {exc}") from exc
    else:
        for cid, args in jobs.items():
            try:
                results[cid] = _train_one_client(cid, *args)
            except Exception as exc:
                raise RuntimeError(f"client {cid} failed in round {round_id}: {exc}") from exc

    snapshots = {cid: results[cid][0] for cid in ordered}
    metrics = {cid: results[cid][1] for cid in ordered}
    new_global = fedavg(
        [snapshots[cid] for cid in ordered],
        [float(metrics[cid].dataset_size) for cid in ordered],
    )
    return RoundRecord(
        round_id=round_id,
        participant_ids=ordered,
        client_snapshots=snapshots,
        client_metrics=metrics,
        global_snapshot=new_global,
        aggregation_duration=simulated_aggregation_duration(
            len(ordered), global_model.num_params
        ),
    )


def select_participants(
    cfg: SessionConfig, round_id: int, excluded: frozenset[int] = frozenset()
) -> list[int]:
    """Seeded sample of clients_per_round ids (fewer if exclusions shrink the
    pool); ascending order."""
    pool = [c for c in range(cfg.num_clients) if c not in excluded]
    if not pool:
        raise ValueError("no clients left to sample")
    rng = np.random.default_rng(derive_seed(cfg.master_seed, "select", round_id))
    take = min(cfg.clients_per_round, len(pool))
    picked = rng.choice(len(pool), size=take, replace=False)
    return sorted(pool[i] for i in picked)


class SessionRunner:
    """Drives a session round by round against a telemetry store.

    `on_round` fires after each commit (the hook for breakpoints and event
    streams). `adopt` lets a debugger swap in a corrected global model and
    bar clients between rounds; it never interrupts a round in flight.
    """

    def __init__(
        self,
        cfg: SessionConfig,
        store: TelemetryStore,
        dataset: LabeledDataset | None = None,
        test_dataset: LabeledDataset | None = None,
        on_round: Callable[[RoundRecord], None] | None = None,
        workers: int = 1,
        branch: str | None = None,
        start_round: int = 0,
        initial_global: ModelSnapshot | None = None,
        excluded: frozenset[int] = frozenset(),
        write_meta: bool = True,
    ):
        self.cfg = cfg
        self.store = store
        self.on_round = on_round
        self.workers = workers
        self.branch = branch
        self.excluded = frozenset(excluded)
        if dataset is None:
            dataset, built_test = cfg.data.build()
            if test_dataset is None:
                test_dataset = built_test
        self.dataset = dataset
        self.test_dataset = test_dataset
        shards = partition(dataset, cfg.partition)
        shards = noisy_shards(shards, cfg.faults.client_ids, cfg.faults.noise_rate, cfg.faults.seed)
        self.shards = {cid: shard for cid, shard in enumerate(shards)}
        self.global_model = (
            initial_global
            if initial_global is not None
            else init_model(cfg.arch, derive_seed(cfg.master_seed, "init"))
        )
        self.next_round = start_round
        if write_meta and branch is None:
            store.put_session_config(session_config_to_sections(cfg))
            store.put_initial_snapshot(self.global_model)

    @property
    def finished(self) -> bool:
        return self.next_round >= self.cfg.num_rounds

    def adopt(self, global_model: ModelSnapshot, bar: frozenset[int] = frozenset()) -> None:
        """Swap the working global model (fix-and-replay handoff)."""
        self.global_model = global_model
        self.excluded = self.excluded | frozenset(bar)

    def run_one_round(self) -> RoundRecord:
        if self.finished:
            raise RuntimeError("session already ran its configured rounds")
        round_id = self.next_round
        participants = select_participants(self.cfg, round_id, self.excluded)
        record = run_round(
            self.global_model,
            round_id,
            participants,
            self.shards,
            self.cfg.train_cfg,
            self.cfg.master_seed,
            workers=self.workers,
        )
        try:
            self.store.record_round(record, branch=self.branch)
        except OSError as exc:
            raise RuntimeError(f"telemetry write failed at round {round_id}: {exc}") from exc
        self.global_model = record.global_snapshot
        self.next_round = round_id + 1
        if self.on_round is not None:
            self.on_round(record)
        return record

    def run(self) -> ModelSnapshot:
        while not self.finished:
            self.run_one_round()
        return self.global_model


def run_session(
    cfg: SessionConfig,
    store: TelemetryStore,
    dataset: LabeledDataset | None = None,
    on_round: Callable[[RoundRecord], None] | None = None,
    workers: int = 1,
) -> ModelSnapshot:
    """Execute cfg.num_rounds rounds, recording each before the next begins."""
    runner = SessionRunner(
        cfg, store, dataset=dataset, on_round=on_round, workers=workers
    )
    return runner.run()
