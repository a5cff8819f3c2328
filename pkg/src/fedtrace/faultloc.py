"""Automated faulty-client localization.

Two stages. Test input selection draws Kaiming-random input pools and keeps
an input when a previously-unseen subset of at least `eta` clients agrees on
its predicted label. Differential testing then accuses, per input, the
client whose exclusion leaves the largest common set of activated hidden
neurons across the remaining models; activation profiles are computed once
per client per input, so the cost is linear in the number of clients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import (
    DEFAULT_ACTIVATION_THRESHOLD,
    ModelSnapshot,
    NeuronId,
    forward_batch,
    kaiming_random_batch,
    predict_labels,
)
from .seeding import derive_seed

DEFAULT_KAPPA = 10
DEFAULT_POOL_BATCH = 1000
DEFAULT_MAX_ATTEMPTS = 50000


class NoDiscriminatingInputs(RuntimeError):
    """Input selection found nothing before the attempt budget ran out."""

    def __init__(self, attempts: int):
        super().__init__(
            f"no discriminating inputs found within {attempts} candidates"
        )
        self.attempts = attempts


@dataclass(frozen=True)
class SelectionConfig:
    shape: tuple[int, ...]
    kappa: int = DEFAULT_KAPPA
    eta: int | None = None  # None -> min(5, ceil(n/2)) at selection time
    pool_batch: int = DEFAULT_POOL_BATCH
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.pool_batch < 1 or self.max_attempts < 1:
            raise ValueError("pool_batch and max_attempts must be >= 1")
        if self.eta is not None and self.eta < 2:
            raise ValueError("eta must be >= 2")

    def effective_eta(self, num_clients: int) -> int:
        eta = self.eta if self.eta is not None else min(5, math.ceil(num_clients / 2))
        if eta > num_clients:
            raise ValueError(f"eta {eta} exceeds the {num_clients} available clients")
        return eta


@dataclass(frozen=True)
class InputProvenance:
    pool_seed: int
    pool_index: int
    agreeing: tuple[int, ...]
    label: int


@dataclass
class TestSuite:
    """Selected inputs plus the evidence that admitted each of them."""

    inputs: list[np.ndarray]
    provenance: list[InputProvenance]
    attempts: int
    exhausted: bool  # True when the attempt budget ended the search early

    def __len__(self) -> int:
        return len(self.inputs)


def _sorted_clients(clients: Mapping[int, ModelSnapshot]) -> list[tuple[int, ModelSnapshot]]:
    items = sorted(clients.items())
    if len(items) < 2:
        raise ValueError("need at least 2 client models")
    arch = items[0][1].arch
    for _, snap in items:
        if snap.arch != arch:
            raise ValueError("client models must share one architecture")
    return items


def select_test_inputs(clients: Mapping[int, ModelSnapshot], cfg: SelectionConfig) -> TestSuite:
    """Inference-guided selection over lazily generated random input pools.

    A candidate is accepted when, for some class label, the set of clients
    predicting that label has size >= eta and was not the agreeing set of a
    previously accepted input. Stops at kappa inputs; gives up (returning a
    partial, `exhausted` suite) after max_attempts candidates.
    """
    items = _sorted_clients(clients)
    ids = [cid for cid, _ in items]
    arch = items[0][1].arch
    if int(np.prod(cfg.shape)) != arch.input_dim:
        raise ValueError(
            f"input shape {cfg.shape} does not match arch input dim {arch.input_dim}"
        )
    eta = cfg.effective_eta(len(ids))
    num_classes = arch.num_classes

    selected: list[np.ndarray] = []
    provenance: list[InputProvenance] = []
    seen: set[frozenset[int]] = set()
    attempts = 0
    batch_index = 0
    while len(selected) < cfg.kappa and attempts < cfg.max_attempts:
        pool_seed = derive_seed(cfg.seed, "pool", batch_index)
        pool = kaiming_random_batch(cfg.shape, cfg.pool_batch, pool_seed)
        preds = np.stack([predict_labels(snap, pool) for _, snap in items])
        for row in range(pool.shape[0]):
            if len(selected) >= cfg.kappa or attempts >= cfg.max_attempts:
                break
            attempts += 1
            for label in range(num_classes):
                members = frozenset(
                    cid for pos, cid in enumerate(ids) if preds[pos, row] == label
                )
                if members not in seen and len(members) >= eta:
                    seen.add(members)
                    selected.append(pool[row].copy())
                    provenance.append(
                        InputProvenance(
                            pool_seed=pool_seed,
                            pool_index=row,
                            agreeing=tuple(sorted(members)),
                            label=label,
                        )
                    )
                    break
        batch_index += 1
    if not selected:
        raise NoDiscriminatingInputs(attempts)
    return TestSuite(
        inputs=selected,
        provenance=provenance,
        attempts=attempts,
        exhausted=len(selected) < cfg.kappa,
    )


# -- activation profiles -----------------------------------------------------


@dataclass(frozen=True)
class LocalizationConfig:
    activation_threshold: float = DEFAULT_ACTIVATION_THRESHOLD
    tie_break: str = "lowest_id"

    def __post_init__(self):
        if math.isnan(self.activation_threshold):
            raise ValueError("activation threshold must not be NaN")
        if self.tie_break != "lowest_id":
            raise ValueError("only lowest_id tie-breaking is supported")


class ProfileCache:
    """Caches concatenated hidden activations per (model digest, input digest),
    so repeated localizations (threshold sweeps, multi-fault iterations) do
    not redo forward passes."""

    def __init__(self):
        self._store: dict[tuple[str, bytes], np.ndarray] = {}

    def hidden_vector(self, snapshot: ModelSnapshot, x: np.ndarray) -> np.ndarray:
        key = (snapshot.digest(), np.ascontiguousarray(x).tobytes())
        vec = self._store.get(key)
        if vec is None:
            _, hiddens = forward_batch(snapshot, x, capture_hidden=True)
            vec = np.concatenate([h[0] for h in hiddens])
            self._store[key] = vec
        return vec


def _neuron_index(arch) -> list[NeuronId]:
    out: list[NeuronId] = []
    for layer, size in enumerate(arch.hidden_sizes):
        out.extend((layer, i) for i in range(size))
    return out


def activation_sets(
    clients: Mapping[int, ModelSnapshot],
    x: np.ndarray,
    threshold: float,
    cache: ProfileCache | None = None,
) -> dict[int, frozenset[NeuronId]]:
    """Per-client sets of hidden neurons strictly above the threshold."""
    items = _sorted_clients(clients)
    arch = items[0][1].arch
    arch.require_hidden()
    neurons = _neuron_index(arch)
    cache = cache or ProfileCache()
    result = {}
    for cid, snap in items:
        vec = cache.hidden_vector(snap, x)
        active = np.nonzero(vec > threshold)[0]
        result[cid] = frozenset(neurons[i] for i in active)
    return result


@dataclass(frozen=True)
class InputVerdict:
    input_index: int
    accused: int
    max_common_activations: int
    tie: bool


def localize_on_input(
    clients: Mapping[int, ModelSnapshot],
    x: np.ndarray,
    cfg: LocalizationConfig = LocalizationConfig(),
    cache: ProfileCache | None = None,
) -> tuple[int, int, bool]:
    """Leave-one-out differential test on one input.

    For each client subset of size n-1, the size of the intersection of
    activated-neuron sets is scored; the excluded client of the strictly
    best subset is accused. Ties go to the lowest excluded id and are
    flagged. Profiles are computed once per client (n forward passes); the
    per-subset intersection sizes come from activation counts, which gives
    the same result as materializing every subset.
    """
    items = _sorted_clients(clients)
    if len(items) < 3:
        raise ValueError(
            "leave-one-out needs at least 3 clients: with 2, each subset is a "
            "single model and intersection size measures activity, not agreement"
        )
    items[0][1].arch.require_hidden()
    cache = cache or ProfileCache()
    active = np.stack(
        [cache.hidden_vector(snap, x) > cfg.activation_threshold for _, snap in items]
    )
    n = active.shape[0]
    counts = active.sum(axis=0)
    everywhere = int((counts == n).sum())
    # a neuron active in exactly n-1 clients joins the intersection only of
    # the subset that excludes its lone inactive client
    near_miss = counts == (n - 1)
    bonus = (near_miss[None, :] & ~active).sum(axis=1)
    sizes = everywhere + bonus
    best = int(np.argmax(sizes))  # first maximum -> lowest excluded id
    tie = int((sizes == sizes[best]).sum()) > 1
    return items[best][0], int(sizes[best]), tie


@dataclass
class FaultReport:
    """Per-input accusations plus the majority verdict."""

    per_input: list[InputVerdict]
    verdict: int
    accuracy_vs_truth: float | None = None
    threshold: float = DEFAULT_ACTIVATION_THRESHOLD

    def accused_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for v in self.per_input:
            counts[v.accused] = counts.get(v.accused, 0) + 1
        return counts

    def to_json(self) -> str:
        body = {
            "threshold": self.threshold,
            "verdict": self.verdict,
            "accuracy_vs_truth": self.accuracy_vs_truth,
            "per_input": [
                {
                    "input_index": v.input_index,
                    "accused": v.accused,
                    "max_common_activations": v.max_common_activations,
                    "tie": v.tie,
                }
                for v in self.per_input
            ],
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":"))


def majority_verdict(accusations: Sequence[int]) -> int:
    """Most frequent accusation; ties resolve to the lowest client id."""
    counts: dict[int, int] = {}
    for cid in accusations:
        counts[cid] = counts.get(cid, 0) + 1
    best = max(counts.values())
    return min(cid for cid, c in counts.items() if c == best)


def per_input_accuracy(accusations: Sequence[int], truth: Iterable[int]) -> float:
    """Fraction of inputs whose accusation names a true faulty client."""
    truth_set = set(truth)
    if not accusations:
        return 0.0
    hits = sum(1 for cid in accusations if cid in truth_set)
    return hits / len(accusations)


def localize(
    clients: Mapping[int, ModelSnapshot],
    suite: TestSuite,
    cfg: LocalizationConfig = LocalizationConfig(),
    true_faulty: Iterable[int] | None = None,
    cache: ProfileCache | None = None,
) -> FaultReport:
    """Differential testing across the whole suite.

    The verdict is the majority accusation (lowest id on ties). When ground
    truth is supplied, accuracy is the fraction of inputs whose accusation
    is a true faulty client.
    """
    if len(suite) == 0:
        raise ValueError("test suite is empty")
    cache = cache or ProfileCache()
    per_input = []
    for idx, x in enumerate(suite.inputs):
        accused, common, tie = localize_on_input(clients, x, cfg, cache=cache)
        per_input.append(
            InputVerdict(
                input_index=idx, accused=accused, max_common_activations=common, tie=tie
            )
        )
    accusations = [v.accused for v in per_input]
    accuracy = (
        per_input_accuracy(accusations, true_faulty) if true_faulty is not None else None
    )
    return FaultReport(
        per_input=per_input,
        verdict=majority_verdict(accusations),
        accuracy_vs_truth=accuracy,
        threshold=cfg.activation_threshold,
    )


@dataclass
class MultiFaultResult:
    accused: list[int]
    reports: list[FaultReport]
    partial: bool  # stopped early because fewer than 3 clients would remain


def localize_multi(
    clients: Mapping[int, ModelSnapshot],
    selection: SelectionConfig,
    cfg: LocalizationConfig,
    num_faults: int,
) -> MultiFaultResult:
    """Iterative localization: accuse, remove, repeat num_faults times.

    Each iteration builds a fresh suite over the remaining clients (selection
    seed derived per iteration) and removes that iteration's verdict client.
    """
    if num_faults < 1:
        raise ValueError("num_faults must be >= 1")
    remaining = dict(_sorted_clients(clients))
    accused: list[int] = []
    reports: list[FaultReport] = []
    partial = False
    for iteration in range(num_faults):
        if len(remaining) < 3:
            partial = True
            break
        iter_cfg = SelectionConfig(
            shape=selection.shape,
            kappa=selection.kappa,
            eta=selection.eta,
            pool_batch=selection.pool_batch,
            max_attempts=selection.max_attempts,
            seed=derive_seed(selection.seed, "multi", iteration),
        )
        suite = select_test_inputs(remaining, iter_cfg)
        report = localize(remaining, suite, cfg)
        accused.append(report.verdict)
        reports.append(report)
        del remaining[report.verdict]
    return MultiFaultResult(accused=accused, reports=reports, partial=partial)


def threshold_sweep(
    clients: Mapping[int, ModelSnapshot],
    suite: TestSuite,
    thresholds: Sequence[float],
    true_faulty: Iterable[int] | None = None,
) -> list[tuple[float, FaultReport]]:
    """Localize at each threshold, reusing the per-client forward passes."""
    cache = ProfileCache()
    truth = list(true_faulty) if true_faulty is not None else None
    out = []
    for threshold in thresholds:
        cfg = LocalizationConfig(activation_threshold=threshold)
        out.append((threshold, localize(clients, suite, cfg, true_faulty=truth, cache=cache)))
    return out
