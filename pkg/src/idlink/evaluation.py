"""Metrics and experiment harness.

Hit-precision for one test source with the true target at (1-based) rank r is
(k - (r - 1)) / k when r <= k and 0 otherwise; the reported score is the mean
over test sources. Candidates are always the full target identity set, ranked
by model confidence with ties broken by ascending target id.
"""

from __future__ import annotations

import csv
import io
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .corpus.sparsity import apply_sparsity
from .corpus.types import AnnotationSet, DataError, NetworkPair, UnknownUserError
from .linkage import (
    LinkageModel,
    ModelConfig,
    PreparedPair,
    TrainConfig,
    score_matrix,
    train_supervised,
)


class PhaseTimer:
    """Wall-clock accounting for named, non-overlapping phases."""

    def __init__(self):
        self.phases: dict[str, float] = {}
        self._first_start: float | None = None
        self._last_end: float | None = None

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        if self._first_start is None:
            self._first_start = start
        try:
            yield
        finally:
            end = time.perf_counter()
            self._last_end = end
            self.phases[name] = self.phases.get(name, 0.0) + (end - start)

    @property
    def total(self) -> float:
        if self._first_start is None or self._last_end is None:
            return 0.0
        return self._last_end - self._first_start

    def summary(self) -> dict:
        return {"phases": dict(self.phases), "total": self.total}


@dataclass(frozen=True)
class EvalConfig:
    k: int = 3
    test_pairs: int | None = 300  # None: use every held-out pair
    train_ratio: float = 0.1
    repetitions: int = 5
    seed: int = 0
    report_ks: tuple[int, ...] = (3, 5, 10)
    sparsity_fractions: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)

    def validate(self) -> None:
        if self.k < 1 or any(k < 1 for k in self.report_ks):
            raise ValueError("hit-precision k must be at least 1")
        if any(not 0.0 <= f <= 1.0 for f in self.sparsity_fractions):
            raise ValueError("sparsity_fractions must lie in [0, 1]")
        if not 0.0 < self.train_ratio < 1.0:
            raise ValueError("train_ratio must be in (0, 1)")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.test_pairs is not None and self.test_pairs < 1:
            raise ValueError("test_pairs must be at least 1 (or null for all held-out)")


@dataclass
class EvalReport:
    k: int
    mean_hit_precision: float
    per_repetition: list[float]
    per_source_ranks: list[dict[str, int]]
    timings: dict = field(default_factory=dict)

    def to_json_dict(self, include_timings: bool = False) -> dict:
        out = {
            "k": self.k,
            "mean_hit_precision": self.mean_hit_precision,
            "per_repetition": self.per_repetition,
            "per_source_ranks": self.per_source_ranks,
        }
        if include_timings:
            out["timings"] = self.timings
        return out


def hit_precision(
    rankings: Mapping[str, Sequence[str]],
    truth: Mapping[str, str],
    k: int,
) -> float:
    """Mean hit-precision of ranked candidate lists against the ground truth."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not rankings:
        raise ValueError("no ranked test sources given")
    scores = []
    for source, ranked in rankings.items():
        if source not in truth:
            raise DataError(f"no ground-truth target for test source {source!r}")
        target = truth[source]
        try:
            rank = list(ranked).index(target) + 1
        except ValueError:
            raise DataError(
                f"ground-truth target {target!r} missing from the candidate pool of {source!r}"
            ) from None
        scores.append((k - (rank - 1)) / k if rank <= k else 0.0)
    return sum(scores) / len(scores)


def _ranked_targets(score_row: np.ndarray, target_ids: Sequence[str]) -> list[str]:
    order = sorted(range(len(target_ids)), key=lambda j: (-score_row[j], target_ids[j]))
    return [target_ids[j] for j in order]


def held_out_pairs(
    ground_truth: Sequence[tuple[str, str]],
    annotations: AnnotationSet,
) -> list[tuple[str, str]]:
    """Ground-truth pairs disjoint from the training annotations."""
    return sorted(
        (s, t)
        for s, t in set(ground_truth)
        if s not in annotations.sources and t not in annotations.targets
    )


def evaluate_model(
    model,
    pair: NetworkPair,
    ground_truth: Sequence[tuple[str, str]],
    cfg: EvalConfig,
    annotations: AnnotationSet | None = None,
    prepared: PreparedPair | None = None,
) -> EvalReport:
    """Hit-precision over repeated random test samples of held-out pairs.

    Every test source is ranked against the entire target identity set.
    Deterministic given the seed; the model only needs a ``score_matrix``
    compatible scoring surface.
    """
    cfg.validate()
    annotations = annotations if annotations is not None else pair.annotations
    held = held_out_pairs(ground_truth, annotations)
    if not held:
        raise DataError("no held-out ground-truth pairs to evaluate on")
    n_test = len(held) if cfg.test_pairs is None else cfg.test_pairs
    if n_test > len(held):
        raise DataError(f"test_pairs={n_test} exceeds the {len(held)} held-out pairs available")

    timer = PhaseTimer()
    with timer.phase("evaluate"):
        sources = sorted({s for s, _ in held})
        scores, src_ids, tgt_ids = score_matrix(model, pair, sources, None, prepared)
        row_of = {s: i for i, s in enumerate(src_ids)}
        rng = np.random.default_rng(cfg.seed)
        per_rep: list[float] = []
        per_source_ranks: list[dict[str, int]] = []
        for _ in range(cfg.repetitions):
            chosen = rng.choice(len(held), size=n_test, replace=False)
            sample = [held[i] for i in sorted(chosen.tolist())]
            rankings = {s: _ranked_targets(scores[row_of[s]], tgt_ids) for s, _ in sample}
            truth = dict(sample)
            per_rep.append(hit_precision(rankings, truth, cfg.k))
            per_source_ranks.append(
                {s: rankings[s].index(t) + 1 for s, t in sample}
            )
    return EvalReport(
        k=cfg.k,
        mean_hit_precision=sum(per_rep) / len(per_rep),
        per_repetition=per_rep,
        per_source_ranks=per_source_ranks,
        timings=timer.summary(),
    )


def confident_pair_accuracy(
    candidates: Sequence,
    ground_truth: Mapping[str, str] | Sequence[tuple[str, str]],
) -> float:
    """Fraction of candidate pairs present in the ground truth."""
    if not candidates:
        raise ValueError("candidate list is empty")
    truth = ground_truth if isinstance(ground_truth, Mapping) else dict(ground_truth)
    pairs = [
        (c.source_id, c.target_id) if hasattr(c, "source_id") else (c[0], c[1])
        for c in candidates
    ]
    return sum(1 for s, t in pairs if truth.get(s) == t) / len(pairs)


@dataclass
class SweepRow:
    axis: str
    fraction: float
    mean_hit_precision: float
    per_repetition: list[float]


def sparsity_sweep(
    pair: NetworkPair,
    ground_truth: Sequence[tuple[str, str]],
    fractions: Sequence[float],
    axis: str,
    train_cfg: TrainConfig,
    eval_cfg: EvalConfig,
    model_cfg: ModelConfig | None = None,
    sparsity_seed: int = 0,
    train_fn: Callable | None = None,
) -> list[SweepRow]:
    """Retrain and evaluate after removing a fraction of relations/microblogs.

    Both networks are thinned with the same fraction; model training restarts
    from scratch for every row with identical seeds, so the fraction is the
    only thing that varies.
    """
    if axis not in ("relations", "microblogs"):
        raise ValueError("axis must be 'relations' or 'microblogs'")
    train_fn = train_fn or (
        lambda p: train_supervised(p, train_cfg, model_cfg=model_cfg).model
    )
    rows = []
    for fraction in fractions:
        r_r = fraction if axis == "relations" else 0.0
        r_t = fraction if axis == "microblogs" else 0.0
        sparse = NetworkPair(
            source=apply_sparsity(pair.source, r_r, r_t, seed=sparsity_seed),
            target=apply_sparsity(pair.target, r_r, r_t, seed=sparsity_seed + 1),
            annotations=pair.annotations,
        )
        model = train_fn(sparse)
        report = evaluate_model(model, sparse, ground_truth, eval_cfg)
        rows.append(
            SweepRow(
                axis=axis,
                fraction=float(fraction),
                mean_hit_precision=report.mean_hit_precision,
                per_repetition=report.per_repetition,
            )
        )
    return rows


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["axis", "fraction", "mean_hit_precision"])
    for row in rows:
        writer.writerow([row.axis, f"{row.fraction:g}", repr(row.mean_hit_precision)])
    return buf.getvalue()


def sweep_to_plot_json(rows: Sequence[SweepRow]) -> dict:
    return {
        "axis": rows[0].axis if rows else "",
        "fractions": [row.fraction for row in rows],
        "mean_hit_precision": [row.mean_hit_precision for row in rows],
        "per_repetition": [row.per_repetition for row in rows],
    }


def export_attention(
    model: LinkageModel,
    pair: NetworkPair,
    tag: str,
    user_id: str,
    prepared: PreparedPair | None = None,
) -> dict:
    """Nested attention weights of one user's forward pass, JSON-ready.

    Word weights are keyed by microblog/sentence/word index (with the token
    string for readability); every weight group sums to 1.
    """
    prepared = prepared or PreparedPair.build(model, pair)
    net = prepared.side(tag)
    if user_id not in net.index:
        raise UnknownUserError(f"unknown {tag} user {user_id!r}")
    index = net.index[user_id]
    with torch.no_grad():
        batch = model.encoder(tag).forward_users(net, [index], with_trace=True)
    trace = batch.traces[0]
    vocab = model.vocab(tag)

    microblogs = []
    for b, blog_weight in enumerate(trace.microblog_weights):
        sentences = []
        for s, sent_weight in enumerate(trace.sentence_weights[b]):
            sent_ids = net.blogs[index][b][s].tolist()
            words = [
                {"index": w, "token": vocab.word(sent_ids[w]), "weight": weight}
                for w, weight in enumerate(trace.word_weights[b][s])
            ]
            sentences.append({"index": s, "weight": sent_weight, "words": words})
        microblogs.append({"index": b, "weight": blog_weight, "sentences": sentences})
    neighbors = [
        {"id": nid, "weight": weight}
        for nid, weight in zip(trace.neighbor_ids, trace.neighbor_weights)
    ]
    return {
        "user_id": user_id,
        "network": tag,
        "microblogs": microblogs,
        "neighbors": neighbors,
        "no_microblogs": trace.no_microblogs,
        "no_neighbors": trace.no_neighbors,
    }
