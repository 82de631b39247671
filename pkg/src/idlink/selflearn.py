"""Noise-aware self-learning.

The trained linkage model proposes the most confident unlabeled pairs as
pseudo-labels. Their target mean vectors are modeled as a two-component
mixture: with probability gamma the target mean is drawn around its source
mean (matched, isotropic variance sigma_p^2), otherwise from a background
noise Gaussian N(noise_mean, noise_var*I). An EM loop with hard 0.5-threshold
assignments estimates the mixture and keeps only candidates credited to the
matched component; the survivors augment the annotation set for the next
training round.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .corpus.types import AnnotationSet, NetworkPair
from .gaussian import VARIANCE_FLOOR
from .linkage import (
    LinkageModel,
    ModelConfig,
    PreparedPair,
    TrainConfig,
    embed_all,
    fine_tune,
    score_matrix,
    train_supervised,
)

log = logging.getLogger(__name__)

GAMMA_CLAMP = 1e-4


@dataclass(frozen=True)
class SelfLearnConfig:
    n_confident: int = 50  # pseudo-label candidates per round (k_c)
    gamma_tolerance: float = 0.1  # stop when |gamma_new - gamma_old| <= this
    outer_iterations: int = 3
    fine_tune_epochs: int = 15
    responsibility_threshold: float = 0.5
    inner_finetune: bool = True  # fine-tune inside the EM loop
    vanilla: bool = False  # skip the EM filter, add raw top-k directly
    max_inner_iterations: int = 50
    retrain_each_round: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.n_confident < 1:
            raise ValueError("n_confident must be at least 1")
        if self.gamma_tolerance <= 0:
            raise ValueError("gamma_tolerance must be positive")
        if self.outer_iterations < 0 or self.fine_tune_epochs < 1:
            raise ValueError("outer_iterations must be >= 0 and fine_tune_epochs >= 1")
        if not 0.0 < self.responsibility_threshold < 1.0:
            raise ValueError("responsibility_threshold must be in (0, 1)")
        if self.max_inner_iterations < 1:
            raise ValueError("max_inner_iterations must be at least 1")


@dataclass
class CandidatePair:
    """A confident pseudo-label with both identities' mean vectors."""

    source_id: str
    target_id: str
    mu_source: np.ndarray
    mu_target: np.ndarray
    score: float


@dataclass(frozen=True)
class EMState:
    """Bernoulli-Gaussian mixture parameters."""

    gamma: float  # matched-component prior
    positive_var: float  # sigma_p^2, isotropic variance of the matched component
    noise_mean: np.ndarray
    noise_var: float  # isotropic variance of the noise component
    iteration: int = 0
    prev_gamma: float = 0.0

    def __post_init__(self):
        if self.positive_var <= 0 or self.noise_var <= 0:
            raise ValueError("mixture variances must be strictly positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in the open unit interval")


def _clamp_gamma(value: float) -> float:
    return float(min(max(value, GAMMA_CLAMP), 1.0 - GAMMA_CLAMP))


def select_confident_pairs(
    model: LinkageModel,
    pair: NetworkPair,
    exclude: AnnotationSet,
    n_confident: int,
    prepared: PreparedPair | None = None,
) -> list[CandidatePair]:
    """Highest-scoring unlabeled pairs under one-to-one greedy assignment.

    Identities appearing in ``exclude`` (either side) are off the table; each
    returned source and target appears at most once. Ties are broken by id
    order, so the selection is deterministic.
    """
    prepared = prepared or PreparedPair.build(model, pair)
    free_sources = [u for u in pair.source.user_ids if u not in exclude.sources]
    free_targets = [u for u in pair.target.user_ids if u not in exclude.targets]
    if n_confident > min(len(free_sources), len(free_targets)):
        raise ValueError(
            f"n_confident={n_confident} exceeds the {min(len(free_sources), len(free_targets))} "
            "one-to-one unlabeled pairs available"
        )
    scores, src_ids, tgt_ids = score_matrix(model, pair, free_sources, free_targets, prepared)
    src_bank = embed_all(model, pair, "source", free_sources, prepared)
    tgt_bank = embed_all(model, pair, "target", free_targets, prepared)

    # stable argsort on -score keeps flat (source, target) id order for ties
    flat = np.argsort(-scores, axis=None, kind="stable")
    chosen: list[CandidatePair] = []
    used_s: set[int] = set()
    used_t: set[int] = set()
    n_t = len(tgt_ids)
    for k in flat:
        i, j = int(k) // n_t, int(k) % n_t
        if i in used_s or j in used_t:
            continue
        used_s.add(i)
        used_t.add(j)
        chosen.append(
            CandidatePair(
                source_id=src_ids[i],
                target_id=tgt_ids[j],
                mu_source=src_bank.mu[i].copy(),
                mu_target=tgt_bank.mu[j].copy(),
                score=float(scores[i, j]),
            )
        )
        if len(chosen) == n_confident:
            break
    return chosen


# ----------------------------------------------------------------------
# Bernoulli-Gaussian mixture
# ----------------------------------------------------------------------


def _isotropic_log_density(x: np.ndarray, mean: np.ndarray, var: float) -> np.ndarray:
    """Rowwise log N(x; mean, var*I); x (n, d), mean (n, d) or (d,)."""
    x = np.atleast_2d(x)
    d = x.shape[1]
    sq = ((x - mean) ** 2).sum(axis=1)
    return -0.5 * (d * np.log(2.0 * np.pi * var) + sq / var)


def _mixture_log_parts(state: EMState, mu_s: np.ndarray, mu_t: np.ndarray):
    log_pos = np.log(state.gamma) + _isotropic_log_density(mu_t, mu_s, state.positive_var)
    log_noise = np.log1p(-state.gamma) + _isotropic_log_density(mu_t, state.noise_mean, state.noise_var)
    return log_pos, log_noise


def mixture_log_density(mu_t: np.ndarray, mu_s: np.ndarray, state: EMState) -> float:
    log_pos, log_noise = _mixture_log_parts(state, np.atleast_2d(mu_s), np.atleast_2d(mu_t))
    return float(np.logaddexp(log_pos, log_noise)[0])


def mixture_density(mu_t: np.ndarray, mu_s: np.ndarray, state: EMState) -> float:
    """Density of the matched/noise mixture at mu_t, given the source mean."""
    mu_t, mu_s = np.asarray(mu_t, dtype=np.float64), np.asarray(mu_s, dtype=np.float64)
    if mu_t.shape != mu_s.shape or mu_t.shape != state.noise_mean.shape:
        raise ValueError("mean vectors must share the mixture dimension")
    return float(np.exp(mixture_log_density(mu_t, mu_s, state)))


def responsibilities(state: EMState, mu_s: np.ndarray, mu_t: np.ndarray) -> np.ndarray:
    """Posterior probability that each candidate is a true match."""
    log_pos, log_noise = _mixture_log_parts(state, mu_s, mu_t)
    return np.exp(log_pos - np.logaddexp(log_pos, log_noise))


def observed_log_likelihood(state: EMState, mu_s: np.ndarray, mu_t: np.ndarray) -> float:
    log_pos, log_noise = _mixture_log_parts(state, mu_s, mu_t)
    return float(np.logaddexp(log_pos, log_noise).sum())


def em_initialize(
    annotation_mu_source: np.ndarray,
    annotation_mu_target: np.ndarray,
    target_means: np.ndarray,
) -> EMState:
    """Initialize the mixture from the annotated pairs and the target platform.

    sigma_p^2 is the mean per-dimension squared distance over annotated pairs;
    the noise component gets the target platform's mean and averaged
    per-dimension variance; gamma starts at 0.5.
    """
    ann_s = np.atleast_2d(np.asarray(annotation_mu_source, dtype=np.float64))
    ann_t = np.atleast_2d(np.asarray(annotation_mu_target, dtype=np.float64))
    if ann_s.shape != ann_t.shape or ann_s.shape[0] == 0:
        raise ValueError("need at least one annotated pair with matching shapes")
    d = ann_s.shape[1]
    positive_var = float(((ann_s - ann_t) ** 2).sum() / (ann_s.shape[0] * d))
    targets = np.atleast_2d(np.asarray(target_means, dtype=np.float64))
    noise_mean = targets.mean(axis=0)
    noise_var = float(((targets - noise_mean) ** 2).sum() / (targets.shape[0] * d))
    return EMState(
        gamma=0.5,
        positive_var=max(positive_var, VARIANCE_FLOOR),
        noise_mean=noise_mean,
        noise_var=max(noise_var, VARIANCE_FLOOR),
        iteration=0,
        prev_gamma=0.0,
    )


def em_estep(
    state: EMState,
    mu_s: np.ndarray,
    mu_t: np.ndarray,
    threshold: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Responsibilities and the hard accept mask (g > threshold)."""
    g = responsibilities(state, mu_s, mu_t)
    return g, g > threshold


def em_mstep(
    state: EMState,
    mu_s: np.ndarray,
    mu_t: np.ndarray,
    accepted: np.ndarray,
) -> EMState:
    """Re-estimate mixture parameters from the hard assignment.

    A degenerate split (all accepted or all rejected) leaves the starved
    component's parameters unchanged; gamma is ratio-updated and clamped.
    """
    n, d = mu_t.shape
    k_t = int(accepted.sum())
    positive_var, noise_mean, noise_var = state.positive_var, state.noise_mean, state.noise_var
    if k_t > 0:
        positive_var = max(
            float(((mu_s[accepted] - mu_t[accepted]) ** 2).sum() / (d * k_t)), VARIANCE_FLOOR
        )
    if k_t < n:
        rejected = mu_t[~accepted]
        noise_mean = rejected.mean(axis=0)
        noise_var = max(float(((rejected - noise_mean) ** 2).sum() / (d * (n - k_t))), VARIANCE_FLOOR)
    return EMState(
        gamma=_clamp_gamma(k_t / n),
        positive_var=positive_var,
        noise_mean=noise_mean,
        noise_var=noise_var,
        iteration=state.iteration + 1,
        prev_gamma=state.gamma,
    )


def em_iterate(
    state: EMState,
    mu_s: np.ndarray,
    mu_t: np.ndarray,
    threshold: float = 0.5,
) -> tuple[EMState, np.ndarray, np.ndarray]:
    """One E+M pass over the candidate means.

    Returns (new state, responsibilities, indices of accepted candidates).
    """
    mu_s = np.atleast_2d(np.asarray(mu_s, dtype=np.float64))
    mu_t = np.atleast_2d(np.asarray(mu_t, dtype=np.float64))
    if mu_s.shape != mu_t.shape or mu_s.shape[0] == 0:
        raise ValueError("candidate means must be nonempty and congruent")
    g, accepted = em_estep(state, mu_s, mu_t, threshold)
    new_state = em_mstep(state, mu_s, mu_t, accepted)
    return new_state, g, np.flatnonzero(accepted)


# ----------------------------------------------------------------------
# filtering and the outer loop
# ----------------------------------------------------------------------


@dataclass
class NoiseFilterResult:
    accepted: list[tuple[str, str]]
    candidates: list[CandidatePair]
    responsibilities: np.ndarray
    gamma_trajectory: list[float]
    k_t_trajectory: list[int]
    log_likelihoods: list[float]
    inner_iterations: int
    degenerate: bool


def _candidate_means(
    model: LinkageModel,
    pair: NetworkPair,
    candidates: Sequence[CandidatePair],
    prepared: PreparedPair,
) -> tuple[np.ndarray, np.ndarray]:
    src = embed_all(model, pair, "source", [c.source_id for c in candidates], prepared)
    tgt = embed_all(model, pair, "target", [c.target_id for c in candidates], prepared)
    return src.mu, tgt.mu


def _annotation_means(model, pair, annotations, prepared):
    src = embed_all(model, pair, "source", [s for s, _ in annotations], prepared)
    tgt = embed_all(model, pair, "target", [t for _, t in annotations], prepared)
    return src.mu, tgt.mu


def run_noise_filter(
    model: LinkageModel,
    pair: NetworkPair,
    annotations: AnnotationSet,
    cfg: SelfLearnConfig,
    train_cfg: TrainConfig | None = None,
    seed: int | None = None,
) -> NoiseFilterResult:
    """Select confident pairs, then EM-filter them down to reliable additions.

    With ``inner_finetune`` the supervised model is fine-tuned on the current
    accepted set inside every EM iteration and the candidate means re-embedded
    before the M-step; the loop stops once gamma moves by at most
    ``gamma_tolerance`` (at least one iteration always runs).
    """
    cfg.validate()
    train_cfg = train_cfg or TrainConfig()
    seed = cfg.seed if seed is None else seed
    prepared = PreparedPair.build(model, pair)

    candidates = select_confident_pairs(model, pair, annotations, cfg.n_confident, prepared)
    mu_s, mu_t = _candidate_means(model, pair, candidates, prepared)
    ann_mu_s, ann_mu_t = _annotation_means(model, pair, annotations.pairs, prepared)
    target_bank = embed_all(model, pair, "target", prepared=prepared)
    state = em_initialize(ann_mu_s, ann_mu_t, target_bank.mu)

    gamma_traj: list[float] = []
    k_t_traj: list[int] = []
    logliks: list[float] = []
    g = np.zeros(len(candidates))
    accepted = np.zeros(len(candidates), dtype=bool)
    degenerate = False
    inner = 0
    while inner < cfg.max_inner_iterations:
        inner += 1
        logliks.append(observed_log_likelihood(state, mu_s, mu_t))
        g, accepted = em_estep(state, mu_s, mu_t, cfg.responsibility_threshold)
        k_t = int(accepted.sum())
        degenerate = degenerate or k_t == 0 or k_t == len(candidates)
        if cfg.inner_finetune and k_t > 0:
            pseudo = [(candidates[i].source_id, candidates[i].target_id) for i in np.flatnonzero(accepted)]
            fine_tune(
                model,
                pair,
                annotations.union(pseudo).pairs,
                train_cfg,
                epochs=cfg.fine_tune_epochs,
                seed=seed * 1009 + inner,
                prepared=prepared,
            )
            mu_s, mu_t = _candidate_means(model, pair, candidates, prepared)
        state = em_mstep(state, mu_s, mu_t, accepted)
        gamma_traj.append(state.gamma)
        k_t_traj.append(k_t)
        if abs(state.gamma - state.prev_gamma) <= cfg.gamma_tolerance:
            break

    accepted_pairs = [
        (candidates[i].source_id, candidates[i].target_id) for i in np.flatnonzero(accepted)
    ]
    return NoiseFilterResult(
        accepted=accepted_pairs,
        candidates=list(candidates),
        responsibilities=g,
        gamma_trajectory=gamma_traj,
        k_t_trajectory=k_t_traj,
        log_likelihoods=logliks,
        inner_iterations=inner,
        degenerate=degenerate,
    )


@dataclass
class SelfLearnResult:
    model: LinkageModel
    annotations: AnnotationSet
    metrics: list[dict]
    audit: list[dict]


def self_learning_loop(
    pair: NetworkPair,
    cfg: SelfLearnConfig,
    train_cfg: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    model: LinkageModel | None = None,
    ground_truth: Sequence[tuple[str, str]] | None = None,
    evaluate_checkpoint=None,
) -> SelfLearnResult:
    """Train, then iteratively augment annotations with filtered pseudo-labels.

    ``evaluate_checkpoint(model, annotations) -> float`` is called after the
    initial training and after each outer iteration; its value lands in the
    per-iteration metrics (one entry per iteration plus the initial one).
    In vanilla mode the raw confident pairs are added without any filtering.
    """
    cfg.validate()
    train_cfg = train_cfg or TrainConfig()
    truth = dict(ground_truth) if ground_truth is not None else None

    if model is None:
        model = train_supervised(pair, train_cfg, model_cfg=model_cfg).model
    annotations = pair.annotations

    metrics: list[dict] = []
    audit: list[dict] = []

    def checkpoint(iteration: int, added, extra: dict) -> None:
        entry = {
            "iteration": iteration,
            "annotation_count": len(annotations),
            "added_count": len(added),
            "mode": "vanilla" if cfg.vanilla else "noise_aware",
        }
        if truth is not None and added:
            entry["added_accuracy"] = sum(1 for s, t in added if truth.get(s) == t) / len(added)
        if evaluate_checkpoint is not None:
            entry["hit_precision"] = evaluate_checkpoint(model, annotations)
        entry.update(extra)
        metrics.append(entry)

    checkpoint(0, [], {})
    for it in range(1, cfg.outer_iterations + 1):
        if cfg.vanilla:
            candidates = select_confident_pairs(model, pair, annotations, cfg.n_confident)
            added = [(c.source_id, c.target_id) for c in candidates]
            record: dict = {"iteration": it, "mode": "vanilla", "added": added}
        else:
            result = run_noise_filter(
                model, pair, annotations, cfg, train_cfg, seed=cfg.seed * 31 + it
            )
            added = result.accepted
            record = {
                "iteration": it,
                "mode": "noise_aware",
                "gamma_trajectory": result.gamma_trajectory,
                "k_t_trajectory": result.k_t_trajectory,
                "inner_iterations": result.inner_iterations,
                "degenerate": result.degenerate,
                "added": added,
                "candidates": [(c.source_id, c.target_id) for c in result.candidates],
            }
            if truth is not None and result.candidates:
                record["raw_accuracy"] = sum(
                    1 for c in result.candidates if truth.get(c.source_id) == c.target_id
                ) / len(result.candidates)
        if truth is not None and added:
            record["added_accuracy"] = sum(1 for s, t in added if truth.get(s) == t) / len(added)
        audit.append(record)

        annotations = annotations.union(added)
        if cfg.retrain_each_round:
            model = train_supervised(
                pair, replace(train_cfg, seed=train_cfg.seed + it), model_cfg=model_cfg,
                annotations=annotations.pairs,
            ).model
        else:
            fine_tune(
                model, pair, annotations.pairs, train_cfg,
                epochs=cfg.fine_tune_epochs, seed=cfg.seed * 131 + it,
            )
        extra = {k: record[k] for k in ("gamma_trajectory", "raw_accuracy") if k in record}
        checkpoint(it, added, extra)

    return SelfLearnResult(model=model, annotations=annotations, metrics=metrics, audit=audit)
