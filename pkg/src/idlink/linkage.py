"""Supervised variational identity linkage.

Per network: a hierarchical attention encoder produces the deterministic user
representation ``z``; a two-layer MLP compresses it to a latent code ``g``;
two linear heads estimate the mean and variance of a diagonal Gaussian
embedding; a mirror-image decoder reconstructs ``z`` from a reparameterized
sample. Training minimizes

    L = L_link + beta * (L_recon_source + L_recon_target)

where L_link is a logistic ranking loss over (anchor, match, non-match)
triplets in squared-W2 distance (plus an L2 penalty on each side's
parameters, weighted by lambda) and L_recon is squared reconstruction error
plus a standard-normal prior penalty on the Gaussian embeddings.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus.io import EmbeddingTable, stable_hash
from .corpus.types import (
    DataError,
    NetworkPair,
    ProfileCaps,
    UnknownUserError,
    Vocabulary,
)
from .encoder import HierarchicalEncoder, PreparedNetwork, activation_fn, prepare_network
from .gaussian import (
    GaussianEmbedding,
    VARIANCE_FLOOR,
    pairwise_kl,
    pairwise_sq_euclidean,
    pairwise_w2_squared,
    reparameterized_sample_t,
    w2_squared_t,
    kl_divergence_t,
)

log = logging.getLogger(__name__)

DISTANCES = ("w2", "kl", "l2")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters (identical for both network sides)."""

    word_dim: int = 64
    gru_hidden: int = 32
    demo_dim: int = 64
    encoder_hidden: int = 64
    latent_dim: int = 32
    gaussian_dim: int = 32
    activation: str = "tanh"
    distance: str = "w2"  # w2 | kl | l2
    temperature: float = 1.0
    word_init_scale: float = 0.3
    # demographic rows start small so the max-pooled channel cannot drown the
    # text channel before training shapes it
    demo_init_scale: float = 0.05
    tie_init: bool = True
    # one variational net projecting both networks into the common Gaussian
    # space; set False for fully per-side variational parameters
    shared_variational: bool = True
    # word vectors are pre-learned inputs by default; demographic embeddings
    # stay trainable either way
    train_word_embeddings: bool = False
    caps: ProfileCaps = field(default_factory=ProfileCaps)

    def validate(self) -> None:
        for name in ("word_dim", "gru_hidden", "demo_dim", "encoder_hidden", "latent_dim", "gaussian_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; lambda/beta defaults follow the reference setup."""

    batch_size: int = 32
    annotation_fraction: float = 0.5
    learning_rate: float = 0.01
    optimizer: str = "adam"
    max_epochs: int = 200
    tolerance: float = 1e-4
    negatives_per_positive: int = 1
    reg_weight: float = 0.3  # lambda, weight of the parameter L2 penalty
    recon_weight: float = 0.4  # beta, weight of the reconstruction losses
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size <= 0 or self.max_epochs <= 0 or self.negatives_per_positive <= 0:
            raise ValueError("batch_size, max_epochs and negatives_per_positive must be positive")
        if not 0.0 < self.annotation_fraction <= 1.0:
            raise ValueError("annotation_fraction must be in (0, 1]")
        if self.learning_rate <= 0 or self.tolerance <= 0:
            raise ValueError("learning_rate and tolerance must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.reg_weight < 0 or self.recon_weight < 0:
            raise ValueError("reg_weight and recon_weight must be nonnegative")


class VariationalNet(nn.Module):
    """MLP encoder, Gaussian heads, and mirror decoder for one network."""

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int,
        latent_dim: int,
        gaussian_dim: int,
        activation: str,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self._act = activation_fn(activation)
        self.enc1 = nn.Linear(in_dim, hidden_dim, dtype=dtype)
        self.enc2 = nn.Linear(hidden_dim, latent_dim, dtype=dtype)
        self.mu_head = nn.Linear(latent_dim, gaussian_dim, dtype=dtype)
        # softplus keeps the variance strictly positive without the <=1 cap a
        # sigmoid would impose
        self.var_head = nn.Linear(latent_dim, gaussian_dim, dtype=dtype)
        self.dec1 = nn.Linear(gaussian_dim, hidden_dim, dtype=dtype)
        self.dec2 = nn.Linear(hidden_dim, in_dim, dtype=dtype)

    def encode(self, z: torch.Tensor) -> torch.Tensor:
        return self._act(self.enc2(self._act(self.enc1(z))))

    def gaussian(self, g: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mu = self._act(self.mu_head(g))
        var = torch.clamp(F.softplus(self.var_head(g)), min=VARIANCE_FLOOR)
        return mu, var

    def decode(self, sample: torch.Tensor) -> torch.Tensor:
        return self._act(self.dec2(self._act(self.dec1(sample))))

    def reset_parameters(self, generator: torch.Generator) -> None:
        # variance-preserving init (tanh gain) keeps the latent map close to
        # isometric, so distance structure in z survives into the Gaussian
        # space; the variance head starts flat (uniform uncertainty).
        gain = 5.0 / 3.0
        with torch.no_grad():
            for layer in (self.enc1, self.enc2, self.mu_head, self.dec1, self.dec2):
                bound = gain * math.sqrt(6.0 / (layer.in_features + layer.out_features))
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.zero_()
            self.var_head.weight.zero_()
            self.var_head.bias.zero_()


class LinkageModel(nn.Module):
    """Both sides' encoders and variational nets plus loss hyperparameters."""

    def __init__(
        self,
        config: ModelConfig,
        source_vocab: Vocabulary,
        source_demo_vocab: Vocabulary,
        target_vocab: Vocabulary,
        target_demo_vocab: Vocabulary,
        reg_weight: float = 0.3,
        recon_weight: float = 0.4,
    ):
        super().__init__()
        config.validate()
        self.config = config
        self.reg_weight = float(reg_weight)
        self.recon_weight = float(recon_weight)
        self.vocabs = {
            ("source", "word"): source_vocab,
            ("source", "demo"): source_demo_vocab,
            ("target", "word"): target_vocab,
            ("target", "demo"): target_demo_vocab,
        }

        def make_encoder(vocab, demo_vocab):
            return HierarchicalEncoder(
                vocab_size=len(vocab),
                demo_vocab_size=len(demo_vocab),
                word_dim=config.word_dim,
                hidden_dim=config.gru_hidden,
                demo_dim=config.demo_dim,
                activation=config.activation,
            )

        self.source_encoder = make_encoder(source_vocab, source_demo_vocab)
        self.target_encoder = make_encoder(target_vocab, target_demo_vocab)
        in_dim = self.source_encoder.out_dim
        self.source_head = VariationalNet(
            in_dim, config.encoder_hidden, config.latent_dim, config.gaussian_dim, config.activation
        )
        self.target_head = (
            self.source_head
            if config.shared_variational
            else VariationalNet(
                in_dim, config.encoder_hidden, config.latent_dim, config.gaussian_dim, config.activation
            )
        )
        for enc in (self.source_encoder, self.target_encoder):
            enc.word_emb.weight.requires_grad_(config.train_word_embeddings)

    def encoder(self, tag: str) -> HierarchicalEncoder:
        self._check_tag(tag)
        return self.source_encoder if tag == "source" else self.target_encoder

    def head(self, tag: str) -> VariationalNet:
        self._check_tag(tag)
        return self.source_head if tag == "source" else self.target_head

    def vocab(self, tag: str) -> Vocabulary:
        return self.vocabs[(tag, "word")]

    def demo_vocab(self, tag: str) -> Vocabulary:
        return self.vocabs[(tag, "demo")]

    def side_parameters(self, tag: str):
        yield from self.encoder(tag).parameters()
        yield from self.head(tag).parameters()

    def parameter_penalty(self) -> torch.Tensor:
        """Sum of squared trainable parameters (shared modules counted once)."""
        total = torch.zeros((), dtype=torch.float64)
        for p in self.parameters():
            if p.requires_grad:
                total = total + (p**2).sum()
        return total

    @staticmethod
    def _check_tag(tag: str) -> None:
        if tag not in ("source", "target"):
            raise ValueError(f"network tag must be 'source' or 'target', got {tag!r}")


@dataclass
class PreparedPair:
    """Per-side prepared views of a network pair for one model."""

    source: PreparedNetwork
    target: PreparedNetwork

    @classmethod
    def build(cls, model: LinkageModel, pair: NetworkPair) -> "PreparedPair":
        return cls(
            source=prepare_network(
                pair.source, model.vocab("source"), model.demo_vocab("source"), model.config.caps
            ),
            target=prepare_network(
                pair.target, model.vocab("target"), model.demo_vocab("target"), model.config.caps
            ),
        )

    def side(self, tag: str) -> PreparedNetwork:
        if tag == "source":
            return self.source
        if tag == "target":
            return self.target
        raise ValueError(f"network tag must be 'source' or 'target', got {tag!r}")


def hashed_normal_vector(key: str, dim: int, seed: int, scale: float) -> np.ndarray:
    """Deterministic per-key normal init; identical keys get identical rows."""
    rng = np.random.default_rng((seed, stable_hash(key), 1))
    return rng.standard_normal(dim) * scale


def _word_matrix(vocab: Vocabulary, cfg: ModelConfig, seed: int, table: EmbeddingTable | None) -> np.ndarray:
    if table is not None:
        if table.dim != cfg.word_dim:
            raise ValueError(
                f"embedding table dimension {table.dim} does not match word_dim {cfg.word_dim}"
            )
        return np.stack([table.vector(w) for w in vocab.words])
    return np.stack([hashed_normal_vector(w, cfg.word_dim, seed, cfg.word_init_scale) for w in vocab.words])


def _demo_matrix(vocab: Vocabulary, cfg: ModelConfig, seed: int) -> np.ndarray:
    rows = [hashed_normal_vector(f"demo::{w}", cfg.demo_dim, seed, cfg.demo_init_scale) for w in vocab.words]
    return np.stack(rows) if rows else np.zeros((1, cfg.demo_dim))


def build_model(
    pair: NetworkPair,
    model_cfg: ModelConfig | None = None,
    train_cfg: TrainConfig | None = None,
    embeddings: tuple[EmbeddingTable | None, EmbeddingTable | None] | None = None,
    seed: int | None = None,
) -> LinkageModel:
    """Construct and deterministically initialize a model for a network pair.

    With ``tie_init`` both sides start from identical parameter values (word
    vectors are keyed by the word string, so shared tokens coincide), which
    anchors the two embedding spaces in the few-annotation regime; the
    parameter sets remain fully disjoint.
    """
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    seed = train_cfg.seed if seed is None else seed
    table_s, table_t = embeddings if embeddings is not None else (None, None)

    model = LinkageModel(
        model_cfg,
        pair.source.vocab,
        pair.source.demo_vocab,
        pair.target.vocab,
        pair.target.demo_vocab,
        reg_weight=train_cfg.reg_weight,
        recon_weight=train_cfg.recon_weight,
    )
    for offset, (tag, table) in enumerate((("source", table_s), ("target", table_t))):
        side_seed = seed if model_cfg.tie_init else seed + offset
        gen = torch.Generator().manual_seed(side_seed)
        vocab = model.vocab(tag)
        model.encoder(tag).reset_parameters(
            gen,
            _word_matrix(vocab, model_cfg, side_seed, table),
            _demo_matrix(model.demo_vocab(tag), model_cfg, side_seed),
        )
        model.head(tag).reset_parameters(gen)
    return model


# ----------------------------------------------------------------------
# forward passes and embeddings
# ----------------------------------------------------------------------


@dataclass
class SideForward:
    user_ids: list[str]
    index: dict[str, int]
    z: torch.Tensor
    g: torch.Tensor
    mu: torch.Tensor
    var: torch.Tensor
    z_hat: torch.Tensor | None = None


def _forward_side(
    model: LinkageModel,
    prepared: PreparedPair,
    tag: str,
    user_ids: Sequence[str],
    eps: torch.Tensor | None = None,
) -> SideForward:
    net = prepared.side(tag)
    try:
        indices = [net.index[u] for u in user_ids]
    except KeyError as exc:
        raise UnknownUserError(f"unknown {tag} user {exc.args[0]!r}") from None
    batch = model.encoder(tag).forward_users(net, indices)
    head = model.head(tag)
    g = head.encode(batch.z)
    mu, var = head.gaussian(g)
    z_hat = None
    if eps is not None:
        z_hat = head.decode(reparameterized_sample_t(mu, var, eps))
    return SideForward(
        user_ids=list(user_ids),
        index={u: i for i, u in enumerate(user_ids)},
        z=batch.z,
        g=g,
        mu=mu,
        var=var,
        z_hat=z_hat,
    )


@dataclass
class EmbeddingBank:
    """Frozen (no-grad) embeddings for a set of users on one side."""

    user_ids: tuple[str, ...]
    mu: np.ndarray
    var: np.ndarray
    z: np.ndarray

    def row(self, user_id: str) -> int:
        return self.user_ids.index(user_id)


def embed_identity(
    model: LinkageModel,
    pair: NetworkPair,
    tag: str,
    user_id: str,
    prepared: PreparedPair | None = None,
) -> tuple[GaussianEmbedding, np.ndarray, np.ndarray]:
    """One user's Gaussian embedding plus the deterministic z and latent g."""
    prepared = prepared or PreparedPair.build(model, pair)
    with torch.no_grad():
        fwd = _forward_side(model, prepared, tag, [user_id])
    emb = GaussianEmbedding(mean=fwd.mu[0].numpy().copy(), var=fwd.var[0].numpy().copy())
    return emb, fwd.z[0].numpy().copy(), fwd.g[0].numpy().copy()


def embed_all(
    model: LinkageModel,
    pair: NetworkPair,
    tag: str,
    user_ids: Sequence[str] | None = None,
    prepared: PreparedPair | None = None,
    chunk_size: int = 512,
) -> EmbeddingBank:
    prepared = prepared or PreparedPair.build(model, pair)
    ids = tuple(user_ids) if user_ids is not None else pair.network(tag).user_ids
    mus, vars, zs = [], [], []
    with torch.no_grad():
        for start in range(0, len(ids), chunk_size):
            fwd = _forward_side(model, prepared, tag, ids[start : start + chunk_size])
            mus.append(fwd.mu.numpy())
            vars.append(fwd.var.numpy())
            zs.append(fwd.z.numpy())
    if not mus:
        d, zd = model.config.gaussian_dim, model.source_encoder.out_dim
        return EmbeddingBank(ids, np.zeros((0, d)), np.zeros((0, d)), np.zeros((0, zd)))
    return EmbeddingBank(ids, np.concatenate(mus), np.concatenate(vars), np.concatenate(zs))


def score_matrix(
    model: LinkageModel,
    pair: NetworkPair,
    source_ids: Sequence[str] | None = None,
    target_ids: Sequence[str] | None = None,
    prepared: PreparedPair | None = None,
) -> tuple[np.ndarray, tuple[str, ...], tuple[str, ...]]:
    """Confidence scores for all (source, target) combinations.

    Higher is more confident; the score is the negated configured distance.
    """
    prepared = prepared or PreparedPair.build(model, pair)
    src = embed_all(model, pair, "source", source_ids, prepared)
    tgt = embed_all(model, pair, "target", target_ids, prepared)
    mode = model.config.distance
    if mode == "w2":
        dist = pairwise_w2_squared(src.mu, src.var, tgt.mu, tgt.var)
    elif mode == "kl":
        dist = pairwise_kl(src.mu, src.var, tgt.mu, tgt.var)
    else:
        dist = pairwise_sq_euclidean(src.z, tgt.z)
    return -dist, src.user_ids, tgt.user_ids


def score_pair(
    model: LinkageModel,
    pair: NetworkPair,
    source_id: str,
    target_id: str,
    prepared: PreparedPair | None = None,
) -> float:
    """Linkage confidence, monotone decreasing in the configured distance."""
    scores, _, _ = score_matrix(model, pair, [source_id], [target_id], prepared)
    return float(scores[0, 0])


def rank_candidates(
    model: LinkageModel,
    pair: NetworkPair,
    source_id: str,
    candidates: Sequence[str],
    prepared: PreparedPair | None = None,
) -> list[tuple[str, float]]:
    """Candidates ordered by descending score; ties by ascending target id."""
    if not candidates:
        raise ValueError("candidate set must be nonempty")
    scores, _, tgt_ids = score_matrix(model, pair, [source_id], list(candidates), prepared)
    row = scores[0]
    order = sorted(range(len(tgt_ids)), key=lambda j: (-row[j], tgt_ids[j]))
    return [(tgt_ids[j], float(row[j])) for j in order]


# ----------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------


def gaussian_prior_penalty(mu: torch.Tensor, var: torch.Tensor) -> torch.Tensor:
    """Per-row standard-normal prior penalty 0.5*sum(-log v + mu^2 + v - 1)."""
    return 0.5 * (-torch.log(var) + mu**2 + var - 1.0).sum(dim=-1)


def _triplet_distance(model: LinkageModel, fwd_s: SideForward, fwd_t: SideForward, s_idx, t_idx) -> torch.Tensor:
    mode = model.config.distance
    if mode == "l2":
        return ((fwd_s.z[s_idx] - fwd_t.z[t_idx]) ** 2).sum(dim=-1)
    if mode == "kl":
        return kl_divergence_t(fwd_s.mu[s_idx], fwd_s.var[s_idx], fwd_t.mu[t_idx], fwd_t.var[t_idx])
    return w2_squared_t(fwd_s.mu[s_idx], fwd_s.var[s_idx], fwd_t.mu[t_idx], fwd_t.var[t_idx])


def _linkage_core(model: LinkageModel, fwd_s: SideForward, fwd_t: SideForward, triplets) -> torch.Tensor:
    s_idx = torch.as_tensor([fwd_s.index[s] for s, _, _ in triplets])
    pos_idx = torch.as_tensor([fwd_t.index[t] for _, t, _ in triplets])
    neg_idx = torch.as_tensor([fwd_t.index[t] for _, _, t in triplets])
    d_pos = _triplet_distance(model, fwd_s, fwd_t, s_idx, pos_idx)
    d_neg = _triplet_distance(model, fwd_s, fwd_t, s_idx, neg_idx)
    margin = (d_neg - d_pos) / model.config.temperature
    return -F.logsigmoid(margin).sum()


def linkage_loss(
    model: LinkageModel,
    pair: NetworkPair,
    triplets: Sequence[tuple[str, str, str]],
    prepared: PreparedPair | None = None,
) -> torch.Tensor:
    """Ranking loss over (anchor, match, non-match) triplets plus L2 penalty."""
    if not triplets:
        raise ValueError("triplet batch must be nonempty")
    for s, t, t_neg in triplets:
        if t == t_neg:
            raise ValueError(f"triplet for {s!r} uses its own match {t!r} as the negative")
    prepared = prepared or PreparedPair.build(model, pair)
    src_users = sorted({s for s, _, _ in triplets})
    tgt_users = sorted({t for _, t, _ in triplets} | {t for _, _, t in triplets})
    fwd_s = _forward_side(model, prepared, "source", src_users)
    fwd_t = _forward_side(model, prepared, "target", tgt_users)
    core = _linkage_core(model, fwd_s, fwd_t, triplets)
    return core + model.reg_weight * model.parameter_penalty()


def reconstruction_loss(
    model: LinkageModel,
    pair: NetworkPair,
    tag: str,
    user_ids: Sequence[str],
    eps: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
    prepared: PreparedPair | None = None,
) -> torch.Tensor:
    """Squared reconstruction error plus the Gaussian prior penalty."""
    if not user_ids:
        return torch.zeros((), dtype=torch.float64)
    prepared = prepared or PreparedPair.build(model, pair)
    if eps is None:
        eps = torch.randn(
            len(user_ids), model.config.gaussian_dim, dtype=torch.float64, generator=generator
        )
    fwd = _forward_side(model, prepared, tag, user_ids, eps=eps)
    recon = ((fwd.z - fwd.z_hat) ** 2).sum(dim=-1)
    return (recon + gaussian_prior_penalty(fwd.mu, fwd.var)).sum()


def reconstruct(
    model: LinkageModel,
    tag: str,
    z: torch.Tensor,
    eps: torch.Tensor,
) -> torch.Tensor:
    """Map a deterministic representation through the Gaussian bottleneck."""
    head = model.head(tag)
    g = head.encode(z)
    mu, var = head.gaussian(g)
    return head.decode(reparameterized_sample_t(mu, var, eps))


@dataclass
class TrainBatch:
    linked: list[tuple[str, str]]
    unlinked: list[tuple[str, str]]
    triplets: list[tuple[str, str, str]]


def total_loss(
    model: LinkageModel,
    pair: NetworkPair,
    batch: TrainBatch,
    eps_source: torch.Tensor | None = None,
    eps_target: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
    prepared: PreparedPair | None = None,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted combination of linkage and both reconstruction losses.

    One shared noise draw per identity per forward pass; the same forward
    activations serve both loss terms.
    """
    prepared = prepared or PreparedPair.build(model, pair)
    src_users = sorted({s for s, _ in batch.linked} | {s for s, _ in batch.unlinked})
    tgt_users = sorted(
        {t for _, t in batch.linked}
        | {t for _, t in batch.unlinked}
        | {t for _, _, t in batch.triplets}
    )
    d = model.config.gaussian_dim
    if eps_source is None:
        eps_source = torch.randn(len(src_users), d, dtype=torch.float64, generator=generator)
    if eps_target is None:
        eps_target = torch.randn(len(tgt_users), d, dtype=torch.float64, generator=generator)

    fwd_s = _forward_side(model, prepared, "source", src_users, eps=eps_source)
    fwd_t = _forward_side(model, prepared, "target", tgt_users, eps=eps_target)

    if batch.triplets:
        link_core = _linkage_core(model, fwd_s, fwd_t, batch.triplets)
    else:
        link_core = torch.zeros((), dtype=torch.float64)
    reg = model.reg_weight * model.parameter_penalty()
    recon_s = ((fwd_s.z - fwd_s.z_hat) ** 2).sum(dim=-1) + gaussian_prior_penalty(fwd_s.mu, fwd_s.var)
    recon_t = ((fwd_t.z - fwd_t.z_hat) ** 2).sum(dim=-1) + gaussian_prior_penalty(fwd_t.mu, fwd_t.var)
    loss = link_core + reg + model.recon_weight * (recon_s.sum() + recon_t.sum())
    parts = {
        "linkage": float(link_core.detach()) + float(reg.detach()),
        "regularization": float(reg.detach()),
        "reconstruction_source": float(recon_s.sum().detach()),
        "reconstruction_target": float(recon_t.sum().detach()),
    }
    return loss, parts


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------


@dataclass
class TrainResult:
    model: LinkageModel
    history: list[dict]
    converged: bool


def _loss_converged(losses: list[float], tolerance: float, window: int = 5) -> bool:
    if len(losses) <= window:
        return False
    recent = losses[-(window + 1) :]
    span = max(recent) - min(recent)
    return span / max(abs(recent[0]), 1e-12) < tolerance


def _sample_unlinked(rng: random.Random, source_ids, target_ids, annotated, count: int):
    out = []
    for _ in range(count):
        for _ in range(100):
            s = rng.choice(source_ids)
            t = rng.choice(target_ids)
            if annotated.get(s) != t:
                break
        out.append((s, t))
    return out


def make_training_batch(
    rng: random.Random,
    linked: list[tuple[str, str]],
    source_ids: Sequence[str],
    target_ids: Sequence[str],
    annotated: dict[str, str],
    n_unlinked: int,
    negatives_per_positive: int,
) -> TrainBatch:
    """Combine a linked chunk with random unlinked pairs and draw negatives
    in-batch: each anchor's non-match is another target from the batch."""
    unlinked = _sample_unlinked(rng, list(source_ids), list(target_ids), annotated, n_unlinked)
    pool = sorted({t for _, t in linked} | {t for _, t in unlinked})
    triplets = []
    for s, t in linked:
        options = [x for x in pool if x != t]
        if not options:
            continue
        for _ in range(negatives_per_positive):
            triplets.append((s, t, rng.choice(options)))
    return TrainBatch(linked=list(linked), unlinked=unlinked, triplets=triplets)


def _make_optimizer(model: LinkageModel, cfg: TrainConfig):
    params = [p for p in model.parameters() if p.requires_grad]
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.SGD(params, lr=cfg.learning_rate)


def _optimize(
    model: LinkageModel,
    pair: NetworkPair,
    annotations: Sequence[tuple[str, str]],
    cfg: TrainConfig,
    max_epochs: int,
    seed: int,
    prepared: PreparedPair | None = None,
) -> tuple[list[dict], bool]:
    prepared = prepared or PreparedPair.build(model, pair)
    rng = random.Random(seed)
    generator = torch.Generator().manual_seed(seed)
    optimizer = _make_optimizer(model, cfg)

    ann = sorted(annotations)
    annotated = dict(ann)
    source_ids = pair.source.user_ids
    target_ids = pair.target.user_ids
    linked_per_batch = max(1, min(len(ann), round(cfg.batch_size * cfg.annotation_fraction)))
    n_unlinked = max(0, cfg.batch_size - linked_per_batch)

    history: list[dict] = []
    losses: list[float] = []
    for epoch in range(max_epochs):
        order = rng.sample(ann, len(ann))
        step_losses, step_parts = [], []
        for start in range(0, len(order), linked_per_batch):
            chunk = order[start : start + linked_per_batch]
            batch = make_training_batch(
                rng, chunk, source_ids, target_ids, annotated, n_unlinked, cfg.negatives_per_positive
            )
            loss, parts = total_loss(model, pair, batch, generator=generator, prepared=prepared)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step_losses.append(float(loss.detach()))
            step_parts.append(parts)
        mean_loss = sum(step_losses) / len(step_losses)
        record = {"epoch": len(history), "loss": mean_loss}
        for key in step_parts[0]:
            record[key] = sum(p[key] for p in step_parts) / len(step_parts)
        history.append(record)
        losses.append(mean_loss)
        if _loss_converged(losses, cfg.tolerance):
            return history, True
    return history, False


def train_supervised(
    pair: NetworkPair,
    cfg: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    model: LinkageModel | None = None,
    annotations: Iterable[tuple[str, str]] | None = None,
    embeddings: tuple[EmbeddingTable | None, EmbeddingTable | None] | None = None,
) -> TrainResult:
    """Fit the supervised linkage model on annotated pairs.

    Epochs sweep the annotation set in shuffled chunks; each chunk is combined
    with freshly sampled unlinked pairs and in-batch negatives. Stops when the
    epoch loss changes by less than ``tolerance`` (relative) over a 5-epoch
    window, or at ``max_epochs``. Deterministic given the seed.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    ann = list(annotations) if annotations is not None else list(pair.annotations)
    if len(ann) < 2:
        raise DataError("training requires at least 2 annotated pairs for in-batch negatives")
    if model is None:
        model = build_model(pair, model_cfg, cfg, embeddings=embeddings)
    history, converged = _optimize(model, pair, ann, cfg, cfg.max_epochs, cfg.seed)
    log.info("supervised training: %d epochs, final loss %.6f", len(history), history[-1]["loss"])
    return TrainResult(model=model, history=history, converged=converged)


def fine_tune(
    model: LinkageModel,
    pair: NetworkPair,
    annotations: Iterable[tuple[str, str]],
    cfg: TrainConfig,
    epochs: int,
    seed: int,
    prepared: PreparedPair | None = None,
) -> list[dict]:
    """Continue optimizing an existing model on an (augmented) annotation set."""
    ann = list(annotations)
    if len(ann) < 2:
        raise DataError("fine-tuning requires at least 2 annotated pairs")
    history, _ = _optimize(model, pair, ann, cfg, epochs, seed, prepared=prepared)
    return history


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------


def _config_to_dict(cfg: ModelConfig) -> dict:
    out = asdict(cfg)
    out["caps"] = asdict(cfg.caps)
    return out


def _config_from_dict(data: dict) -> ModelConfig:
    data = dict(data)
    data["caps"] = ProfileCaps(**data["caps"])
    return ModelConfig(**data)


def save_checkpoint(model: LinkageModel, path: str | Path) -> Path:
    """Write all parameter tensors, config, and vocabularies to one file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": CHECKPOINT_VERSION,
        "model_config": _config_to_dict(model.config),
        "reg_weight": model.reg_weight,
        "recon_weight": model.recon_weight,
        "vocab": {
            "source_word": list(model.vocab("source").words),
            "source_demo": list(model.demo_vocab("source").words),
            "target_word": list(model.vocab("target").words),
            "target_demo": list(model.demo_vocab("target").words),
        },
    }
    arrays = {
        f"param::{name}": tensor.detach().numpy()
        for name, tensor in model.state_dict().items()
    }
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.asarray(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path: str | Path) -> LinkageModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {meta.get('version')!r}")
        config = _config_from_dict(meta["model_config"])
        vocab = meta["vocab"]
        model = LinkageModel(
            config,
            Vocabulary.from_ordered(vocab["source_word"]),
            Vocabulary.from_ordered(vocab["source_demo"]),
            Vocabulary.from_ordered(vocab["target_word"]),
            Vocabulary.from_ordered(vocab["target_demo"]),
            reg_weight=meta["reg_weight"],
            recon_weight=meta["recon_weight"],
        )
        state = {
            name[len("param::") :]: torch.from_numpy(np.array(data[name]))
            for name in data.files
            if name.startswith("param::")
        }
    model.load_state_dict(state)
    return model
