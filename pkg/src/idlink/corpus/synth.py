"""Synthetic paired-network generator.

Each user draws a latent topic plus a couple of personal signature words
(screen names, pet hashtags); words are sampled from a mixture of the topic's
vocabulary slice, the user's signatures, and the global vocabulary, so text
carries both topical and identity-level linkage signal. An aligned target
user is a noisy copy of its source counterpart: every word/tag is
independently resampled (from the topic mixture, signatures excluded) and
every inherited edge rewired with probability ``profile_noise``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import AnnotationSet, Microblog, NetworkPair, SocialNetwork, Vocabulary

TOPIC_WORD_PROB = 0.6  # chance a word comes from the user's topic slice
SIGNATURE_WORD_PROB = 0.3  # chance it is one of the user's signature words
SIGNATURE_VOCAB_FRACTION = 0.5  # tail of the vocabulary reserved for signatures
MAX_SIGNATURES_PER_USER = 4  # per-user count is uniform in 0..max (identifiability varies)
CROSS_TOPIC_EDGE_FACTOR = 0.1
TOPIC_TAG_COUNT = 1
MAX_PERSONAL_TAGS_PER_USER = 3
PERSONAL_TAG_POOL = 1000


@dataclass(frozen=True)
class SynthConfig:
    users_per_side: int = 100
    aligned_fraction: float = 1.0
    vocab_size: int = 300
    topic_count: int = 10
    words_per_sentence: tuple[int, int] = (3, 6)
    sentences_per_microblog: tuple[int, int] = (1, 2)
    microblogs_per_user: tuple[int, int] = (2, 4)
    edge_probability_intra: float = 0.15
    profile_noise: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.users_per_side <= 0:
            raise ValueError("users_per_side must be positive")
        if not 0.0 < self.aligned_fraction <= 1.0:
            raise ValueError("aligned_fraction must be in (0, 1]")
        if self.vocab_size <= 0 or self.topic_count <= 0:
            raise ValueError("vocab_size and topic_count must be positive")
        if self.topic_count > max(1, int(self.vocab_size * (1 - SIGNATURE_VOCAB_FRACTION))):
            raise ValueError("topic_count too large for the topical part of the vocabulary")
        for name in ("words_per_sentence", "sentences_per_microblog", "microblogs_per_user"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi < lo:
                raise ValueError(f"{name} must be a positive (lo, hi) range")
        if not 0.0 <= self.edge_probability_intra <= 1.0:
            raise ValueError("edge_probability_intra must be in [0, 1]")
        if not 0.0 <= self.profile_noise <= 1.0:
            raise ValueError("profile_noise must be in [0, 1]")


def _word(idx: int) -> str:
    return f"w{idx:05d}"


def _split_vocab(cfg: SynthConfig) -> tuple[list[np.ndarray], np.ndarray]:
    """Topic slices over the head of the vocabulary, signature pool at the tail."""
    n_topical = max(cfg.topic_count, int(round(cfg.vocab_size * (1 - SIGNATURE_VOCAB_FRACTION))))
    n_topical = min(n_topical, cfg.vocab_size)
    bounds = np.linspace(0, n_topical, cfg.topic_count + 1).astype(int)
    slices = [np.arange(bounds[t], bounds[t + 1]) for t in range(cfg.topic_count)]
    signature_pool = np.arange(n_topical, cfg.vocab_size)
    if signature_pool.size == 0:
        signature_pool = np.arange(cfg.vocab_size)
    return slices, signature_pool


def _sample_words(
    rng: np.random.Generator,
    n: int,
    topic_slice: np.ndarray,
    vocab_size: int,
    signatures: np.ndarray | None = None,
) -> list[int]:
    u = rng.random(n)
    topical = rng.choice(topic_slice, size=n)
    anywhere = rng.integers(0, vocab_size, size=n)
    words = np.where(u < TOPIC_WORD_PROB, topical, anywhere)
    if signatures is not None and signatures.size:
        personal = rng.choice(signatures, size=n)
        use_personal = (u >= TOPIC_WORD_PROB) & (u < TOPIC_WORD_PROB + SIGNATURE_WORD_PROB)
        words = np.where(use_personal, personal, words)
    return list(words)


def _sample_profile(rng, cfg: SynthConfig, topic: int, slices, signatures) -> list[list[list[int]]]:
    o_lo, o_hi = cfg.microblogs_per_user
    k_lo, k_hi = cfg.sentences_per_microblog
    t_lo, t_hi = cfg.words_per_sentence
    blogs = []
    for _ in range(int(rng.integers(o_lo, o_hi + 1))):
        sentences = []
        for _ in range(int(rng.integers(k_lo, k_hi + 1))):
            n_words = int(rng.integers(t_lo, t_hi + 1))
            sentences.append(_sample_words(rng, n_words, slices[topic], cfg.vocab_size, signatures))
        blogs.append(sentences)
    return blogs


def _sample_tags(rng: np.random.Generator, topic: int) -> list[str]:
    tags = [f"topic{topic:02d}"]
    n_personal = int(rng.integers(0, MAX_PERSONAL_TAGS_PER_USER + 1))
    tags.extend(
        f"tag{int(i):03d}" for i in rng.integers(0, PERSONAL_TAG_POOL, size=n_personal)
    )
    return tags


def _noisy_copy_profile(
    rng, cfg: SynthConfig, blogs, topic: int, slices, signatures
) -> list[list[list[int]]]:
    """Copy a profile, independently re-drawing each word with probability
    ``profile_noise`` from the owner's own generative mixture, so a fully
    resampled profile is a fresh sample of the same user rather than noise."""
    out = []
    for blog in blogs:
        sentences = []
        for sent in blog:
            words = np.asarray(sent)
            flip = rng.random(len(words)) < cfg.profile_noise
            resampled = np.asarray(
                _sample_words(rng, len(words), slices[topic], cfg.vocab_size, signatures)
            )
            sentences.append(list(np.where(flip, resampled, words)))
        out.append(sentences)
    return out


def _noisy_copy_tags(rng, cfg: SynthConfig, tags: list[str]) -> list[str]:
    out = []
    for tag in tags:
        if rng.random() < cfg.profile_noise:
            out.append(f"tag{int(rng.integers(0, PERSONAL_TAG_POOL)):03d}")
        else:
            out.append(tag)
    return out


def _topic_edges(rng, topics: np.ndarray, p_intra: float) -> set[tuple[int, int]]:
    n = len(topics)
    same = topics[:, None] == topics[None, :]
    prob = np.where(same, p_intra, p_intra * CROSS_TOPIC_EDGE_FACTOR)
    draw = rng.random((n, n)) < prob
    edges = set()
    for i in range(n):
        for j in range(i + 1, n):
            if draw[i, j]:
                edges.add((i, j))
    return edges


def _build_network(prefix: str, blogs_by_user, tags_by_user, index_edges) -> SocialNetwork:
    ids = [f"{prefix}{i:04d}" for i in range(len(blogs_by_user))]
    tokens = {
        _word(w)
        for blogs in blogs_by_user
        for blog in blogs
        for sent in blog
        for w in sent
    }
    vocab = Vocabulary(tokens)
    demo_vocab = Vocabulary(tag for tags in tags_by_user for tag in tags)
    profiles = {}
    for i, uid in enumerate(ids):
        microblogs = tuple(
            Microblog(tuple(tuple(vocab.index(_word(w)) for w in sent) for sent in blog))
            for blog in blogs_by_user[i]
        )
        demo_ids = [demo_vocab.index(tag) for tag in tags_by_user[i]]
        profiles[uid] = (microblogs, demo_ids)
    edges = {(ids[i], ids[j]) for i, j in index_edges}
    return SocialNetwork.build(profiles, edges, vocab, demo_vocab)


def generate_synthetic_pair(cfg: SynthConfig) -> tuple[NetworkPair, tuple[tuple[str, str], ...]]:
    """Generate a partially aligned network pair plus its full ground truth.

    The returned pair carries an empty annotation set; training subsets are
    sampled separately (see :func:`sample_annotations`).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.users_per_side
    n_aligned = int(np.floor(cfg.aligned_fraction * n))
    slices, signature_pool = _split_vocab(cfg)

    source_topics = rng.integers(0, cfg.topic_count, size=n)
    signatures = [
        rng.choice(signature_pool, size=int(rng.integers(0, MAX_SIGNATURES_PER_USER + 1)))
        for _ in range(n)
    ]
    source_blogs = [
        _sample_profile(rng, cfg, int(t), slices, signatures[i])
        for i, t in enumerate(source_topics)
    ]
    source_tags = [_sample_tags(rng, int(t)) for t in source_topics]
    source_edges = _topic_edges(rng, source_topics, cfg.edge_probability_intra)

    aligned_sources = np.sort(rng.choice(n, size=n_aligned, replace=False))
    target_slot = rng.permutation(n)  # aligned source k sits at target index target_slot[k]

    target_topics = np.empty(n, dtype=int)
    target_blogs: list = [None] * n
    target_tags: list = [None] * n
    source_to_target: dict[int, int] = {}
    for k, src in enumerate(aligned_sources):
        tgt = int(target_slot[k])
        source_to_target[int(src)] = tgt
        target_topics[tgt] = source_topics[src]
        target_blogs[tgt] = _noisy_copy_profile(
            rng, cfg, source_blogs[src], int(source_topics[src]), slices, signatures[src]
        )
        target_tags[tgt] = _noisy_copy_tags(rng, cfg, source_tags[src])
    for tgt in range(n):
        if target_blogs[tgt] is None:
            topic = int(rng.integers(0, cfg.topic_count))
            target_topics[tgt] = topic
            fresh_signature = rng.choice(
                signature_pool, size=int(rng.integers(0, MAX_SIGNATURES_PER_USER + 1))
            )
            target_blogs[tgt] = _sample_profile(rng, cfg, topic, slices, fresh_signature)
            target_tags[tgt] = _sample_tags(rng, topic)

    # Aligned-pair edges are inherited from the source graph and rewired with
    # probability profile_noise; everything touching an unaligned target is
    # drawn fresh by the topic rule.
    inherited = set()
    for i, j in sorted(source_edges):
        if i in source_to_target and j in source_to_target:
            a, b = source_to_target[i], source_to_target[j]
            if rng.random() < cfg.profile_noise:
                a, b = rng.choice(n, size=2, replace=False)
            a, b = int(a), int(b)
            inherited.add((min(a, b), max(a, b)))
    aligned_targets = set(source_to_target.values())
    fresh = {
        (i, j)
        for i, j in _topic_edges(rng, target_topics, cfg.edge_probability_intra)
        if i not in aligned_targets or j not in aligned_targets
    }
    target_edges = inherited | fresh

    source = _build_network("s", source_blogs, source_tags, source_edges)
    target = _build_network("t", target_blogs, target_tags, target_edges)
    ground_truth = tuple(
        sorted((f"s{src:04d}", f"t{tgt:04d}") for src, tgt in source_to_target.items())
    )
    pair = NetworkPair(source=source, target=target, annotations=AnnotationSet.empty())
    return pair, ground_truth


def sample_annotations(
    ground_truth: tuple[tuple[str, str], ...],
    fraction: float,
    seed: int,
) -> tuple[AnnotationSet, tuple[tuple[str, str], ...]]:
    """Split ground truth into a training annotation set and a held-out rest."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    ordered = sorted(ground_truth)
    count = max(1, int(np.floor(fraction * len(ordered))))
    chosen = set(rng.choice(len(ordered), size=count, replace=False).tolist())
    annotations = AnnotationSet.from_pairs(ordered[i] for i in chosen)
    held_out = tuple(p for i, p in enumerate(ordered) if i not in chosen)
    return annotations, held_out
