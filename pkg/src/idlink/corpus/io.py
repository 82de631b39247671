"""Dataset ingestion and serialization.

On-disk formats (all JSONL, one object per line):

* users file:       ``{"id": str, "microblogs": [[["w1","w2"],["w3"]], ...],
  "demographics": ["tag1", ...]}`` -- a microblog is a list of sentences,
  a sentence a list of tokens.
* edges file:       ``{"a": str, "b": str}`` per undirected edge (either or
  both orientations accepted; single-orientation listings are symmetrized
  with a warning).
* annotations file: ``{"s": str, "t": str}``.

Embedding files are plain text, ``word f1 ... fd`` per line.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .types import (
    AnnotationSet,
    DataError,
    Microblog,
    NetworkPair,
    ParseError,
    ProfileCaps,
    ReferentialError,
    SocialNetwork,
    UNK_TOKEN,
    Vocabulary,
    subsample_even,
)

USERS_FILE = "users.jsonl"
EDGES_FILE = "edges.jsonl"


def tokenize(raw: str) -> list[str]:
    """Lowercase + whitespace split; a listed token may expand to several."""
    return raw.lower().split()


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def random_word_vector(word: str, dim: int, seed: int) -> np.ndarray:
    """Seeded fallback vector for a word absent from an embedding file.

    Uniform in [-0.5/d, 0.5/d]; a pure function of (word, dim, seed) so the
    same word gets the same vector regardless of vocabulary order.
    """
    rng = np.random.default_rng((seed, stable_hash(word)))
    return rng.uniform(-0.5 / dim, 0.5 / dim, size=dim)


@dataclass(frozen=True)
class EmbeddingTable:
    """Word -> dense vector lookup covering an entire vocabulary."""

    vocabulary: Vocabulary
    vectors: np.ndarray  # (len(vocabulary), dim)

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.vocabulary):
            raise ValueError("embedding table rows do not cover the vocabulary")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def vector(self, word: str) -> np.ndarray:
        return self.vectors[self.vocabulary.index(word)]


def load_embeddings(path: str | Path, vocab: Vocabulary, seed: int = 0) -> EmbeddingTable:
    """Read a text embedding file and cover ``vocab`` with it.

    Words missing from the file (including UNK) get seeded random fallback
    vectors; words in the file but not in ``vocab`` are dropped.
    """
    path = Path(path)
    file_vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if not values:
                raise ParseError(f"{path}:{lineno}: no vector components")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise ParseError(
                    f"{path}:{lineno}: expected {dim} components, found {len(values)}"
                )
            try:
                file_vectors[word] = np.asarray([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    if dim is None:
        raise DataError(f"{path}: empty embedding file")

    rows = np.empty((len(vocab), dim), dtype=np.float64)
    for idx, word in enumerate(vocab.words):
        if word in file_vectors:
            rows[idx] = file_vectors[word]
        else:
            rows[idx] = random_word_vector(word, dim, seed)
    return EmbeddingTable(vocabulary=vocab, vectors=rows)


def _read_jsonl(path: Path):
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def _parse_user_record(record, path: Path, lineno: int):
    if not isinstance(record, dict) or "id" not in record:
        raise ParseError(f"{path}:{lineno}: user record must be an object with an 'id'")
    uid = record["id"]
    if not isinstance(uid, str) or not uid:
        raise ParseError(f"{path}:{lineno}: user id must be a non-empty string")
    blogs_raw = record.get("microblogs", [])
    demos_raw = record.get("demographics", [])
    if not isinstance(blogs_raw, list) or not isinstance(demos_raw, list):
        raise ParseError(f"{path}:{lineno}: 'microblogs' and 'demographics' must be lists")

    blogs: list[list[list[str]]] = []
    for blog in blogs_raw:
        if not isinstance(blog, list) or not blog:
            raise ParseError(f"{path}:{lineno}: user {uid!r} has an empty or malformed microblog")
        sentences: list[list[str]] = []
        for sent in blog:
            if not isinstance(sent, list):
                raise ParseError(f"{path}:{lineno}: user {uid!r} has a malformed sentence")
            tokens: list[str] = []
            for tok in sent:
                if not isinstance(tok, str):
                    raise ParseError(f"{path}:{lineno}: user {uid!r} has a non-string token")
                tokens.extend(tokenize(tok))
            if not tokens:
                raise ParseError(f"{path}:{lineno}: user {uid!r} has an empty sentence")
            sentences.append(tokens)
        blogs.append(sentences)
    demos = []
    for tag in demos_raw:
        if not isinstance(tag, str) or not tag.strip():
            raise ParseError(f"{path}:{lineno}: user {uid!r} has an invalid demographic tag")
        demos.append(tag.strip().lower())
    return uid, blogs, demos


def _apply_caps(blogs: list[list[list[str]]], caps: ProfileCaps) -> tuple[list[list[list[str]]], bool]:
    capped = False
    if len(blogs) > caps.max_microblogs_per_user:
        blogs = [blogs[i] for i in subsample_even(len(blogs), caps.max_microblogs_per_user)]
        capped = True
    out = []
    for blog in blogs:
        if len(blog) > caps.max_sentences_per_microblog:
            blog = [blog[i] for i in subsample_even(len(blog), caps.max_sentences_per_microblog)]
            capped = True
        sents = []
        for sent in blog:
            if len(sent) > caps.max_words_per_sentence:
                sent = [sent[i] for i in subsample_even(len(sent), caps.max_words_per_sentence)]
                capped = True
            sents.append(sent)
        out.append(sents)
    return out, capped


def load_network(
    users_path: str | Path,
    edges_path: str | Path,
    caps: ProfileCaps | None = None,
) -> SocialNetwork:
    users_path, edges_path = Path(users_path), Path(edges_path)
    caps = caps or ProfileCaps()

    raw_users: dict[str, tuple[list[list[list[str]]], list[str]]] = {}
    capped_users = 0
    for lineno, record in _read_jsonl(users_path):
        uid, blogs, demos = _parse_user_record(record, users_path, lineno)
        if uid in raw_users:
            raise ParseError(f"{users_path}:{lineno}: duplicate user id {uid!r}")
        blogs, capped = _apply_caps(blogs, caps)
        capped_users += capped
        raw_users[uid] = (blogs, demos)
    if capped_users:
        warnings.warn(
            f"{users_path}: truncated oversized profiles of {capped_users} user(s) "
            "by even subsampling"
        )

    vocab = Vocabulary(
        tok for blogs, _ in raw_users.values() for blog in blogs for sent in blog for tok in sent
    )
    demo_vocab = Vocabulary(tag for _, demos in raw_users.values() for tag in demos)

    listed: set[tuple[str, str]] = set()
    edges: set[tuple[str, str]] = set()
    for lineno, record in _read_jsonl(edges_path):
        if not isinstance(record, dict) or "a" not in record or "b" not in record:
            raise ParseError(f"{edges_path}:{lineno}: edge record must have 'a' and 'b'")
        a, b = record["a"], record["b"]
        if a == b:
            raise ParseError(f"{edges_path}:{lineno}: self-loop on user {a!r}")
        for end in (a, b):
            if end not in raw_users:
                raise ReferentialError(f"{edges_path}:{lineno}: edge references unknown user {end!r}")
        listed.add((a, b))
        edges.add((a, b) if a < b else (b, a))
    one_way = sum(1 for a, b in listed if (b, a) not in listed)
    if one_way:
        warnings.warn(
            f"{edges_path}: {one_way} edge(s) listed in one orientation only; "
            "adjacency symmetrized"
        )

    profiles = {}
    for uid, (blogs, demos) in raw_users.items():
        microblogs = tuple(
            Microblog(tuple(tuple(vocab.index(t) for t in sent) for sent in blog))
            for blog in blogs
        )
        demo_ids = [demo_vocab.index(tag) for tag in demos]
        profiles[uid] = (microblogs, demo_ids)
    return SocialNetwork.build(profiles, edges, vocab, demo_vocab)


def load_annotation_pairs(path: str | Path) -> list[tuple[str, str]]:
    path = Path(path)
    pairs = []
    for lineno, record in _read_jsonl(path):
        if not isinstance(record, dict) or "s" not in record or "t" not in record:
            raise ParseError(f"{path}:{lineno}: annotation record must have 's' and 't'")
        pairs.append((record["s"], record["t"]))
    return pairs


def load_network_pair(
    source_path: str | Path,
    target_path: str | Path,
    annotations_path: str | Path,
    caps: ProfileCaps | None = None,
) -> NetworkPair:
    """Load a dataset: per-side directories (users.jsonl + edges.jsonl) plus annotations."""
    source_dir, target_dir = Path(source_path), Path(target_path)
    source = load_network(source_dir / USERS_FILE, source_dir / EDGES_FILE, caps)
    target = load_network(target_dir / USERS_FILE, target_dir / EDGES_FILE, caps)

    pairs = load_annotation_pairs(annotations_path)
    for s, t in pairs:
        if s not in source.users:
            raise ReferentialError(f"{annotations_path}: annotation references unknown user {s!r}")
        if t not in target.users:
            raise ReferentialError(f"{annotations_path}: annotation references unknown user {t!r}")
    return NetworkPair(source=source, target=target, annotations=AnnotationSet.from_pairs(pairs))


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_network(network: SocialNetwork, directory: str | Path) -> None:
    """Write users.jsonl / edges.jsonl (edges in both orientations)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / USERS_FILE).open("w", encoding="utf-8") as fh:
        for uid in network.user_ids:
            profile = network.users[uid]
            blogs = [
                [[network.vocab.word(w) for w in sent] for sent in blog.sentences]
                for blog in profile.microblogs
            ]
            demos = [network.demo_vocab.word(d) for d in profile.demographics]
            fh.write(_dump({"id": uid, "microblogs": blogs, "demographics": demos}) + "\n")
    with (directory / EDGES_FILE).open("w", encoding="utf-8") as fh:
        for a, b in sorted(network.edges):
            fh.write(_dump({"a": a, "b": b}) + "\n")
            fh.write(_dump({"a": b, "b": a}) + "\n")


def save_annotation_pairs(pairs: Iterable[tuple[str, str]], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for s, t in sorted(pairs):
            fh.write(_dump({"s": s, "t": t}) + "\n")


def save_network_pair(
    pair: NetworkPair,
    directory: str | Path,
    ground_truth: Sequence[tuple[str, str]] | None = None,
) -> list[Path]:
    """Write the full dataset layout; returns the files written."""
    directory = Path(directory)
    save_network(pair.source, directory / "source")
    save_network(pair.target, directory / "target")
    save_annotation_pairs(pair.annotations, directory / "annotations.jsonl")
    written = [
        directory / "source" / USERS_FILE,
        directory / "source" / EDGES_FILE,
        directory / "target" / USERS_FILE,
        directory / "target" / EDGES_FILE,
        directory / "annotations.jsonl",
    ]
    if ground_truth is not None:
        save_annotation_pairs(ground_truth, directory / "ground_truth.jsonl")
        written.append(directory / "ground_truth.jsonl")
    return written
