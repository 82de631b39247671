"""Data model for paired social networks.

A network is a set of user profiles (microblogs as word-id sentences plus
categorical demographic features) together with an undirected relation graph.
Two networks plus a one-to-one annotation set form a :class:`NetworkPair`.
All containers are immutable after construction and safe to share across
threads for reading.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence


class DataError(Exception):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A file could not be parsed; the message cites the offending line."""


class ReferentialError(DataError):
    """A record references a user id that does not exist."""


class UnknownUserError(DataError):
    """A lookup named a user absent from the network."""


UNK_TOKEN = "<unk>"


def subsample_even(n: int, cap: int) -> list[int]:
    """Indices of an evenly spaced subsample of ``range(n)`` with ``cap`` items.

    Deterministic stand-in for uniform subsampling: order preserving, full
    coverage of the range, identical across runs.
    """
    if n <= cap:
        return list(range(n))
    return [(i * n) // cap for i in range(cap)]


class Vocabulary:
    """Immutable token -> index table with a reserved UNK slot at index 0."""

    unk_index = 0

    def __init__(self, tokens: Iterable[str]):
        words = sorted(set(tokens) - {UNK_TOKEN})
        self._words: tuple[str, ...] = (UNK_TOKEN, *words)
        self._index = {w: i for i, w in enumerate(self._words)}

    @classmethod
    def from_ordered(cls, words: Sequence[str]) -> "Vocabulary":
        """Rebuild a vocabulary from an explicit index-ordered word list."""
        if not words or words[0] != UNK_TOKEN:
            raise ValueError("ordered vocabulary must start with the UNK token")
        if len(set(words)) != len(words):
            raise ValueError("ordered vocabulary contains duplicates")
        vocab = cls.__new__(cls)
        vocab._words = tuple(words)
        vocab._index = {w: i for i, w in enumerate(vocab._words)}
        return vocab

    @property
    def words(self) -> tuple[str, ...]:
        return self._words

    def index(self, token: str) -> int:
        return self._index.get(token, self.unk_index)

    def word(self, index: int) -> str:
        return self._words[index]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self._words)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._words == other._words

    def __hash__(self) -> int:
        return hash(self._words)

    def __repr__(self) -> str:
        return f"Vocabulary({len(self)} words)"


@dataclass(frozen=True)
class ProfileCaps:
    """Truncation limits applied to profiles (evenly spaced subsampling beyond)."""

    max_words_per_sentence: int = 40
    max_sentences_per_microblog: int = 8
    max_microblogs_per_user: int = 50
    max_neighbors: int = 64


@dataclass(frozen=True)
class Microblog:
    """One post: an ordered list of sentences, each a tuple of word ids."""

    sentences: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if not self.sentences:
            raise DataError("microblog has no sentences")
        if any(len(s) == 0 for s in self.sentences):
            raise DataError("microblog contains an empty sentence")

    def word_ids(self) -> Iterator[int]:
        for sentence in self.sentences:
            yield from sentence


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    microblogs: tuple[Microblog, ...]
    demographics: tuple[int, ...]  # sorted categorical feature ids
    neighbor_ids: tuple[str, ...]  # sorted, derived from the relation graph


@dataclass(frozen=True)
class SocialNetwork:
    """Users plus a symmetric, self-loop-free relation graph.

    ``edges`` stores each undirected edge once, canonically ordered (a < b).
    Profiles' ``neighbor_ids`` are derived from ``edges`` at build time, so the
    two views are consistent by construction.
    """

    users: Mapping[str, UserProfile]
    edges: frozenset[tuple[str, str]]
    vocab: Vocabulary
    demo_vocab: Vocabulary

    @classmethod
    def build(
        cls,
        profiles: Mapping[str, tuple[Sequence[Microblog], Sequence[int]]],
        edges: Iterable[tuple[str, str]],
        vocab: Vocabulary,
        demo_vocab: Vocabulary,
    ) -> "SocialNetwork":
        canonical: set[tuple[str, str]] = set()
        neighbor_map: dict[str, set[str]] = {uid: set() for uid in profiles}
        for a, b in edges:
            if a == b:
                raise DataError(f"self-loop on user {a!r}")
            for end in (a, b):
                if end not in profiles:
                    raise ReferentialError(f"edge references unknown user {end!r}")
            canonical.add((a, b) if a < b else (b, a))
            neighbor_map[a].add(b)
            neighbor_map[b].add(a)

        users: dict[str, UserProfile] = {}
        for uid, (blogs, demo_ids) in profiles.items():
            if any(d < 0 or d >= len(demo_vocab) for d in demo_ids):
                raise DataError(f"user {uid!r} has a demographic id outside the vocabulary")
            for blog in blogs:
                if any(w < 0 or w >= len(vocab) for w in blog.word_ids()):
                    raise DataError(f"user {uid!r} has a word id outside the vocabulary")
            users[uid] = UserProfile(
                user_id=uid,
                microblogs=tuple(blogs),
                demographics=tuple(sorted(set(demo_ids))),
                neighbor_ids=tuple(sorted(neighbor_map[uid])),
            )
        return cls(users=users, edges=frozenset(canonical), vocab=vocab, demo_vocab=demo_vocab)

    @property
    def user_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.users))

    def neighbors(self, user_id: str) -> tuple[str, ...]:
        return self.users[user_id].neighbor_ids

    def total_microblogs(self) -> int:
        return sum(len(p.microblogs) for p in self.users.values())

    def __len__(self) -> int:
        return len(self.users)


@dataclass(frozen=True)
class AnnotationSet:
    """One-to-one linked identity pairs (source_id, target_id)."""

    pairs: tuple[tuple[str, str], ...]
    sources: frozenset[str] = field(repr=False)
    targets: frozenset[str] = field(repr=False)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "AnnotationSet":
        unique = sorted(set(tuple(p) for p in pairs))
        sources = [s for s, _ in unique]
        targets = [t for _, t in unique]
        if len(set(sources)) != len(sources):
            dup = next(s for s in sources if sources.count(s) > 1)
            raise DataError(f"source {dup!r} appears in more than one annotation")
        if len(set(targets)) != len(targets):
            dup = next(t for t in targets if targets.count(t) > 1)
            raise DataError(f"target {dup!r} appears in more than one annotation")
        return cls(pairs=tuple(unique), sources=frozenset(sources), targets=frozenset(targets))

    @classmethod
    def empty(cls) -> "AnnotationSet":
        return cls.from_pairs(())

    def union(self, extra: Iterable[tuple[str, str]]) -> "AnnotationSet":
        return AnnotationSet.from_pairs((*self.pairs, *extra))

    def as_mapping(self) -> dict[str, str]:
        return dict(self.pairs)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return pair[0] in self.sources and self.as_mapping().get(pair[0]) == pair[1]

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class NetworkPair:
    """A source and a target network, partially aligned via annotations."""

    source: SocialNetwork
    target: SocialNetwork
    annotations: AnnotationSet

    def __post_init__(self):
        for s, t in self.annotations:
            if s not in self.source.users:
                raise ReferentialError(f"annotation references unknown source user {s!r}")
            if t not in self.target.users:
                raise ReferentialError(f"annotation references unknown target user {t!r}")

    def network(self, tag: str) -> SocialNetwork:
        if tag == "source":
            return self.source
        if tag == "target":
            return self.target
        raise ValueError(f"network tag must be 'source' or 'target', got {tag!r}")

    def with_annotations(self, annotations: AnnotationSet) -> "NetworkPair":
        return NetworkPair(source=self.source, target=self.target, annotations=annotations)
