"""Hierarchical attention user encoder.

A user is encoded bottom-up: words -> sentence (BiGRU + additive attention),
sentences -> microblog (attention), microblogs -> text vector (attention),
demographic feature ids -> max-pooled embedding. The text and demographic
vectors are concatenated into the single-user vector ``u``; a neighbor
attention layer aggregates the user's social neighborhood and the final
representation is ``z = [aggregated_neighbors || u]``.

Two code paths share all parameters: per-user convenience methods (used by
tests and attention export) and a padded/masked batch path (used by training
and bulk embedding). They are equivalent by construction and tested as such.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .corpus.types import ProfileCaps, SocialNetwork, Vocabulary, subsample_even

_ACTIVATIONS = {
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "relu": torch.relu,
}

NEG_INF = float("-inf")


def activation_fn(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}") from None


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    """Softmax over the last dim; masked-out entries get zero weight.

    Rows with no valid entries come out as all-zero rather than NaN.
    """
    if mask is None:
        return torch.softmax(scores, dim=-1)
    filled = scores.masked_fill(~mask, NEG_INF)
    # subtract a finite row max so fully-masked rows stay NaN-free
    safe_max = torch.where(mask.any(dim=-1, keepdim=True), filled.max(dim=-1, keepdim=True).values, torch.zeros_like(filled[..., :1]))
    expd = torch.exp(filled - safe_max) * mask
    denom = expd.sum(dim=-1, keepdim=True)
    return expd / torch.clamp(denom, min=1e-300)


class AttentionPool(nn.Module):
    """Additive attention pooling: alpha = softmax(act(w . h + b)), out = sum alpha h."""

    def __init__(self, dim: int, activation: str, dtype: torch.dtype):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(dim, dtype=dtype))
        self.bias = nn.Parameter(torch.zeros((), dtype=dtype))
        self._act = activation_fn(activation)

    def forward(self, h: torch.Tensor, mask: torch.Tensor | None = None):
        scores = self._act(h @ self.weight + self.bias)
        alpha = masked_softmax(scores, mask)
        pooled = (alpha.unsqueeze(-1) * h).sum(dim=-2)
        return pooled, alpha

    def reset(self, generator: torch.Generator) -> None:
        bound = 1.0 / np.sqrt(self.weight.shape[0])
        with torch.no_grad():
            self.weight.uniform_(-bound, bound, generator=generator)
            self.bias.zero_()


@dataclass
class AttentionTrace:
    """Normalized attention weights of one user's forward pass."""

    user_id: str
    microblog_weights: list[float]
    sentence_weights: list[list[float]]
    word_weights: list[list[list[float]]]
    neighbor_ids: list[str]
    neighbor_weights: list[float]
    no_microblogs: bool
    no_neighbors: bool


@dataclass
class PreparedNetwork:
    """A network re-indexed into one encoder's vocabulary, caps applied."""

    user_ids: tuple[str, ...]
    index: dict[str, int]
    blogs: list[list[list[torch.Tensor]]]  # user -> microblog -> sentence id tensors
    demos: list[torch.Tensor]
    neighbors: list[np.ndarray]  # indices into user_ids


def prepare_network(
    network: SocialNetwork,
    vocab: Vocabulary,
    demo_vocab: Vocabulary,
    caps: ProfileCaps,
) -> PreparedNetwork:
    user_ids = network.user_ids
    index = {uid: i for i, uid in enumerate(user_ids)}
    word_lut = np.asarray([vocab.index(w) for w in network.vocab.words], dtype=np.int64)
    demo_lut = np.asarray([demo_vocab.index(w) for w in network.demo_vocab.words], dtype=np.int64)

    blogs_all, demos_all, neighbors_all = [], [], []
    for uid in user_ids:
        profile = network.users[uid]
        blogs = [profile.microblogs[i] for i in subsample_even(len(profile.microblogs), caps.max_microblogs_per_user)]
        prepared_blogs = []
        for blog in blogs:
            sents = [blog.sentences[i] for i in subsample_even(len(blog.sentences), caps.max_sentences_per_microblog)]
            prepared_sents = []
            for sent in sents:
                words = [sent[i] for i in subsample_even(len(sent), caps.max_words_per_sentence)]
                prepared_sents.append(torch.from_numpy(word_lut[np.asarray(words, dtype=np.int64)]))
            prepared_blogs.append(prepared_sents)
        blogs_all.append(prepared_blogs)
        demos_all.append(torch.from_numpy(np.unique(demo_lut[np.asarray(profile.demographics, dtype=np.int64)])))
        nbr = [index[n] for n in profile.neighbor_ids]
        nbr = [nbr[i] for i in subsample_even(len(nbr), caps.max_neighbors)]
        neighbors_all.append(np.asarray(nbr, dtype=np.int64))
    return PreparedNetwork(user_ids=user_ids, index=index, blogs=blogs_all, demos=demos_all, neighbors=neighbors_all)


@dataclass
class BatchEncoding:
    """Result of a batched contextual forward pass."""

    z: torch.Tensor  # (n, out_dim)
    user_vec: torch.Tensor  # (n, user_dim)
    no_microblogs: np.ndarray
    no_neighbors: np.ndarray
    traces: list[AttentionTrace] | None = None


class HierarchicalEncoder(nn.Module):
    """Word/sentence/microblog/neighbor attention encoder for one network."""

    def __init__(
        self,
        vocab_size: int,
        demo_vocab_size: int,
        word_dim: int,
        hidden_dim: int,
        demo_dim: int,
        activation: str = "tanh",
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.word_dim = word_dim
        self.hidden_dim = hidden_dim
        self.demo_dim = demo_dim
        self._act = activation_fn(activation)
        self._dtype = dtype

        self.word_emb = nn.Embedding(max(vocab_size, 1), word_dim, dtype=dtype)
        self.gru = nn.GRU(word_dim, hidden_dim, bidirectional=True, batch_first=True, dtype=dtype)
        self.word_attn = AttentionPool(2 * hidden_dim, activation, dtype)
        self.sent_attn = AttentionPool(2 * hidden_dim, activation, dtype)
        self.blog_attn = AttentionPool(2 * hidden_dim, activation, dtype)
        self.demo_emb = nn.Embedding(max(demo_vocab_size, 1), demo_dim, dtype=dtype)
        self.neighbor_attn = nn.Parameter(torch.zeros(2 * self.user_dim, dtype=dtype))

    @property
    def text_dim(self) -> int:
        return 2 * self.hidden_dim

    @property
    def user_dim(self) -> int:
        return self.text_dim + self.demo_dim

    @property
    def out_dim(self) -> int:
        return 2 * self.user_dim

    def reset_parameters(
        self,
        generator: torch.Generator,
        word_matrix: np.ndarray,
        demo_matrix: np.ndarray,
    ) -> None:
        # Recurrent weights start damped and the update gate biased open
        # (forgetful), so contextual states are word-dominated at first and
        # context sensitivity is learned rather than imposed.
        bound = 1.0 / np.sqrt(self.hidden_dim)
        h = self.hidden_dim
        with torch.no_grad():
            for name, param in self.gru.named_parameters():
                param.uniform_(-bound, bound, generator=generator)
                if name.startswith("weight_hh"):
                    param.mul_(0.3)
                elif name.startswith("bias_ih"):
                    param[h : 2 * h] -= 1.5
            self.word_emb.weight.copy_(torch.as_tensor(word_matrix, dtype=self._dtype))
            self.demo_emb.weight.copy_(torch.as_tensor(demo_matrix, dtype=self._dtype))
            nbound = 1.0 / np.sqrt(self.neighbor_attn.shape[0])
            self.neighbor_attn.uniform_(-nbound, nbound, generator=generator)
        for pool in (self.word_attn, self.sent_attn, self.blog_attn):
            pool.reset(generator)

    # ------------------------------------------------------------------
    # per-user operations
    # ------------------------------------------------------------------

    def encode_sentence(self, word_ids) -> tuple[torch.Tensor, torch.Tensor]:
        """Word ids -> sentence vector plus normalized word weights."""
        ids = torch.as_tensor(list(word_ids), dtype=torch.int64)
        if ids.numel() == 0:
            raise ValueError("cannot encode an empty sentence")
        emb = self.word_emb(ids.unsqueeze(0))
        states, _ = self.gru(emb)  # (1, T, 2H)
        pooled, alpha = self.word_attn(states)
        return pooled[0], alpha[0]

    def encode_microblog(self, sentence_vectors: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Sentence vectors (K, text_dim) -> microblog vector plus weights."""
        if sentence_vectors.numel() == 0 or sentence_vectors.shape[0] == 0:
            raise ValueError("cannot encode a microblog with no sentences")
        pooled, alpha = self.sent_attn(sentence_vectors.unsqueeze(0))
        return pooled[0], alpha[0]

    def encode_user_text(self, microblog_vectors: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Microblog vectors (O, text_dim) -> user text vector plus weights.

        Zero microblogs is a legal degenerate case: returns a zero vector and
        an empty weight tensor (the caller flags the user).
        """
        if microblog_vectors.numel() == 0 or microblog_vectors.shape[0] == 0:
            zero = torch.zeros(self.text_dim, dtype=self._dtype)
            return zero, torch.zeros(0, dtype=self._dtype)
        pooled, alpha = self.blog_attn(microblog_vectors.unsqueeze(0))
        return pooled[0], alpha[0]

    def encode_demographics(self, feature_ids) -> torch.Tensor:
        """Elementwise max over the selected embedding rows; empty -> zeros."""
        ids = sorted(set(int(i) for i in feature_ids))
        if any(i < 0 or i >= self.demo_emb.num_embeddings for i in ids):
            raise ValueError("demographic feature id outside the vocabulary")
        if not ids:
            return torch.zeros(self.demo_dim, dtype=self._dtype)
        rows = self.demo_emb(torch.as_tensor(ids, dtype=torch.int64))
        return rows.max(dim=0).values

    def encode_user(self, microblogs, demo_ids) -> tuple[torch.Tensor, AttentionTrace]:
        """Compose the text and demographic paths into ``u = [u_text || u_demo]``."""
        word_w: list[list[list[float]]] = []
        sent_w: list[list[float]] = []
        blog_vecs = []
        for blog in microblogs:
            sent_vecs = []
            ww = []
            for sent in blog:
                vec, alpha = self.encode_sentence(sent)
                sent_vecs.append(vec)
                ww.append([float(a) for a in alpha])
            blog_vec, salpha = self.encode_microblog(torch.stack(sent_vecs))
            blog_vecs.append(blog_vec)
            word_w.append(ww)
            sent_w.append([float(a) for a in salpha])
        stacked = torch.stack(blog_vecs) if blog_vecs else torch.zeros(0, self.text_dim, dtype=self._dtype)
        u_text, blog_alpha = self.encode_user_text(stacked)
        u_demo = self.encode_demographics(demo_ids)
        trace = AttentionTrace(
            user_id="",
            microblog_weights=[float(a) for a in blog_alpha],
            sentence_weights=sent_w,
            word_weights=word_w,
            neighbor_ids=[],
            neighbor_weights=[],
            no_microblogs=not blog_vecs,
            no_neighbors=True,
        )
        return torch.cat([u_text, u_demo]), trace

    def encode_user_contextual(
        self, user_vec: torch.Tensor, neighbor_vectors: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Neighbor-attention aggregation: ``z = [act(sum alpha u_n) || u]``.

        Zero neighbors yields a zero context sub-vector.
        """
        if neighbor_vectors.shape[0] == 0:
            context = torch.zeros(self.user_dim, dtype=self._dtype)
            return torch.cat([context, user_vec]), torch.zeros(0, dtype=self._dtype)
        pairs = torch.cat(
            [user_vec.unsqueeze(0).expand(neighbor_vectors.shape[0], -1), neighbor_vectors], dim=-1
        )
        scores = self._act(pairs @ self.neighbor_attn)
        alpha = torch.softmax(scores, dim=-1)
        context = self._act((alpha.unsqueeze(-1) * neighbor_vectors).sum(dim=0))
        return torch.cat([context, user_vec]), alpha

    # ------------------------------------------------------------------
    # batched path
    # ------------------------------------------------------------------

    def encode_profiles(self, blogs_batch, demos_batch, collect_weights: bool = False):
        """Encode a batch of profiles into single-user vectors.

        blogs_batch: per user, a list of microblogs, each a list of 1-d id
        tensors. demos_batch: per user, a 1-d id tensor.
        Returns (user_vecs (U, user_dim), no_microblog flags, scratch) where
        scratch holds the attention weights when requested.
        """
        n_users = len(blogs_batch)
        flat_sents: list[torch.Tensor] = []
        sent_blog: list[int] = []
        blog_user: list[int] = []
        for u, blogs in enumerate(blogs_batch):
            for blog in blogs:
                b = len(blog_user)
                blog_user.append(u)
                for sent in blog:
                    flat_sents.append(sent)
                    sent_blog.append(b)

        n_sents, n_blogs = len(flat_sents), len(blog_user)
        scratch: dict = {}
        if n_sents:
            lengths = torch.as_tensor([len(s) for s in flat_sents], dtype=torch.int64)
            max_len = int(lengths.max())
            ids = torch.zeros(n_sents, max_len, dtype=torch.int64)
            for i, sent in enumerate(flat_sents):
                ids[i, : len(sent)] = sent
            emb = self.word_emb(ids)
            packed = nn.utils.rnn.pack_padded_sequence(
                emb, lengths, batch_first=True, enforce_sorted=False
            )
            states, _ = self.gru(packed)
            h, _ = nn.utils.rnn.pad_packed_sequence(states, batch_first=True)
            word_mask = torch.arange(h.shape[1]).unsqueeze(0) < lengths.unsqueeze(1)
            sent_vecs, word_alpha = self.word_attn(h, word_mask)

            blog_sents: list[list[int]] = [[] for _ in range(n_blogs)]
            for s, b in enumerate(sent_blog):
                blog_sents[b].append(s)
            k_max = max(len(group) for group in blog_sents)
            blog_idx = torch.full((n_blogs, k_max), -1, dtype=torch.int64)
            for b, group in enumerate(blog_sents):
                blog_idx[b, : len(group)] = torch.as_tensor(group)
            blog_mask = blog_idx >= 0
            gathered = sent_vecs[blog_idx.clamp(min=0)]
            blog_vecs, sent_alpha = self.sent_attn(gathered, blog_mask)

            user_blogs: list[list[int]] = [[] for _ in range(n_users)]
            for b, u in enumerate(blog_user):
                user_blogs[u].append(b)
            o_max = max((len(g) for g in user_blogs), default=0)
            u_text = torch.zeros(n_users, self.text_dim, dtype=self._dtype)
            blog_alpha = None
            if o_max:
                user_idx = torch.full((n_users, o_max), -1, dtype=torch.int64)
                for u, group in enumerate(user_blogs):
                    user_idx[u, : len(group)] = torch.as_tensor(group)
                user_mask = user_idx >= 0
                pooled, blog_alpha = self.blog_attn(blog_vecs[user_idx.clamp(min=0)], user_mask)
                u_text = torch.where(user_mask.any(dim=-1, keepdim=True), pooled, u_text)
            if collect_weights:
                scratch.update(
                    word_alpha=word_alpha,
                    lengths=lengths,
                    sent_alpha=sent_alpha,
                    blog_alpha=blog_alpha,
                    blog_sents=blog_sents,
                    user_blogs=user_blogs,
                )
        else:
            u_text = torch.zeros(n_users, self.text_dim, dtype=self._dtype)
            if collect_weights:
                scratch.update(
                    word_alpha=None, lengths=None, sent_alpha=None, blog_alpha=None,
                    blog_sents=[], user_blogs=[[] for _ in range(n_users)],
                )

        no_blogs = np.asarray([len(blogs) == 0 for blogs in blogs_batch])

        d_max = max((int(d.numel()) for d in demos_batch), default=0)
        if d_max:
            demo_ids = torch.zeros(n_users, d_max, dtype=torch.int64)
            demo_mask = torch.zeros(n_users, d_max, dtype=torch.bool)
            for u, d in enumerate(demos_batch):
                demo_ids[u, : d.numel()] = d
                demo_mask[u, : d.numel()] = True
            rows = self.demo_emb(demo_ids)
            filled = rows.masked_fill(~demo_mask.unsqueeze(-1), NEG_INF)
            pooled = filled.max(dim=1).values
            u_demo = torch.where(demo_mask.any(dim=-1, keepdim=True), pooled, torch.zeros_like(pooled))
        else:
            u_demo = torch.zeros(n_users, self.demo_dim, dtype=self._dtype)

        return torch.cat([u_text, u_demo], dim=-1), no_blogs, scratch

    def contextualize(
        self,
        bank: torch.Tensor,
        centers: torch.Tensor,
        neighbor_idx: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor, np.ndarray]:
        """Attention over each center's neighbors in ``bank``.

        neighbor_idx: (C, N) indices into bank, -1 padded.
        Returns (z (C, 2*user_dim), neighbor weights (C, N), no_neighbor flags).
        """
        u_c = bank[centers]
        mask = neighbor_idx >= 0
        if neighbor_idx.shape[1] == 0:
            z = torch.cat([torch.zeros_like(u_c), u_c], dim=-1)
            return z, torch.zeros(u_c.shape[0], 0, dtype=self._dtype), np.ones(u_c.shape[0], dtype=bool)
        neigh = bank[neighbor_idx.clamp(min=0)]  # (C, N, D)
        pairs = torch.cat([u_c.unsqueeze(1).expand(-1, neigh.shape[1], -1), neigh], dim=-1)
        scores = self._act(pairs @ self.neighbor_attn)
        alpha = masked_softmax(scores, mask)
        context = self._act((alpha.unsqueeze(-1) * neigh).sum(dim=1))
        has_neighbors = mask.any(dim=-1)
        context = torch.where(has_neighbors.unsqueeze(-1), context, torch.zeros_like(context))
        z = torch.cat([context, u_c], dim=-1)
        return z, alpha, (~has_neighbors).numpy()

    def forward_users(
        self,
        prepared: PreparedNetwork,
        indices,
        with_trace: bool = False,
    ) -> BatchEncoding:
        """Contextual representations ``z`` for the requested users.

        Encodes the requested users plus their neighbors once, then applies
        neighbor attention for the requested users only.
        """
        indices = [int(i) for i in indices]
        needed: list[int] = []
        seen = set()
        for i in indices:
            for j in (i, *prepared.neighbors[i].tolist()):
                if j not in seen:
                    seen.add(j)
                    needed.append(j)
        needed.sort()
        pos = {j: p for p, j in enumerate(needed)}

        bank, no_blogs, scratch = self.encode_profiles(
            [prepared.blogs[j] for j in needed],
            [prepared.demos[j] for j in needed],
            collect_weights=with_trace,
        )
        n_max = max((len(prepared.neighbors[i]) for i in indices), default=0)
        neighbor_idx = torch.full((len(indices), n_max), -1, dtype=torch.int64)
        for row, i in enumerate(indices):
            nbrs = prepared.neighbors[i]
            neighbor_idx[row, : len(nbrs)] = torch.as_tensor([pos[j] for j in nbrs])
        centers = torch.as_tensor([pos[i] for i in indices], dtype=torch.int64)
        z, alpha, no_neighbors = self.contextualize(bank, centers, neighbor_idx)

        traces = None
        if with_trace:
            traces = [
                self._assemble_trace(prepared, i, pos[i], scratch, alpha[row], no_blogs)
                for row, i in enumerate(indices)
            ]
        return BatchEncoding(
            z=z,
            user_vec=bank[centers],
            no_microblogs=no_blogs[centers.numpy()],
            no_neighbors=no_neighbors,
            traces=traces,
        )

    def _assemble_trace(self, prepared, user_index, bank_pos, scratch, neigh_alpha, no_blogs):
        word_w: list[list[list[float]]] = []
        sent_w: list[list[float]] = []
        blog_w: list[float] = []
        if scratch.get("blog_alpha") is not None and not no_blogs[bank_pos]:
            blog_ids = scratch["user_blogs"][bank_pos]
            blog_w = [float(a) for a in scratch["blog_alpha"][bank_pos][: len(blog_ids)]]
            for b in blog_ids:
                sent_ids = scratch["blog_sents"][b]
                sent_w.append([float(a) for a in scratch["sent_alpha"][b][: len(sent_ids)]])
                word_w.append(
                    [
                        [float(a) for a in scratch["word_alpha"][s][: int(scratch["lengths"][s])]]
                        for s in sent_ids
                    ]
                )
        nbrs = prepared.neighbors[user_index]
        return AttentionTrace(
            user_id=prepared.user_ids[user_index],
            microblog_weights=blog_w,
            sentence_weights=sent_w,
            word_weights=word_w,
            neighbor_ids=[prepared.user_ids[j] for j in nbrs],
            neighbor_weights=[float(a) for a in neigh_alpha[: len(nbrs)]],
            no_microblogs=bool(no_blogs[bank_pos]),
            no_neighbors=len(nbrs) == 0,
        )
