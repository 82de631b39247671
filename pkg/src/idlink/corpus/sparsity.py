"""Sparsity perturbation: random removal of relations and microblogs."""

from __future__ import annotations

import numpy as np

from .types import SocialNetwork


def apply_sparsity(
    network: SocialNetwork,
    remove_relations: float = 0.0,
    remove_microblogs: float = 0.0,
    seed: int = 0,
) -> SocialNetwork:
    """Return a copy with ``floor(R_r*|E|)`` edges and ``floor(R_t*total)``
    microblogs removed uniformly at random. The input is left unmodified and
    the result is a pure function of (network, fractions, seed)."""
    for name, value in (("remove_relations", remove_relations), ("remove_microblogs", remove_microblogs)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must be in [0, 1]")
    rng = np.random.default_rng(seed)

    edges = sorted(network.edges)
    n_drop = int(np.floor(remove_relations * len(edges)))
    dropped = set(rng.choice(len(edges), size=n_drop, replace=False).tolist()) if n_drop else set()
    kept_edges = [e for i, e in enumerate(edges) if i not in dropped]

    slots = [
        (uid, j)
        for uid in network.user_ids
        for j in range(len(network.users[uid].microblogs))
    ]
    n_blog_drop = int(np.floor(remove_microblogs * len(slots)))
    dropped_slots = (
        {slots[i] for i in rng.choice(len(slots), size=n_blog_drop, replace=False).tolist()}
        if n_blog_drop
        else set()
    )

    profiles = {}
    for uid in network.user_ids:
        profile = network.users[uid]
        blogs = tuple(
            blog for j, blog in enumerate(profile.microblogs) if (uid, j) not in dropped_slots
        )
        profiles[uid] = (blogs, list(profile.demographics))
    return SocialNetwork.build(profiles, kept_edges, network.vocab, network.demo_vocab)
