import json

import pytest
import torch

from idlink.corpus import (
    AnnotationSet,
    Microblog,
    NetworkPair,
    SocialNetwork,
    Vocabulary,
)
from idlink.corpus.types import ProfileCaps
from idlink.linkage import ModelConfig, TrainConfig

torch.set_num_threads(1)

TINY_MODEL = ModelConfig(
    word_dim=8,
    gru_hidden=4,
    demo_dim=4,
    encoder_hidden=12,
    latent_dim=8,
    gaussian_dim=6,
    temperature=0.01,
    word_init_scale=0.3,
    caps=ProfileCaps(10, 3, 4, 8),
)

TINY_TRAIN = TrainConfig(
    batch_size=8,
    annotation_fraction=1.0,
    learning_rate=0.002,
    max_epochs=10,
    negatives_per_positive=2,
    reg_weight=1e-4,
    recon_weight=0.1,
    seed=0,
)


def write_jsonl(path, records):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def make_network(user_specs, edges=()):
    """Build a network from {user_id: (token_blogs, tags)} specs.

    token_blogs: list of microblogs, each a list of sentences (token lists).
    """
    vocab = Vocabulary(
        tok for blogs, _ in user_specs.values() for blog in blogs for sent in blog for tok in sent
    )
    demo_vocab = Vocabulary(tag for _, tags in user_specs.values() for tag in tags)
    profiles = {}
    for uid, (blogs, tags) in user_specs.items():
        microblogs = tuple(
            Microblog(tuple(tuple(vocab.index(t) for t in sent) for sent in blog))
            for blog in blogs
        )
        profiles[uid] = (microblogs, [demo_vocab.index(t) for t in tags])
    return SocialNetwork.build(profiles, edges, vocab, demo_vocab)


@pytest.fixture
def toy_pair():
    """Two tiny aligned networks with matching text plus one decoy each."""
    source = make_network(
        {
            "s0": ([[["red", "apple", "pie"]], [["baking", "sunday"]]], ["cook"]),
            "s1": ([[["quantum", "flux", "paper"], ["lab", "notes"]]], ["science"]),
            "s2": ([[["guitar", "solo"]]], ["music"]),
        },
        edges=[("s0", "s1"), ("s1", "s2")],
    )
    target = make_network(
        {
            "t0": ([[["red", "apple", "tart"]], [["baking", "saturday"]]], ["cook"]),
            "t1": ([[["quantum", "flux", "draft"], ["lab", "notes"]]], ["science"]),
            "t2": ([[["violin", "duet"]]], ["music"]),
        },
        edges=[("t0", "t1"), ("t1", "t2")],
    )
    annotations = AnnotationSet.from_pairs([("s0", "t0"), ("s1", "t1")])
    return NetworkPair(source=source, target=target, annotations=annotations)
