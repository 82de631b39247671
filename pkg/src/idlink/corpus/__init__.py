"""Corpus layer: data model, ingestion, embeddings, synthesis, sparsity."""

from .io import (
    EmbeddingTable,
    load_annotation_pairs,
    load_embeddings,
    load_network,
    load_network_pair,
    random_word_vector,
    save_annotation_pairs,
    save_network,
    save_network_pair,
    tokenize,
)
from .sparsity import apply_sparsity
from .synth import SynthConfig, generate_synthetic_pair, sample_annotations
from .types import (
    AnnotationSet,
    DataError,
    Microblog,
    NetworkPair,
    ParseError,
    ProfileCaps,
    ReferentialError,
    SocialNetwork,
    UnknownUserError,
    UNK_TOKEN,
    UserProfile,
    Vocabulary,
    subsample_even,
)

__all__ = [
    "AnnotationSet",
    "DataError",
    "EmbeddingTable",
    "Microblog",
    "NetworkPair",
    "ParseError",
    "ProfileCaps",
    "ReferentialError",
    "SocialNetwork",
    "SynthConfig",
    "UNK_TOKEN",
    "UnknownUserError",
    "UserProfile",
    "Vocabulary",
    "apply_sparsity",
    "generate_synthetic_pair",
    "load_annotation_pairs",
    "load_embeddings",
    "load_network",
    "load_network_pair",
    "random_word_vector",
    "sample_annotations",
    "save_annotation_pairs",
    "save_network",
    "save_network_pair",
    "subsample_even",
    "tokenize",
]
