import json

import numpy as np
import pytest

from idlink.corpus import (
    AnnotationSet,
    DataError,
    ParseError,
    ReferentialError,
    SynthConfig,
    Vocabulary,
    apply_sparsity,
    generate_synthetic_pair,
    load_embeddings,
    load_network,
    load_network_pair,
    random_word_vector,
    sample_annotations,
    save_network_pair,
)
from idlink.corpus.types import ProfileCaps, subsample_even

from conftest import write_jsonl


def write_dataset(root, source_users, source_edges, target_users, target_edges, annotations):
    write_jsonl(root / "source" / "users.jsonl", source_users)
    write_jsonl(root / "source" / "edges.jsonl", source_edges)
    write_jsonl(root / "target" / "users.jsonl", target_users)
    write_jsonl(root / "target" / "edges.jsonl", target_edges)
    write_jsonl(root / "annotations.jsonl", annotations)


USERS_S = [
    {"id": "a", "microblogs": [[["Red", "Apple"], ["pie"]]], "demographics": ["cook"]},
    {"id": "b", "microblogs": [[["lab", "notes"]]], "demographics": []},
    {"id": "c", "microblogs": [], "demographics": ["music"]},
]
EDGES_S = [{"a": "a", "b": "b"}, {"a": "b", "b": "a"}, {"a": "b", "b": "c"}, {"a": "c", "b": "b"}]
USERS_T = [
    {"id": "x", "microblogs": [[["red", "tart"]]], "demographics": ["cook"]},
    {"id": "y", "microblogs": [[["notes"]]], "demographics": []},
]
EDGES_T = [{"a": "x", "b": "y"}, {"a": "y", "b": "x"}]


class TestLoader:
    def test_loads_valid_pair(self, tmp_path):
        write_dataset(tmp_path, USERS_S, EDGES_S, USERS_T, EDGES_T,
                      [{"s": "a", "t": "x"}, {"s": "b", "t": "y"}])
        pair = load_network_pair(tmp_path / "source", tmp_path / "target", tmp_path / "annotations.jsonl")
        assert len(pair.annotations) == 2
        assert set(pair.source.users) == {"a", "b", "c"}
        # tokens are lowercased at ingestion
        vocab = pair.source.vocab
        assert "red" in vocab and "Red" not in vocab
        assert pair.source.users["a"].microblogs[0].sentences[0] == (
            vocab.index("red"), vocab.index("apple"),
        )
        # adjacency and neighbor lists agree
        assert pair.source.neighbors("b") == ("a", "c")
        assert ("a", "b") in pair.source.edges

    def test_annotation_with_unknown_user(self, tmp_path):
        write_dataset(tmp_path, USERS_S, EDGES_S, USERS_T, EDGES_T, [{"s": "x9", "t": "x"}])
        with pytest.raises(ReferentialError, match="x9"):
            load_network_pair(tmp_path / "source", tmp_path / "target", tmp_path / "annotations.jsonl")

    def test_one_way_edge_symmetrized_with_warning(self, tmp_path):
        users = [{"id": u, "microblogs": [[["hi"]]], "demographics": []} for u in "abc"]
        write_jsonl(tmp_path / "users.jsonl", users)
        write_jsonl(tmp_path / "edges.jsonl", [{"a": "a", "b": "b"}])
        with pytest.warns(UserWarning, match="symmetrized"):
            network = load_network(tmp_path / "users.jsonl", tmp_path / "edges.jsonl")
        assert network.neighbors("a") == ("b",)
        assert network.neighbors("b") == ("a",)
        assert network.edges == frozenset({("a", "b")})

    def test_both_orientations_no_warning(self, tmp_path):
        users = [{"id": u, "microblogs": [[["hi"]]], "demographics": []} for u in "ab"]
        write_jsonl(tmp_path / "users.jsonl", users)
        write_jsonl(tmp_path / "edges.jsonl", [{"a": "a", "b": "b"}, {"a": "b", "b": "a"}])
        import warnings as _warnings

        with _warnings.catch_warnings():
            _warnings.simplefilter("error")
            network = load_network(tmp_path / "users.jsonl", tmp_path / "edges.jsonl")
        assert network.edges == frozenset({("a", "b")})

    def test_malformed_json_cites_line(self, tmp_path):
        path = tmp_path / "users.jsonl"
        path.write_text('{"id": "a", "microblogs": []}\nnot json\n')
        write_jsonl(tmp_path / "edges.jsonl", [])
        with pytest.raises(ParseError, match=r"users\.jsonl:2"):
            load_network(path, tmp_path / "edges.jsonl")

    def test_empty_sentence_rejected(self, tmp_path):
        write_jsonl(tmp_path / "users.jsonl",
                    [{"id": "a", "microblogs": [[[" "]]], "demographics": []}])
        write_jsonl(tmp_path / "edges.jsonl", [])
        with pytest.raises(ParseError, match="empty sentence"):
            load_network(tmp_path / "users.jsonl", tmp_path / "edges.jsonl")

    def test_self_loop_rejected(self, tmp_path):
        write_jsonl(tmp_path / "users.jsonl", [{"id": "a", "microblogs": [], "demographics": []}])
        write_jsonl(tmp_path / "edges.jsonl", [{"a": "a", "b": "a"}])
        with pytest.raises(ParseError, match="self-loop"):
            load_network(tmp_path / "users.jsonl", tmp_path / "edges.jsonl")

    def test_edge_with_unknown_user(self, tmp_path):
        write_jsonl(tmp_path / "users.jsonl", [{"id": "a", "microblogs": [], "demographics": []}])
        write_jsonl(tmp_path / "edges.jsonl", [{"a": "a", "b": "ghost"}])
        with pytest.raises(ReferentialError, match="ghost"):
            load_network(tmp_path / "users.jsonl", tmp_path / "edges.jsonl")

    def test_duplicate_annotation_source_rejected(self):
        with pytest.raises(DataError, match="more than one"):
            AnnotationSet.from_pairs([("a", "x"), ("a", "y")])

    def test_oversized_profile_capped_with_warning(self, tmp_path):
        blogs = [[["w%d" % i]] for i in range(9)]
        write_jsonl(tmp_path / "users.jsonl", [{"id": "a", "microblogs": blogs, "demographics": []}])
        write_jsonl(tmp_path / "edges.jsonl", [])
        caps = ProfileCaps(max_microblogs_per_user=4)
        with pytest.warns(UserWarning, match="truncated"):
            network = load_network(tmp_path / "users.jsonl", tmp_path / "edges.jsonl", caps)
        assert len(network.users["a"].microblogs) == 4

    def test_round_trip(self, tmp_path):
        write_dataset(tmp_path, USERS_S, EDGES_S, USERS_T, EDGES_T, [{"s": "a", "t": "x"}])
        pair = load_network_pair(tmp_path / "source", tmp_path / "target", tmp_path / "annotations.jsonl")
        out = tmp_path / "copy"
        save_network_pair(pair, out)
        reloaded = load_network_pair(out / "source", out / "target", out / "annotations.jsonl")
        assert reloaded.source == pair.source
        assert reloaded.target == pair.target
        assert reloaded.annotations == pair.annotations


class TestEmbeddings:
    def test_covers_vocab_with_fallbacks(self, tmp_path):
        path = tmp_path / "vecs.txt"
        path.write_text("red 1 0\nblue 0 1\npie 2 2\n")
        vocab = Vocabulary(["red", "pie", "tart", "baking", "solo"])
        table = load_embeddings(path, vocab, seed=3)
        assert table.dim == 2
        np.testing.assert_array_equal(table.vector("red"), [1.0, 0.0])
        np.testing.assert_array_equal(table.vector("pie"), [2.0, 2.0])
        # three vocab words plus UNK fall back to seeded random vectors
        for word in ("tart", "baking", "solo", "<unk>"):
            np.testing.assert_array_equal(table.vector(word), random_word_vector(word, 2, 3))
            assert np.all(np.abs(table.vector(word)) <= 0.25)

    def test_dimension_mismatch_cites_line(self, tmp_path):
        path = tmp_path / "vecs.txt"
        path.write_text("\n".join(f"w{i} 1 2" for i in range(6)) + "\nbad 1 2 3\n")
        with pytest.raises(ParseError, match=":7"):
            load_embeddings(path, Vocabulary(["w0"]))

    def test_empty_file(self, tmp_path):
        path = tmp_path / "vecs.txt"
        path.write_text("\n")
        with pytest.raises(DataError, match="empty"):
            load_embeddings(path, Vocabulary(["w"]))

    def test_same_seed_identical_fallbacks(self, tmp_path):
        path = tmp_path / "vecs.txt"
        path.write_text("red 1 0\n")
        vocab = Vocabulary(["red", "missing"])
        t1 = load_embeddings(path, vocab, seed=9)
        t2 = load_embeddings(path, vocab, seed=9)
        np.testing.assert_array_equal(t1.vectors, t2.vectors)
        t3 = load_embeddings(path, vocab, seed=10)
        assert not np.array_equal(t1.vector("missing"), t3.vector("missing"))


class TestSubsample:
    def test_identity_under_cap(self):
        assert subsample_even(3, 5) == [0, 1, 2]

    def test_even_coverage(self):
        idx = subsample_even(10, 4)
        assert len(idx) == 4
        assert idx == sorted(set(idx))
        assert idx[0] == 0 and idx[-1] >= 6


class TestSynth:
    def test_counts_and_alignment(self):
        cfg = SynthConfig(users_per_side=30, aligned_fraction=1.0, seed=1)
        pair, gt = generate_synthetic_pair(cfg)
        assert len(gt) == 30
        assert len(pair.source) == 30 and len(pair.target) == 30
        # one-to-one ground truth
        assert len({s for s, _ in gt}) == 30 and len({t for _, t in gt}) == 30

    def test_aligned_fraction_floor(self):
        cfg = SynthConfig(users_per_side=25, aligned_fraction=0.5, seed=2)
        _, gt = generate_synthetic_pair(cfg)
        assert len(gt) == 12

    def test_zero_noise_identical_word_multisets(self):
        cfg = SynthConfig(users_per_side=12, profile_noise=0.0, seed=3)
        pair, gt = generate_synthetic_pair(cfg)
        for s, t in gt:
            src_words = sorted(
                pair.source.vocab.word(w)
                for blog in pair.source.users[s].microblogs
                for w in blog.word_ids()
            )
            tgt_words = sorted(
                pair.target.vocab.word(w)
                for blog in pair.target.users[t].microblogs
                for w in blog.word_ids()
            )
            assert src_words == tgt_words

    def test_same_seed_byte_identical(self, tmp_path):
        cfg = SynthConfig(users_per_side=15, seed=11)
        for sub in ("one", "two"):
            pair, gt = generate_synthetic_pair(cfg)
            save_network_pair(pair, tmp_path / sub, ground_truth=gt)
        for name in ("source/users.jsonl", "source/edges.jsonl", "target/users.jsonl",
                     "target/edges.jsonl", "annotations.jsonl", "ground_truth.jsonl"):
            assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()

    def test_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(aligned_fraction=0.0).validate()
        with pytest.raises(ValueError):
            SynthConfig(profile_noise=1.5).validate()
        with pytest.raises(ValueError):
            SynthConfig(words_per_sentence=(4, 2)).validate()

    def test_sample_annotations_split(self):
        cfg = SynthConfig(users_per_side=20, seed=5)
        _, gt = generate_synthetic_pair(cfg)
        ann, held = sample_annotations(gt, 0.25, seed=4)
        assert len(ann) == 5 and len(held) == 15
        assert set(ann.pairs).isdisjoint(held)
        assert set(ann.pairs) | set(held) == set(gt)


class TestSparsity:
    @pytest.fixture
    def network(self):
        cfg = SynthConfig(users_per_side=20, edge_probability_intra=0.4, topic_count=3,
                          vocab_size=60, seed=7)
        pair, _ = generate_synthetic_pair(cfg)
        return pair.source

    def test_zero_removal_is_identity(self, network):
        assert apply_sparsity(network, 0.0, 0.0, seed=1) == network

    def test_edge_removal_count(self, network):
        n_edges = len(network.edges)
        sparse = apply_sparsity(network, 0.5, 0.0, seed=1)
        assert len(sparse.edges) == n_edges - n_edges // 2
        assert sparse.edges <= network.edges

    def test_microblog_removal_count(self, network):
        total = network.total_microblogs()
        sparse = apply_sparsity(network, 0.0, 0.3, seed=2)
        expected_removed = int(np.floor(0.3 * total))
        assert sparse.total_microblogs() == total - expected_removed
        # per-user counts only shrink
        for uid in network.user_ids:
            assert len(sparse.users[uid].microblogs) <= len(network.users[uid].microblogs)

    def test_symmetry_and_consistency_preserved(self, network):
        sparse = apply_sparsity(network, 0.4, 0.4, seed=3)
        for a, b in sparse.edges:
            assert a < b
            assert b in sparse.neighbors(a) and a in sparse.neighbors(b)

    def test_deterministic_given_seed(self, network):
        one = apply_sparsity(network, 0.3, 0.3, seed=9)
        two = apply_sparsity(network, 0.3, 0.3, seed=9)
        assert one == two
        assert one != apply_sparsity(network, 0.3, 0.3, seed=10)

    def test_input_unmodified(self, network):
        before_edges = set(network.edges)
        before_total = network.total_microblogs()
        apply_sparsity(network, 0.5, 0.5, seed=1)
        assert set(network.edges) == before_edges
        assert network.total_microblogs() == before_total

    def test_range_validation(self, network):
        with pytest.raises(ValueError):
            apply_sparsity(network, -0.1, 0.0, seed=0)
        with pytest.raises(ValueError):
            apply_sparsity(network, 0.0, 1.1, seed=0)
