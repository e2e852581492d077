import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transw.data import (DataFormatError, RelationFoldPlan, Split, TripleIndex, Vocab, build_index,
                         load_dataset, load_name_map, load_triples, split_relations_kfold, tokenize,
                         tokenize_entity, warn_unmapped)


class TestTokenize:
    @pytest.mark.parametrize("surface, expected", [
        ("/film/film/starring", ["film", "film", "starring"]),
        ("", []),
        ("Casino_Royale", ["casino", "royale"]),
        ("/film/performance/character", ["film", "performance", "character"]),
        ("__dog_NN_1", ["dog"]),
        ("__spiritual_bouquet_1", ["spiritual", "bouquet"]),
        ("a.b-c d\te", ["a", "b", "c", "d", "e"]),
        ("/m/0x01", ["m", "0x01"]),
        ("--//__", []),
        ("x / ( y", ["x", "y"]),
    ])
    def test_examples(self, surface, expected):
        assert tokenize(surface) == expected

    def test_sense_suffix_only_stripped_when_words_remain(self):
        assert tokenize("_1") == ["1"]

    @given(st.text(max_size=40))
    def test_deterministic_and_clean(self, s):
        toks = tokenize(s)
        assert toks == tokenize(s)
        assert all(t and t == t.lower() for t in toks)
        assert all(not any(c in t for c in "/_-.") and not any(c.isspace() for c in t) for t in toks)


class TestVocab:
    def test_round_trip(self):
        v = Vocab(["a", "b", "a", "c"])
        assert len(v) == 3
        for s in ["a", "b", "c"]:
            assert v.lookup(v.id_of(s)) == s
        assert [v.id_of(s) for s in "abc"] == [0, 1, 2]

    def test_frozen_rejects(self):
        v = Vocab(["a"]).freeze()
        with pytest.raises(KeyError):
            v.add("b")
        assert v.add("a") == 0


class TestLoadTriples:
    def test_plain_three_lines(self, write):
        p = write("t.txt", ["a\tr\tb", "b\tr\ta", "a\tr\ta"])
        ents, rels = Vocab(), Vocab()
        split = load_triples(p, "plain", ents, rels)
        assert len(split) == 3
        assert len(ents) == 2 and len(rels) == 1
        assert split.labels is None
        assert split.triples.tolist() == [[0, 0, 1], [1, 0, 0], [0, 0, 0]]

    def test_empty_file(self, write):
        p = write("e.txt", [])
        ents, rels = Vocab(["x"]), Vocab()
        split = load_triples(p, "auto", ents, rels)
        assert len(split) == 0
        assert len(ents) == 1 and len(rels) == 0

    def test_labeled(self, write):
        p = write("l.txt", ["a\tr\tb\t1", "a\tr\tc\t-1"])
        split = load_triples(p)
        assert split.labels.tolist() == [True, False]
        assert split.positives().tolist() == [[0, 0, 1]]

    @pytest.mark.parametrize("label", ["0", "yes", "2"])
    def test_bad_label(self, write, label):
        p = write("l.txt", ["a\tr\tb\t1", f"a\tr\tc\t{label}"])
        with pytest.raises(DataFormatError, match=":2:"):
            load_triples(p)

    def test_malformed_line_reports_line_number(self, write):
        p = write("m.txt", ["a\tr\tb", "a\tr", "a\tr\tc"])
        with pytest.raises(DataFormatError, match=r"m.txt:2:"):
            load_triples(p)

    def test_frozen_vocab_unknown_surface(self, write):
        p = write("f.txt", ["a\tr\tb", "a\tr\tz"])
        ents = Vocab(["a", "b"]).freeze()
        with pytest.raises(DataFormatError, match="'z'"):
            load_triples(p, "plain", ents, Vocab(["r"]).freeze())

    def test_dataset_directory_and_manifest(self, tmp_path, write):
        write("train.txt", ["a\tr\tb", "b\tr\tc"])
        write("dev.txt", ["a\tr\tc\t1", "c\tr\ta\t-1"])
        write("test.txt", ["b\tr\ta\t1"])
        write("manifest.txt", ["train = 2", "valid = 2", "test = 1"])
        ds = load_dataset(tmp_path)
        assert (len(ds.train), len(ds.valid), len(ds.test)) == (2, 2, 1)
        assert len(ds.all_facts()) == 4
        write("manifest.txt", ["train = 3"])
        with pytest.raises(DataFormatError, match="manifest"):
            load_dataset(tmp_path)


class TestIndex:
    def test_membership(self):
        idx = TripleIndex(np.array([[0, 0, 1]]), 2, 1)
        assert idx.contains((0, 0, 1))
        assert not idx.contains((1, 0, 0))
        assert (0, 0, 1) in idx

    def test_dedup_over_splits(self):
        train = Split(np.array([[0, 0, 1], [1, 0, 2], [2, 1, 3], [3, 1, 4], [4, 0, 0], [0, 1, 2]]))
        valid = Split(np.array([[1, 0, 2], [2, 0, 4]]))
        test = Split(np.array([[0, 0, 1], [3, 0, 3]]))
        # 10 triples; (1,0,2) and (0,0,1) appear twice
        assert len(build_index([train, valid, test], 5, 2)) == 8

    def test_labeled_negatives_not_indexed(self):
        s = Split(np.array([[0, 0, 1], [0, 0, 2]]), np.array([True, False]))
        idx = build_index([s], 3, 1)
        assert idx.contains((0, 0, 1)) and not idx.contains((0, 0, 2))

    def test_grouped_lookups(self):
        idx = TripleIndex(np.array([[0, 0, 1], [0, 0, 2], [3, 0, 2], [0, 1, 2]]), 4, 2)
        assert sorted(idx.tails(0, 0).tolist()) == [1, 2]
        assert sorted(idx.heads(0, 2).tolist()) == [0, 3]
        assert idx.tails(1, 1).tolist() == []

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 2), st.integers(0, 6)), max_size=40),
           st.lists(st.tuples(st.integers(0, 6), st.integers(0, 2), st.integers(0, 6)), min_size=1, max_size=40))
    def test_agrees_with_linear_scan(self, inserted, probes):
        idx = TripleIndex(np.array(inserted, dtype=np.int64).reshape(-1, 3), 7, 3)
        many = idx.contains_many(np.array(probes))
        for p, m in zip(probes, many):
            assert idx.contains(p) == (p in inserted) == bool(m)


class TestFolds:
    def test_large_relation_set_sizes(self):
        plan = split_relations_kfold(range(1345), 10, seed=0)
        sizes = sorted(len(f) for f in plan.folds)
        assert sizes == [134] * 5 + [135] * 5
        assert 1345 - max(sizes) == 1210

    def test_one_per_fold(self):
        plan = split_relations_kfold(range(10), 10, seed=3)
        assert all(len(f) == 1 for f in plan.folds)

    def test_deterministic(self):
        assert split_relations_kfold(range(7), 3, seed=5).folds == split_relations_kfold(range(7), 3, seed=5).folds

    def test_too_many_folds(self):
        with pytest.raises(ValueError):
            split_relations_kfold(range(3), 4)

    @given(st.integers(2, 40), st.integers(0, 1000), st.data())
    def test_partition(self, n, seed, data):
        k = data.draw(st.integers(2, n))
        plan = split_relations_kfold(range(n), k, seed)
        flat = [r for f in plan.folds for r in f]
        assert sorted(flat) == list(range(n))
        sizes = [len(f) for f in plan.folds]
        assert max(sizes) - min(sizes) <= 1

    def test_triple_partition_by_relation(self):
        triples = np.array([[0, 0, 1], [1, 1, 2], [2, 2, 0], [0, 1, 0]])
        plan = RelationFoldPlan([[1], [0, 2]])
        train, test = plan.partition(triples, 0)
        assert test.tolist() == [[1, 1, 2], [0, 1, 0]]
        assert train.tolist() == [[0, 0, 1], [2, 2, 0]]


class TestNameMap:
    def test_mapped_tokenization(self, write):
        names = load_name_map(write("n.txt", ["/m/0x01\tCasino Royale"]))
        assert tokenize_entity("/m/0x01", names) == ["casino", "royale"]

    def test_empty_map_falls_back(self):
        assert tokenize_entity("/m/0x01", {}) == ["m", "0x01"]

    def test_unmapped_warned_once(self, caplog):
        names = {"a": "Alpha", "b": "Beta"}
        with caplog.at_level(logging.WARNING):
            assert warn_unmapped(Vocab(["a", "b", "c"]), names) == 1
        assert len(caplog.records) == 1

    def test_duplicate_rows_last_wins(self, write, caplog):
        with caplog.at_level(logging.WARNING):
            names = load_name_map(write("n.txt", ["x\tFirst", "x\tSecond"]))
        assert names == {"x": "Second"}
        assert "duplicate" in caplog.text
