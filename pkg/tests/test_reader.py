import collections
import logging

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adaptfc import reader as rd
from adaptfc.data import BINARY, TERNARY, Claim, DomainCorpus, EvidenceDocument, VeracityLabel
from adaptfc.encoders import SEP, ClassifierHead
from adaptfc.errors import ConfigError, DegenerateBatchError, TrainingError
from adaptfc.reader import DIRECT, REVERSE, Reader
from adaptfc.retriever import build_index, retrieve

from conftest import FixedEncoder

SUPPORT, REFUTE = VeracityLabel.SUPPORT, VeracityLabel.REFUTE


def loop_coral(xs, xt):
    """Elementwise double-loop covariance and Frobenius distance."""
    def cov(x):
        n, d = len(x), len(x[0])
        mean = [sum(x[r][c] for r in range(n)) / n for c in range(d)]
        return [[sum((x[r][a] - mean[a]) * (x[r][b] - mean[b]) for r in range(n)) / (n - 1)
                 for b in range(d)] for a in range(d)]

    cs, ct = cov(xs.tolist()), cov(xt.tolist())
    d = len(cs)
    return sum((cs[a][b] - ct[a][b]) ** 2 for a in range(d) for b in range(d)) / (4 * d * d)


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


matrices = arrays(np.float64, st.tuples(st.integers(2, 8), st.just(3)),
                  elements=st.floats(-10, 10, allow_nan=False))


class TestCoral:
    def test_identical_inputs(self, rng):
        x = rng.normal(size=(7, 4))
        assert rd.coral_distance(x, x) == 0.0

    def test_one_dimensional_example(self):
        assert rd.coral_distance([[0.0], [2.0]], [[5.0], [5.0]]) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_invariance(self, rng):
        xs, xt = rng.normal(size=(20, 5)), rng.normal(scale=2, size=(30, 5))
        q = random_orthogonal(rng, 5)
        assert rd.coral_distance(xs @ q, xt @ q) == pytest.approx(rd.coral_distance(xs, xt),
                                                                  abs=1e-9)

    def test_mean_shift_invariance(self, rng):
        xs, xt = rng.normal(size=(10, 3)), rng.normal(size=(12, 3))
        shifted = xs + rng.normal(size=(1, 3)) * 100
        assert rd.coral_distance(shifted, xt) == pytest.approx(rd.coral_distance(xs, xt), abs=1e-9)

    def test_brute_force_oracle(self, rng):
        for _ in range(100):
            d = int(rng.integers(1, 5))
            xs = rng.normal(size=(int(rng.integers(2, 8)), d))
            xt = rng.normal(scale=3, size=(int(rng.integers(2, 8)), d))
            assert rd.coral_distance(xs, xt) == pytest.approx(loop_coral(xs, xt), abs=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(matrices, matrices)
    def test_symmetric_and_non_negative(self, xs, xt):
        forward = rd.coral_distance(xs, xt)
        assert forward >= 0
        assert forward == pytest.approx(rd.coral_distance(xt, xs), abs=1e-12)

    def test_zero_only_for_equal_covariances(self, rng):
        x = rng.normal(size=(6, 2))
        assert rd.coral_distance(x, x * -1) == pytest.approx(0.0, abs=1e-12)
        assert rd.coral_distance(x, x * 2) > 0

    @pytest.mark.parametrize("rows", [0, 1])
    def test_degenerate_batch(self, rows):
        with pytest.raises(DegenerateBatchError):
            rd.coral_distance(np.ones((rows, 3)), np.ones((4, 3)))

    def test_column_mismatch(self):
        with pytest.raises(ValueError):
            rd.coral_distance(np.ones((3, 2)), np.ones((3, 4)))

    def test_tensor_input_keeps_graph(self, rng):
        xs = torch.tensor(rng.normal(size=(5, 3)), requires_grad=True)
        value = rd.coral_distance(xs, torch.tensor(rng.normal(size=(4, 3))))
        value.backward()
        assert xs.grad is not None and torch.isfinite(xs.grad).all()


def claim(i, text="the claim text"):
    return Claim(f"c{i}", text)


def doc(i, text="an evidence document"):
    return EvidenceDocument(f"d{i}", text)


class TestAugmentReverse:
    def test_single_pair(self):
        out = rd.augment_reverse([(claim(0, "a b"), doc(0, "x y"), SUPPORT)])
        assert [x.order for x in out] == [DIRECT, REVERSE]
        assert [x.label for x in out] == [SUPPORT, SUPPORT]
        assert out[0].text == f"a b {SEP} x y"
        assert out[1].text == f"x y {SEP} a b"

    def test_empty(self):
        assert rd.augment_reverse([]) == []

    def test_label_histogram_doubles(self, rng):
        labels = [BINARY[i] for i in rng.integers(0, 2, size=25)]
        out = rd.augment_reverse([(claim(i), doc(i), lbl) for i, lbl in enumerate(labels)])
        assert len(out) == 50
        doubled = {k: 2 * v for k, v in collections.Counter(labels).items()}
        assert collections.Counter(x.label for x in out) == doubled

    def test_applied_twice_gives_four_inputs(self):
        first = rd.augment_reverse([(claim(0, "a"), doc(0, "b"), REFUTE)])
        second = rd.augment_reverse([(x.text.split(f" {SEP} ")[0], x.text.split(f" {SEP} ")[1],
                                      x.label) for x in first])
        assert len(second) == 4
        assert [x.order for x in second] == [DIRECT, REVERSE, DIRECT, REVERSE]
        assert [x.text for x in second] == [f"a {SEP} b", f"b {SEP} a", f"b {SEP} a", f"a {SEP} b"]

    def test_segments_truncated_independently(self):
        out = rd.augment_reverse([(claim(0, "a b c"), doc(0, "x y z"))], claim_max_len=1,
                                 doc_max_len=2)
        assert out[0].text == f"a {SEP} x y"
        assert out[1].text == f"x y {SEP} a"
        assert out[0].label is None

    def test_unknown_order(self):
        with pytest.raises(ValueError):
            rd.join_segments("a", "b", order="sideways")


class TestPseudoPairs:
    @pytest.fixture
    def setting(self):
        claims = [claim(i, f"claim {i}") for i in range(10)]
        docs = [doc(i, f"doc {i}") for i in range(5)]
        rng = np.random.default_rng(0)
        table = {t: list(rng.normal(size=4))
                 for t in [c.text for c in claims] + [d.text for d in docs]}
        enc = FixedEncoder(table)
        return claims, docs, enc, build_index(docs, enc)

    def test_count(self, setting):
        claims, docs, enc, index = setting
        assert len(rd.build_target_pseudo_pairs(claims, enc, index, docs, 2)) == 20

    def test_top_one_matches_retrieve(self, setting):
        claims, docs, enc, index = setting
        pairs = rd.build_target_pseudo_pairs(claims, enc, index, docs, 1)
        for c, (paired_claim, paired_doc) in zip(claims, pairs):
            assert paired_claim == c
            assert paired_doc.id == retrieve(c, index, enc, 1)[0][0]

    def test_pairs_are_unlabeled(self, setting):
        claims, docs, enc, index = setting
        pairs = rd.build_target_pseudo_pairs(claims, enc, index, docs, 2)
        assert all(len(pair) == 2 for pair in pairs)
        assert all(x.label is None for x in rd.make_inputs(pairs))

    def test_empty_index(self, setting):
        claims, _, enc, _ = setting
        with pytest.raises(ConfigError):
            rd.build_target_pseudo_pairs(claims, enc, build_index([], enc), [], 2)

    def test_p_below_one(self, setting):
        claims, docs, enc, index = setting
        with pytest.raises(ConfigError) as info:
            rd.build_target_pseudo_pairs(claims, enc, index, docs, 0)
        assert info.value.field == "p"


@pytest.fixture
def tiny_reader(tiny_config):
    return Reader.create(tiny_config, BINARY, seed=0)


def labeled_inputs(n):
    return rd.augment_reverse([(claim(i, f"claim {i} about x{i % 3}"),
                                doc(i, f"doc words y{i % 5} z{i}"), BINARY[i % 2])
                               for i in range(n)])


def unlabeled_inputs(prefix, n, rng):
    return rd.augment_reverse([(claim(i, f"{prefix} {rng.integers(100)} q"),
                                doc(i, f"{prefix} w{rng.integers(100)} e{i}"))
                               for i in range(n)])


class TestReaderLoss:
    def ce(self, reader, labeled):
        logits = reader([x.text for x in labeled])
        targets = torch.tensor([reader.label_index(x.label) for x in labeled])
        return torch.nn.functional.cross_entropy(logits, targets).item()

    def test_zero_lambda_is_cross_entropy(self, tiny_reader, rng):
        lab = labeled_inputs(6)
        loss, terms = rd.reader_loss(tiny_reader, lab, unlabeled_inputs("s", 5, rng),
                                     unlabeled_inputs("t", 5, rng), 0.0, 0.0)
        assert loss.item() == pytest.approx(self.ce(tiny_reader, lab), abs=1e-12)
        assert terms["coral_direct"] == terms["coral_reverse"] == 0.0

    def test_identical_pools_give_cross_entropy(self, tiny_reader, rng):
        lab, pool = labeled_inputs(6), unlabeled_inputs("s", 5, rng)
        loss, _ = rd.reader_loss(tiny_reader, lab, pool, pool, 0.1, 0.1)
        assert loss.item() == pytest.approx(self.ce(tiny_reader, lab), abs=1e-12)

    def test_perfect_classifier(self):
        texts = ["pos", "neg"]
        enc = FixedEncoder({"pos": [1.0], "neg": [-1.0]})
        head = ClassifierHead(1, 2)
        with torch.no_grad():
            head.linear.weight.copy_(torch.tensor([[1e3], [-1e3]]))
            head.linear.bias.zero_()
        reader = Reader(enc, head, BINARY)
        lab = [rd.ReaderInput(t, label=lbl) for t, lbl in zip(texts, BINARY)]
        loss, _ = rd.reader_loss(reader, lab, (), (), 0.0, 0.0)
        assert loss.item() == 0.0

    def test_direct_and_reverse_terms(self, tiny_reader, rng):
        lab = labeled_inputs(4)
        src, tgt = unlabeled_inputs("s", 6, rng), unlabeled_inputs("t", 6, rng)
        _, terms = rd.reader_loss(tiny_reader, lab, src, tgt, 0.1, 0.1)
        for order, name in ((DIRECT, "coral_direct"), (REVERSE, "coral_reverse")):
            expected = rd.coral_distance(
                tiny_reader.features([x.text for x in src if x.order == order]),
                tiny_reader.features([x.text for x in tgt if x.order == order])).item()
            assert terms[name] == pytest.approx(expected, abs=1e-14)

    def test_monotone_in_lambda(self, tiny_reader, rng):
        lab = labeled_inputs(4)
        src, tgt = unlabeled_inputs("s", 6, rng), unlabeled_inputs("t", 6, rng)
        grid = [0.0, 0.01, 0.1, 1.0, 10.0]
        for fixed in grid:
            by_l1 = [rd.reader_loss(tiny_reader, lab, src, tgt, lam, fixed)[0].item() for lam in grid]
            by_l2 = [rd.reader_loss(tiny_reader, lab, src, tgt, fixed, lam)[0].item() for lam in grid]
            assert by_l1 == sorted(by_l1) and by_l2 == sorted(by_l2)

    def test_degenerate_alignment_batch_warns(self, tiny_reader, rng, caplog):
        lab = labeled_inputs(4)
        warnings = []
        with caplog.at_level(logging.WARNING):
            loss, terms = rd.reader_loss(tiny_reader, lab, unlabeled_inputs("s", 1, rng),
                                         unlabeled_inputs("t", 5, rng), 0.1, 0.1, warnings)
        assert len(warnings) == 2 and "skipped" in caplog.text
        assert loss.item() == pytest.approx(self.ce(tiny_reader, lab), abs=1e-12)

    def test_needs_labels(self, tiny_reader, rng):
        with pytest.raises(TrainingError):
            rd.reader_loss(tiny_reader, [])
        with pytest.raises(TrainingError):
            rd.reader_loss(tiny_reader, unlabeled_inputs("s", 2, rng))


class TestTrainReader:
    def test_cross_entropy_decreases(self, tiny_pair, tiny_config):
        source, _ = tiny_pair
        trained = rd.train_reader(source, [], Reader.create(tiny_config, BINARY), tiny_config,
                                  epochs=30)
        ce = trained.history["ce"]
        assert len(ce) == 30 and ce[-1] < ce[0]

    def test_alignment_terms_recorded(self, tiny_pair, tiny_config):
        source, target = tiny_pair
        pairs = [(c, target.documents[i % len(target.documents)])
                 for i, c in enumerate(target.claims_in("train"))]
        trained = rd.train_reader(source, pairs, Reader.create(tiny_config, BINARY), tiny_config)
        assert all(v > 0 for v in trained.history["coral_direct"])
        assert all(v > 0 for v in trained.history["coral_reverse"])

    def test_no_reverse_drops_second_term(self, tiny_pair, tiny_config):
        source, target = tiny_pair
        pairs = [(c, target.documents[0]) for c in target.claims_in("train")]
        cfg = tiny_config.replace(no_reverse=True)
        trained = rd.train_reader(source, pairs, Reader.create(cfg, BINARY), cfg)
        assert trained.history["coral_reverse"] == [0.0] * cfg.reader_epochs

    def test_no_labeled_data(self, tiny_config):
        empty = DomainCorpus("Empty", unlabeled_claims=[claim(0)], split={"c0": "train"})
        with pytest.raises(TrainingError, match="Empty"):
            rd.train_reader(empty, [], Reader.create(tiny_config, BINARY), tiny_config)

    def test_deterministic(self, tiny_pair, tiny_config):
        source, target = tiny_pair
        pairs = [(c, target.documents[0]) for c in target.claims_in("train")]
        a, b = (rd.train_reader(source, pairs, Reader.create(tiny_config, BINARY), tiny_config)
                for _ in range(2))
        assert a.to_blob() == b.to_blob()
        assert a.history == b.history


class TestPredict:
    def test_distribution(self, tiny_reader, rng):
        for i in range(20):
            probs = rd.predict_pair(tiny_reader, claim(i, f"w{rng.integers(50)} claim"),
                                    doc(i, f"v{rng.integers(50)} doc"))
            assert probs.shape == (2,)
            assert probs.sum() == pytest.approx(1.0, abs=1e-6)
            assert (probs >= 0).all()

    def test_deterministic(self, tiny_reader):
        a = rd.predict_pair(tiny_reader, claim(0), doc(0))
        assert np.array_equal(a, rd.predict_pair(tiny_reader, claim(0), doc(0)))

    def test_binary_label_set(self, tiny_reader):
        assert tiny_reader.label_set == (SUPPORT, REFUTE)

    def test_ternary_label_set(self, tiny_config):
        reader = Reader.create(tiny_config, TERNARY)
        assert rd.predict_pair(reader, claim(0), doc(0)).shape == (3,)

    def test_dual_order_averages_orders(self, tiny_reader):
        c, d = claim(0, "a b"), doc(0, "c d")
        direct = tiny_reader.predict_texts([f"a b {SEP} c d"])[0]
        reverse = tiny_reader.predict_texts([f"c d {SEP} a b"])[0]
        np.testing.assert_allclose(rd.predict_pair(tiny_reader, c, d, dual_order=True),
                                   (direct + reverse) / 2, atol=1e-15)
        np.testing.assert_array_equal(rd.predict_pair(tiny_reader, c, d), direct)

    def test_empty_batch(self, tiny_reader):
        assert rd.predict_pairs(tiny_reader, []).shape == (0, 2)


class TestReaderCheckpoint:
    def test_blob_round_trip(self, tiny_reader):
        loaded = Reader.from_blob(tiny_reader.to_blob())
        assert loaded.to_blob() == tiny_reader.to_blob()
        assert loaded.label_set == tiny_reader.label_set
        assert np.array_equal(rd.predict_pair(loaded, claim(0), doc(0)),
                              rd.predict_pair(tiny_reader, claim(0), doc(0)))

    def test_hash_changes_with_parameters(self, tiny_reader):
        before = tiny_reader.checkpoint_hash()
        with torch.no_grad():
            tiny_reader.head.linear.bias.add_(1.0)
        assert tiny_reader.checkpoint_hash() != before

    def test_head_must_match(self, tiny_reader):
        with pytest.raises(ValueError):
            Reader(tiny_reader.encoder, ClassifierHead(tiny_reader.encoder.output_dim, 3), BINARY)
