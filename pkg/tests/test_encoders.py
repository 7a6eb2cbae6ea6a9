import struct

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptfc import encoders, serialization
from adaptfc.encoders import (DTYPE, ClassifierHead, Discriminator, HashingEncoder,
                              clone_parameters, tokenize)
from adaptfc.errors import CheckpointError

words = st.text(alphabet="abcdefgh", min_size=1, max_size=6)
texts = st.lists(words, min_size=1, max_size=30).map(" ".join)


@pytest.fixture
def encoder():
    return HashingEncoder(output_dim=16, seed=3)


class TestHashingEncoder:
    def test_shape_and_finite(self, encoder):
        out = encoder.encode(["a claim about things", "another"])
        assert out.shape == (2, 16)
        assert torch.isfinite(out).all()

    def test_deterministic(self, encoder):
        assert torch.equal(encoder.encode("same text"), encoder.encode("same text"))

    def test_truncation_contract(self):
        enc = HashingEncoder(max_seq_len=200, seed=0)
        tokens = [f"w{i}" for i in range(500)]
        assert torch.equal(enc.encode(" ".join(tokens)), enc.encode(" ".join(tokens[:200])))

    def test_trailing_padding_invariance(self, encoder):
        assert torch.equal(encoder.encode("x y z"), encoder.encode("x y z [pad] [pad] [PAD]"))

    def test_lowercase_whitespace_tokens(self):
        assert tokenize("The  CAT\tsat [pad]") == ["the", "cat", "sat"]

    def test_empty_text_rejected(self, encoder):
        with pytest.raises(ValueError):
            encoder.encode("   ")

    def test_empty_batch(self, encoder):
        assert encoder.encode([]).shape == (0, 16)

    def test_linear_variant_has_no_hidden_layer(self):
        enc = HashingEncoder(hidden_dim=0, embed_dim=12, output_dim=5)
        assert not hasattr(enc, "hidden")
        assert enc.out.weight.shape == (5, 12)

    def test_segment_features(self):
        enc = HashingEncoder(segment_aware=True, seed=0)
        direct, reverse = enc.featurize("a b [sep] c"), enc.featurize("c [sep] a b")
        assert sorted(direct) != sorted(reverse)
        # plain token features are shared by both orders
        plain = HashingEncoder(segment_aware=False, seed=0)
        assert set(plain.featurize("a b c")) <= set(direct) & set(reverse)

    def test_seed_controls_init(self):
        a, b, c = (HashingEncoder(seed=s).encode("text") for s in (1, 1, 2))
        assert torch.equal(a, b) and not torch.equal(a, c)

    @settings(max_examples=30, deadline=None)
    @given(texts)
    def test_any_text_gives_finite_vector(self, text):
        out = HashingEncoder(output_dim=16, seed=0).encode(text)
        assert out.shape == (1, 16) and torch.isfinite(out).all()


    def test_gradient_matches_central_differences(self):
        enc = HashingEncoder(output_dim=6, num_buckets=64, embed_dim=8, hidden_dim=8, seed=1)
        weights = torch.from_numpy(np.random.default_rng(1).normal(size=(3, 6)))
        batch = ["alpha beta gamma", "beta delta", "epsilon alpha zeta eta"]

        def loss():
            return (torch.tanh(enc(batch)) * weights).sum()

        loss().backward()
        agree = total = 0
        step = 1e-4
        for p in enc.parameters():
            flat, grad = p.data.view(-1), p.grad.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                with torch.no_grad():
                    flat[i] = orig + step
                    up = loss().item()
                    flat[i] = orig - step
                    down = loss().item()
                    flat[i] = orig
                numeric, analytic = (up - down) / (2 * step), grad[i].item()
                total += 1
                agree += abs(numeric - analytic) <= max(
                    1e-3 * max(abs(numeric), abs(analytic)), 1e-9)
        assert agree / total >= 0.95


class TestCloneParameters:
    def test_clone_equal(self, encoder):
        assert torch.equal(clone_parameters(encoder).encode("x"), encoder.encode("x"))

    def test_perturbing_copy_leaves_source(self, encoder):
        before = encoder.encode("x y")
        copy = clone_parameters(encoder)
        with torch.no_grad():
            for p in copy.parameters():
                p.add_(1.0)
        assert torch.equal(encoder.encode("x y"), before)
        assert not torch.equal(copy.encode("x y"), before)

    def test_clone_of_clone(self, encoder):
        twice = clone_parameters(clone_parameters(encoder))
        assert encoders.checkpoint_hash(twice) == encoders.checkpoint_hash(encoder)


class TestHeads:
    def test_classifier_distribution(self):
        head = ClassifierHead(input_dim=16, num_classes=3, seed=0)
        x = torch.from_numpy(np.random.default_rng(0).normal(scale=5, size=(1000, 16)))
        probs = head.probs(x)
        assert (probs >= 0).all()
        assert torch.allclose(probs.sum(dim=1), torch.ones(1000, dtype=DTYPE), atol=1e-6)

    @pytest.mark.parametrize("classes", [1, 4])
    def test_classifier_sizes(self, classes):
        with pytest.raises(ValueError):
            ClassifierHead(num_classes=classes)

    @pytest.mark.parametrize("scale", [1.0, 1e3, 1e8])
    def test_discriminator_open_interval(self, scale):
        g = Discriminator(input_dim=8, hidden_dim=16, seed=0)
        x = torch.from_numpy(np.random.default_rng(1).normal(scale=scale, size=(200, 8)))
        out = g(x)
        assert ((out > 0) & (out < 1)).all()


class TestCheckpoints:
    @pytest.mark.parametrize("module", [
        HashingEncoder(seed=5),
        HashingEncoder(hidden_dim=0, segment_aware=True, seed=2),
        ClassifierHead(16, 3, seed=1),
        Discriminator(16, 8, seed=4),
    ], ids=["encoder", "linear-encoder", "head", "discriminator"])
    def test_round_trip_bit_exact(self, module, tmp_path):
        encoders.save(module, tmp_path / "m.bin")
        loaded = encoders.load(tmp_path / "m.bin")
        assert type(loaded) is type(module)
        assert encoders.to_blob(loaded) == encoders.to_blob(module)
        for (name, a), (_, b) in zip(module.state_dict().items(), loaded.state_dict().items()):
            assert torch.equal(a, b), name

    def test_same_content_same_bytes(self):
        assert encoders.to_blob(HashingEncoder(seed=1)) == encoders.to_blob(HashingEncoder(seed=1))

    def test_bad_magic(self):
        with pytest.raises(CheckpointError, match="magic"):
            serialization.unpack(b"XXXX" + bytes(20))

    def test_wrong_version(self):
        blob = encoders.to_blob(ClassifierHead())
        bumped = blob[:4] + struct.pack("<I", 99) + blob[8:]
        with pytest.raises(CheckpointError, match="version"):
            serialization.unpack(bumped)

    def test_truncated_payload(self):
        with pytest.raises(CheckpointError):
            serialization.unpack(encoders.to_blob(ClassifierHead())[:-3])

    def test_unknown_kind(self):
        blob = serialization.pack("mystery", {}, {})
        with pytest.raises(CheckpointError, match="mystery"):
            encoders.from_blob(blob)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            encoders.load(tmp_path / "absent.bin")

    def test_pack_unpack_dtypes(self):
        tensors = {"a": np.arange(6, dtype=np.int64).reshape(2, 3),
                   "b": np.linspace(0, 1, 4, dtype=np.float32)}
        kind, hp, out = serialization.unpack(serialization.pack("k", {"x": 1}, tensors))
        assert kind == "k" and hp == {"x": 1}
        for name in tensors:
            assert out[name].dtype == tensors[name].dtype
            np.testing.assert_array_equal(out[name], tensors[name])
