"""Trainable text encoders, classifier heads and domain discriminators.

Everything downstream talks to a :class:`TextEncoder`: a module mapping a list
of strings to a ``(n, output_dim)`` float64 tensor. The desk-scale
implementation, :class:`HashingEncoder`, hashes lowercase whitespace tokens
into buckets, averages a trainable embedding table over them and applies an
optional tanh hidden layer before the output projection. A pretrained-transformer adapter only has to subclass
:class:`TextEncoder`, implement ``forward`` and ``hyperparams`` and register a
``kind`` in :data:`REGISTRY`.
"""

import copy
import functools
import zlib

import numpy as np
import torch
from torch import nn

from . import serialization
from .errors import CheckpointError

DTYPE = torch.float64
PAD = "[pad]"
SEP = "[sep]"
PROB_EPS = 1e-7


def tokenize(text):
    """Lowercase whitespace tokenization with padding tokens removed."""
    return [tok for tok in text.lower().split() if tok != PAD]


@functools.lru_cache(maxsize=200_000)
def _featurize(text, num_buckets, max_seq_len, segment_aware):
    tokens = tokenize(text)[:max_seq_len]
    ids = []
    segment = 0
    for tok in tokens:
        if tok == SEP:
            segment += 1
        ids.append(zlib.crc32(tok.encode("utf-8")) % num_buckets)
        if segment_aware and tok != SEP:
            ids.append(zlib.crc32(f"{segment}|{tok}".encode("utf-8")) % num_buckets)
    return tuple(ids)


def _generator(seed):
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def _init_linear(layer, gen):
    bound = 1.0 / np.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=gen)
        layer.bias.uniform_(-bound, bound, generator=gen)


class ScaledLinear(nn.Module):
    """Affine map with unit-scale weights rescaled by ``1/sqrt(in_features)`` at call time.

    Keeping every parameter at unit scale gives Adam's per-coordinate steps the
    same relative size on the projection as on the embedding table.
    """

    def __init__(self, in_features, out_features, gen):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.weight = nn.Parameter(torch.empty(self.out_features, self.in_features, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(self.out_features, dtype=DTYPE))
        with torch.no_grad():
            self.weight.normal_(0.0, 1.0, generator=gen)
        self.scale = self.in_features ** -0.5

    def forward(self, x):
        return x @ (self.weight * self.scale).T + self.bias


class TextEncoder(nn.Module):
    """Interface: ``forward(list[str]) -> Tensor[n, output_dim]``."""

    kind = "abstract"
    output_dim: int
    max_seq_len: int

    def hyperparams(self):
        raise NotImplementedError

    def encode(self, texts):
        """Encode without tracking gradients (evaluation use)."""
        if isinstance(texts, str):
            texts = [texts]
        with torch.no_grad():
            return self(list(texts))


class HashingEncoder(TextEncoder):
    """Feature-hashing bag-of-words encoder with an optional tanh hidden layer.

    With ``segment_aware`` set, every token also contributes a second feature
    hashed together with its segment index (segments are delimited by
    ``[sep]``). ``a [sep] b`` and ``b [sep] a`` then share their plain token
    features but differ in the segment-tagged ones, much like shared token
    embeddings plus segment embeddings in a transformer reader.
    """

    kind = "hashing-bow"

    def __init__(self, output_dim=16, num_buckets=2048, embed_dim=64, hidden_dim=64,
                 max_seq_len=200, segment_aware=False, seed=0):
        super().__init__()
        self.output_dim = int(output_dim)
        self.num_buckets = int(num_buckets)
        self.embed_dim = int(embed_dim)
        self.hidden_dim = int(hidden_dim)
        self.max_seq_len = int(max_seq_len)
        self.segment_aware = bool(segment_aware)
        self.seed = int(seed)
        self.embedding = nn.EmbeddingBag(self.num_buckets, self.embed_dim, mode="mean", dtype=DTYPE)
        # hidden_dim == 0 drops the tanh layer: a bilinear bag-of-words scorer
        gen = _generator(seed)
        with torch.no_grad():
            self.embedding.weight.normal_(0.0, 1.0, generator=gen)
        if self.hidden_dim:
            self.hidden = ScaledLinear(self.embed_dim, self.hidden_dim, gen)
        self.out = ScaledLinear(self.hidden_dim or self.embed_dim, self.output_dim, gen)

    def hyperparams(self):
        return {
            "output_dim": self.output_dim,
            "num_buckets": self.num_buckets,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "max_seq_len": self.max_seq_len,
            "segment_aware": self.segment_aware,
            "seed": self.seed,
        }

    def featurize(self, text):
        return _featurize(text, self.num_buckets, self.max_seq_len, self.segment_aware)

    def forward(self, texts):
        flat = []
        offsets = []
        for text in texts:
            ids = self.featurize(text)
            if not ids:
                raise ValueError(f"cannot encode empty text: {text!r}")
            offsets.append(len(flat))
            flat.extend(ids)
        if not texts:
            return torch.zeros((0, self.output_dim), dtype=DTYPE)
        pooled = self.embedding(torch.tensor(flat, dtype=torch.long),
                                torch.tensor(offsets, dtype=torch.long))
        if self.hidden_dim:
            pooled = torch.tanh(self.hidden(pooled))
        return self.out(pooled)


class ClassifierHead(nn.Module):
    """Linear layer over encoder output; ``forward`` returns logits."""

    kind = "classifier-head"

    def __init__(self, input_dim=16, num_classes=2, seed=0):
        super().__init__()
        if num_classes not in (2, 3):
            raise ValueError(f"num_classes must be 2 or 3, got {num_classes}")
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.seed = int(seed)
        self.linear = nn.Linear(self.input_dim, self.num_classes, dtype=DTYPE)
        _init_linear(self.linear, _generator(seed))

    def hyperparams(self):
        return {"input_dim": self.input_dim, "num_classes": self.num_classes, "seed": self.seed}

    def forward(self, vecs):
        return self.linear(vecs)

    def probs(self, vecs):
        return torch.softmax(self(vecs), dim=-1)


class Discriminator(nn.Module):
    """Two-layer perceptron scoring P(vector came from the source domain)."""

    kind = "discriminator"

    def __init__(self, input_dim=16, hidden_dim=128, seed=0):
        super().__init__()
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.seed = int(seed)
        self.hidden = nn.Linear(self.input_dim, self.hidden_dim, dtype=DTYPE)
        self.out = nn.Linear(self.hidden_dim, 1, dtype=DTYPE)
        gen = _generator(seed)
        _init_linear(self.hidden, gen)
        _init_linear(self.out, gen)

    def hyperparams(self):
        return {"input_dim": self.input_dim, "hidden_dim": self.hidden_dim, "seed": self.seed}

    def forward(self, vecs):
        logits = self.out(torch.tanh(self.hidden(vecs))).squeeze(-1)
        return torch.sigmoid(logits).clamp(PROB_EPS, 1.0 - PROB_EPS)


REGISTRY = {cls.kind: cls for cls in (HashingEncoder, ClassifierHead, Discriminator)}


def clone_parameters(module):
    """Deep copy with independent parameter storage."""
    return copy.deepcopy(module)


def module_tensors(module, prefix=""):
    return {prefix + name: t.detach().cpu().numpy() for name, t in module.state_dict().items()}


def load_tensors(module, tensors, prefix=""):
    state = {name[len(prefix):]: torch.from_numpy(np.array(arr))
             for name, arr in tensors.items() if name.startswith(prefix)}
    module.load_state_dict(state, strict=True)
    return module


def build_module(kind, hyperparams):
    try:
        cls = REGISTRY[kind]
    except KeyError:
        raise CheckpointError(f"unknown module kind {kind!r}") from None
    return cls(**hyperparams)


def to_blob(module):
    return serialization.pack(module.kind, module.hyperparams(), module_tensors(module))


def from_blob(blob):
    kind, hyperparams, tensors = serialization.unpack(blob)
    return load_tensors(build_module(kind, hyperparams), tensors)


def checkpoint_hash(module):
    return serialization.content_hash(to_blob(module))


def save(module, path):
    serialization.write_blob(path, to_blob(module))


def load(path):
    return from_blob(serialization.read_blob(path))
