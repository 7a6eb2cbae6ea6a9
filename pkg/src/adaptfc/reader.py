"""Veracity reader over claim/evidence pairs with correlation alignment.

The reader encodes ``claim [sep] document`` with a segment-aware encoder and
classifies the result. Training adds, on top of cross-entropy, the CORAL
distance between source and target encoder outputs, separately for the
direct order and for the reversed ``document [sep] claim`` order.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import encoders, serialization
from .data import VeracityLabel
from .encoders import DTYPE, SEP, ClassifierHead, HashingEncoder, tokenize
from .errors import CheckpointError, ConfigError, DegenerateBatchError, TrainingError

log = logging.getLogger(__name__)

DIRECT = "direct"
REVERSE = "reverse"
SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True)
class ReaderInput:
    text: str
    order: str = DIRECT
    origin: str = SOURCE
    label: VeracityLabel = None


def _text(item):
    return item if isinstance(item, str) else item.text


def join_segments(claim, doc, order=DIRECT, claim_max_len=50, doc_max_len=200):
    """Truncate each segment to its cap, then join around the separator."""
    c = " ".join(tokenize(_text(claim))[:claim_max_len])
    d = " ".join(tokenize(_text(doc))[:doc_max_len])
    if order == DIRECT:
        return f"{c} {SEP} {d}"
    if order == REVERSE:
        return f"{d} {SEP} {c}"
    raise ValueError(f"unknown order {order!r}")


def make_inputs(pairs, orders=(DIRECT,), origin=SOURCE, claim_max_len=50, doc_max_len=200):
    """``pairs`` holds ``(claim, doc)`` or ``(claim, doc, label)`` tuples."""
    out = []
    for pair in pairs:
        claim, doc = pair[0], pair[1]
        label = pair[2] if len(pair) > 2 else None
        for order in orders:
            out.append(ReaderInput(join_segments(claim, doc, order, claim_max_len, doc_max_len),
                                   order, origin, label))
    return out


def augment_reverse(pairs, origin=SOURCE, claim_max_len=50, doc_max_len=200):
    """Each pair yields its direct input followed by its reversed input."""
    return make_inputs(pairs, (DIRECT, REVERSE), origin, claim_max_len, doc_max_len)


class Reader(nn.Module):
    """Segment-aware text encoder ``f_r`` followed by a linear classifier ``theta``."""

    kind = "reader"

    def __init__(self, encoder, head, label_set, claim_max_len=50, doc_max_len=200):
        super().__init__()
        if head.input_dim != encoder.output_dim:
            raise ValueError("head input_dim must equal encoder output_dim")
        if head.num_classes != len(label_set):
            raise ValueError("head size must match the label set")
        self.encoder = encoder
        self.head = head
        self.label_set = tuple(VeracityLabel.parse(lbl) for lbl in label_set)
        self.claim_max_len = int(claim_max_len)
        self.doc_max_len = int(doc_max_len)
        self.history = {}

    @classmethod
    def create(cls, cfg, label_set, seed=None):
        seed = cfg.seed if seed is None else seed
        enc = HashingEncoder(output_dim=cfg.reader_dim, num_buckets=cfg.num_buckets,
                             embed_dim=cfg.embed_dim, hidden_dim=cfg.hidden_dim,
                             max_seq_len=cfg.reader_max_len,
                             segment_aware=cfg.reader_segment_aware, seed=seed)
        head = ClassifierHead(cfg.reader_dim, len(label_set), seed=seed + 1)
        return cls(enc, head, label_set, cfg.claim_max_len, cfg.doc_max_len)

    def features(self, texts):
        return self.encoder(list(texts))

    def forward(self, texts):
        return self.head(self.features(texts))

    def label_index(self, label):
        return self.label_set.index(VeracityLabel.parse(label))

    def pair_text(self, claim, doc, order=DIRECT):
        return join_segments(claim, doc, order, self.claim_max_len, self.doc_max_len)

    def predict_texts(self, texts):
        """Class distributions (numpy, rows sum to 1) for already-joined inputs."""
        texts = list(texts)
        if not texts:
            return np.zeros((0, len(self.label_set)))
        with torch.no_grad():
            return torch.softmax(self(texts), dim=-1).numpy()

    def to_blob(self):
        hp = {"encoder": {"kind": self.encoder.kind, "hp": self.encoder.hyperparams()},
              "head": {"kind": self.head.kind, "hp": self.head.hyperparams()},
              "label_set": [lbl.value for lbl in self.label_set],
              "claim_max_len": self.claim_max_len, "doc_max_len": self.doc_max_len}
        tensors = encoders.module_tensors(self.encoder, "encoder.")
        tensors.update(encoders.module_tensors(self.head, "head."))
        return serialization.pack(self.kind, hp, tensors)

    @classmethod
    def from_blob(cls, blob):
        kind, hp, tensors = serialization.unpack(blob)
        if kind != cls.kind:
            raise CheckpointError(f"expected {cls.kind} checkpoint, got {kind}")
        enc = encoders.build_module(hp["encoder"]["kind"], hp["encoder"]["hp"])
        head = encoders.build_module(hp["head"]["kind"], hp["head"]["hp"])
        encoders.load_tensors(enc, tensors, "encoder.")
        encoders.load_tensors(head, tensors, "head.")
        return cls(enc, head, hp["label_set"], hp["claim_max_len"], hp["doc_max_len"])

    def checkpoint_hash(self):
        return serialization.content_hash(self.to_blob())


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------

def covariance(x):
    """Mean-centered sample covariance with ``n - 1`` normalization."""
    if x.shape[0] < 2:
        raise DegenerateBatchError(f"covariance needs at least 2 rows, got {x.shape[0]}")
    centered = x - x.mean(dim=0, keepdim=True)
    return centered.T @ centered / (x.shape[0] - 1)


def coral_distance(xs, xt):
    """``||C_s - C_t||_F^2 / (4 d^2)``; returns a float for numpy input, a tensor otherwise."""
    as_numpy = not (torch.is_tensor(xs) or torch.is_tensor(xt))
    xs = torch.as_tensor(xs, dtype=DTYPE)
    xt = torch.as_tensor(xt, dtype=DTYPE)
    if xs.ndim != 2 or xt.ndim != 2 or xs.shape[1] != xt.shape[1]:
        raise ValueError(f"incompatible shapes {tuple(xs.shape)} and {tuple(xt.shape)}")
    d = xs.shape[1]
    value = ((covariance(xs) - covariance(xt)) ** 2).sum() / (4.0 * d * d)
    return float(value) if as_numpy else value


# ---------------------------------------------------------------------------
# Pseudo pairs, loss and training
# ---------------------------------------------------------------------------

def build_target_pseudo_pairs(claims, claim_encoder, index, documents, p):
    """Pair every target claim with each of its top-``p`` retrieved documents."""
    from .retriever import retrieve_many

    if p < 1:
        raise ConfigError("p must be >= 1", field="p")
    if len(index) == 0:
        raise ConfigError("cannot build pseudo pairs from an empty index")
    by_id = documents if isinstance(documents, dict) else {d.id: d for d in documents}
    claims = list(claims)
    pairs = []
    for claim, hits in zip(claims, retrieve_many(claims, index, claim_encoder, p)):
        pairs.extend((claim, by_id[doc_id]) for doc_id, _ in hits)
    return pairs


def _split_orders(inputs):
    return ([x.text for x in inputs if x.order == DIRECT],
            [x.text for x in inputs if x.order == REVERSE])


def reader_loss(reader, labeled, unlabeled_src=(), unlabeled_tgt=(), lambda1=0.1, lambda2=0.1,
                warnings=None):
    """Mean cross-entropy plus per-order CORAL terms.

    Alignment terms whose batches have fewer than two rows on either side are
    skipped; a message is logged and appended to ``warnings`` when given.
    Returns ``(loss, terms)`` where ``terms`` holds the float components.
    """
    labeled = list(labeled)
    if not labeled:
        raise TrainingError("reader loss needs at least one labeled input")
    if any(x.label is None for x in labeled):
        raise TrainingError("labeled reader inputs must carry a label")
    logits = reader([x.text for x in labeled])
    targets = torch.tensor([reader.label_index(x.label) for x in labeled], dtype=torch.long)
    ce = nn.functional.cross_entropy(logits, targets)
    loss = ce
    terms = {"ce": ce.item(), "coral_direct": 0.0, "coral_reverse": 0.0}
    src, tgt = _split_orders(unlabeled_src), _split_orders(unlabeled_tgt)
    for name, weight, xs, xt in (("coral_direct", lambda1, src[0], tgt[0]),
                                 ("coral_reverse", lambda2, src[1], tgt[1])):
        if weight == 0:
            continue
        if len(xs) < 2 or len(xt) < 2:
            message = f"{name} skipped: alignment batch sizes {len(xs)}/{len(xt)} < 2"
            log.warning(message)
            if warnings is not None:
                warnings.append(message)
            continue
        value = coral_distance(reader.features(xs), reader.features(xt))
        loss = loss + weight * value
        terms[name] = value.item()
    return loss, terms


def source_reader_pairs(corpus, part="train"):
    """One labeled ``(claim, doc, label)`` example per claim/evidence pair."""
    docs = corpus.documents_by_id
    return [(lc.claim, docs[doc_id], lc.label)
            for lc in corpus.labeled(part) for doc_id in lc.evidence_ids]


def train_reader(source, target_pairs, init, cfg, epochs=None, seed=None):
    """Minimize :func:`reader_loss` with Adam; mutates and returns ``init``."""
    epochs = cfg.reader_epochs if epochs is None else epochs
    seed = cfg.seed if seed is None else seed
    labeled = source_reader_pairs(source)
    if not labeled:
        raise TrainingError(f"corpus {source.name!r} has no labeled training pairs")
    target_pairs = list(target_pairs)
    lambda1, lambda2 = cfg.align_weights
    align = (lambda1 > 0 or lambda2 > 0) and bool(target_pairs)
    orders = (DIRECT, REVERSE) if cfg.use_reverse else (DIRECT,)
    if not cfg.use_reverse:
        lambda2 = 0.0

    rng = np.random.default_rng(seed)
    # alignment sampling has its own stream so batch order does not depend on lambda
    align_rng = np.random.default_rng([seed, 1])
    torch.manual_seed(seed)
    align_pool = labeled
    if cfg.disjoint_alignment_pool:
        perm = rng.permutation(len(labeled))
        align_pool = [labeled[i] for i in perm[1::2]]
        labeled = [labeled[i] for i in perm[0::2]]
    mk = dict(claim_max_len=cfg.claim_max_len, doc_max_len=cfg.doc_max_len)

    opt = torch.optim.Adam(init.parameters(), lr=cfg.reader_lr)
    history = {"loss": [], "ce": [], "coral_direct": [], "coral_reverse": [], "warnings": []}
    size = cfg.reader_batch_size
    init.train()
    for _ in range(epochs):
        order = rng.permutation(len(labeled))
        sums = {key: 0.0 for key in ("loss", "ce", "coral_direct", "coral_reverse")}
        batches = [order[i:i + size] for i in range(0, len(order), size)]
        for idx in batches:
            batch = make_inputs([labeled[i] for i in idx], orders, SOURCE, **mk)
            xs = xt = ()
            if align:
                n = len(idx)
                src_idx = idx if align_pool is labeled else align_rng.choice(len(align_pool), n)
                tgt_idx = align_rng.choice(len(target_pairs), n, replace=len(target_pairs) < n)
                xs = make_inputs([align_pool[i][:2] for i in src_idx], orders, SOURCE, **mk)
                xt = make_inputs([target_pairs[i] for i in tgt_idx], orders, TARGET, **mk)
            loss, terms = reader_loss(init, batch, xs, xt, lambda1, lambda2, history["warnings"])
            if not torch.isfinite(loss):
                raise TrainingError("reader loss became non-finite")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["loss"] += loss.item() / len(batches)
            for key, value in terms.items():
                sums[key] += value / len(batches)
        for key, value in sums.items():
            history[key].append(value)
    init.eval()
    init.history = history
    return init


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def predict_pairs(reader, pairs, dual_order=False):
    """Distributions for ``(claim, doc)`` pairs; ``dual_order`` averages both orders."""
    pairs = list(pairs)
    direct = reader.predict_texts([reader.pair_text(c, d, DIRECT) for c, d in pairs])
    if not dual_order:
        return direct
    reverse = reader.predict_texts([reader.pair_text(c, d, REVERSE) for c, d in pairs])
    return (direct + reverse) / 2.0


def predict_pair(reader, claim, doc, dual_order=False):
    return predict_pairs(reader, [(claim, doc)], dual_order)[0]
