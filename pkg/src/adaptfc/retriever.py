"""Bi-encoder evidence retrieval with adversarial target-domain adaptation.

Source training minimizes the softmax negative log-likelihood of each claim's
positive document against negatives (in-batch by default). Adaptation freezes
the source encoders, clones them into target encoders and trains each clone
against its own discriminator so that target-domain vectors become
indistinguishable from source-domain vectors.
"""

import logging
import re
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import encoders, serialization
from .encoders import DTYPE, Discriminator, HashingEncoder, clone_parameters
from .errors import ConfigError, GenerationError, TrainingError

log = logging.getLogger(__name__)

ENCODE_CHUNK = 512


class BiEncoder(nn.Module):
    kind = "bi-encoder"

    def __init__(self, claim_encoder, doc_encoder):
        super().__init__()
        if claim_encoder.output_dim != doc_encoder.output_dim:
            raise ValueError("claim and document encoders must share output_dim")
        self.claim_encoder = claim_encoder
        self.doc_encoder = doc_encoder
        self.history = {}

    @classmethod
    def create(cls, cfg, seed=None):
        """Desk bi-encoder; both towers start from the same initialization."""
        seed = cfg.seed if seed is None else seed
        common = dict(output_dim=cfg.output_dim, num_buckets=cfg.num_buckets,
                      embed_dim=cfg.embed_dim, hidden_dim=cfg.hidden_dim, seed=seed)
        return cls(HashingEncoder(max_seq_len=cfg.claim_max_len, **common),
                   HashingEncoder(max_seq_len=cfg.doc_max_len, **common))

    @property
    def output_dim(self):
        return self.claim_encoder.output_dim

    def encode_claims(self, texts):
        return _encode_chunked(self.claim_encoder, texts)

    def encode_docs(self, texts):
        return _encode_chunked(self.doc_encoder, texts)

    def to_blob(self):
        hp = {"claim": {"kind": self.claim_encoder.kind, "hp": self.claim_encoder.hyperparams()},
              "doc": {"kind": self.doc_encoder.kind, "hp": self.doc_encoder.hyperparams()}}
        tensors = encoders.module_tensors(self.claim_encoder, "claim.")
        tensors.update(encoders.module_tensors(self.doc_encoder, "doc."))
        return serialization.pack(self.kind, hp, tensors)

    @classmethod
    def from_blob(cls, blob):
        kind, hp, tensors = serialization.unpack(blob)
        if kind != cls.kind:
            raise serialization.CheckpointError(f"expected {cls.kind} checkpoint, got {kind}")
        claim = encoders.build_module(hp["claim"]["kind"], hp["claim"]["hp"])
        doc = encoders.build_module(hp["doc"]["kind"], hp["doc"]["hp"])
        encoders.load_tensors(claim, tensors, "claim.")
        encoders.load_tensors(doc, tensors, "doc.")
        return cls(claim, doc)

    def checkpoint_hash(self):
        return serialization.content_hash(self.to_blob())


def _encode_chunked(encoder, texts):
    texts = list(texts)
    with torch.no_grad():
        parts = [encoder(texts[i:i + ENCODE_CHUNK]) for i in range(0, len(texts), ENCODE_CHUNK)]
    if not parts:
        return np.zeros((0, encoder.output_dim))
    return torch.cat(parts).numpy()


def similarity(bi, claim, doc):
    """Dot product of the claim and document encodings."""
    with torch.no_grad():
        c = bi.claim_encoder([claim.text])[0]
        d = bi.doc_encoder([doc.text])[0]
    return float(torch.dot(c, d))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def nll_from_scores(pos_scores, neg_scores):
    """Sum over claims of -log softmax(positive) among positive + negatives.

    ``neg_scores`` is ``(n, r)``; entries equal to ``-inf`` are ignored.
    """
    logits = torch.cat([pos_scores.unsqueeze(1), neg_scores], dim=1)
    return -(pos_scores - torch.logsumexp(logits, dim=1)).sum()


def contrastive_loss(bi, claims, positives, negatives=None, positive_ids=None, relevant=None):
    """Contrastive loss for a batch of ``(claim text, positive doc text)`` pairs.

    Without ``negatives`` every other in-batch positive is a negative
    (``r = batch_size - 1``); ``positive_ids``/``relevant`` mask out in-batch
    documents that are actually relevant to the claim. ``negatives`` is a list
    of per-claim lists of document texts for sampled-negative mode.
    """
    n = len(claims)
    if n != len(positives):
        raise ValueError("claims and positives must have equal length")
    c = bi.claim_encoder(list(claims))
    d = bi.doc_encoder(list(positives))
    if negatives is None:
        if n < 2:
            raise ConfigError("in-batch negatives need a batch of at least 2 pairs")
        scores = c @ d.T
        mask = torch.eye(n, dtype=torch.bool)
        if positive_ids is not None:
            for i in range(n):
                rel = relevant[i] if relevant is not None else {positive_ids[i]}
                for j in range(n):
                    if j != i and (positive_ids[j] in rel or positive_ids[j] == positive_ids[i]):
                        mask[i, j] = True
        neg = scores.masked_fill(mask, float("-inf"))
        return nll_from_scores(scores.diagonal(), neg)
    r = len(negatives[0])
    if any(len(row) != r for row in negatives):
        raise ValueError("every claim needs the same number of sampled negatives")
    flat = [text for row in negatives for text in row]
    neg_vecs = bi.doc_encoder(flat).reshape(n, r, -1)
    pos = (c * d).sum(dim=1)
    neg = torch.einsum("nd,nrd->nr", c, neg_vecs)
    return nll_from_scores(pos, neg)


def discriminator_loss(g, source_vecs, target_vecs):
    """-mean log g(source) - mean log(1 - g(target))."""
    if len(source_vecs) == 0 or len(target_vecs) == 0:
        raise ValueError("discriminator loss needs non-empty source and target batches")
    return -torch.log(g(source_vecs)).mean() - torch.log(1.0 - g(target_vecs)).mean()


def generator_loss(g, target_vecs, sign="standard"):
    """Target-encoder objective.

    ``standard`` minimizes -mean log g(target), pulling target vectors toward
    the discriminator's "source" side. ``literal`` minimizes +mean log g(target)
    and is kept only for comparison runs.
    """
    if len(target_vecs) == 0:
        raise ValueError("generator loss needs a non-empty target batch")
    value = torch.log(g(target_vecs)).mean()
    return value if sign == "literal" else -value


# ---------------------------------------------------------------------------
# Source training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingPair:
    claim_text: str
    positive_ids: tuple
    relevant: frozenset


def source_pairs(corpus, part="train"):
    return [TrainingPair(lc.claim.text, tuple(lc.evidence_ids), frozenset(lc.evidence_ids))
            for lc in corpus.labeled(part)]


def fit_pairs(bi, pairs, doc_text, cfg, epochs, seed, lr=None, doc_pool=None):
    """Stochastic training on claim/positive pairs; mutates and returns ``bi``.

    Each epoch reshuffles the pairs and draws one positive per claim
    uniformly from its relevant set. Per-epoch mean batch loss goes to
    ``bi.history['contrastive']``.
    """
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    opt = torch.optim.Adam(bi.parameters(), lr=lr or cfg.retriever_lr)
    batch_size = cfg.retriever_batch_size
    curve = []
    pool = list(doc_pool) if doc_pool is not None else list(doc_text)
    bi.train()
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        total, batches = 0.0, 0
        for start in range(0, len(order), batch_size):
            batch = [pairs[i] for i in order[start:start + batch_size]]
            if cfg.negatives == "in-batch" and len(batch) < 2:
                continue
            pos_ids = [p.positive_ids[rng.integers(len(p.positive_ids))] for p in batch]
            claims = [p.claim_text for p in batch]
            positives = [doc_text[i] for i in pos_ids]
            negatives = None
            if cfg.negatives == "sampled":
                negatives = [_sample_negatives(rng, pool, p.relevant, cfg.num_negatives, doc_text)
                             for p in batch]
            loss = contrastive_loss(bi, claims, positives, negatives=negatives,
                                    positive_ids=pos_ids, relevant=[p.relevant for p in batch])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() / len(batch)
            batches += 1
        curve.append(total / max(batches, 1))
    bi.eval()
    bi.history.setdefault("contrastive", []).extend(curve)
    return bi


def _sample_negatives(rng, pool, relevant, r, doc_text):
    out = []
    while len(out) < r:
        doc_id = pool[rng.integers(len(pool))]
        if doc_id not in relevant:
            out.append(doc_text[doc_id])
    return out


def train_source_biencoder(source, init, cfg, epochs=None, seed=None):
    """Train a copy of ``init`` on the labeled train split of ``source``."""
    epochs = cfg.retriever_epochs if epochs is None else epochs
    if epochs == 0:
        return init
    pairs = source_pairs(source)
    if not pairs:
        raise TrainingError(f"corpus {source.name!r} has no labeled training claims")
    bi = clone_parameters(init)
    doc_text = {d.id: d.text for d in source.documents}
    return fit_pairs(bi, pairs, doc_text, cfg, epochs, cfg.seed if seed is None else seed)


# ---------------------------------------------------------------------------
# Pseudo-query pretraining
# ---------------------------------------------------------------------------

_SENTENCE_END = re.compile(r"(?<=[.!?;])\s+")


class SentenceSampler:
    """Rule-based pseudo-query generator: samples sentences of the document.

    Sentences are split on ``.``, ``!``, ``?`` and ``;``. When a document has
    fewer sentences than requested, sampling falls back to replacement.
    """

    def generate(self, text, n, seed):
        units = [u.strip() for u in _SENTENCE_END.split(text.strip()) if u.strip()]
        if not units:
            return []
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(units), size=n, replace=len(units) < n)
        return [units[i] for i in idx]


def build_pseudo_pairs(docs, generator, n, seed):
    pairs = []
    for j, doc in enumerate(docs):
        queries = generator.generate(doc.text, n, seed + j)
        if len(queries) != n or any(not q.strip() for q in queries):
            raise GenerationError(f"generator returned an empty or short result for {doc.id!r}")
        pairs.extend(TrainingPair(q, (doc.id,), frozenset((doc.id,))) for q in queries)
    return pairs


def pretrain_with_pseudo_queries(docs, generator, init, cfg, epochs=None, seed=None):
    docs = list(docs)
    if not docs:
        raise TrainingError("pseudo-query pretraining needs at least one document")
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    if epochs == 0:
        return init
    seed = cfg.seed if seed is None else seed
    pairs = build_pseudo_pairs(docs, generator, cfg.pseudo_queries_per_doc, seed)
    bi = clone_parameters(init)
    doc_text = {d.id: d.text for d in docs}
    fit_pairs(bi, pairs, doc_text, cfg, epochs, seed)
    bi.history["pretrain"] = bi.history.pop("contrastive")
    return bi


# ---------------------------------------------------------------------------
# Adversarial adaptation
# ---------------------------------------------------------------------------

def make_discriminator(cfg, seed):
    return Discriminator(cfg.output_dim, cfg.disc_hidden_dim, seed=seed)


def _batch(rng, texts, size):
    return [texts[i] for i in rng.choice(len(texts), size=size, replace=len(texts) < size)]


def discriminator_accuracy(g, source_vecs, target_vecs):
    with torch.no_grad():
        s = g(torch.as_tensor(source_vecs, dtype=DTYPE)) >= 0.5
        t = g(torch.as_tensor(target_vecs, dtype=DTYPE)) < 0.5
    return float((s.sum() + t.sum()) / (len(s) + len(t)))


def adapt_encoder(source_enc, target_enc, g, source_texts, target_texts, cfg, seed=None):
    """Alternate discriminator and target-encoder steps; mutates ``target_enc`` and ``g``.

    ``cfg.disc_warmup_steps`` discriminator-only steps come first, then
    ``cfg.adapt_steps`` iterations of one discriminator step followed by one
    target-encoder step. ``source_enc`` is never updated.
    """
    source_texts, target_texts = list(source_texts), list(target_texts)
    if not source_texts or not target_texts:
        raise ConfigError("adversarial adaptation needs non-empty source and target texts")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    size = cfg.adapt_batch_size
    for p in source_enc.parameters():
        p.requires_grad_(False)
    opt_g = torch.optim.Adam(g.parameters(), lr=cfg.disc_lr)
    opt_t = torch.optim.Adam(target_enc.parameters(), lr=cfg.adapt_lr)
    trace = {"discriminator": [], "generator": []}

    def disc_step():
        with torch.no_grad():
            vs = source_enc(_batch(rng, source_texts, size))
            vt = target_enc(_batch(rng, target_texts, size))
        loss = discriminator_loss(g, vs, vt)
        opt_g.zero_grad()
        loss.backward()
        opt_g.step()
        trace["discriminator"].append(loss.item())

    try:
        for _ in range(cfg.disc_warmup_steps):
            disc_step()
        for _ in range(cfg.adapt_steps):
            disc_step()
            vt = target_enc(_batch(rng, target_texts, size))
            loss = generator_loss(g, vt, cfg.generator_sign)
            opt_t.zero_grad()
            loss.backward()
            opt_t.step()
            trace["generator"].append(loss.item())
    finally:
        for p in source_enc.parameters():
            p.requires_grad_(True)
        g.zero_grad(set_to_none=True)
    target_enc.eval()
    target_enc.adaptation_trace = trace
    return target_enc


def adapt_biencoder(source_bi, source, target, cfg, seed=None):
    """Adapt claim and document towers separately; ``source_bi`` is untouched."""
    seed = cfg.seed if seed is None else seed
    target_bi = clone_parameters(source_bi)
    target_bi.history = dict(source_bi.history)
    if not cfg.no_claim_adapt:
        src = [c.text for c in source.claims_in("train")]
        tgt = [c.text for c in target.claims_in("train")]
        g_c = make_discriminator(cfg, seed + 101)
        adapt_encoder(source_bi.claim_encoder, target_bi.claim_encoder, g_c, src, tgt, cfg, seed + 1)
        target_bi.history["claim_adaptation"] = target_bi.claim_encoder.adaptation_trace
    if not cfg.no_doc_adapt:
        src = [d.text for d in source.documents]
        tgt = [d.text for d in target.documents]
        g_d = make_discriminator(cfg, seed + 202)
        adapt_encoder(source_bi.doc_encoder, target_bi.doc_encoder, g_d, src, tgt, cfg, seed + 2)
        target_bi.history["doc_adaptation"] = target_bi.doc_encoder.adaptation_trace
    return target_bi


# ---------------------------------------------------------------------------
# Indexing and search
# ---------------------------------------------------------------------------

@dataclass
class DocumentIndex:
    doc_ids: tuple
    vectors: np.ndarray
    encoder_hash: str

    kind = "document-index"

    def __len__(self):
        return len(self.doc_ids)

    def to_blob(self):
        return serialization.pack(self.kind, {"encoder_hash": self.encoder_hash,
                                              "doc_ids": list(self.doc_ids)},
                                  {"vectors": np.asarray(self.vectors, dtype=np.float64)})

    @classmethod
    def from_blob(cls, blob):
        kind, hp, tensors = serialization.unpack(blob)
        if kind != cls.kind:
            raise serialization.CheckpointError(f"expected {cls.kind} blob, got {kind}")
        return cls(tuple(hp["doc_ids"]), tensors["vectors"], hp["encoder_hash"])


def build_index(docs, enc):
    docs = list(docs)
    enc.eval()
    vectors = _encode_chunked(enc, [d.text for d in docs])
    if docs and not np.all(np.isfinite(vectors)):
        raise TrainingError("encoder produced non-finite document vectors")
    return DocumentIndex(tuple(d.id for d in docs), vectors.reshape(len(docs), enc.output_dim),
                         encoders.checkpoint_hash(enc))


def rank(scores, doc_ids, k):
    """Top-``k`` positions by descending score, ties by ascending doc id."""
    order = np.lexsort((np.asarray(doc_ids), -np.asarray(scores)))
    return order[:k]


def retrieve(claim, index, enc_c, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    return retrieve_many([claim], index, enc_c, k)[0]


def retrieve_many(claims, index, enc_c, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        return [[] for _ in claims]
    ids = np.asarray(index.doc_ids)
    out = []
    for claim in claims:
        # one claim at a time: batched kernels round differently with batch size
        row = index.vectors @ _encode_chunked(enc_c, [claim.text])[0]
        top = rank(row, ids, k)
        out.append([(index.doc_ids[i], float(row[i])) for i in top])
    return out
