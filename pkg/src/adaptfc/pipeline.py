"""End-to-end verification: retrieve, adapt, pseudo-pair, read, aggregate.

Aggregation over the top-``k`` retrieved documents averages the reader's
distribution over every prefix of the ranking and then averages those prefix
means. Rank ``j`` therefore receives weight ``(1/k) * sum_{i=j..k} 1/i``.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import serialization
from .config import AdaptationConfig
from .data import VeracityLabel
from .errors import AdaptFCError, CheckpointError, NoEvidenceError, StageError
from .reader import Reader, build_target_pseudo_pairs, predict_pairs, train_reader
from .retriever import (BiEncoder, DocumentIndex, SentenceSampler, adapt_biencoder,
                        build_index, clone_parameters, pretrain_with_pseudo_queries, retrieve,
                        train_source_biencoder)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
ARTIFACTS = {"retriever": "retriever.bin", "index": "index.bin", "reader": "reader.bin"}
DOCUMENTS = "documents.jsonl"


def rank_weights(k):
    """Closed-form weights of the prefix-average aggregation; sums to 1."""
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    tail = np.cumsum(1.0 / np.arange(k, 0, -1))[::-1]
    return tail / k


def uniform_weights(k):
    if k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    return np.full(k, 1.0 / k)


def aggregate(distributions, uniform=False):
    """Weighted mean of per-document distributions listed in rank order."""
    distributions = np.asarray(distributions, dtype=np.float64)
    if distributions.ndim != 2 or len(distributions) == 0:
        raise NoEvidenceError("aggregation needs at least one ranked document")
    weights = (uniform_weights if uniform else rank_weights)(len(distributions))
    return weights @ distributions


def rank_weighted_predict(reader, claim, ranked_docs, k, uniform=False, dual_order=False):
    """Aggregate reader outputs over the first ``min(k, len(ranked_docs))`` documents."""
    ranked_docs = list(ranked_docs)
    if not ranked_docs:
        raise NoEvidenceError(f"no evidence documents for claim {getattr(claim, 'id', claim)!r}")
    top = ranked_docs[:min(k, len(ranked_docs))]
    per_doc = predict_pairs(reader, [(claim, d) for d in top], dual_order)
    return aggregate(per_doc, uniform)


def argmax_label(distribution, label_set):
    """Most probable label; exact ties go to the earlier label in the fixed order."""
    best = max(range(len(label_set)),
               key=lambda i: (distribution[i], -VeracityLabel.parse(label_set[i]).order))
    return VeracityLabel.parse(label_set[best])


@dataclass(frozen=True)
class EvidenceTrace:
    doc_id: str
    score: float
    distribution: dict


@dataclass(frozen=True)
class Verdict:
    claim_id: str
    label: VeracityLabel
    distribution: dict
    evidence: tuple = ()

    def to_dict(self):
        return {"claim_id": self.claim_id, "label": self.label.value,
                "distribution": dict(self.distribution),
                "evidence": [{"doc_id": e.doc_id, "score": e.score,
                              "distribution": dict(e.distribution)} for e in self.evidence]}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _as_dist(vector, label_set):
    return {lbl.value: float(p) for lbl, p in zip(label_set, vector)}


@dataclass
class Pipeline:
    bi_encoder: BiEncoder
    index: DocumentIndex
    documents: dict
    reader: Reader
    k: int = 10
    uniform_ranking: bool = False
    dual_order: bool = False
    manifest: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        missing = [d for d in self.index.doc_ids if d not in self.documents]
        if missing:
            raise CheckpointError(f"index references unknown document {missing[0]!r}")

    @property
    def label_set(self):
        return self.reader.label_set

    def verify(self, claim):
        hits = retrieve(claim, self.index, self.bi_encoder.claim_encoder, self.k)
        if not hits:
            raise NoEvidenceError(f"index is empty; cannot verify claim {claim.id!r}")
        docs = [self.documents[doc_id] for doc_id, _ in hits]
        per_doc = predict_pairs(self.reader, [(claim, d) for d in docs], self.dual_order)
        dist = aggregate(per_doc, self.uniform_ranking)
        evidence = tuple(EvidenceTrace(doc_id, score, _as_dist(p, self.label_set))
                         for (doc_id, score), p in zip(hits, per_doc))
        return Verdict(claim.id, argmax_label(dist, self.label_set),
                       _as_dist(dist, self.label_set), evidence)

    def verify_many(self, claims):
        return [self.verify(c) for c in claims]

    # -- persistence -------------------------------------------------------

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        blobs = {"retriever": self.bi_encoder.to_blob(), "index": self.index.to_blob(),
                 "reader": self.reader.to_blob()}
        for name, blob in blobs.items():
            serialization.write_blob(os.path.join(directory, ARTIFACTS[name]), blob)
        doc_lines = "".join(json.dumps({"id": d.id, "text": d.text, "domain": d.domain},
                                       sort_keys=True) + "\n"
                            for d in (self.documents[i] for i in self.index.doc_ids))
        with open(os.path.join(directory, DOCUMENTS), "w", encoding="utf-8") as fh:
            fh.write(doc_lines)
        manifest = dict(self.manifest)
        manifest["artifacts"] = {name: serialization.content_hash(blob)
                                 for name, blob in sorted(blobs.items())}
        manifest["artifacts"]["documents"] = hashlib.sha256(doc_lines.encode()).hexdigest()
        manifest["inference"] = {"k": self.k, "uniform_ranking": self.uniform_ranking,
                                 "dual_order": self.dual_order}
        with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        self.manifest = manifest
        return manifest

    @classmethod
    def load(cls, directory):
        from .data import EvidenceDocument

        path = os.path.join(directory, MANIFEST)
        if not os.path.exists(path):
            raise CheckpointError(f"{directory}: no {MANIFEST}")
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        blobs = {}
        for name, filename in ARTIFACTS.items():
            blob = serialization.read_blob(os.path.join(directory, filename))
            expected = manifest.get("artifacts", {}).get(name)
            if expected != serialization.content_hash(blob):
                raise CheckpointError(f"{filename}: content hash does not match the manifest")
            blobs[name] = blob
        with open(os.path.join(directory, DOCUMENTS), encoding="utf-8") as fh:
            doc_lines = fh.read()
        if hashlib.sha256(doc_lines.encode()).hexdigest() != manifest["artifacts"].get("documents"):
            raise CheckpointError(f"{DOCUMENTS}: content hash does not match the manifest")
        documents = {}
        for line in doc_lines.splitlines():
            rec = json.loads(line)
            documents[rec["id"]] = EvidenceDocument(rec["id"], rec["text"], rec["domain"])
        inference = manifest.get("inference", {})
        return cls(BiEncoder.from_blob(blobs["retriever"]), DocumentIndex.from_blob(blobs["index"]),
                   documents, Reader.from_blob(blobs["reader"]), inference.get("k", 10),
                   inference.get("uniform_ranking", False), inference.get("dual_order", False),
                   manifest)


def corpus_fingerprint(corpus):
    """Stable hash of a corpus' ids, texts, labels and split."""
    h = hashlib.sha256()
    for lc in corpus.labeled_claims:
        h.update(json.dumps([lc.id, lc.claim.text, lc.label.value, list(lc.evidence_ids),
                             corpus.split[lc.id]]).encode())
    for c in corpus.unlabeled_claims:
        h.update(json.dumps([c.id, c.text, corpus.split[c.id]]).encode())
    for d in corpus.documents:
        h.update(json.dumps([d.id, d.text]).encode())
    return h.hexdigest()


# Config fields that influence the source retriever (pretraining included).
SOURCE_STAGE_FIELDS = ("output_dim", "num_buckets", "embed_dim", "hidden_dim", "claim_max_len",
                       "doc_max_len", "retriever_batch_size", "negatives", "num_negatives",
                       "retriever_epochs", "retriever_lr", "pseudo_query_pretrain",
                       "pseudo_queries_per_doc", "pretrain_epochs")
# Additional fields that influence the adapted retriever.
ADAPT_STAGE_FIELDS = ("adapt_steps", "disc_warmup_steps", "disc_lr", "adapt_lr", "generator_sign",
                      "adapt_batch_size", "disc_hidden_dim", "no_claim_adapt", "no_doc_adapt")


def _digest(payload):
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def source_stage_key(source, target, cfg, seed, generator=None):
    """Cache key of the source-trained retriever."""
    settings = {name: getattr(cfg, name) for name in SOURCE_STAGE_FIELDS}
    payload = {"settings": settings, "seed": seed, "source": corpus_fingerprint(source)}
    if cfg.pseudo_query_pretrain:
        payload["target"] = corpus_fingerprint(target)
        payload["generator"] = type(generator or SentenceSampler()).__qualname__
    return _digest(payload)


def adapt_stage_key(source, target, cfg, seed, generator=None):
    """Cache key of the adapted retriever."""
    settings = {name: getattr(cfg, name) for name in ADAPT_STAGE_FIELDS}
    return _digest({"source_stage": source_stage_key(source, target, cfg, seed, generator),
                    "settings": settings, "target": corpus_fingerprint(target)})


def _cached_biencoder(cache_dir, name, build):
    """Bi-encoder and its history from ``cache_dir/name``, built and stored on a miss."""
    if cache_dir is None:
        return build()
    path = os.path.join(cache_dir, f"{name}.bin")
    history_path = os.path.join(cache_dir, f"{name}.history.json")
    if os.path.exists(path) and os.path.exists(history_path):
        log.info("loading cached retriever %s", path)
        bi = BiEncoder.from_blob(serialization.read_blob(path))
        with open(history_path, encoding="utf-8") as fh:
            bi.history = json.load(fh)
        return bi
    bi = build()
    os.makedirs(cache_dir, exist_ok=True)
    tmp = f"{path}.{os.getpid()}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(bi.history, fh)
    os.replace(tmp, history_path)
    serialization.write_blob(tmp, bi.to_blob())
    os.replace(tmp, path)
    return bi


def _train_source(source, target, cfg, seed, generator):
    init = BiEncoder.create(cfg, seed)
    if cfg.pseudo_query_pretrain:
        docs = list(source.documents) + list(target.documents)
        init = _stage("pretrain", pretrain_with_pseudo_queries, docs,
                      generator or SentenceSampler(), init, cfg, seed=seed)
    return _stage("retriever", train_source_biencoder, source, init, cfg, seed=seed)


def _stage(name, fn, *args, **kwargs):
    log.info("stage %s", name)
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (AdaptFCError, ValueError, RuntimeError) as exc:
        raise StageError(name, exc) from exc


def train_pipeline(source, target, cfg=AdaptationConfig(), seed=None, generator=None,
                   cache_dir=None):
    """Run every training stage and assemble a :class:`Pipeline` with its manifest.

    Stage failures are re-raised as :class:`StageError` naming the stage. With
    ``cache_dir`` the source-trained and adapted retrievers are reused across
    runs that share their inputs.
    """
    seed = cfg.seed if seed is None else seed
    source_bi = _cached_biencoder(
        cache_dir, f"source-{source_stage_key(source, target, cfg, seed, generator)}",
        lambda: _train_source(source, target, cfg, seed, generator))
    if cfg.no_retriever_adapt:
        adapted = clone_parameters(source_bi)
        adapted.history = dict(source_bi.history)
    else:
        adapted = _cached_biencoder(
            cache_dir, f"adapted-{adapt_stage_key(source, target, cfg, seed, generator)}",
            lambda: _stage("adapt", adapt_biencoder, source_bi, source, target, cfg, seed))
    index = _stage("index", build_index, target.documents, adapted.doc_encoder)
    pairs = _stage("pseudo-pairs", build_target_pseudo_pairs, target.claims_in("train"),
                   adapted.claim_encoder, index, target.documents, cfg.p)
    reader = _stage("reader", lambda: train_reader(
        source, pairs, Reader.create(cfg, source.label_set, seed), cfg, seed=seed))
    manifest = {
        "config": cfg.to_dict(),
        "seed": seed,
        "ablations": list(cfg.ablations()),
        "source": {"name": source.name, "fingerprint": corpus_fingerprint(source)},
        "target": {"name": target.name, "fingerprint": corpus_fingerprint(target)},
        "checkpoints": {"source_retriever": source_bi.checkpoint_hash(),
                        "adapted_retriever": adapted.checkpoint_hash(),
                        "index": serialization.content_hash(index.to_blob()),
                        "reader": reader.checkpoint_hash()},
        "pseudo_pairs": len(pairs),
    }
    pipe = Pipeline(adapted, index, target.documents_by_id, reader, cfg.k, cfg.uniform_ranking,
                    cfg.dual_order_inference, manifest,
                    {"retriever": adapted.history, "reader": reader.history})
    pipe.source_bi = source_bi
    return pipe
