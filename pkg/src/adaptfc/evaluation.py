"""Evaluation harness: component evaluators, domain distance, seed-aggregated reports."""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EstimationError
from .metrics import RankingJudgment, macro_f1, mean_ndcg
from .pipeline import argmax_label, train_pipeline
from .reader import predict_pairs
from .retriever import build_index, retrieve_many

log = logging.getLogger(__name__)

# Externally reported reference values; metadata only.
REFERENCE_A_DISTANCE = {"Misc": 0.09, "Politics": 0.07, "Business": 0.06, "Sensitive": 0.05,
                        "Arts": 0.04}
REFERENCE_PIPELINE_F1 = {"multifc": 0.618, "snopes": 0.437}

ABLATIONS = {
    "full": {},
    "w/o retriever-adapt": {"no_retriever_adapt": True},
    "w/o reader-adapt": {"no_reader_adapt": True},
    "uniform-ranking": {"uniform_ranking": True},
}


def scenario_name(source, target):
    """``"P→S"`` style label built from domain-name initials."""
    return f"{source[:1].upper()}→{target[:1].upper()}"


@dataclass
class ScenarioReport:
    source: str
    target: str
    metric: str
    per_seed: list
    config_hash: str = ""
    method: str = "full"
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        self.per_seed = [float(v) for v in self.per_seed]
        if not self.per_seed:
            raise ValueError("a report needs at least one per-seed value")
        if self.seeds and len(self.seeds) != len(self.per_seed):
            raise ValueError("seeds and per-seed values differ in length")

    @property
    def scenario(self):
        return scenario_name(self.source, self.target)

    @property
    def mean(self):
        return float(np.mean(self.per_seed))

    @property
    def std(self):
        # population std: defined for a single seed, never negative
        return float(np.std(self.per_seed))

    def to_dict(self):
        out = asdict(self)
        out.update(scenario=self.scenario, mean=self.mean, std=self.std)
        return out

    @classmethod
    def combine(cls, reports):
        """Merge single-seed reports of one scenario, metric and method."""
        reports = list(reports)
        keys = {(r.source, r.target, r.metric, r.method, r.config_hash) for r in reports}
        if len(keys) != 1:
            raise ValueError(f"cannot combine reports of different scenarios: {sorted(keys)}")
        first = reports[0]
        return cls(first.source, first.target, first.metric,
                   [v for r in reports for v in r.per_seed], first.config_hash, first.method,
                   [s for r in reports for s in r.seeds])


def reports_to_json(reports):
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def reports_to_markdown(reports, digits=3):
    """One row per (method, metric), one column per scenario, cells ``mean ± std``."""
    reports = list(reports)
    scenarios = list(dict.fromkeys(r.scenario for r in reports))
    rows = list(dict.fromkeys((r.method, r.metric) for r in reports))
    cells = {(r.method, r.metric, r.scenario): r for r in reports}
    lines = ["| Method | Metric | " + " | ".join(scenarios) + " |",
             "|---|---|" + "---|" * len(scenarios)]
    for method, metric in rows:
        vals = []
        for sc in scenarios:
            r = cells.get((method, metric, sc))
            vals.append(f"{r.mean:.{digits}f} ± {r.std:.{digits}f}" if r else "")
        lines.append(f"| {method} | {metric} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"


def write_reports(reports, json_path, markdown_path=None):
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(reports_to_json(reports))
    if markdown_path:
        with open(markdown_path, "w", encoding="utf-8") as fh:
            fh.write(reports_to_markdown(reports))


# ---------------------------------------------------------------------------
# Component evaluators
# ---------------------------------------------------------------------------

def retrieval_judgments(corpus, rankings, part="test"):
    return [RankingJudgment(lc.id, frozenset(lc.evidence_ids), tuple(r))
            for lc, r in zip(corpus.labeled(part), rankings)]


def rank_with(bi, corpus, claims, k=10):
    index = build_index(corpus.documents, bi.doc_encoder)
    return [[doc_id for doc_id, _ in hits]
            for hits in retrieve_many(claims, index, bi.claim_encoder, k)]


def evaluate_retriever(retriever, corpus, part="test", k=10, source=None, config_hash="",
                       seed=None):
    """Mean NDCG@k over labeled claims of ``part``.

    ``retriever`` is a bi-encoder or any callable mapping a list of claims to
    ranked doc-id lists.
    """
    claims = [lc.claim for lc in corpus.labeled(part)]
    if callable(retriever) and not hasattr(retriever, "doc_encoder"):
        rankings = retriever(claims)
    else:
        rankings = rank_with(retriever, corpus, claims, k)
    value = mean_ndcg(retrieval_judgments(corpus, rankings, part), k)
    return ScenarioReport(source or corpus.name, corpus.name, f"ndcg@{k}", [value], config_hash,
                          seeds=[] if seed is None else [seed])


def reader_predictions(reader, corpus, part="test"):
    """Argmax of the uniform average of pair distributions over gold evidence."""
    docs = corpus.documents_by_id
    out = []
    for lc in corpus.labeled(part):
        dist = predict_pairs(reader, [(lc.claim, docs[d]) for d in lc.evidence_ids]).mean(axis=0)
        out.append(argmax_label(dist, reader.label_set))
    return out


def evaluate_reader(reader, corpus, part="test", source=None, config_hash="", seed=None):
    gold = [lc.label for lc in corpus.labeled(part)]
    value = macro_f1(reader_predictions(reader, corpus, part), gold, corpus.label_set)
    return ScenarioReport(source or corpus.name, corpus.name, "reader_macro_f1", [value],
                          config_hash, seeds=[] if seed is None else [seed])


def evaluate_pipeline(pipeline, corpus, part="test", source=None, config_hash="", seed=None,
                      method="full"):
    labeled = corpus.labeled(part)
    verdicts = pipeline.verify_many([lc.claim for lc in labeled])
    value = macro_f1([v.label for v in verdicts], [lc.label for lc in labeled], corpus.label_set)
    return ScenarioReport(source or pipeline.manifest.get("source", {}).get("name", corpus.name),
                          corpus.name, "macro_f1", [value], config_hash, method,
                          [] if seed is None else [seed])


# ---------------------------------------------------------------------------
# Domain distance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ADistance:
    error: float
    estimate: float
    per_seed_errors: tuple


def _logistic_probe(x_train, y_train, x_test, seed):
    from sklearn.linear_model import LogisticRegression

    probe = LogisticRegression(max_iter=1000, random_state=seed)
    probe.fit(x_train, y_train)
    return probe.predict(x_test)


def _half_split(n, seed):
    perm = np.random.default_rng([seed, n]).permutation(n)
    return perm[: n // 2], perm[n // 2:]


def a_distance(source_samples, target_samples, seeds=(0, 1, 2, 3, 4), encoder=None, probe=None):
    """Held-out error of a domain probe and the proxy distance ``2(1 - 2 err)`` in [0, 2].

    Samples are vectors, or texts when ``encoder`` is given. Each domain is
    split 50/50 into probe-training and held-out halves; errors are averaged
    over ``seeds``.
    """
    if encoder is not None:
        from .retriever import _encode_chunked

        source_samples = _encode_chunked(encoder, list(source_samples))
        target_samples = _encode_chunked(encoder, list(target_samples))
    xs = np.asarray(source_samples, dtype=np.float64)
    xt = np.asarray(target_samples, dtype=np.float64)
    if xs.ndim != 2 or xt.ndim != 2 or xs.shape[1] != xt.shape[1]:
        raise EstimationError("source and target samples must be matrices of equal width")
    if len(xs) < 2 or len(xt) < 2:
        raise EstimationError("each domain needs at least 2 samples so both halves hold it")
    probe = probe or _logistic_probe
    errors = []
    for seed in seeds:
        s_tr, s_te = _half_split(len(xs), seed)
        t_tr, t_te = _half_split(len(xt), seed)
        x_train = np.vstack([xs[s_tr], xt[t_tr]])
        y_train = np.r_[np.zeros(len(s_tr)), np.ones(len(t_tr))]
        x_test = np.vstack([xs[s_te], xt[t_te]])
        y_test = np.r_[np.zeros(len(s_te)), np.ones(len(t_te))]
        pred = np.asarray(probe(x_train, y_train, x_test, seed))
        # balanced error so unequal domain sizes do not skew the estimate
        err = 0.5 * (np.mean(pred[y_test == 0] != 0) + np.mean(pred[y_test == 1] != 1))
        errors.append(float(err))
    error = float(np.mean(errors))
    estimate = min(2.0, max(0.0, 2.0 * (1.0 - 2.0 * error)))
    return ADistance(error, estimate, tuple(errors))


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------

def run_scenario(source, target, cfg, method="full", components=("retriever", "reader", "pipeline"),
                 cache_dir=None):
    """Train one pipeline per seed of ``cfg`` and report every requested component."""
    per_seed = {c: [] for c in components}
    for seed in cfg.seeds:
        run_cfg = cfg.replace(seed=seed)
        pipe = train_pipeline(source, target, run_cfg, cache_dir=cache_dir)
        h = cfg.config_hash()
        if "retriever" in components:
            per_seed["retriever"].append(evaluate_retriever(pipe.bi_encoder, target, k=10,
                                                            source=source.name, config_hash=h,
                                                            seed=seed))
        if "reader" in components:
            per_seed["reader"].append(evaluate_reader(pipe.reader, target, source=source.name,
                                                      config_hash=h, seed=seed))
        if "pipeline" in components:
            per_seed["pipeline"].append(evaluate_pipeline(pipe, target, source=source.name,
                                                          config_hash=h, seed=seed))
    out = []
    for comp in components:
        report = ScenarioReport.combine(per_seed[comp])
        report.method = method
        out.append(report)
    return out


def run_ablation_grid(source, target, cfg, variants=None, cache_dir=None):
    """Pipeline Macro F1 on the target test split for each ablation variant."""
    variants = ABLATIONS if variants is None else variants
    return {name: run_scenario(source, target, cfg.replace(**changes), method=name,
                               components=("pipeline",), cache_dir=cache_dir)[0]
            for name, changes in variants.items()}


# ---------------------------------------------------------------------------
# Embedding export
# ---------------------------------------------------------------------------

def export_embeddings(encoder, items, path):
    """Write ``id,domain,v0..v{d-1}`` rows for claims or documents."""
    from .retriever import _encode_chunked

    items = list(items)
    vectors = _encode_chunked(encoder, [it.text for it in items])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "domain"] + [f"v{i}" for i in range(encoder.output_dim)])
        for it, vec in zip(items, vectors):
            writer.writerow([it.id, it.domain] + [repr(float(v)) for v in vec])
    return len(items)


def is_finite_report(report):
    return all(math.isfinite(v) for v in report.per_seed)
