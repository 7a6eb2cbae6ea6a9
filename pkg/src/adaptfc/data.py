"""Claims, evidence documents and domain corpora.

Corpora are immutable; every transformation returns a new corpus. The on-disk
format (``jsonl-v1``) stores one claim per line::

    {"id": ..., "text": ..., "domain": ..., "label": "Support",
     "split": "train", "evidence": [{"id": ..., "text": ..., "relevant": true}]}

``label``, ``split`` and ``relevant`` are optional. Evidence entries may omit
``text`` when a sidecar documents file (one ``{"id", "text", "domain"}`` object
per line) supplies it.
"""

import enum
import json
import logging
import zlib
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IntegrityError, LabelError, ParseError, SplitError

log = logging.getLogger(__name__)

FORMATS = ("jsonl-v1",)
TRAIN = "train"
TEST = "test"


class VeracityLabel(str, enum.Enum):
    SUPPORT = "Support"
    REFUTE = "Refute"
    NEUTRAL = "Neutral"

    @property
    def order(self):
        return _LABEL_ORDER[self]

    @classmethod
    def parse(cls, raw):
        for label in cls:
            if raw.strip().casefold() == label.value.casefold():
                return label
        raise LabelError(f"unknown veracity label {raw!r}")


_LABEL_ORDER = {VeracityLabel.SUPPORT: 0, VeracityLabel.REFUTE: 1, VeracityLabel.NEUTRAL: 2}
BINARY = (VeracityLabel.SUPPORT, VeracityLabel.REFUTE)
TERNARY = (VeracityLabel.SUPPORT, VeracityLabel.REFUTE, VeracityLabel.NEUTRAL)


@dataclass(frozen=True)
class EvidenceDocument:
    id: str
    text: str
    domain: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise IntegrityError(f"document {self.id!r} has empty text")


@dataclass(frozen=True)
class Claim:
    id: str
    text: str
    domain: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise IntegrityError(f"claim {self.id!r} has empty text")


@dataclass(frozen=True)
class LabeledClaim:
    claim: Claim
    label: VeracityLabel
    evidence_ids: tuple = ()

    @property
    def id(self):
        return self.claim.id


@dataclass(frozen=True)
class DomainCorpus:
    name: str
    labeled_claims: tuple = ()
    unlabeled_claims: tuple = ()
    documents: tuple = ()
    split: dict = field(default_factory=dict)
    label_set: tuple = BINARY

    def __post_init__(self):
        object.__setattr__(self, "labeled_claims", tuple(self.labeled_claims))
        object.__setattr__(self, "unlabeled_claims", tuple(self.unlabeled_claims))
        object.__setattr__(self, "documents", tuple(self.documents))
        object.__setattr__(self, "label_set", tuple(self.label_set))
        self.validate()

    def validate(self):
        doc_ids = [d.id for d in self.documents]
        dup = _first_duplicate(doc_ids)
        if dup is not None:
            raise IntegrityError(f"duplicate document id {dup!r} in corpus {self.name!r}")
        claim_ids = [c.id for c in self.claims]
        dup = _first_duplicate(claim_ids)
        if dup is not None:
            raise IntegrityError(f"duplicate claim id {dup!r} in corpus {self.name!r}")
        known = set(doc_ids)
        for lc in self.labeled_claims:
            if lc.label not in self.label_set:
                raise IntegrityError(
                    f"claim {lc.id!r} has label {lc.label.value} outside the declared label set")
            if not lc.evidence_ids:
                raise IntegrityError(f"labeled claim {lc.id!r} has no evidence documents")
            for eid in lc.evidence_ids:
                if eid not in known:
                    raise IntegrityError(f"claim {lc.id!r} references unknown evidence {eid!r}")
        if set(self.split) != set(claim_ids):
            missing = set(claim_ids) - set(self.split)
            extra = set(self.split) - set(claim_ids)
            raise IntegrityError(
                f"split map must cover every claim exactly once "
                f"(missing={sorted(missing)[:3]}, unknown={sorted(extra)[:3]})")
        bad = [cid for cid, part in self.split.items() if part not in (TRAIN, TEST)]
        if bad:
            raise IntegrityError(f"claim {bad[0]!r} has split {self.split[bad[0]]!r}")

    @property
    def claims(self):
        """All claims, labeled first, in corpus order."""
        return tuple(lc.claim for lc in self.labeled_claims) + self.unlabeled_claims

    @property
    def documents_by_id(self):
        return {d.id: d for d in self.documents}

    def labeled(self, part=None):
        if part is None:
            return self.labeled_claims
        return tuple(lc for lc in self.labeled_claims if self.split[lc.id] == part)

    def claims_in(self, part):
        return tuple(c for c in self.claims if self.split[c.id] == part)

    def __len__(self):
        return len(self.labeled_claims) + len(self.unlabeled_claims)


def _first_duplicate(items):
    seen = set()
    for item in items:
        if item in seen:
            return item
        seen.add(item)
    return None


# ---------------------------------------------------------------------------
# jsonl-v1 reading and writing
# ---------------------------------------------------------------------------

def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno, path=path) from None
            if not isinstance(record, dict):
                raise ParseError("record must be a JSON object", line=lineno, path=path)
            yield lineno, record


def _require_str(record, key, lineno, path, optional=False):
    value = record.get(key)
    if value is None and optional:
        return None
    if not isinstance(value, str) or (key in ("id", "text") and not value.strip()):
        raise ParseError(f"field {key!r} must be a non-empty string", line=lineno, path=path)
    return value


def load_documents(path):
    docs = []
    for lineno, record in _read_jsonl(path):
        doc_id = _require_str(record, "id", lineno, path)
        text = _require_str(record, "text", lineno, path)
        domain = _require_str(record, "domain", lineno, path, optional=True) or ""
        docs.append(EvidenceDocument(doc_id, text, domain))
    return docs


def load_corpus(path, format_id="jsonl-v1", name=None, documents_path=None, label_set=None):
    """Read and validate a corpus.

    ``label_set`` defaults to ternary when any record is labeled ``Neutral`` and
    binary otherwise. Claims without a split field are assigned to train.
    """
    if format_id not in FORMATS:
        raise ParseError(f"unsupported corpus format {format_id!r}")
    docs = {}
    if documents_path is not None:
        for doc in load_documents(documents_path):
            if doc.id in docs:
                raise IntegrityError(f"duplicate document id {doc.id!r} in {documents_path}")
            docs[doc.id] = doc
    labeled, unlabeled, split = [], [], {}
    pending = []  # (lineno, evidence id) for text-less evidence entries
    for lineno, record in _read_jsonl(path):
        claim_id = _require_str(record, "id", lineno, path)
        text = _require_str(record, "text", lineno, path)
        domain = _require_str(record, "domain", lineno, path, optional=True) or ""
        evidence = record.get("evidence", [])
        if not isinstance(evidence, list):
            raise ParseError("field 'evidence' must be a list", line=lineno, path=path)
        relevant = []
        for item in evidence:
            if not isinstance(item, dict):
                raise ParseError("evidence entries must be objects", line=lineno, path=path)
            eid = _require_str(item, "id", lineno, path)
            etext = item.get("text")
            if etext is not None:
                if not isinstance(etext, str) or not etext.strip():
                    raise ParseError(f"evidence {eid!r} has empty text", line=lineno, path=path)
                edomain = item.get("domain", domain) or ""
                doc = EvidenceDocument(eid, etext, edomain)
                if eid in docs and docs[eid].text != etext:
                    raise IntegrityError(f"line {lineno}: evidence {eid!r} has conflicting texts")
                docs.setdefault(eid, doc)
            else:
                pending.append((lineno, eid))
            if item.get("relevant", True):
                relevant.append(eid)
        claim = Claim(claim_id, text, domain)
        raw_label = record.get("label")
        if raw_label is None:
            if relevant:
                log.debug("line %d: unlabeled claim %s carries evidence links; ignored", lineno, claim_id)
            unlabeled.append(claim)
        else:
            try:
                label = VeracityLabel.parse(str(raw_label))
            except LabelError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
            if not relevant:
                raise IntegrityError(f"line {lineno}: labeled claim {claim_id!r} has no evidence")
            labeled.append(LabeledClaim(claim, label, tuple(relevant)))
        part = record.get("split", TRAIN)
        if part not in (TRAIN, TEST):
            raise ParseError(f"split must be 'train' or 'test', got {part!r}", line=lineno, path=path)
        if claim_id in split:
            raise IntegrityError(f"line {lineno}: duplicate claim id {claim_id!r}")
        split[claim_id] = part
    for lineno, eid in pending:
        if eid not in docs:
            raise IntegrityError(f"line {lineno}: dangling evidence id {eid!r}")
    if label_set is None:
        has_neutral = any(lc.label is VeracityLabel.NEUTRAL for lc in labeled)
        label_set = TERNARY if has_neutral else BINARY
    return DomainCorpus(
        name=name if name is not None else _infer_name(path, labeled, unlabeled),
        labeled_claims=labeled,
        unlabeled_claims=unlabeled,
        documents=list(docs.values()),
        split=split,
        label_set=label_set,
    )


def _infer_name(path, labeled, unlabeled):
    domains = Counter(c.claim.domain for c in labeled) + Counter(c.domain for c in unlabeled)
    if domains:
        return domains.most_common(1)[0][0]
    return str(path).rsplit("/", 1)[-1].split(".")[0]


def write_corpus(corpus, path, documents_path=None):
    """Write ``corpus`` as jsonl-v1.

    Documents not referenced as relevant evidence by any claim only survive a
    round trip through the sidecar file, so ``documents_path`` is required when
    such documents exist.
    """
    by_id = corpus.documents_by_id
    referenced = {eid for lc in corpus.labeled_claims for eid in lc.evidence_ids}
    orphans = [d for d in corpus.documents if d.id not in referenced]
    if orphans and documents_path is None:
        raise IntegrityError(
            f"{len(orphans)} documents are not referenced by any claim; pass documents_path")
    with open(path, "w", encoding="utf-8") as fh:
        for lc in corpus.labeled_claims:
            record = _claim_record(lc.claim, corpus.split[lc.id])
            record["label"] = lc.label.value
            record["evidence"] = [_doc_record(by_id[eid]) | {"relevant": True}
                                  for eid in lc.evidence_ids]
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        for claim in corpus.unlabeled_claims:
            fh.write(json.dumps(_claim_record(claim, corpus.split[claim.id]), ensure_ascii=False) + "\n")
    if documents_path is not None:
        with open(documents_path, "w", encoding="utf-8") as fh:
            for doc in corpus.documents:
                fh.write(json.dumps(_doc_record(doc), ensure_ascii=False) + "\n")


def _claim_record(claim, part):
    return {"id": claim.id, "text": claim.text, "domain": claim.domain, "split": part}


def _doc_record(doc):
    return {"id": doc.id, "text": doc.text, "domain": doc.domain}


# ---------------------------------------------------------------------------
# Domain re-purposing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainMappingChart:
    """Ordered ``prefix -> domain`` rules plus a fallback domain.

    Rules are stored longest-prefix-first (stable for equal lengths) so that
    a subtree rule never shadows a more specific path. A prefix matches a raw
    category equal to it or nested under it (``/News/Politics`` matches
    ``/News/Politics/Other`` but not ``/News/PoliticsX``).
    """

    rules: tuple
    fallback: str

    def __post_init__(self):
        if not self.fallback:
            raise ValueError("chart needs a fallback domain")
        rules = tuple((str(p).rstrip("/") or "/", str(d)) for p, d in self.rules)
        object.__setattr__(self, "rules", tuple(sorted(rules, key=lambda r: -len(r[0]))))

    @property
    def domains(self):
        names = []
        for _, domain in self.rules:
            if domain not in names:
                names.append(domain)
        if self.fallback not in names:
            names.append(self.fallback)
        return tuple(sorted(names))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data):
        try:
            rules = [(r["prefix"], r["domain"]) for r in data["rules"]]
            return cls(tuple(rules), data["fallback"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed mapping chart: {exc}") from None

    def to_dict(self):
        return {"rules": [{"prefix": p, "domain": d} for p, d in self.rules],
                "fallback": self.fallback}


def map_domain(raw_category, chart):
    raw = raw_category.strip()
    for prefix, domain in chart.rules:
        if raw == prefix or raw.startswith(prefix + "/") or prefix == "/":
            return domain
    return chart.fallback


MULTIFC_CHART = DomainMappingChart(
    rules=(
        ("/Arts & Entertainment", "Arts"),
        ("/Finance", "Business"),
        ("/Business", "Business"),
        ("/News/Business News", "Business"),
        ("/Law & Government", "Politics"),
        ("/News/Politics", "Politics"),
        ("/Sensitive Subjects", "Sensitive"),
    ),
    fallback="Misc",
)

SNOPES_CHART = DomainMappingChart(
    rules=(
        ("/News/Politics/Other", "News"),
        ("/News/Politics/Campaigns & Elections", "News"),
        ("/Law & Government/Government/Executive Branch", "News"),
        ("/Law & Government/Public Safety/Crime & Justice", "News"),
        ("/News/Other", "News"),
    ),
    fallback="General",
)

CHARTS = {"multifc": MULTIFC_CHART, "snopes": SNOPES_CHART}
SCHEMES = ("multifc-binary", "snopes-ternary")


def collapse_label(raw_label, scheme):
    if scheme == "multifc-binary":
        if raw_label.strip().casefold() == "true":
            return VeracityLabel.SUPPORT
        return VeracityLabel.REFUTE
    if scheme == "snopes-ternary":
        return VeracityLabel.parse(raw_label)
    raise LabelError(f"unknown label scheme {scheme!r}")


def sample_evidence(labeled, n, seed):
    if n < 1:
        raise ValueError("n must be >= 1")
    ids = labeled.evidence_ids
    if len(ids) <= n:
        return labeled
    rng = np.random.default_rng(seed)
    keep = sorted(rng.choice(len(ids), size=n, replace=False).tolist())
    return replace(labeled, evidence_ids=tuple(ids[i] for i in keep))


def split_corpus(corpus, train_fraction, seed):
    """Assign ``floor(train_fraction * N)`` claims to train, stratified by label.

    Per-stratum quotas use largest-remainder rounding so they add up to the
    global count; unlabeled claims form their own stratum.
    """
    if not 0 < train_fraction < 1:
        raise SplitError("train_fraction must be in (0, 1)")
    n = len(corpus)
    if n < 2:
        raise SplitError(f"corpus {corpus.name!r} has {n} claims; need at least 2 to split")
    strata = {}
    for lc in corpus.labeled_claims:
        strata.setdefault(lc.label.value, []).append(lc.id)
    for c in corpus.unlabeled_claims:
        strata.setdefault("", []).append(c.id)
    keys = sorted(strata)
    total = int(np.floor(train_fraction * n + 1e-12))
    exact = [train_fraction * len(strata[k]) for k in keys]
    quota = [int(np.floor(x + 1e-12)) for x in exact]
    order = sorted(range(len(keys)), key=lambda i: (-(exact[i] - quota[i]), keys[i]))
    for i in order[: total - sum(quota)]:
        quota[i] += 1
    rng = np.random.default_rng(seed)
    split = {}
    for key, q in zip(keys, quota):
        ids = strata[key]
        perm = rng.permutation(len(ids))
        for rank, idx in enumerate(perm):
            split[ids[idx]] = TRAIN if rank < q else TEST
    return replace(corpus, split=split)


def merge_documents(corpus, documents):
    """Add documents (e.g. a shared pool) that are not yet in the corpus."""
    known = corpus.documents_by_id
    extra = [d for d in documents if d.id not in known]
    return replace(corpus, documents=corpus.documents + tuple(extra))


# ---------------------------------------------------------------------------
# Raw dump preprocessing
# ---------------------------------------------------------------------------

def preprocess_dump(path, chart, scheme, n=2, seed=0, train_fraction=0.6):
    """Turn a raw claim dump into one split corpus per mapped domain.

    Each dump line holds ``id``, ``text``, ``category`` (a raw category path),
    ``label`` (a raw verdict) and ``evidence`` (a list of ``{id, text}``).
    Evidence is subsampled to ``n`` documents per claim with a seed derived
    from the claim id, so results do not depend on line order.
    """
    label_set = BINARY if scheme == "multifc-binary" else TERNARY
    by_domain = {}
    docs = {}
    for lineno, record in _read_jsonl(path):
        claim_id = _require_str(record, "id", lineno, path)
        text = _require_str(record, "text", lineno, path)
        category = _require_str(record, "category", lineno, path)
        raw_label = _require_str(record, "label", lineno, path)
        try:
            label = collapse_label(raw_label, scheme)
        except LabelError as exc:
            raise ParseError(str(exc), line=lineno, path=path) from None
        evidence = record.get("evidence")
        if not isinstance(evidence, list) or not evidence:
            raise IntegrityError(f"{path}:{lineno}: claim {claim_id!r} has no evidence")
        domain = map_domain(category, chart)
        ids = []
        for item in evidence:
            if not isinstance(item, dict):
                raise ParseError("evidence entries must be objects", line=lineno, path=path)
            eid = _require_str(item, "id", lineno, path)
            etext = _require_str(item, "text", lineno, path)
            if eid in docs and docs[eid].text != etext:
                raise IntegrityError(f"{path}:{lineno}: evidence {eid!r} has conflicting texts")
            docs.setdefault(eid, EvidenceDocument(eid, etext, domain))
            ids.append(eid)
        claim_seed = [seed, zlib.crc32(claim_id.encode("utf-8"))]
        lc = sample_evidence(LabeledClaim(Claim(claim_id, text, domain), label, tuple(ids)),
                             n, claim_seed)
        by_domain.setdefault(domain, []).append(lc)
    out = {}
    for domain in sorted(by_domain):
        labeled = by_domain[domain]
        used = dict.fromkeys(eid for lc in labeled for eid in lc.evidence_ids)
        documents = [replace(docs[eid], domain=domain) for eid in used]
        corpus = DomainCorpus(domain, labeled, (), documents,
                              {lc.id: TRAIN for lc in labeled}, label_set)
        out[domain] = split_corpus(corpus, train_fraction, seed) if len(corpus) >= 2 else corpus
    return out
