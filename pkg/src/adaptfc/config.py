"""Run configuration: one flat, typed record of every hyperparameter."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

from .errors import ConfigError

NEGATIVE_MODES = ("in-batch", "sampled")
GENERATOR_SIGNS = ("standard", "literal")


@dataclass(frozen=True)
class AdaptationConfig:
    seed: int = 0
    num_seeds: int = 5
    # desk encoder
    output_dim: int = 16
    num_buckets: int = 2048
    embed_dim: int = 64
    hidden_dim: int = 64
    disc_hidden_dim: int = 128
    reader_dim: int = 16
    reader_segment_aware: bool = True
    # sequence caps (tokens)
    claim_max_len: int = 50
    doc_max_len: int = 200
    # batches
    retriever_batch_size: int = 70
    reader_batch_size: int = 50
    adapt_batch_size: int = 64
    # retriever
    negatives: str = "in-batch"
    num_negatives: int = 7
    retriever_epochs: int = 10
    retriever_lr: float = 1e-3
    # adversarial adaptation
    adapt_steps: int = 300
    disc_warmup_steps: int = 50
    disc_lr: float = 1e-3
    adapt_lr: float = 1e-3
    generator_sign: str = "standard"
    # pseudo-query pretraining
    pseudo_query_pretrain: bool = False
    pseudo_queries_per_doc: int = 3
    pretrain_epochs: int = 3
    # reader
    lambda1: float = 0.1
    lambda2: float = 0.1
    p: int = 2
    reader_epochs: int = 10
    reader_lr: float = 1e-3
    disjoint_alignment_pool: bool = False
    dual_order_inference: bool = False
    # inference
    k: int = 10
    # data handling
    train_fraction: float = 0.6
    evidence_per_claim: int = 2
    # ablation switches
    no_retriever_adapt: bool = False
    no_claim_adapt: bool = False
    no_doc_adapt: bool = False
    no_reader_adapt: bool = False
    no_align: bool = False
    no_reverse: bool = False
    uniform_ranking: bool = False

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            expected = f.type
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                object.__setattr__(self, f.name, float(value))
                continue
            if (expected is int and isinstance(value, bool)) or not isinstance(value, expected):
                raise ConfigError(
                    f"field {f.name!r} must be {expected.__name__}, got {value!r}", field=f.name)
        positive = ("num_seeds", "output_dim", "num_buckets", "embed_dim",
                    "disc_hidden_dim", "reader_dim", "claim_max_len", "doc_max_len", "retriever_batch_size",
                    "reader_batch_size", "adapt_batch_size", "num_negatives",
                    "pseudo_queries_per_doc", "p", "k", "evidence_per_claim")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"field {name!r} must be >= 1", field=name)
        for name in ("hidden_dim", "retriever_epochs", "adapt_steps", "disc_warmup_steps",
                     "pretrain_epochs", "reader_epochs", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"field {name!r} must be >= 0", field=name)
        for name in ("retriever_lr", "disc_lr", "adapt_lr", "reader_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"field {name!r} must be > 0", field=name)
        for name in ("lambda1", "lambda2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"field {name!r} must be >= 0", field=name)
        if not 0 < self.train_fraction < 1:
            raise ConfigError("field 'train_fraction' must be in (0, 1)", field="train_fraction")
        if self.negatives not in NEGATIVE_MODES:
            raise ConfigError(f"field 'negatives' must be one of {NEGATIVE_MODES}", field="negatives")
        if self.generator_sign not in GENERATOR_SIGNS:
            raise ConfigError(f"field 'generator_sign' must be one of {GENERATOR_SIGNS}",
                              field="generator_sign")
        if self.negatives == "in-batch" and self.retriever_batch_size < 2:
            raise ConfigError("in-batch negatives need retriever_batch_size >= 2",
                              field="retriever_batch_size")

    @property
    def seeds(self):
        return tuple(range(self.seed, self.seed + self.num_seeds))

    @property
    def reader_max_len(self):
        # claim + separator + document
        return self.claim_max_len + 1 + self.doc_max_len

    @property
    def align_weights(self):
        """Effective (lambda1, lambda2) after ablation switches."""
        if self.no_align or self.no_reader_adapt:
            return 0.0, 0.0
        return self.lambda1, self.lambda2

    @property
    def use_reverse(self):
        return not (self.no_reverse or self.no_reader_adapt)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def config_hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def ablations(self):
        return sorted(f.name for f in fields(self) if f.name.startswith(("no_", "uniform_"))
                      and getattr(self, f.name))

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data, require_all=True):
        """Validate a mapping; with ``require_all`` every field must be present."""
        if not isinstance(data, dict):
            raise ConfigError("config must be a flat key-value mapping")
        names = set(cls.field_names())
        for key in data:
            if key not in names:
                raise ConfigError(f"unknown config field {key!r}", field=key)
        if require_all:
            for name in cls.field_names():
                if name not in data:
                    raise ConfigError(f"missing config field {name!r}", field=name)
        for key, value in data.items():
            if isinstance(value, (dict, list)):
                raise ConfigError(f"config field {key!r} must be a scalar", field=key)
        return cls(**data)

    @classmethod
    def load(cls, path, require_all=True):
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data, require_all=require_all)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


def parse_override(cfg, assignment):
    """Apply a ``key=value`` override, coercing ``value`` to the field's type."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    key = key.strip().replace("-", "_")
    types = {f.name: f.type for f in fields(AdaptationConfig)}
    if key not in types:
        raise ConfigError(f"unknown config field {key!r}", field=key)
    kind = types[key]
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            value = lowered in ("true", "1", "yes")
        else:
            value = kind(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} for field {key!r}", field=key) from None
    return cfg.replace(**{key: value})


DEFAULT = AdaptationConfig()
