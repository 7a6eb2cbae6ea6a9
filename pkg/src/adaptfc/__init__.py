"""Cross-domain fact verification with an adapted retriever and an aligned reader."""

from .config import AdaptationConfig
from .data import (BINARY, TERNARY, Claim, DomainCorpus, EvidenceDocument, LabeledClaim,
                   VeracityLabel, load_corpus, write_corpus)
from .evaluation import (ScenarioReport, a_distance, evaluate_pipeline, evaluate_reader,
                         evaluate_retriever, run_ablation_grid, run_scenario)
from .metrics import macro_f1, ndcg_at_k
from .pipeline import Pipeline, rank_weighted_predict, rank_weights, train_pipeline
from .reader import Reader, coral_distance, train_reader
from .retriever import BiEncoder, adapt_biencoder, build_index, retrieve, train_source_biencoder

__version__ = "0.1.0"

__all__ = [
    "AdaptationConfig", "BINARY", "TERNARY", "Claim", "DomainCorpus", "EvidenceDocument",
    "LabeledClaim", "VeracityLabel", "load_corpus", "write_corpus", "ScenarioReport",
    "a_distance", "evaluate_pipeline", "evaluate_reader", "evaluate_retriever",
    "run_ablation_grid", "run_scenario", "macro_f1", "ndcg_at_k", "Pipeline",
    "rank_weighted_predict", "rank_weights", "train_pipeline", "Reader", "coral_distance",
    "train_reader", "BiEncoder", "adapt_biencoder", "build_index", "retrieve",
    "train_source_biencoder",
]
