"""Semi-supervised anomaly detection on continuous-time dynamic graphs."""

from .config import ExperimentConfig, load_config
from .evaluation import evaluate, export_embeddings, roc_auc
from .inject import inject_anomalies, spectral_cluster
from .synthetic import two_community_store
from .tgraph import EventStore, TemporalEdge, sample_subgraph
from .trainer import AblationFlags, Model, apply_ablations, fit

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "EventStore",
    "ExperimentConfig",
    "Model",
    "TemporalEdge",
    "apply_ablations",
    "evaluate",
    "export_embeddings",
    "fit",
    "inject_anomalies",
    "load_config",
    "roc_auc",
    "sample_subgraph",
    "spectral_cluster",
    "two_community_store",
]
