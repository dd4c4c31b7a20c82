"""Multimodal fake-news detection at desk scale."""

from ._core import (
    BpeVocab,
    CompatibilityError,
    ConfigError,
    CorruptCheckpointError,
    DataError,
    Dataset,
    DivergenceError,
    Model,
    NewsRecord,
    RunConfig,
    SyntheticSpec,
    TrainResult,
    awl_combine,
    bpe_train,
    evaluate,
    generate_synthetic,
    gradcheck,
    info_nce,
    load_dataset,
    metrics,
    metrics_from_csv,
    preprocess_text,
    train,
    write_dataset,
)

__all__ = [
    "BpeVocab",
    "CompatibilityError",
    "ConfigError",
    "CorruptCheckpointError",
    "DataError",
    "Dataset",
    "DivergenceError",
    "Model",
    "NewsRecord",
    "RunConfig",
    "SyntheticSpec",
    "TrainResult",
    "awl_combine",
    "bpe_train",
    "evaluate",
    "generate_synthetic",
    "gradcheck",
    "info_nce",
    "load_dataset",
    "metrics",
    "metrics_from_csv",
    "preprocess_text",
    "train",
    "write_dataset",
]
