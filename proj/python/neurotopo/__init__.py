"""Synthetic EEG motor-activity topograms with CNN and adversarial-autoencoder classifiers."""

from ._core import (
    Aae,
    Cnn,
    DomainError,
    Error,
    IoError,
    __version__,
    band_power,
    generate_trial,
    gradcheck,
    interpolate,
    load_split,
    montage,
    normalize_config,
    preprocess,
    roc_auc,
    run_all,
    topogram,
)

__all__ = [
    "Aae",
    "Cnn",
    "DomainError",
    "Error",
    "IoError",
    "__version__",
    "band_power",
    "generate_trial",
    "gradcheck",
    "interpolate",
    "load_split",
    "montage",
    "normalize_config",
    "preprocess",
    "roc_auc",
    "run_all",
    "topogram",
]
