"""Random-forest training and `.forest` text export."""

from .exporter import (
    ExportConfig,
    ExportError,
    ExportResult,
    load_dataset,
    quantize_features,
    train_and_export,
    verify_export,
)

__version__ = "0.1.0"

__all__ = [
    "ExportConfig", "ExportError", "ExportResult", "load_dataset",
    "quantize_features", "train_and_export", "verify_export", "__version__",
]
