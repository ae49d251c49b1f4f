"""Bridge from pretrained seq2seq taggers to the predictions wire format."""

from .align import AlignmentFailure, align_subwords, build_si_input
from .export import PREDICTIONS_SCHEMA, ExportJob, export_predictions

__version__ = "0.1.0"

__all__ = [
    "AlignmentFailure",
    "ExportJob",
    "PREDICTIONS_SCHEMA",
    "align_subwords",
    "build_si_input",
    "export_predictions",
]
