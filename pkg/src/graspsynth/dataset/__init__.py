"""Dataset serialization, statistics and visualization export."""
from .io import FORMAT_VERSION, FormatError, fnv1a64
from .stats import dataset_stats, format_stats, width_histogram
from .viz import export_viz

__all__ = ["FORMAT_VERSION", "FormatError", "fnv1a64", "dataset_stats", "format_stats", "width_histogram",
           "export_viz"]
