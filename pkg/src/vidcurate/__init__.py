"""Shot-boundary splitting, clip sub-metrics and suitability filtering for video curation."""

__version__ = "0.1.0"
