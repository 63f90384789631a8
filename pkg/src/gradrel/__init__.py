"""Toolkit for collecting graded audio-text relevance judgments and training
a contrastive text-to-audio retrieval head over precomputed features.

The pipeline stages, in order: catalog loading, candidate selection and HIT
construction, answer collection (HTTP service or synthetic workers), per-worker
consistency filtering, trimmed-mean aggregation, binarized pair construction,
projection-head training, and recall@k evaluation. Stages communicate only
through files so any stage can be replaced by externally produced data.
"""

__version__ = "0.1.0"

from gradrel.errors import DataError

__all__ = ["DataError", "__version__"]
