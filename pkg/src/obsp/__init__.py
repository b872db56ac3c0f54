"""Order batching and sequencing lab for a hybrid PtG/GtP warehouse."""

__version__ = "0.1.0"
