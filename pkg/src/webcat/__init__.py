"""URL content categorization: signatures, long-tail splits, compact students, distillation."""

__version__ = "0.1.0"
