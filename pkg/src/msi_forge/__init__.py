"""Dataset construction, training schedules and evaluation scores for layout-conditioned multi-subject image customization."""

__version__ = "0.1.0"
