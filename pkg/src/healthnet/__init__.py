"""Condition co-occurrence taxonomies and location health scores from social media mentions."""

__version__ = "0.1.0"
