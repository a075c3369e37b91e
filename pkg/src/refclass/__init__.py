"""Reference-based reclassification of bibliographic items into single subject categories and broad areas."""

__version__ = "0.1.0"
