"""Open-set semi-supervised curation on embedding vectors."""

__version__ = "0.1.0"
