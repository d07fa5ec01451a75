"""Progressive key-value memory networks for incremental domain adaptation."""

__version__ = "0.1.0"
