"""Clustering of view-partitioned data across federated clients, with missing-view imputation."""

__version__ = "0.1.0"
