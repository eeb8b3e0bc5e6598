"""Byzantine-robust federated learning with geometric-median aggregation of local gradients."""

__version__ = "0.1.0"
