"""Desk-scale simulator of cache-enabled decentralized federated learning on mobile agents."""

__version__ = "0.1.0"
