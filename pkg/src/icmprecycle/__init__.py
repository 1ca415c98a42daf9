"""Recycle ICMP responses to Internet-wide scans as a control-plane dataset."""

__version__ = "0.1.0"
