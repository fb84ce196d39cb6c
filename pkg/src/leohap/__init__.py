"""Simulator and learner for a LEO-satellite / HAP / ground-cluster downlink
with hybrid FSO/RF links, plus a batch experiment harness."""

__version__ = "0.1.0"
