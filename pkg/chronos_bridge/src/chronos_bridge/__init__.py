"""Sidecar serving probabilistic time-series forecasts over protocol v1.

Wraps a pretrained Chronos-family checkpoint (small/base/large, or a local
fine-tuned directory) for zero-shot inference behind the newline-delimited
JSON protocol the benchmark harness speaks. A dependency-free
``builtin-naive`` seasonal backend ships for protocol testing on machines
without the model weights.
"""

__version__ = "0.1.0"

PROTO_VERSION = 1
