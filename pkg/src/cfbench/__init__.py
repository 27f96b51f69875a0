"""Car-following forecasting benchmark toolkit.

Predicts follower-vehicle acceleration from leader/follower trajectory data
and compares forecasting approaches under a common multi-window backtest:
a calibrated intelligent-driver car-following model, classical statistical
forecasters, a tokenize/quantize/sample pipeline with an n-gram sequence
model, a covariate residual-boosting ensemble, and out-of-process models
speaking a newline-delimited JSON protocol.
"""

__version__ = "0.1.0"
