"""Online toxicity prediction for broker client flow.

Modules, bottom-up: ``market_data`` (tapes and a synthetic generator),
``labeler`` (toxicity labels), ``features`` (183-dimensional snapshots),
``nnet`` (MLP with exact gradients and Adam), ``warmup`` (offline training
and subspace extraction), ``pulse`` (recursive filter and delayed-label
scheduler), ``baselines``, ``evaluation``, ``strategy`` and ``pipeline``.
"""

__version__ = "0.1.0"
