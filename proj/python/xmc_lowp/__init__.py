# SPDX-License-Identifier: Apache-2.0
"""Low-precision extreme multilabel classification engine."""

import json

from ._core import (  # noqa: F401
    ConfigError,
    Dataset,
    DivergenceError,
    DomainError,
    FloatFormat,
    ParseError,
    Rounding,
    ShapeError,
    default_train_config,
    generate_synthetic,
    kahan_sum,
    load_dataset,
    memory_plan,
    on_grid,
    plain_sum,
    precision_at_k,
    propensity_from_frequencies,
    psp_at_k,
    round_nearest,
    round_stochastic,
)
from ._core import train_json as _train_json

__version__ = "0.1.0"


def train(dataset, **config):
    """Train on `dataset` with TrainConfig fields given as keyword arguments.

    Returns a dict with the per-epoch history (parsed), final metrics, tracked
    memory peaks and the classifier weights as a numpy array.
    """
    cfg = json.loads(default_train_config())
    unknown = set(config) - set(cfg)
    if unknown:
        raise ConfigError("unknown training options: " + ", ".join(sorted(unknown)))
    cfg.update(config)
    result = _train_json(dataset, json.dumps(cfg))
    result["history"] = [json.loads(line) for line in result["history"]]
    return result
