"""Prime-sample attention: hierarchical local rank, ISR weights, CARL,
COCO-style evaluation and the synthetic experiment harness."""

import json as _json

from ._core import (
    ConfigError,
    IoError,
    NumericalError,
    apply_delta,
    average_precision,
    carl,
    carl_grad_approx,
    encode_delta,
    hierarchical_rank,
    importance_to_weight,
    iou,
    nms,
    normalize_weights,
    rank_to_importance,
    run_cli,
    smooth_l1,
)
from . import _core

__all__ = [
    "ConfigError", "IoError", "NumericalError", "apply_delta", "average_precision", "carl",
    "carl_grad_approx", "coco_map", "config_hash", "default_config", "encode_delta",
    "hierarchical_rank", "importance_to_weight", "iou", "nms", "normalize_weights",
    "rank_to_importance", "run_cli", "run_experiment", "smooth_l1",
]


def default_config():
    return _json.loads(_core.default_config_json())


def config_hash(config=None):
    return _core.config_hash(_json.dumps(config or {}))


def run_experiment(config=None, seed=0):
    """Train on synthetic scenes and return the run record as a dict."""
    return _json.loads(_core.run_experiment_json(_json.dumps(config or {}), seed))


def coco_map(images):
    """images: [{image_id, gts: [{box, class}], dets: [{box, class, score}]}]."""
    return _json.loads(_core.coco_map_json(_json.dumps(images)))
