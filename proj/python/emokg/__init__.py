"""Knowledge-graph guided affective image editing.

The native core lives in ``emokg._core``; this module converts its JSON
payloads into Python objects.
"""

import json as _json
import os as _os

from . import _core
from ._core import (
    Error,
    Graph,
    classify_cue,
    clip_i_prox,
    edit,
    emo_acc,
    knn,
    lmm_system_prompt,
    postprocess,
    sample,
    schedule,
    ssim,
    tea,
    tea_from_similarities,
)

__all__ = [
    "Error",
    "Graph",
    "Pipeline",
    "classify_cue",
    "clip_i_prox",
    "completed_paths",
    "edit",
    "emo_acc",
    "invert",
    "knn",
    "lmm_system_prompt",
    "paths",
    "postprocess",
    "retrieve_subgraph",
    "sample",
    "schedule",
    "ssim",
    "tea",
    "tea_from_similarities",
]


def _denoiser(config):
    return config if isinstance(config, str) else _json.dumps(config)


def paths(graph, source, target):
    return _json.loads(_core.paths(graph, source, target))


def completed_paths(graph, source, target, k):
    return _json.loads(_core.completed_paths(graph, source, target, k))


def retrieve_subgraph(graph, starts, targets, k=5):
    return _json.loads(_core.retrieve_subgraph(graph, list(starts), list(targets), k))


def invert(x0, denoiser, steps=50, iterations=10):
    return _core.invert(x0, _denoiser(denoiser), steps, iterations)


_core_sample = sample


def sample(xT, denoiser, steps=50):  # noqa: F811
    return _core_sample(xT, _denoiser(denoiser), steps)


_core_edit = edit


def edit(x0, prompt, mask, denoiser, **kwargs):  # noqa: F811
    return _core_edit(x0, prompt, mask, _denoiser(denoiser), **kwargs)


class Pipeline:
    """End-to-end runner configured from a dict or a JSON config path."""

    def __init__(self, config, base_dir=""):
        if not isinstance(config, dict):
            if not base_dir:
                base_dir = _os.path.dirname(_os.path.abspath(config))
            with open(config, encoding="utf-8") as fh:
                config = _json.load(fh)
        self._native = _core.Pipeline(_json.dumps(config), str(base_dir))

    @property
    def config(self):
        return _json.loads(self._native.config())

    def make_run_dir(self):
        return self._native.make_run_dir()

    def run_single(self, image, targets, run_dir, item_id=None, scene=None):
        return _json.loads(self._native.run_single(image, list(targets), run_dir, item_id, scene))

    def run_batch(self, manifest, run_dir):
        return _json.loads(self._native.run_batch(manifest, run_dir))
