"""Dataset construction from an :class:`ExperimentConfig`."""

from __future__ import annotations

import dataclasses
import functools

import numpy as np

from .config import ExperimentConfig
from .data import build_contaminated_split, downsample_images, gen_toy2d, load_idx_images, pools_from_labels, toy_pools
from .digits import render_digits


@functools.lru_cache(maxsize=4)
def _rendered(n_per_class: int, seed: int):
    images, labels = render_digits(n_per_class, seed)
    return images.reshape(len(images), -1).astype(np.float64) / 255.0, labels


def image_pools(cfg: ExperimentConfig):
    if cfg.source == "idx":
        X, y = load_idx_images(cfg.idx_images, cfg.idx_labels)
    else:
        # the rendered corpus is fixed; cfg.seed only drives the split
        X, y = _rendered(cfg.digits_per_class, 0)
    if cfg.downsample > 1:
        X = downsample_images(X, cfg.downsample)
    return pools_from_labels(X, y, cfg.normal_class, cfg.unseen_class)


def pools_for(cfg: ExperimentConfig, max_unlabeled_seen: int | None = None):
    """(normal, seen, unseen) pools for the configured source.

    Toy pools are sized for ``max_unlabeled_seen`` contaminating rows when given.
    """
    if cfg.source == "toy":
        gen = cfg.gen_config()
        if max_unlabeled_seen is not None:
            gen = dataclasses.replace(gen, n_unlabeled_seen=max(gen.n_unlabeled_seen, max_unlabeled_seen))
        return toy_pools(gen, np.random.default_rng([cfg.seed, 2024]))
    return image_pools(cfg)


def dataset_for(cfg: ExperimentConfig):
    if cfg.source == "toy":
        return gen_toy2d(cfg.gen_config())
    return build_contaminated_split(*image_pools(cfg), cfg.gen_config())
