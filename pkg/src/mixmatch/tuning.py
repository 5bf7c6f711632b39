"""The mix-and-match tuning loop: sample, match, score, update."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import STREAM_INIT, STREAM_TRAIN, RunConfig, derive_rng
from .embedder import Embedder, NumericError, sgd_step
from .graph import (TripletError, build_graph, extract_triplets, random_triplets,
                    triplets_to_patches)
from .metric import triplet_loss_grad
from .sampling import EmptyBatchError, sample_patches

log = logging.getLogger(__name__)

STRATEGIES = ("graph", "random")
MAX_CONSECUTIVE_FAILURES = 20


@dataclass
class TrainState:
    embedder: Embedder
    iteration: int = 0
    history: list = field(default_factory=list)  # (iteration, loss, active_fraction)
    skipped: list = field(default_factory=list)  # (iteration, reason)
    seconds: float = 0.0

    @property
    def ms_per_iteration(self) -> float:
        done = len(self.history) + len(self.skipped)
        return 1000.0 * self.seconds / done if done else 0.0


def channel_standardization(images, patch_resize: int):
    """Per-channel mean/std over all training pixels, tiled to patch layout."""
    channels = images[0].channels
    stacked = np.concatenate([im.pixels.reshape(-1, channels) for im in images])
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-6)
    n = patch_resize * patch_resize
    return np.tile(mean, n), np.tile(std, n)


def init_embedder(images, cfg: RunConfig, variant: str = "two-layer") -> Embedder:
    channels = images[0].channels
    input_dim = cfg.patch_resize * cfg.patch_resize * channels
    if variant == "identity":
        return Embedder("identity", input_dim, input_dim)
    shift, scale = channel_standardization(images, cfg.patch_resize)
    return Embedder.initialize(variant, input_dim, cfg.embed_dim, cfg.hidden_dim,
                               rng=derive_rng(cfg.seed, STREAM_INIT), shift=shift, scale=scale)


def draw_batch(images, cfg: RunConfig, iteration: int):
    """The patch batch of one step; depends only on (images, cfg, seed, iteration)."""
    pick = derive_rng(cfg.seed, STREAM_TRAIN, iteration, 0)
    idx = pick.integers(len(images), size=cfg.images_per_batch)
    return sample_patches([images[i] for i in idx], cfg,
                          derive_rng(cfg.seed, STREAM_TRAIN, iteration, 1), image_indices=idx)


def make_triplets(batch, strategy: str, rng) -> np.ndarray:
    """Triplets as patch indices for the chosen strategy."""
    if strategy == "graph":
        g = build_graph(batch, rng)
        return triplets_to_patches(g, extract_triplets(g, rng))
    if strategy == "random":
        return random_triplets(batch, len(batch), rng)
    raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")


def train_step(embedder: Embedder, X, triplets, alpha: float, rate: float):
    """One SGD step on the mean triplet loss of ``embedder(X)``."""
    Y, cache = embedder.forward_cached(X)
    report, dY = triplet_loss_grad(Y, triplets, alpha)
    if embedder.params:
        sgd_step(embedder, embedder.backward_cached(cache, dY), rate)
        if not all(np.all(np.isfinite(p)) for p in embedder.params.values()):
            raise NumericError("parameters became non-finite")
    return report


def tune(images, cfg: RunConfig, strategy: str = "graph", variant: str = "two-layer",
         embedder: Embedder | None = None) -> TrainState:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    classes = set().union(*(im.classes() for im in images)) if images else set()
    if len(classes) < 2:
        raise TripletError("cannot form triplets: dataset has fewer than two classes")
    if embedder is None:
        embedder = init_embedder(images, cfg, variant)
    state = TrainState(embedder)
    failures = 0
    start = time.perf_counter()
    for it in range(cfg.iterations):
        try:
            batch = draw_batch(images, cfg, it)
            trip = make_triplets(batch, strategy, derive_rng(cfg.seed, STREAM_TRAIN, it, 2))
        except (EmptyBatchError, TripletError) as exc:
            failures += 1
            state.skipped.append((it, str(exc)))
            log.debug("step %d skipped: %s", it, exc)
            if failures >= MAX_CONSECUTIVE_FAILURES:
                raise type(exc)(f"{failures} consecutive failed steps; last: {exc}") from exc
            state.iteration = it + 1
            continue
        failures = 0
        report = train_step(embedder, batch.pixel_matrix(), trip, cfg.margin_alpha,
                            cfg.rate_at(it))
        state.history.append((it, report.loss, report.active_count / report.n))
        state.iteration = it + 1
    state.seconds = time.perf_counter() - start
    return state
