"""scikit-learn style front end for mix-and-match tuning."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import LabeledImage, RunConfig
from .embedder import VARIANTS, Embedder
from .tuning import STRATEGIES, tune


def check_images(X) -> list:
    """Validate a list of :class:`LabeledImage` sharing one channel count."""
    if isinstance(X, LabeledImage):
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("expected at least one LabeledImage")
    bad = [i for i, im in enumerate(X) if not isinstance(im, LabeledImage)]
    if bad:
        raise TypeError(f"entries {bad[:5]} are not LabeledImage instances")
    channels = {im.channels for im in X}
    if len(channels) != 1:
        raise ValueError(f"images mix channel counts {sorted(channels)}")
    return X


class MixMatchEmbedder(BaseEstimator):
    """Patch embedder tuned with the mix-and-match triplet objective.

    ``fit`` takes a list of :class:`LabeledImage`; ``transform`` embeds patch
    pixels given as ``(n, S, S, C)`` or flattened ``(n, S*S*C)`` arrays.

    Parameters mirror :class:`RunConfig`; ``learning_rate_schedule=None``
    selects the default 0.01 -> 0.001 drop at three quarters of the run.
    """

    def __init__(self, strategy="graph", variant="two-layer", images_per_batch=16,
                 patches_per_image=10, patch_resize=32, margin_alpha=2.1, embed_dim=32,
                 hidden_dim=64, iterations=400, learning_rate_schedule=None,
                 overlap_iou_max=0.5, patch_scale_range=(0.2, 0.6), random_state=0):
        self.strategy = strategy
        self.variant = variant
        self.images_per_batch = images_per_batch
        self.patches_per_image = patches_per_image
        self.patch_resize = patch_resize
        self.margin_alpha = margin_alpha
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.iterations = iterations
        self.learning_rate_schedule = learning_rate_schedule
        self.overlap_iou_max = overlap_iou_max
        self.patch_scale_range = patch_scale_range
        self.random_state = random_state

    @classmethod
    def from_config(cls, cfg: RunConfig, **kwargs) -> "MixMatchEmbedder":
        return cls(images_per_batch=cfg.images_per_batch,
                   patches_per_image=cfg.patches_per_image, patch_resize=cfg.patch_resize,
                   margin_alpha=cfg.margin_alpha, embed_dim=cfg.embed_dim,
                   hidden_dim=cfg.hidden_dim, iterations=cfg.iterations,
                   learning_rate_schedule=list(cfg.learning_rate_schedule),
                   overlap_iou_max=cfg.overlap_iou_max,
                   patch_scale_range=cfg.patch_scale_range, random_state=cfg.seed, **kwargs)

    def run_config(self) -> RunConfig:
        if self.random_state is None or isinstance(self.random_state, np.random.Generator):
            raise ValueError("random_state must be an integer seed for reproducible tuning")
        return RunConfig(
            seed=int(self.random_state), images_per_batch=self.images_per_batch,
            patches_per_image=self.patches_per_image, patch_resize=self.patch_resize,
            margin_alpha=self.margin_alpha, embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            learning_rate_schedule=list(self.learning_rate_schedule or []),
            iterations=self.iterations, overlap_iou_max=self.overlap_iou_max,
            patch_scale_range=self.patch_scale_range,
        )

    def fit(self, X, y=None):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        images = check_images(X)
        cfg = self.run_config()
        state = tune(images, cfg, strategy=self.strategy, variant=self.variant)
        self.config_ = cfg
        self.embedder_ = state.embedder
        self.history_ = state.history
        self.skipped_ = state.skipped
        self.n_iter_ = state.iteration
        self.ms_per_iteration_ = state.ms_per_iteration
        self.n_features_in_ = state.embedder.input_dim
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "embedder_")
        X = np.asarray(X, dtype=np.float64)
        X = check_array(X.reshape(len(X), -1) if X.ndim > 2 else X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features per patch, expected {self.n_features_in_}"
            )
        return self.embedder_.forward(X)

    def evaluate(self, X, seed=None):
        from .evaluation import evaluate

        check_is_fitted(self, "embedder_")
        seed = self.config_.seed if seed is None else seed
        return evaluate(self.embedder_, check_images(X), self.config_, seed)

    def score(self, X, y=None) -> float:
        """Leave-one-out 1-NN accuracy on held-out patches of ``X``."""
        return self.evaluate(X).knn_accuracy

    def save(self, path):
        check_is_fitted(self, "embedder_")
        self.embedder_.save(path)

    @staticmethod
    def load_embedder(path) -> Embedder:
        return Embedder.load(path)
