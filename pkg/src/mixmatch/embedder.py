"""Small trainable embedders with hand-written backprop, SGD and checkpoints."""
from __future__ import annotations

import struct

import numpy as np

VARIANTS = ("identity", "linear", "two-layer")
_PARAM_NAMES = {"identity": (), "linear": ("W", "b"), "two-layer": ("W1", "b1", "W2", "b2")}

CHECKPOINT_MAGIC = b"MMEMBED1"
_HEADER = struct.Struct("<8sIIII")


class NumericError(FloatingPointError):
    """Non-finite values reached the parameters or their gradients."""


class Embedder:
    """Map flattened patch pixels (or features) to ``embed_dim`` vectors.

    Inputs are standardised with a fixed ``shift``/``scale`` before the first
    layer. ``identity`` returns the standardised input unchanged and has no
    parameters, ``linear`` computes ``W z + b`` and ``two-layer`` computes
    ``W2 relu(W1 z + b1) + b2``.
    """

    def __init__(self, variant, input_dim, embed_dim, hidden_dim=64, params=None,
                 shift=None, scale=None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown embedder variant {variant!r}; choose from {VARIANTS}")
        if variant == "identity" and input_dim != embed_dim:
            raise ValueError("identity embedder needs input_dim == embed_dim")
        self.variant = variant
        self.input_dim = int(input_dim)
        self.embed_dim = int(embed_dim)
        self.hidden_dim = int(hidden_dim) if variant == "two-layer" else 0
        self.shift = np.zeros(self.input_dim) if shift is None else np.asarray(shift, float)
        self.scale = np.ones(self.input_dim) if scale is None else np.asarray(scale, float)
        if self.shift.shape != (self.input_dim,) or self.scale.shape != (self.input_dim,):
            raise ValueError("shift/scale must have length input_dim")
        if np.any(self.scale <= 0):
            raise ValueError("scale entries must be positive")
        self.params = {k: np.zeros(s) for k, s in self.param_shapes().items()}
        if params is not None:
            for k, v in params.items():
                v = np.array(v, dtype=np.float64)
                if v.shape != self.params[k].shape:
                    raise ValueError(f"parameter {k} has shape {v.shape}, expected {self.params[k].shape}")
                self.params[k] = v

    @classmethod
    def initialize(cls, variant, input_dim, embed_dim, hidden_dim=64, rng=None,
                   shift=None, scale=None):
        """He-style gaussian weights, zero biases."""
        e = cls(variant, input_dim, embed_dim, hidden_dim, shift=shift, scale=scale)
        rng = np.random.default_rng(rng)
        if variant == "linear":
            e.params["W"] = rng.normal(0, np.sqrt(1.0 / input_dim), (embed_dim, input_dim))
        elif variant == "two-layer":
            e.params["W1"] = rng.normal(0, np.sqrt(2.0 / input_dim), (hidden_dim, input_dim))
            e.params["W2"] = rng.normal(0, np.sqrt(1.0 / hidden_dim), (embed_dim, hidden_dim))
        return e

    def param_shapes(self) -> dict:
        d, n, h = self.embed_dim, self.input_dim, self.hidden_dim
        if self.variant == "linear":
            return {"W": (d, n), "b": (d,)}
        if self.variant == "two-layer":
            return {"W1": (h, n), "b1": (h,), "W2": (d, h), "b2": (d,)}
        return {}

    def copy(self) -> "Embedder":
        return Embedder(self.variant, self.input_dim, self.embed_dim, self.hidden_dim or 64,
                        {k: v.copy() for k, v in self.params.items()},
                        self.shift.copy(), self.scale.copy())

    def _prepare(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = X.reshape(1, -1) if single else X.reshape(len(X), -1)
        if X.shape[1] != self.input_dim:
            raise ValueError(f"input has {X.shape[1]} features, embedder expects {self.input_dim}")
        return (X - self.shift) / self.scale, single

    def forward(self, X) -> np.ndarray:
        """Embed one flattened input or a batch of them (rows)."""
        Z, single = self._prepare(X)
        out = self._forward(Z)[-1]
        return out[0] if single else out

    def _forward(self, Z):
        p = self.params
        if self.variant == "identity":
            return (Z,)
        if self.variant == "linear":
            return (Z @ p["W"].T + p["b"],)
        H = Z @ p["W1"].T + p["b1"]
        A = np.maximum(H, 0.0)
        return H, A @ p["W2"].T + p["b2"]

    def forward_cached(self, X):
        """Batch forward that also returns what :meth:`backward_cached` needs."""
        Z, _ = self._prepare(X)
        outs = self._forward(Z)
        return outs[-1], (Z, outs)

    def backward(self, X, upstream, input_grad=False):
        """Parameter gradients of ``sum(upstream * forward(X))``.

        With ``input_grad=True`` also returns the gradient w.r.t. ``X``.
        """
        Z, single = self._prepare(X)
        result = self.backward_cached((Z, self._forward(Z)), upstream, input_grad)
        if input_grad and single:
            return result[0], result[1][0]
        return result

    def backward_cached(self, cache, upstream, input_grad=False):
        Z, outs = cache
        G = np.asarray(upstream, dtype=np.float64).reshape(len(Z), self.embed_dim)
        p = self.params
        grads = {}
        if self.variant == "identity":
            dZ = G
        elif self.variant == "linear":
            grads["W"] = G.T @ Z
            grads["b"] = G.sum(axis=0)
            dZ = G @ p["W"] if input_grad else None
        else:
            H = outs[0]
            A = np.maximum(H, 0.0)
            grads["W2"] = G.T @ A
            grads["b2"] = G.sum(axis=0)
            dH = (G @ p["W2"]) * (H > 0)
            grads["W1"] = dH.T @ Z
            grads["b1"] = dH.sum(axis=0)
            dZ = dH @ p["W1"] if input_grad else None
        if not input_grad:
            return grads
        return grads, dZ / self.scale

    def preactivation_margin(self, X) -> float:
        """Smallest |hidden pre-activation|; inf for variants without ReLU."""
        if self.variant != "two-layer":
            return np.inf
        Z, _ = self._prepare(X)
        return float(np.min(np.abs(Z @ self.params["W1"].T + self.params["b1"])))

    def flat_params(self) -> np.ndarray:
        if not self.params:
            return np.zeros(0)
        return np.concatenate([self.params[k].ravel() for k in _PARAM_NAMES[self.variant]])

    def set_flat_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        i = 0
        for k in _PARAM_NAMES[self.variant]:
            size = self.params[k].size
            self.params[k] = flat[i:i + size].reshape(self.params[k].shape).copy()
            i += size

    # -------------------------------------------------------- checkpoints

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(CHECKPOINT_MAGIC, VARIANTS.index(self.variant),
                              self.input_dim, self.hidden_dim, self.embed_dim)
        block = np.concatenate([self.shift, self.scale, self.flat_params()])
        return header + block.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Embedder":
        if len(raw) < _HEADER.size:
            raise ValueError("checkpoint truncated")
        magic, code, n, h, d = _HEADER.unpack_from(raw)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not an embedder checkpoint (bad magic)")
        if code >= len(VARIANTS):
            raise ValueError(f"unknown variant code {code}")
        e = cls(VARIANTS[code], n, d, h or 64)
        expected = 2 * n + sum(int(np.prod(s)) for s in e.param_shapes().values())
        block = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if len(block) != expected:
            raise ValueError(f"checkpoint has {len(block)} values, expected {expected}")
        block = block.astype(np.float64)
        e.shift, e.scale = block[:n].copy(), block[n:2 * n].copy()
        e.set_flat_params(block[2 * n:])
        return e

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Embedder":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def sgd_step(e: Embedder, grads: dict, rate: float) -> Embedder:
    """In-place ``param -= rate * grad``; returns ``e`` for chaining."""
    if not rate > 0:
        raise ValueError("learning rate must be positive")
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NumericError(f"non-finite gradient in {', '.join(bad)}")
    for k, g in grads.items():
        e.params[k] = e.params[k] - rate * g
    return e
