"""Gradient and graph-invariant self-tests behind ``mixmatch check``."""
from __future__ import annotations

import numpy as np

from .embedder import Embedder
from .graph import build_graph, check_classwise_connected, extract_triplets
from .metric import (finite_diff_grad, hinge_margin_to_kink, relative_error,
                     triplet_loss, triplet_loss_grad)

KINK_GAP = 1e-4
FD_STEP = 1e-6
GRAD_RTOL = 1e-5


def random_labels(rng, n_nodes, n_classes) -> np.ndarray:
    """Labels with every class present at least once (requires n_nodes >= n_classes)."""
    labels = np.concatenate([np.arange(n_classes), rng.integers(n_classes, size=n_nodes - n_classes)])
    return rng.permutation(labels)


def graph_triplets(labels, rng) -> np.ndarray:
    g = build_graph(labels, rng)
    return g.patch_index[extract_triplets(g, rng)]


def embedding_instance(rng, alpha=2.1):
    """Random (embeddings, triplets) away from the hinge kink."""
    while True:
        d = int(rng.choice([2, 8, 32]))
        k = int(rng.integers(3, 11))
        labels = random_labels(rng, int(rng.integers(k, 2 * k + 6)), k)
        x = rng.normal(size=(len(labels), d))
        trip = graph_triplets(labels, rng)
        if hinge_margin_to_kink(x, trip, alpha) > KINK_GAP:
            return x, trip


def end_to_end_instance(rng, alpha=2.1, n_patches=8, input_dim=12, hidden=6, embed_dim=4):
    """Small two-layer embedder plus patches and triplets, away from every kink."""
    while True:
        e = Embedder.initialize("two-layer", input_dim, embed_dim, hidden, rng=rng,
                                shift=rng.normal(0, 0.1, input_dim),
                                scale=rng.uniform(0.5, 2.0, input_dim))
        e.params["b1"] = rng.normal(0, 0.1, hidden)
        e.params["b2"] = rng.normal(0, 0.1, embed_dim)
        X = rng.random((n_patches, input_dim))
        trip = graph_triplets(random_labels(rng, n_patches, int(rng.integers(2, 5))), rng)
        if (e.preactivation_margin(X) > KINK_GAP
                and hinge_margin_to_kink(e.forward(X), trip, alpha) > KINK_GAP):
            return e, X, trip


def end_to_end_grads(e: Embedder, X, trip, alpha=2.1, h=FD_STEP):
    """(analytic, finite-difference) gradients of the loss w.r.t. flat parameters."""
    _, dY = triplet_loss_grad(e.forward(X), trip, alpha)
    grads = e.backward(X, dY)
    analytic = np.concatenate([grads[k].ravel() for k in ("W1", "b1", "W2", "b2")])

    probe = e.copy()
    theta = e.flat_params()
    numeric = np.zeros_like(theta)
    for i in range(len(theta)):
        orig = theta[i]
        theta[i] = orig + h
        probe.set_flat_params(theta)
        up = triplet_loss(probe.forward(X), trip, alpha).loss
        theta[i] = orig - h
        probe.set_flat_params(theta)
        down = triplet_loss(probe.forward(X), trip, alpha).loss
        theta[i] = orig
        numeric[i] = (up - down) / (2 * h)
    return analytic, numeric


def check_embedding_gradients(instances=20, seed=0, alpha=2.1) -> float:
    """Worst relative error between analytic and finite-difference gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        x, trip = embedding_instance(rng, alpha)
        _, g = triplet_loss_grad(x, trip, alpha)
        worst = max(worst, relative_error(g, finite_diff_grad(x, trip, alpha, FD_STEP)))
    return worst


def check_end_to_end_gradients(instances=20, seed=0, alpha=2.1) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        e, X, trip = end_to_end_instance(rng, alpha)
        worst = max(worst, relative_error(*end_to_end_grads(e, X, trip, alpha)))
    return worst


def graph_violations(labels, rng) -> list:
    """Names of graph invariants broken by one build from ``labels``."""
    g = build_graph(labels, rng)
    trip = extract_triplets(g, rng)
    bad = []
    if not check_classwise_connected(g):
        bad.append("class-wise connectivity")
    a, r = g.attractive_edges, g.rejective_edges
    if np.any(g.labels[a[:, 0]] != g.labels[a[:, 1]]):
        bad.append("attractive edge joins different labels")
    if np.any(g.labels[r[:, 0]] == g.labels[r[:, 1]]):
        bad.append("rejective edge joins equal labels")
    edges = np.concatenate([a, r])
    if np.any(edges[:, 0] == edges[:, 1]):
        bad.append("self-loop")
    if len({tuple(sorted(e)) for e in edges.tolist()}) != len(edges):
        bad.append("duplicate edge")
    if len(trip) != g.num_originals:
        bad.append("triplet count differs from original node count")
    la, lp, ln = (g.labels[trip[:, i]] for i in range(3))
    if np.any(la != lp) or np.any(la == ln):
        bad.append("triplet label constraint")
    return bad


def check_graph_invariants(batches=100, seed=0) -> list:
    rng = np.random.default_rng(seed)
    failures = []
    for b in range(batches):
        k = int(rng.integers(2, 11))
        labels = random_labels(rng, int(rng.integers(max(10, k), 401)), k)
        for name in graph_violations(labels, rng):
            failures.append(f"batch {b}: {name}")
    return failures


def run_all(seed=0, instances=20, batches=100) -> list:
    """Human-readable ``(name, passed, detail)`` rows."""
    emb = check_embedding_gradients(instances, seed)
    e2e = check_end_to_end_gradients(instances, seed)
    graph = check_graph_invariants(batches, seed)
    return [
        ("embedding gradient", emb < GRAD_RTOL, f"max rel err {emb:.2e}"),
        ("end-to-end gradient", e2e < GRAD_RTOL, f"max rel err {e2e:.2e}"),
        ("graph invariants", not graph, f"{len(graph)} violations in {batches} batches"),
    ]
