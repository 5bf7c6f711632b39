import numpy as np
import pytest

from mixmatch.embedder import Embedder, NumericError, sgd_step
from mixmatch.metric import relative_error
from mixmatch.selfcheck import end_to_end_grads, end_to_end_instance


def reference_two_layer(e, x):
    """Straightforward per-unit loops, kept apart from the vectorised path."""
    z = [(xi - s) / c for xi, s, c in zip(x, e.shift, e.scale)]
    W1, b1, W2, b2 = (e.params[k] for k in ("W1", "b1", "W2", "b2"))
    hidden = []
    for j in range(len(b1)):
        acc = b1[j] + sum(W1[j, i] * z[i] for i in range(len(z)))
        hidden.append(acc if acc > 0 else 0.0)
    return np.array([b2[k] + sum(W2[k, j] * hidden[j] for j in range(len(hidden)))
                     for k in range(len(b2))])


def test_identity_returns_input():
    e = Embedder("identity", 5, 5)
    x = np.arange(5.0)
    np.testing.assert_array_equal(e.forward(x), x)
    assert e.params == {}


def test_linear_with_identity_weights():
    e = Embedder("linear", 4, 4, params={"W": np.eye(4), "b": np.zeros(4)})
    x = np.array([0.5, -1.0, 2.0, 3.0])
    np.testing.assert_array_equal(e.forward(x), x)


def test_two_layer_matches_reference():
    rng = np.random.default_rng(0)
    e = Embedder.initialize("two-layer", 7, 3, 5, rng=rng, shift=rng.normal(size=7),
                            scale=rng.uniform(0.5, 2, 7))
    e.params["b1"] = rng.normal(size=5)
    e.params["b2"] = rng.normal(size=3)
    X = rng.normal(size=(20, 7))
    batch = e.forward(X)
    for x, out in zip(X, batch):
        np.testing.assert_allclose(out, reference_two_layer(e, x), atol=1e-12)
        np.testing.assert_allclose(e.forward(x), out, atol=1e-12)


def test_dimension_mismatch():
    e = Embedder.initialize("linear", 6, 2, rng=0)
    with pytest.raises(ValueError, match="features"):
        e.forward(np.zeros(5))
    with pytest.raises(ValueError):
        e.backward(np.zeros((2, 5)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Embedder("identity", 3, 4)


def test_linear_weight_gradient_is_outer_product():
    rng = np.random.default_rng(1)
    e = Embedder.initialize("linear", 4, 3, rng=rng)
    x, g = rng.normal(size=4), rng.normal(size=3)
    grads = e.backward(x, g)
    np.testing.assert_allclose(grads["W"], np.outer(g, x))
    np.testing.assert_allclose(grads["b"], g)


@pytest.mark.parametrize("variant", ["linear", "two-layer"])
def test_zero_upstream_gives_zero_gradients(variant):
    e = Embedder.initialize(variant, 6, 3, 4, rng=2)
    grads = e.backward(np.ones((3, 6)), np.zeros((3, 3)))
    assert all(np.all(g == 0) for g in grads.values())


@pytest.mark.parametrize("variant", ["linear", "two-layer"])
def test_input_gradient_matches_finite_differences(variant):
    rng = np.random.default_rng(3)
    e = Embedder.initialize(variant, 5, 3, 4, rng=rng, scale=rng.uniform(0.5, 2, 5))
    x, g = rng.normal(size=5), rng.normal(size=3)
    _, dx = e.backward(x, g, input_grad=True)
    h = 1e-6
    num = np.array([(g @ e.forward(x + h * np.eye(5)[i]) - g @ e.forward(x - h * np.eye(5)[i]))
                    / (2 * h) for i in range(5)])
    assert relative_error(dx, num) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_end_to_end_gradient(seed):
    e, X, trip = end_to_end_instance(np.random.default_rng(seed))
    assert relative_error(*end_to_end_grads(e, X, trip)) < 1e-5


def test_sgd_step_exact_delta_and_zero_gradient():
    e = Embedder.initialize("two-layer", 4, 2, 3, rng=0)
    before = {k: v.copy() for k, v in e.params.items()}
    sgd_step(e, {k: np.zeros_like(v) for k, v in before.items()}, 0.01)
    for k in before:
        np.testing.assert_array_equal(e.params[k], before[k])
    g = {k: np.full_like(v, 0.5) for k, v in before.items()}
    sgd_step(e, g, 0.01)
    for k in before:
        np.testing.assert_array_equal(e.params[k], before[k] - 0.01 * g[k])


def test_sgd_step_rejects_bad_input():
    e = Embedder.initialize("linear", 3, 2, rng=0)
    with pytest.raises(ValueError):
        sgd_step(e, {"W": np.zeros((2, 3))}, 0.0)
    with pytest.raises(NumericError, match="W"):
        sgd_step(e, {"W": np.full((2, 3), np.nan)}, 0.1)


@pytest.mark.parametrize("variant,dims", [("identity", (6, 6, 0)), ("linear", (6, 3, 0)),
                                          ("two-layer", (6, 3, 5))])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, variant, dims):
    n, d, h = dims
    rng = np.random.default_rng(4)
    e = Embedder.initialize(variant, n, d, h or 64, rng=rng, shift=rng.normal(size=n),
                            scale=rng.uniform(0.1, 3, n))
    path = tmp_path / "m.ckpt"
    e.save(path)
    back = Embedder.load(path)
    assert (back.variant, back.input_dim, back.embed_dim) == (variant, n, d)
    assert back.to_bytes() == e.to_bytes() == path.read_bytes()
    for k in e.params:
        assert back.params[k].tobytes() == e.params[k].tobytes()
    assert back.shift.tobytes() == e.shift.tobytes()


def test_checkpoint_layout():
    e = Embedder.initialize("linear", 2, 1, rng=0)
    raw = e.to_bytes()
    assert raw[:8] == b"MMEMBED1"
    assert len(raw) == 8 + 16 + 8 * (2 + 2 + 2 + 1)
    tail = np.frombuffer(raw[24:], dtype="<f8")
    np.testing.assert_array_equal(tail[4:6], e.params["W"].ravel())


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError, match="magic"):
        Embedder.from_bytes(b"NOTACKPT" + bytes(16))
    e = Embedder.initialize("linear", 2, 1, rng=0)
    with pytest.raises(ValueError, match="values"):
        Embedder.from_bytes(e.to_bytes()[:-8])
