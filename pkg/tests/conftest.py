import numpy as np
import pytest

from hetlink.autodiff import Tape
from hetlink.graph import HeteroGraph, SyntheticSpec, generate_synthetic


def central_difference(build_loss, arrays, step=1e-5):
    """Numeric gradient of a scalar-valued tape program.

    ``build_loss(tape, tensors)`` must rebuild the computation from leaf
    tensors created out of ``arrays``; returns (analytic, numeric) gradient
    lists computed with a fresh tape per evaluation.
    """
    def evaluate():
        tape = Tape()
        tensors = [tape.tensor(a) for a in arrays]
        return build_loss(tape, tensors), tape, tensors

    loss, tape, tensors = evaluate()
    grads = tape.backward(loss)
    analytic = [grads.wrt(t) for t in tensors]

    numeric = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up, _, _ = evaluate()
            flat[k] = orig - step
            down, _, _ = evaluate()
            flat[k] = orig
            gflat[k] = (float(up.data) - float(down.data)) / (2 * step)
        numeric.append(g)
    return analytic, numeric


def assert_gradients_close(build_loss, arrays, rel_tol=1e-5, step=1e-5):
    analytic, numeric = central_difference(build_loss, arrays, step)
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        rel = np.abs(a - n) / denom
        assert rel.max() < rel_tol, f"max relative error {rel.max():.3g}"


@pytest.fixture
def tiny_graph():
    """6 nodes in 2 types, 2 relations, hand-built edges."""
    node_types = [0, 0, 0, 1, 1, 1]
    attrs = [
        np.array([1.0, 0.0]),
        np.array([0.0, 1.0]),
        np.array([0.5, 0.5]),
        np.array([1.0, 0.0, 0.0]),
        np.array([0.0, 1.0, 0.0]),
        np.array([0.0, 0.0, 1.0]),
    ]
    edges = [
        (0, 0, 3),
        (1, 0, 3),
        (2, 1, 3),
        (3, 1, 0),
        (4, 0, 0),
        (5, 1, 1),
        (0, 1, 4),
    ]
    return HeteroGraph(node_types, attrs, edges, relation_count=2)


@pytest.fixture
def small_synthetic():
    spec = SyntheticSpec(
        nodes_per_type=(15, 15),
        attr_dims_per_type=(4, 4),
        relation_count=3,
        edges_per_relation=(30, 30, 30),
        community_count=4,
        noise_fraction=0.15,
        seed=19,
    )
    return generate_synthetic(spec)
