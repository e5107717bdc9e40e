import numpy as np
import pytest

from dereverbtcn.autodiff import backward, no_grad, topo_order


def fd_leaf(build_loss, leaf, h=1e-6):
    """Max relative error between a leaf's analytic gradient and central differences.

    ``build_loss`` must rebuild the scalar loss from scratch on every call
    and be deterministic; ``leaf`` is perturbed in place for the numeric side.
    """
    loss = build_loss()
    backward(loss)
    analytic = leaf.grad.copy()
    for node in topo_order(loss):
        node.zero_grad()
    numeric = np.zeros_like(leaf.data)
    flat_data = leaf.data.reshape(-1)
    flat_num = numeric.reshape(-1)
    for i in range(flat_data.size):
        original = flat_data[i]
        flat_data[i] = original + h
        with no_grad():
            up = build_loss().item()
        flat_data[i] = original - h
        with no_grad():
            down = build_loss().item()
        flat_data[i] = original
        flat_num[i] = (up - down) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
