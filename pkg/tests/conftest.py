import numpy as np
import pytest

import lipcert as lc


def make_identity_net(depth: int, width: int) -> lc.Network:
    return lc.from_weights([np.eye(width) for _ in range(depth)])


def make_scalar_chain(*weights: float) -> lc.Network:
    return lc.from_weights([np.array([[w]]) for w in weights])


def protocol_net(depth: int, width: int, seed: int) -> lc.Network:
    """Random network in the experimental shape: 4 inputs, 1 output."""
    dims = [4] + [width] * (depth - 1) + [1]
    return lc.random_network(depth, dims, seed)


@pytest.fixture(scope="session")
def suite_networks():
    """The seeded benchmark suite: depths x widths x seeds."""
    nets = {}
    for depth in (2, 5, 10, 20):
        for width in (5, 10, 20):
            for seed in range(5):
                nets[(depth, width, seed)] = protocol_net(depth, width, seed)
    return nets
