"""Independent brute-force references used by unit and acceptance tests."""

import itertools
from functools import lru_cache

import numpy as np

from selfseg.dataset import CYST, OTHER, TISSUE
from selfseg.graphcut import FlowNetwork, GridEnergy

REGION_ORDER = (OTHER, TISSUE, CYST)  # == label codes 0, 1, 2


def cut_capacity(network: FlowNetwork, side) -> float:
    """Capacity of the cut (side, complement) in the original network."""
    side = frozenset(side)
    total = 0.0
    for t, h, c in zip(network.tails, network.heads, network.caps):
        if int(t) in side and int(h) not in side:
            total += float(c)
    return total


def brute_force_min_cut(network: FlowNetwork) -> float:
    """Minimum s-t cut by enumerating every partition of non-terminal nodes."""
    others = [v for v in range(network.node_count) if v not in (network.source, network.sink)]
    best = np.inf
    for bits in itertools.product((0, 1), repeat=len(others)):
        side = {network.source} | {v for v, b in zip(others, bits) if b}
        best = min(best, cut_capacity(network, side))
    return float(best)


def random_network(rng: np.random.Generator, max_nodes: int = 8, max_cap: int = 10) -> FlowNetwork:
    """Random small integer-capacity network with source 0, sink n-1."""
    n = int(rng.integers(2, max_nodes + 1))
    tails, heads, caps = [], [], []
    for t in range(n - 1):          # no arcs out of the sink
        for h in range(1, n):       # no arcs into the source
            if t == h:
                continue
            if rng.random() < 0.45:
                tails.append(t)
                heads.append(h)
                caps.append(int(rng.integers(0, max_cap + 1)))
    if not tails:
        tails, heads, caps = [0], [n - 1], [int(rng.integers(0, max_cap + 1))]
    return FlowNetwork(n, np.array(tails), np.array(heads), np.array(caps, dtype=float), 0, n - 1)


@lru_cache(maxsize=8)
def _all_labelings(n_pixels: int) -> np.ndarray:
    """(3^n, n) array of every 3-label assignment, as label codes."""
    grids = np.meshgrid(*([np.array(REGION_ORDER, dtype=np.int8)] * n_pixels), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def exhaustive_grid_optimum(energy: GridEnergy) -> float:
    """Minimum total energy over all 3^(h*w) labelings, fully vectorized."""
    h, w = energy.height, energy.width
    labelings = _all_labelings(h * w)
    dc = energy.data_cost.reshape(-1, 3)
    total = dc[np.arange(h * w)[None, :], labelings].sum(axis=1)

    lab2d = labelings.reshape(-1, h, w)
    if w > 1:
        diff = lab2d[:, :, :-1] != lab2d[:, :, 1:]
        total = total + (diff * energy.h_weight[None]).sum(axis=(1, 2))
    if h > 1:
        diff = lab2d[:, :-1, :] != lab2d[:, 1:, :]
        total = total + (diff * energy.v_weight[None]).sum(axis=(1, 2))
    return float(total.min())


def exhaustive_binary_optimum(energy: GridEnergy, labels=(CYST, TISSUE)) -> float:
    """Minimum total energy over all labelings restricted to two labels."""
    h, w = energy.height, energy.width
    n = h * w
    la, lb = labels
    best = np.inf
    dc = energy.data_cost.reshape(-1, 3)
    for bits in range(1 << n):
        lab = np.array([(la if (bits >> i) & 1 else lb) for i in range(n)], dtype=np.int8)
        cost = dc[np.arange(n), lab].sum()
        lab2d = lab.reshape(h, w)
        cost += ((lab2d[:, :-1] != lab2d[:, 1:]) * energy.h_weight).sum()
        cost += ((lab2d[:-1, :] != lab2d[1:, :]) * energy.v_weight).sum()
        best = min(best, float(cost))
    return best
