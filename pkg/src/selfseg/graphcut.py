"""Three-label Potts energy on the pixel grid, minimized by expansion moves.

Each expansion move is a binary min-cut solved exactly by max-flow; cycling
moves over the three labels drives the labeling energy monotonically down.
A true three-terminal multiway cut is NP-hard, so global optimality is not
claimed; the binary subproblems are submodular and solved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _bk
from .dataset import CYST, OTHER, REGION_CODES, TISSUE, Image, LabelMap, _frozen
from .errors import DimensionError

DEFAULT_DELTA = 0.003
CAP_SATURATION = 1e9
DEFAULT_MAX_SWEEPS = 10

# Fixed sweep order of expansion labels.
EXPANSION_ORDER = (CYST, TISSUE, OTHER)

PAIRWISE_MODES = ("potts_labels", "literal_values")


@dataclass(frozen=True)
class EnergyParams:
    """Pairwise penalty configuration for the 4-connected grid."""

    delta: float = DEFAULT_DELTA
    pairwise_mode: str = "potts_labels"
    neighborhood: int = 4

    def __post_init__(self):
        if not (np.isfinite(self.delta) and self.delta >= 0.0):
            raise ValueError(f"delta must be finite and >= 0, got {self.delta}")
        if self.pairwise_mode not in PAIRWISE_MODES:
            raise ValueError(f"pairwise_mode must be one of {PAIRWISE_MODES}")
        if self.neighborhood != 4:
            raise ValueError("only the 4-connected neighborhood is supported")


@dataclass(frozen=True)
class GridEnergy:
    """Per-pixel data costs plus per-edge Potts weights.

    data_cost is indexed by label code on its last axis; h_weight[y, x]
    weighs the edge (y,x)-(y,x+1) and v_weight[y, x] the edge (y,x)-(y+1,x).
    """

    data_cost: np.ndarray  # float64, (height, width, 3)
    h_weight: np.ndarray   # float64, (height, width-1)
    v_weight: np.ndarray   # float64, (height-1, width)

    def __post_init__(self):
        dc = np.asarray(self.data_cost, dtype=np.float64)
        if dc.ndim != 3 or dc.shape[2] != 3:
            raise DimensionError(f"data_cost must be (h, w, 3), got {dc.shape}")
        h, w = dc.shape[:2]
        hw = np.asarray(self.h_weight, dtype=np.float64)
        vw = np.asarray(self.v_weight, dtype=np.float64)
        if hw.shape != (h, max(w - 1, 0)):
            raise DimensionError(f"h_weight must be {(h, w - 1)}, got {hw.shape}")
        if vw.shape != (max(h - 1, 0), w):
            raise DimensionError(f"v_weight must be {(h - 1, w)}, got {vw.shape}")
        for name, arr in (("data_cost", dc), ("h_weight", hw), ("v_weight", vw)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            if arr.size and arr.min() < 0.0:
                raise ValueError(f"{name} must be >= 0")
        object.__setattr__(self, "data_cost", _frozen(dc, np.float64))
        object.__setattr__(self, "h_weight", _frozen(hw, np.float64))
        object.__setattr__(self, "v_weight", _frozen(vw, np.float64))

    @property
    def height(self) -> int:
        return self.data_cost.shape[0]

    @property
    def width(self) -> int:
        return self.data_cost.shape[1]


@dataclass(frozen=True)
class FlowNetwork:
    """Directed arcs with non-negative capacities between two terminals.

    Arcs into the source or out of the sink are disallowed; capacities
    saturate at CAP_SATURATION, so infinities never enter the solver.
    """

    node_count: int
    tails: np.ndarray  # int64, (n_arcs,)
    heads: np.ndarray  # int64, (n_arcs,)
    caps: np.ndarray   # float64, (n_arcs,)
    source: int
    sink: int

    def __post_init__(self):
        if self.node_count < 2:
            raise ValueError("network needs at least the two terminals")
        for t in (self.source, self.sink):
            if not 0 <= t < self.node_count:
                raise ValueError(f"terminal {t} out of range")
        if self.source == self.sink:
            raise ValueError("source and sink must differ")
        tails = np.asarray(self.tails, dtype=np.int64)
        heads = np.asarray(self.heads, dtype=np.int64)
        caps = np.asarray(self.caps, dtype=np.float64)
        if not (tails.ndim == heads.ndim == caps.ndim == 1):
            raise DimensionError("tails, heads, caps must be 1-D")
        if not (tails.size == heads.size == caps.size):
            raise DimensionError("tails, heads, caps must have equal length")
        if tails.size:
            ids = np.concatenate([tails, heads])
            if ids.min() < 0 or ids.max() >= self.node_count:
                raise ValueError("arc endpoint out of range")
            if np.any(heads == self.source) or np.any(tails == self.sink):
                raise ValueError("arcs into the source or out of the sink are not allowed")
            if np.any(np.isnan(caps)) or caps.min() < 0.0:
                raise ValueError("capacities must be >= 0 and not NaN")
        caps = np.minimum(caps, CAP_SATURATION)
        object.__setattr__(self, "tails", _frozen(tails, np.int64))
        object.__setattr__(self, "heads", _frozen(heads, np.int64))
        object.__setattr__(self, "caps", _frozen(caps, np.float64))


def _solve(network: FlowNetwork):
    """Run the max-flow kernel; returns internals for flow verification.

    Returns (flow_value, source_side, inner, rcap, tr_cap0, tr_cap, others)
    where inner indexes network arcs between non-terminals, rcap holds the
    residual sister pairs (2i is inner arc i), and others maps internal node
    ids back to network ids.
    """
    tails, heads, caps = network.tails, network.heads, network.caps
    src, snk = network.source, network.sink

    others = np.array(
        [v for v in range(network.node_count) if v != src and v != snk],
        dtype=np.int64,
    )
    m = others.size
    index = np.full(network.node_count, -1, dtype=np.int64)
    index[others] = np.arange(m)

    is_src = tails == src
    is_snk = heads == snk
    direct = is_src & is_snk
    loops = tails == heads

    flow0 = float(caps[direct].sum())
    cap_s = np.zeros(m, dtype=np.float64)
    cap_t = np.zeros(m, dtype=np.float64)
    sel = is_src & ~direct
    np.add.at(cap_s, index[heads[sel]], caps[sel])
    sel = is_snk & ~direct
    np.add.at(cap_t, index[tails[sel]], caps[sel])

    # Merge the two t-links per node: the overlap flows straight through.
    flow0 += float(np.minimum(cap_s, cap_t).sum())
    tr_cap0 = cap_s - cap_t
    tr_cap = tr_cap0.copy()

    inner = np.flatnonzero(~is_src & ~is_snk & ~loops)
    n_in = inner.size
    atails = np.empty(2 * n_in, dtype=np.int64)
    aheads = np.empty(2 * n_in, dtype=np.int64)
    rcap = np.zeros(2 * n_in, dtype=np.float64)
    atails[0::2] = index[tails[inner]]
    atails[1::2] = index[heads[inner]]
    aheads[0::2] = index[heads[inner]]
    aheads[1::2] = index[tails[inner]]
    rcap[0::2] = caps[inner]

    first, nxt = _bk.build_adjacency(m, atails)
    flow = flow0 + _bk.bk_maxflow(first, nxt, aheads, rcap, tr_cap)
    seen = _bk.residual_source_side(first, nxt, aheads, rcap, tr_cap)
    side = frozenset({src} | set(int(v) for v in others[seen == 1]))
    return flow, side, inner, rcap, tr_cap0, tr_cap, others


def maxflow(network: FlowNetwork) -> tuple[float, frozenset]:
    """Maximum s-t flow and the source side of a minimum cut.

    The kernel reuses its source/sink search trees across augmentations;
    the cut is read off the final residual graph, so flow value and cut
    capacity agree exactly.
    """
    flow, side = _solve(network)[:2]
    return flow, side


def build_energy(image, centers, params: EnergyParams = EnergyParams()) -> GridEnergy:
    """Assemble data costs (I_p - c_l)^2 and pairwise weights for an image.

    centers are the ascending intensity centers (cyst, tissue, other
    brightness order); label code l pays the squared residual to its
    center. In literal_values mode an edge is weighted only when the two
    pixel intensities differ, the loose reading of the continuity term.
    """
    if isinstance(image, Image):
        pixels = image.pixels
    else:
        pixels = np.asarray(image, dtype=np.float64)
        if pixels.ndim != 2:
            raise DimensionError(f"image must be 2-D, got shape {pixels.shape}")
    c = [float(v) for v in centers]
    if len(c) != 3:
        raise ValueError(f"need 3 centers, got {len(c)}")
    if not (c[0] < c[1] < c[2]):
        raise ValueError(f"centers must be strictly increasing, got {tuple(c)}")

    center_of = np.empty(3, dtype=np.float64)
    center_of[CYST] = c[0]
    center_of[TISSUE] = c[1]
    center_of[OTHER] = c[2]
    data_cost = (pixels[:, :, None] - center_of[None, None, :]) ** 2

    h, w = pixels.shape
    if params.pairwise_mode == "potts_labels":
        hw = np.full((h, w - 1), params.delta, dtype=np.float64)
        vw = np.full((h - 1, w), params.delta, dtype=np.float64)
    else:
        hw = params.delta * (pixels[:, :-1] != pixels[:, 1:])
        vw = params.delta * (pixels[:-1, :] != pixels[1:, :])
    return GridEnergy(data_cost=data_cost, h_weight=hw, v_weight=vw)


def _as_region_labels(labels, energy: GridEnergy) -> np.ndarray:
    arr = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    arr = arr.astype(np.uint8, copy=False)
    if arr.shape != (energy.height, energy.width):
        raise DimensionError(
            f"labels shape {arr.shape} does not match energy grid "
            f"{(energy.height, energy.width)}"
        )
    if not np.isin(arr, REGION_CODES).all():
        raise ValueError("labels must be limited to Cyst/Tissue/Other")
    return arr


def total_energy(labels, energy: GridEnergy) -> float:
    """Data term plus delta-weighted label discontinuities over N4 edges."""
    lab = _as_region_labels(labels, energy)
    data = np.take_along_axis(energy.data_cost, lab[:, :, None].astype(np.intp), axis=2)
    pair = (energy.h_weight * (lab[:, :-1] != lab[:, 1:])).sum()
    pair += (energy.v_weight * (lab[:-1, :] != lab[1:, :])).sum()
    return float(data.sum() + pair)


def expansion_move(labels, alpha: int, energy: GridEnergy) -> LabelMap:
    """Best single-label expansion: each pixel keeps its label or takes alpha.

    The binary choice field is solved exactly as a min cut; the move is
    applied only if it strictly lowers the total energy, so the result
    never regresses the input labeling.
    """
    if alpha not in REGION_CODES:
        raise ValueError(f"alpha must be a region code, got {alpha}")
    lab = _as_region_labels(labels, energy)
    h, w = lab.shape
    n = h * w

    # Unary terms: cost of keeping (x=0) vs switching to alpha (x=1).
    e0 = np.take_along_axis(energy.data_cost, lab[:, :, None].astype(np.intp), axis=2)[:, :, 0].copy()
    e1 = np.broadcast_to(energy.data_cost[:, :, alpha], (h, w)).copy()

    # Pairwise terms, decomposed per edge into unary shifts plus one n-link:
    #   A = w[lp != lq]  B = w[lp != a]  C = w[a != lq]  (D = w[a != a] = 0)
    # n-link capacity B + C - A is non-negative for any Potts weight.
    ncap_h = None
    ncap_v = None
    if w > 1:
        lp, lq, wgt = lab[:, :-1], lab[:, 1:], energy.h_weight
        a_ = wgt * (lp != lq)
        b_ = wgt * (lp != alpha)
        c_ = wgt * (lq != alpha)
        cma = c_ - a_
        e1[:, :-1] += np.maximum(cma, 0.0)
        e0[:, :-1] += np.maximum(-cma, 0.0)
        e0[:, 1:] += c_
        ncap_h = b_ + c_ - a_
    if h > 1:
        lp, lq, wgt = lab[:-1, :], lab[1:, :], energy.v_weight
        a_ = wgt * (lp != lq)
        b_ = wgt * (lp != alpha)
        c_ = wgt * (lq != alpha)
        cma = c_ - a_
        e1[:-1, :] += np.maximum(cma, 0.0)
        e0[:-1, :] += np.maximum(-cma, 0.0)
        e0[1:, :] += c_
        ncap_v = b_ + c_ - a_

    pid = np.arange(n, dtype=np.int64).reshape(h, w)
    src, snk = n, n + 1
    tails = [np.full(n, src, dtype=np.int64), pid.ravel()]
    heads = [pid.ravel(), np.full(n, snk, dtype=np.int64)]
    caps = [e1.ravel(), e0.ravel()]
    if ncap_h is not None:
        tails.append(pid[:, :-1].ravel())
        heads.append(pid[:, 1:].ravel())
        caps.append(ncap_h.ravel())
    if ncap_v is not None:
        tails.append(pid[:-1, :].ravel())
        heads.append(pid[1:, :].ravel())
        caps.append(ncap_v.ravel())
    tails = np.concatenate(tails)
    heads = np.concatenate(heads)
    caps = np.concatenate(caps)
    keep = caps > 0.0
    net = FlowNetwork(
        node_count=n + 2,
        tails=tails[keep],
        heads=heads[keep],
        caps=caps[keep],
        source=src,
        sink=snk,
    )
    _, side = maxflow(net)

    on_source = np.zeros(n, dtype=bool)
    idx = [v for v in side if v < n]
    on_source[idx] = True
    candidate = lab.copy()
    candidate.reshape(-1)[~on_source] = alpha

    if total_energy(candidate, energy) < total_energy(lab, energy):
        return LabelMap(candidate)
    return LabelMap(lab)


def alpha_expansion(init, energy: GridEnergy, max_sweeps: int = DEFAULT_MAX_SWEEPS,
                    trace: list | None = None) -> LabelMap:
    """Cycle expansion moves over (Cyst, Tissue, Other) until energy stalls.

    trace, when given, collects the total energy before any move and after
    each move; the sequence is non-increasing by construction.
    """
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be >= 1")
    current = LabelMap(_as_region_labels(init, energy))
    e_cur = total_energy(current, energy)
    if trace is not None:
        trace.append(e_cur)
    for _ in range(max_sweeps):
        e_start = e_cur
        for alpha in EXPANSION_ORDER:
            current = expansion_move(current, alpha, energy)
            e_cur = total_energy(current, energy)
            if trace is not None:
                trace.append(e_cur)
        if e_cur >= e_start:
            break
    return current


def refine(image, kmeans_labels, centers, params: EnergyParams = EnergyParams(),
           max_sweeps: int = DEFAULT_MAX_SWEEPS, trace: list | None = None) -> LabelMap:
    """Graph-cut cleanup of a k-means labeling; the level-0 teacher output."""
    energy = build_energy(image, centers, params)
    return alpha_expansion(kmeans_labels, energy, max_sweeps=max_sweeps, trace=trace)
