"""Network linear-transfer machinery.

Builds the end-to-end linear map of a validated acyclic network from its
per-edge transforms, three ways that must agree:

* a state-space form (edge signals as memory elements) whose transfer
  matrices come from a finite Neumann series, since the state matrix of an
  acyclic network is nilpotent;
* a layered factorization T = T_1 T_2 ... T_p induced by a layering, with
  per-entry masks marking which entries are free design variables and which
  are pinned to 0/1 by the topology (identity blocks replicate a signal
  across layers when an edge skips layers);
* a direct edge-by-edge simulation used as an independent oracle.

Conventions (fixed throughout the package):
* edges are kept in canonical (tail, head) order;
* a node's input is the concatenation of its incoming edge signals in
  canonical order;
* receiver observations stack receivers in ascending node order;
* T_l maps the signals crossing the gap below partition V_{l+2} to those
  crossing the gap below V_{l+1} (factor index decreases toward receivers).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, NotNilpotent, UnsupportedTopology
from .graph import Layering, NetworkGraph

TransformMap = Dict[Tuple[int, int], np.ndarray]


@dataclass(frozen=True)
class EdgeTransform:
    """One edge's linear encoder; rows = bandwidth, columns = tail input dim."""

    tail: int
    head: int
    matrix: np.ndarray


def _source_dims_from(
    graph: NetworkGraph,
    transforms: Optional[TransformMap],
    source_dims: Optional[Sequence[int]],
) -> Dict[int, int]:
    """Resolve each source node's signal dimension.

    Explicit dims win; otherwise they are inferred from the column counts of
    the source's edge transforms (which must agree across its out-edges).
    """
    dims: Dict[int, int] = {}
    if source_dims is not None:
        if len(source_dims) != len(graph.sources):
            raise DimensionMismatch(
                f"{len(source_dims)} source dims for {len(graph.sources)} sources"
            )
        return {v: int(d) for v, d in zip(graph.sources, source_dims)}
    if transforms is None:
        raise DimensionMismatch("need either source_dims or transforms")
    for v in graph.sources:
        cols = {transforms[(e.tail, e.head)].shape[1] for e in graph.out_edges(v)}
        if len(cols) > 1:
            raise DimensionMismatch(f"source {v} transforms disagree on input dim")
        dims[v] = cols.pop() if cols else 0
    return dims


def _check_transforms(
    graph: NetworkGraph, transforms: TransformMap, src_dims: Dict[int, int]
) -> None:
    for e in graph.edges:
        key = (e.tail, e.head)
        if key not in transforms:
            raise DimensionMismatch(f"no transform for edge {key}")
        mat = np.atleast_2d(np.asarray(transforms[key], dtype=float))
        in_dim = (
            src_dims[e.tail]
            if e.tail in src_dims
            else graph.degrees(e.tail)[0]
        )
        if mat.shape != (e.bandwidth, in_dim):
            raise DimensionMismatch(
                f"transform of edge {key} is {mat.shape}, expected "
                f"({e.bandwidth}, {in_dim})"
            )


# --------------------------------------------------------------------------- #
# State space
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class StateSpace:
    """State-space form with one memory slot per edge signal.

    State update mu <- F mu + E x + E_tilde z; receiver i observes C_i mu.
    ``edge_offsets`` maps (tail, head) to its slice of the state vector.
    """

    f_mat: np.ndarray
    e_mat: np.ndarray
    e_tilde: np.ndarray
    c_mats: Dict[int, np.ndarray]
    edge_offsets: Dict[Tuple[int, int], slice]
    source_offsets: Dict[int, slice]


def _edge_offsets(graph: NetworkGraph) -> Tuple[Dict[Tuple[int, int], slice], int]:
    offsets, pos = {}, 0
    for e in graph.edges:
        offsets[(e.tail, e.head)] = slice(pos, pos + e.bandwidth)
        pos += e.bandwidth
    return offsets, pos


def _source_offsets(graph: NetworkGraph, src_dims: Dict[int, int]):
    offsets, pos = {}, 0
    for v in graph.sources:
        offsets[v] = slice(pos, pos + src_dims[v])
        pos += src_dims[v]
    return offsets, pos


def build_state_space(
    graph: NetworkGraph,
    transforms: TransformMap,
    source_dims: Optional[Sequence[int]] = None,
) -> StateSpace:
    """Assemble F, E, E_tilde and the per-receiver output selectors C_i."""
    src_dims = _source_dims_from(graph, transforms, source_dims)
    _check_transforms(graph, transforms, src_dims)
    e_off, c_total = _edge_offsets(graph)
    s_off, n_total = _source_offsets(graph, src_dims)

    f_mat = np.zeros((c_total, c_total))
    e_mat = np.zeros((c_total, n_total))
    for e in graph.edges:
        mat = np.atleast_2d(np.asarray(transforms[(e.tail, e.head)], dtype=float))
        rows = e_off[(e.tail, e.head)]
        if e.tail in s_off:
            e_mat[rows, s_off[e.tail]] = mat
        else:
            col = 0
            for e_in in graph.in_edges(e.tail):
                f_mat[rows, e_off[(e_in.tail, e_in.head)]] = mat[
                    :, col : col + e_in.bandwidth
                ]
                col += e_in.bandwidth

    c_mats = {}
    for t in graph.receivers:
        d_in = graph.degrees(t)[0]
        c_i = np.zeros((d_in, c_total))
        row = 0
        for e_in in graph.in_edges(t):
            c_i[row : row + e_in.bandwidth, e_off[(e_in.tail, e_in.head)]] = np.eye(
                e_in.bandwidth
            )
            row += e_in.bandwidth
        c_mats[t] = c_i

    return StateSpace(
        f_mat=f_mat,
        e_mat=e_mat,
        e_tilde=np.eye(c_total),
        c_mats=c_mats,
        edge_offsets=e_off,
        source_offsets=s_off,
    )


@dataclass(frozen=True)
class TransferFunction:
    """Per-receiver transfer matrices and their stacked forms.

    y_i = g[i] @ x + g_tilde[i] @ z; ``t_full`` stacks g over receivers in
    ascending node order (``t_tilde_full`` likewise for the noise path).
    """

    g: Dict[int, np.ndarray]
    g_tilde: Dict[int, np.ndarray]
    t_full: np.ndarray
    t_tilde_full: np.ndarray
    receiver_order: tuple


def transfer_function(ss: StateSpace) -> TransferFunction:
    """Resolve the state recursion: (I - F)^-1 as a finite Neumann sum."""
    c = ss.f_mat.shape[0]
    total = np.eye(c)
    power = ss.f_mat.copy()
    steps = 0
    while np.any(power):
        total += power
        power = power @ ss.f_mat
        steps += 1
        if steps > c + 1:
            raise NotNilpotent("state matrix is not nilpotent (cycle in network?)")

    g, g_tilde = {}, {}
    for t, c_i in ss.c_mats.items():
        resolved = c_i @ total
        g[t] = resolved @ ss.e_mat
        g_tilde[t] = resolved @ ss.e_tilde
    order = tuple(sorted(ss.c_mats))
    t_full = (
        np.vstack([g[t] for t in order]) if order else np.zeros((0, ss.e_mat.shape[1]))
    )
    t_tilde_full = np.vstack([g_tilde[t] for t in order]) if order else np.zeros((0, c))
    return TransferFunction(
        g=g, g_tilde=g_tilde, t_full=t_full, t_tilde_full=t_tilde_full,
        receiver_order=order,
    )


# --------------------------------------------------------------------------- #
# Layered factorization
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Placement:
    """Location of one edge transform inside a layer factor.

    Rows ``row_start : row_start + bandwidth`` and columns ``cols`` (which
    need not be contiguous, since a relay's incoming edges can interleave
    with other signals on the input bus).
    """

    tail: int
    head: int
    row_start: int
    cols: np.ndarray


class FactoredTransform:
    """Layer factors T_1..T_p with per-entry free/pinned masks.

    The masks are the single source of truth for the topology constraints:
    a pinned entry is exactly 0 or 1 and every equality constraint used by
    the optimizers is derived from them, never written by hand.
    """

    def __init__(self, graph: NetworkGraph, layering: Layering,
                 source_dims: Sequence[int]):
        if not graph.edges:
            raise UnsupportedTopology("cannot factor a network with no edges")
        parts = layering.partitions
        node_layer = {}
        for idx, part in enumerate(parts):
            for v in part:
                node_layer[v] = idx + 1  # 1-based partition index
        top = len(parts)
        for v in graph.sources:
            if node_layer[v] != top:
                raise UnsupportedTopology(
                    "layering must place every source in the last partition"
                )
        for t in graph.receivers:
            if node_layer[t] != 1:
                raise UnsupportedTopology(
                    "layering must place every receiver in the first partition"
                )
        for e in graph.edges:
            if node_layer[e.tail] <= node_layer[e.head]:
                raise UnsupportedTopology(
                    f"edge ({e.tail},{e.head}) violates the layering"
                )

        self.graph = graph
        self.layering = layering
        self.node_layer = node_layer
        self.num_factors = top - 1
        self.source_dims = {v: int(d) for v, d in zip(graph.sources, source_dims)}

        src_off, n_total = _source_offsets(graph, self.source_dims)
        self.n_input = n_total

        # Edges crossing gap l (between partitions V_{l+1} and V_l):
        # tail strictly above the gap, head at or below it.
        def gap_edges(level: int) -> list:
            es = [
                e
                for e in graph.edges
                if node_layer[e.tail] >= level + 1 and node_layer[e.head] <= level
            ]
            if level == 1:
                # Output bus: group by receiver so the product aligns with
                # the stacked transfer matrix.
                es.sort(key=lambda e: (e.head, e.tail))
            return es

        self._buses = [gap_edges(level) for level in range(1, self.num_factors + 1)]

        self.layers: List[np.ndarray] = []
        self.free_masks: List[np.ndarray] = []
        self.placements: List[List[Placement]] = []

        for level in range(1, self.num_factors + 1):
            out_bus = self._buses[level - 1]
            if level < self.num_factors:
                in_bus = self._buses[level]
                col_of = {}
                pos = 0
                for e in in_bus:
                    col_of[(e.tail, e.head)] = np.arange(pos, pos + e.bandwidth)
                    pos += e.bandwidth
                n_cols = pos
            else:
                col_of = {v: np.arange(sl.start, sl.stop) for v, sl in src_off.items()}
                n_cols = n_total

            n_rows = sum(e.bandwidth for e in out_bus)
            mat = np.zeros((n_rows, n_cols))
            free = np.zeros((n_rows, n_cols), dtype=bool)
            placed: List[Placement] = []
            row = 0
            for e in out_bus:
                if node_layer[e.tail] == level + 1:
                    if e.tail in self.source_dims:
                        cols = col_of[e.tail]
                    else:
                        cols = np.concatenate(
                            [col_of[(q.tail, q.head)] for q in graph.in_edges(e.tail)]
                        )
                    free[row : row + e.bandwidth][:, cols] = True
                    placed.append(Placement(e.tail, e.head, row, cols))
                else:
                    # Edge skips this gap: replicate its signal with a
                    # pinned identity block.
                    cols = col_of[(e.tail, e.head)]
                    mat[np.arange(row, row + e.bandwidth), cols] = 1.0
                row += e.bandwidth
            self.layers.append(mat)
            self.free_masks.append(free)
            self.placements.append(placed)

    # ------------------------------------------------------------------ #

    @property
    def layer_shapes(self) -> list:
        return [m.shape for m in self.layers]

    def num_free(self, layer_index: int) -> int:
        return int(self.free_masks[layer_index].sum())

    def product(self) -> np.ndarray:
        """T_1 @ T_2 @ ... @ T_p (source vector to receiver observations)."""
        out = self.layers[0]
        for mat in self.layers[1:]:
            out = out @ mat
        return out

    def receiver_row_slices(self) -> Dict[int, slice]:
        """Rows of the product owned by each receiver's observation."""
        slices, row = {}, 0
        for t in sorted(self.graph.receivers):
            d_in = self.graph.degrees(t)[0]
            slices[t] = slice(row, row + d_in)
            row += d_in
        return slices

    def random_init(self, rng: np.random.Generator, scale: float = 1.0) -> None:
        """Fill every free entry with an independent N(0, scale^2) draw."""
        for mat, free in zip(self.layers, self.free_masks):
            mat[free] = scale * rng.standard_normal(int(free.sum()))

    def set_layer_from_vec(self, layer_index: int, t_vec: np.ndarray) -> None:
        """Overwrite the free entries of one layer from a stacked-column
        solution vector; pinned entries are left untouched (exactly)."""
        mat = self.layers[layer_index]
        free = self.free_masks[layer_index]
        candidate = np.asarray(t_vec, dtype=float).reshape(mat.shape, order="F")
        mat[free] = candidate[free]

    def set_edge_matrix(self, tail: int, head: int, matrix: np.ndarray) -> None:
        """Write one edge's transform into its (unique) free block."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        for layer, placed in zip(self.layers, self.placements):
            for pl in placed:
                if (pl.tail, pl.head) == (tail, head):
                    rows = np.arange(pl.row_start, pl.row_start + matrix.shape[0])
                    if matrix.shape != (rows.size, pl.cols.size):
                        raise DimensionMismatch(
                            f"edge ({tail},{head}): matrix is {matrix.shape}, "
                            f"block is ({rows.size}, {pl.cols.size})"
                        )
                    layer[rows[:, None], pl.cols] = matrix
                    return
        raise DimensionMismatch(f"edge ({tail},{head}) has no free block")

    def to_edge_transforms(self) -> TransformMap:
        """Extract the current per-edge transforms from the layer factors."""
        out: TransformMap = {}
        for e in self.graph.edges:
            for layer, placed in zip(self.layers, self.placements):
                for pl in placed:
                    if (pl.tail, pl.head) == (e.tail, e.head):
                        rows = np.arange(pl.row_start, pl.row_start + e.bandwidth)
                        out[(e.tail, e.head)] = layer[rows[:, None], pl.cols].copy()
        return out

    def copy(self) -> "FactoredTransform":
        dup = object.__new__(FactoredTransform)
        dup.__dict__.update(self.__dict__)
        dup.layers = [m.copy() for m in self.layers]
        return dup

    def dump(self) -> str:
        """Human-readable sketch of each factor's block structure."""
        lines = []
        for k, (mat, free) in enumerate(zip(self.layers, self.free_masks)):
            lines.append(f"T_{k + 1}: {mat.shape[0]}x{mat.shape[1]}")
            for r in range(mat.shape[0]):
                row = "".join(
                    "*" if free[r, c] else ("1" if mat[r, c] == 1.0 else ".")
                    for c in range(mat.shape[1])
                )
                lines.append("  " + row)
        return "\n".join(lines)


def factor_layers(
    graph: NetworkGraph,
    layering: Layering,
    transforms: TransformMap,
    source_dims: Optional[Sequence[int]] = None,
) -> FactoredTransform:
    """Factor the network transfer into layer matrices with masks.

    The product over layers reproduces the noiseless transfer matrix of
    :func:`transfer_function` exactly.
    """
    src_dims = _source_dims_from(graph, transforms, source_dims)
    _check_transforms(graph, transforms, src_dims)
    ft = FactoredTransform(
        graph, layering, [src_dims[v] for v in graph.sources]
    )
    for (tail, head), mat in transforms.items():
        ft.set_edge_matrix(tail, head, mat)
    return ft


def masks_to_equalities(
    ft: FactoredTransform, layer_index: int
) -> tuple[np.ndarray, np.ndarray]:
    """Topology constraints of one layer in canonical form.

    Returns (Phi, phi) acting on the stacked columns of T_layer: one row per
    pinned entry, each row selecting exactly one coordinate.
    """
    if not (0 <= layer_index < ft.num_factors):
        raise IndexError(f"layer {layer_index} out of range")
    mat = ft.layers[layer_index]
    free = ft.free_masks[layer_index]
    n_rows, n_cols = mat.shape
    pinned = ~free
    # Column-major positions of the pinned entries.
    pos = np.flatnonzero(pinned.reshape(-1, order="F"))
    phi = np.zeros((pos.size, n_rows * n_cols))
    phi[np.arange(pos.size), pos] = 1.0
    # Pinned entries hold exactly 0.0 or 1.0 by construction.
    pin_vals = mat.reshape(-1, order="F")[pos].copy()
    return phi, pin_vals


def simulate_flow(
    graph: NetworkGraph,
    transforms: TransformMap,
    x: np.ndarray,
    z: Optional[np.ndarray] = None,
    source_dims: Optional[Sequence[int]] = None,
) -> Dict[int, np.ndarray]:
    """Propagate one sample edge by edge in topological order.

    ``x`` stacks the source signals in source order; ``z`` stacks one noise
    sample per edge in canonical edge order (zeros when omitted).  Returns
    each receiver's observation vector; equals G_i x + G_tilde_i z.
    """
    src_dims = _source_dims_from(graph, transforms, source_dims)
    _check_transforms(graph, transforms, src_dims)
    s_off, n_total = _source_offsets(graph, src_dims)
    e_off, c_total = _edge_offsets(graph)
    x = np.asarray(x, dtype=float).ravel()
    if x.size != n_total:
        raise DimensionMismatch(f"x has {x.size} entries, expected {n_total}")
    if z is None:
        z = np.zeros(c_total)
    z = np.asarray(z, dtype=float).ravel()
    if z.size != c_total:
        raise DimensionMismatch(f"z has {z.size} entries, expected {c_total}")

    edge_signal: Dict[Tuple[int, int], np.ndarray] = {}
    for v in graph.topological_order():
        if v in s_off:
            incoming = x[s_off[v]]
        else:
            ins = graph.in_edges(v)
            incoming = (
                np.concatenate([edge_signal[(e.tail, e.head)] for e in ins])
                if ins
                else np.zeros(0)
            )
        for e in graph.out_edges(v):
            mat = np.atleast_2d(np.asarray(transforms[(e.tail, e.head)], dtype=float))
            edge_signal[(e.tail, e.head)] = mat @ incoming + z[e_off[(e.tail, e.head)]]

    out = {}
    for t in graph.receivers:
        ins = graph.in_edges(t)
        out[t] = (
            np.concatenate([edge_signal[(e.tail, e.head)] for e in ins])
            if ins
            else np.zeros(0)
        )
    return out
