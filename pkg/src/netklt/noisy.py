"""Alternating design for single-layer networks with channel noise and
per-edge transmit power caps.

The decoder step is the regularized linear least-squares estimator; the
encoder step solves a QCQP over the stacked global transform, with topology
zeros as equality constraints and one quadratic cap per edge.  Power
allocation across subspaces emerges from the caps being active at the
optimum.  Multi-layer noisy networks are rejected: noise filtered through
relays changes the problem class and is out of scope here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import (
    MissingPowerCap,
    MultiLayerUnsupported,
    SingularInnovationGram,
)
from .graph import NetworkGraph
from .ideal import ModelAssembly, llse_decoder
from .linalg import kron, vec
from .solvers import QcqpProblem, solve_qcqp
from .sources import SourceModel
from .transfer import FactoredTransform, masks_to_equalities


def llse_decoder_noisy(
    g: np.ndarray,
    sigma_x: np.ndarray,
    sigma_rx: np.ndarray,
    sigma_z: np.ndarray,
) -> np.ndarray:
    """Optimal linear estimator of r from y = G x + z.

    B = sigma_rx G^T (G sigma_x G^T + sigma_z)^-1.  A noise covariance of
    exactly zero falls back to the noiseless (pseudo-inverse) decoder; a
    singular nonzero noise covariance with a singular gram matrix raises
    SingularInnovationGram.
    """
    g = np.atleast_2d(np.asarray(g, dtype=float))
    sigma_z = np.atleast_2d(np.asarray(sigma_z, dtype=float))
    if not np.any(sigma_z):
        return llse_decoder(g, sigma_x, sigma_rx)
    gram = g @ sigma_x @ g.T + sigma_z
    eigs = np.linalg.eigvalsh(0.5 * (gram + gram.T))
    if eigs[0] <= 1e-13 * max(eigs[-1], 1e-300):
        raise SingularInnovationGram(
            "observation covariance is singular (singular noise covariance "
            "combined with a rank-deficient transfer)"
        )
    return np.linalg.solve(gram, g @ sigma_rx.T).T


@dataclass(frozen=True)
class PowerConstraint:
    """Quadratic cap t^T gamma t <= cap on the stacked global transform,
    encoding one edge's transmit power tr(L sigma_tail L^T) <= cap."""

    tail: int
    head: int
    gamma: np.ndarray
    cap: float


def _single_layer_transform(graph: NetworkGraph, model: SourceModel) -> FactoredTransform:
    layering = graph.layer_partition()
    if layering.num_factors != 1:
        raise MultiLayerUnsupported(
            "power-constrained optimization handles single-layer networks "
            f"only (this layering has {layering.num_factors} factors)"
        )
    return FactoredTransform(graph, layering, model.block_dims)


def power_matrices(graph: NetworkGraph, model: SourceModel) -> List[PowerConstraint]:
    """One PSD quadratic form per edge over vec(T) of the single-layer map.

    Rows of T belonging to the edge and columns of its source block pick out
    vec(L); within those coordinates the form is the source covariance
    repeated per row, so t^T gamma t reproduces tr(L sigma L^T) exactly.
    """
    ft = _single_layer_transform(graph, model)
    n_rows, n_cols = ft.layers[0].shape
    nt = n_rows * n_cols
    out = []
    for placement in ft.placements[0]:
        edge = next(
            e for e in graph.edges if (e.tail, e.head) == (placement.tail, placement.head)
        )
        if edge.power_cap is None:
            raise MissingPowerCap(f"edge ({edge.tail},{edge.head}) has no power cap")
        src_index = graph.sources.index(edge.tail)
        sigma_src = model.sigma_x[model.block_slice(src_index), model.block_slice(src_index)]
        gamma = np.zeros((nt, nt))
        for r in range(edge.bandwidth):
            row = placement.row_start + r
            idx = placement.cols * n_rows + row  # column-major positions
            gamma[np.ix_(idx, idx)] += sigma_src
        out.append(
            PowerConstraint(edge.tail, edge.head, gamma=gamma, cap=float(edge.power_cap))
        )
    return out


def edge_powers(
    graph: NetworkGraph, model: SourceModel, ft: FactoredTransform
) -> Dict[Tuple[int, int], float]:
    """Transmit power tr(L sigma L^T) currently used on each edge."""
    out = {}
    transforms = ft.to_edge_transforms()
    for e in graph.edges:
        src_index = graph.sources.index(e.tail)
        sl = model.block_slice(src_index)
        l_mat = transforms[(e.tail, e.head)]
        out[(e.tail, e.head)] = float(np.trace(l_mat @ model.sigma_x[sl, sl] @ l_mat.T))
    return out


@dataclass
class NoisySolveState:
    """Result of one (best-of-restarts) noisy optimization run."""

    factored: FactoredTransform
    decoders: Dict[int, np.ndarray]
    distortion: float
    trace: List[float]
    iterations: int
    restart_index: int
    all_traces: List[List[float]] = field(default_factory=list)

    def transfer_matrix(self) -> np.ndarray:
        return self.factored.product()


def _noise_blocks(graph: NetworkGraph, assembly: ModelAssembly) -> np.ndarray:
    """Global observation-noise covariance, receivers stacked in order."""
    d = assembly.d_total
    sigma_z = np.zeros((d, d))
    for t in assembly.receivers:
        row = assembly.obs_slices[t].start
        for e in graph.in_edges(t):
            cov = e.noise_cov
            blk = np.zeros((e.bandwidth, e.bandwidth)) if cov is None else np.asarray(cov)
            sigma_z[row : row + e.bandwidth, row : row + e.bandwidth] = blk
            row += e.bandwidth
    return sigma_z


def optimize_noisy(
    graph: NetworkGraph,
    model: SourceModel,
    weights: Optional[Dict[int, float]] = None,
    eps: float = 1e-8,
    n_max: int = 500,
    restarts: int = 5,
    seed=0,
    solver_tol: float = 1e-10,
) -> NoisySolveState:
    """Best-of-restarts alternating optimization under power caps.

    Initial transforms draw free entries i.i.d. normal, then rescale each
    edge block to sit at 90% of its cap (a strictly feasible start).  Edges
    with a zero cap are pinned to zero instead of carrying a degenerate
    constraint.  The encoder step warm-starts the interior-point solver at
    the current transform and keeps the previous iterate whenever numerics
    would otherwise let the objective creep upward, so the recorded
    distortion trace is nonincreasing.
    """
    graph.validate()
    skeleton = _single_layer_transform(graph, model)
    assembly = ModelAssembly.build(graph, model, weights)
    constraints = power_matrices(graph, model)
    phi, phi_rhs = masks_to_equalities(skeleton, 0)

    # Zero-cap edges transmit nothing: pin their entries, drop their caps.
    n_rows, n_cols = skeleton.layers[0].shape
    extra_rows = []
    active_constraints = []
    zero_cap_edges = set()
    for pc in constraints:
        if pc.cap <= 0.0:
            zero_cap_edges.add((pc.tail, pc.head))
        else:
            active_constraints.append(pc)
    if zero_cap_edges:
        for placement in skeleton.placements[0]:
            if (placement.tail, placement.head) in zero_cap_edges:
                for r in range(
                    placement.row_start,
                    placement.row_start
                    + next(
                        e.bandwidth
                        for e in graph.edges
                        if (e.tail, e.head) == (placement.tail, placement.head)
                    ),
                ):
                    for c in placement.cols:
                        row = np.zeros(n_rows * n_cols)
                        row[c * n_rows + r] = 1.0
                        extra_rows.append(row)
        phi = np.vstack([phi] + [np.array(extra_rows)])
        phi_rhs = np.concatenate([phi_rhs, np.zeros(len(extra_rows))])

    sigma_z = _noise_blocks(graph, assembly)
    wz = assembly.w_mat  # diagonal weighting

    children = np.random.SeedSequence(seed).spawn(restarts)
    best: Optional[NoisySolveState] = None
    all_traces: List[List[float]] = []

    for k in range(restarts):
        rng = np.random.default_rng(children[k])
        ft = skeleton.copy()
        ft.random_init(rng)
        _rescale_to_power(graph, model, ft, margin=0.9, zero_caps=zero_cap_edges)
        trace: List[float] = []
        prev = np.inf
        prev_obj = np.inf
        decoders = None
        for _ in range(n_max):
            t_full = ft.product()
            decoders = {}
            for t in assembly.receivers:
                g_i = t_full[assembly.obs_slices[t]]
                sigma_rx = assembly.sigma_xr[:, assembly.target_slices[t]].T
                sl = assembly.obs_slices[t]
                decoders[t] = llse_decoder_noisy(
                    g_i, assembly.sigma_x, sigma_rx, sigma_z[sl, sl]
                )
            b_global = assembly.block_decoder(decoders)

            wb = wz @ b_global
            p_mat = kron(assembly.sigma_x, wb.T @ wb)
            p_vec = -2.0 * vec(wb.T @ wz @ assembly.sigma_xr.T)
            noise_term = float(np.trace(wb @ sigma_z @ wb.T))
            p_scalar = assembly.trace_wrw + noise_term

            prob = QcqpProblem(
                p_mat=p_mat,
                p_vec=p_vec,
                p_scalar=p_scalar,
                phi=phi,
                phi_rhs=phi_rhs,
                quad_ineqs=[(pc.gamma, pc.cap) for pc in active_constraints],
            )
            t_old = vec(ft.layers[0])
            t_new = solve_qcqp(prob, tol=solver_tol, start=t_old)
            if prob.objective(t_new) > prob.objective(t_old):
                t_new = t_old  # keep the better feasible point
            ft.set_layer_from_vec(0, t_new)

            d_now = _noisy_distortion(assembly, b_global, ft.product(), sigma_z)
            trace.append(d_now)
            if abs(prev - d_now) <= eps:
                break
            prev = d_now
        all_traces.append(trace)
        state = NoisySolveState(
            factored=ft,
            decoders=decoders,
            distortion=trace[-1],
            trace=trace,
            iterations=len(trace),
            restart_index=k,
        )
        if best is None or state.distortion < best.distortion:
            best = state

    best.all_traces = all_traces
    return best


def _noisy_distortion(assembly, b_global, t_full, sigma_z) -> float:
    a = assembly.w_mat @ b_global
    at = a @ t_full
    cross = assembly.w_mat @ assembly.sigma_xr.T
    return float(
        assembly.trace_wrw
        - 2.0 * np.sum(at * cross)
        + np.sum((at @ assembly.sigma_x) * at)
        + np.sum((a @ sigma_z) * a)
    )


def _rescale_to_power(graph, model, ft, margin, zero_caps) -> None:
    transforms = ft.to_edge_transforms()
    for e in graph.edges:
        key = (e.tail, e.head)
        l_mat = transforms[key]
        if key in zero_caps:
            ft.set_edge_matrix(e.tail, e.head, np.zeros_like(l_mat))
            continue
        src_index = graph.sources.index(e.tail)
        sl = model.block_slice(src_index)
        used = float(np.trace(l_mat @ model.sigma_x[sl, sl] @ l_mat.T))
        if used > 0 and e.power_cap is not None:
            ft.set_edge_matrix(
                e.tail, e.head, l_mat * np.sqrt(margin * e.power_cap / used)
            )
