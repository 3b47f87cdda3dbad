"""Alternating design of layered encoders and receiver estimators for
noiseless networks.

Each outer iteration first refreshes every receiver's linear least-squares
decoder for the current end-to-end transfer, then sweeps the layer factors
in order, solving an equality-constrained QP per factor (the weighted MSE is
an exact quadratic in one factor when everything else is fixed).  Both steps
are exact minimizations over their own block, so the distortion sequence is
nonincreasing; random restarts guard against poor stationary points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .graph import NetworkGraph
from .linalg import kron, pinv, vec
from .solvers import solve_eq_qp
from .sources import SourceModel, build_weight_matrix
from .transfer import FactoredTransform, masks_to_equalities


def llse_decoder(g: np.ndarray, sigma_x: np.ndarray, sigma_rx: np.ndarray) -> np.ndarray:
    """Optimal linear estimator of r from y = G x.

    B = sigma_rx G^T (G sigma_x G^T)^+ ; the pseudo-inverse covers
    rank-deficient transfers (unused observation directions get zero gain).
    """
    g = np.atleast_2d(np.asarray(g, dtype=float))
    gram = g @ sigma_x @ g.T
    return sigma_rx @ g.T @ pinv(gram)


@dataclass
class ModelAssembly:
    """Stacked statistics shared by the optimizer inner loops.

    Receivers are stacked in ascending node order, matching the row order of
    the factored transform product.
    """

    receivers: tuple
    sigma_x: np.ndarray
    sigma_xr: np.ndarray          # n x r_total
    w_mat: np.ndarray             # r_total x r_total, diagonal
    trace_wrw: float              # tr(W Sigma_r W^T)
    target_slices: Dict[int, slice]
    obs_slices: Dict[int, slice]
    target_traces: Dict[int, float]  # tr(Sigma_r_i) per receiver

    @classmethod
    def build(
        cls,
        graph: NetworkGraph,
        model: SourceModel,
        weights: Optional[Dict[int, float]] = None,
    ) -> "ModelAssembly":
        receivers = tuple(sorted(graph.receivers))
        if weights is not None:
            model = SourceModel(
                block_dims=model.block_dims,
                sigma_x=model.sigma_x,
                targets=model.targets,
                weights=dict(weights),
                gaussian=model.gaussian,
            )
        w_mat = build_weight_matrix(model, receivers)
        blocks, t_slices, pos = [], {}, 0
        trace_wrw = 0.0
        target_traces = {}
        for t in receivers:
            spec = model.targets[t]
            blocks.append(spec.sigma_rx.T)
            t_slices[t] = slice(pos, pos + spec.dim)
            pos += spec.dim
            target_traces[t] = float(np.trace(spec.sigma_r))
            trace_wrw += model.weight_of(t) * target_traces[t]
        sigma_xr = np.hstack(blocks) if blocks else np.zeros((model.n, 0))
        obs_slices, row = {}, 0
        for t in receivers:
            d_in = graph.degrees(t)[0]
            obs_slices[t] = slice(row, row + d_in)
            row += d_in
        return cls(
            receivers=receivers,
            sigma_x=model.sigma_x,
            sigma_xr=sigma_xr,
            w_mat=w_mat,
            trace_wrw=trace_wrw,
            target_slices=t_slices,
            obs_slices=obs_slices,
            target_traces=target_traces,
        )

    @property
    def r_total(self) -> int:
        return self.sigma_xr.shape[1]

    @property
    def d_total(self) -> int:
        slices = self.obs_slices.values()
        return max((s.stop for s in slices), default=0)

    def block_decoder(self, decoders: Dict[int, np.ndarray]) -> np.ndarray:
        """Assemble the global block-diagonal decoding matrix."""
        b = np.zeros((self.r_total, self.d_total))
        for t in self.receivers:
            b[self.target_slices[t], self.obs_slices[t]] = decoders[t]
        return b

    def update_decoders(self, t_full: np.ndarray) -> Dict[int, np.ndarray]:
        out = {}
        for t in self.receivers:
            g_i = t_full[self.obs_slices[t]]
            sigma_rx = self.sigma_xr[:, self.target_slices[t]].T
            out[t] = llse_decoder(g_i, self.sigma_x, sigma_rx)
        return out

    def distortion(self, b_global: np.ndarray, t_full: np.ndarray) -> float:
        """Weighted MSE of the (decoders, transfer) pair on this model."""
        a = self.w_mat @ b_global @ t_full  # r_total x n
        cross = self.w_mat @ self.sigma_xr.T  # r_total x n, rows weighted
        return float(
            self.trace_wrw - 2.0 * np.sum(a * cross) + np.sum((a @ self.sigma_x) * a)
        )


def quad_coeffs(
    ft: FactoredTransform,
    layer_index: int,
    b_global: np.ndarray,
    assembly: ModelAssembly,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Exact quadratic form of the weighted MSE in one layer factor.

    With every other factor and the decoders fixed, the distortion equals
    t^T P t + p^T t + scalar for t the stacked columns of the chosen layer.
    The gradient 2 P t + p matches finite differences of the direct formula.
    """
    layers = ft.layers
    d_total = layers[0].shape[0]
    prefix = np.eye(d_total)
    for mat in layers[:layer_index]:
        prefix = prefix @ mat
    suffix = np.eye(ft.n_input)
    for mat in reversed(layers[layer_index + 1 :]):
        suffix = mat @ suffix

    wb = assembly.w_mat @ b_global  # r x d
    j_cross = suffix @ assembly.sigma_xr @ assembly.w_mat.T @ wb @ prefix
    j_left = prefix.T @ wb.T @ wb @ prefix
    j_right = suffix @ assembly.sigma_x @ suffix.T

    p_mat = kron(j_right, j_left)
    p_vec = -2.0 * vec(j_cross.T)
    return p_mat, p_vec, assembly.trace_wrw


@dataclass
class IdealSolveState:
    """Result of one (best-of-restarts) alternating optimization run."""

    factored: FactoredTransform
    decoders: Dict[int, np.ndarray]
    distortion: float
    trace: List[float]
    iterations: int
    restart_index: int
    all_traces: List[List[float]] = field(default_factory=list)
    per_receiver: Dict[int, float] = field(default_factory=dict)

    def transfer_matrix(self) -> np.ndarray:
        return self.factored.product()


def optimize_ideal(
    graph: NetworkGraph,
    model: SourceModel,
    weights: Optional[Dict[int, float]] = None,
    eps: float = 1e-8,
    n_max: int = 500,
    restarts: int = 20,
    seed=0,
    init_scale: float = 1.0,
) -> IdealSolveState:
    """Best-of-restarts alternating optimization on a noiseless network.

    Every restart initializes the free mask entries i.i.d. standard normal
    (times ``init_scale``), then alternates decoder updates and per-layer QP
    solves until the distortion change drops below ``eps`` or ``n_max``
    outer iterations pass.  Restarts are deterministic given ``seed`` and
    independent, so the distortion trace of each one is nonincreasing.
    """
    graph.validate()
    assembly = ModelAssembly.build(graph, model, weights)
    layering = graph.layer_partition()
    skeleton = FactoredTransform(graph, layering, model.block_dims)
    equalities = [masks_to_equalities(skeleton, i) for i in range(skeleton.num_factors)]

    children = np.random.SeedSequence(seed).spawn(restarts)
    best: Optional[IdealSolveState] = None
    all_traces: List[List[float]] = []

    for k in range(restarts):
        rng = np.random.default_rng(children[k])
        ft = skeleton.copy()
        ft.random_init(rng, scale=init_scale)
        trace: List[float] = []
        prev = np.inf
        decoders = assembly.update_decoders(ft.product())
        for _ in range(n_max):
            t_full = ft.product()
            decoders = assembly.update_decoders(t_full)
            b_global = assembly.block_decoder(decoders)
            for i in range(ft.num_factors):
                p_mat, p_vec, _ = quad_coeffs(ft, i, b_global, assembly)
                phi, phi_rhs = equalities[i]
                t_i = solve_eq_qp(p_mat, p_vec, phi, phi_rhs)
                ft.set_layer_from_vec(i, t_i)
            d_now = assembly.distortion(b_global, ft.product())
            trace.append(d_now)
            if abs(prev - d_now) <= eps:
                break
            prev = d_now
        all_traces.append(trace)
        state = IdealSolveState(
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
    best.per_receiver = per_receiver_distortion(best, assembly)
    return best


def per_receiver_distortion(
    state: IdealSolveState, assembly: ModelAssembly
) -> Dict[int, float]:
    """Unweighted distortion achieved at each receiver by the final pair."""
    t_full = state.factored.product()
    out = {}
    for t in assembly.receivers:
        g_i = t_full[assembly.obs_slices[t]]
        sigma_rx = assembly.sigma_xr[:, assembly.target_slices[t]].T
        m = state.decoders[t] @ g_i  # overall r_i-from-x map
        out[t] = float(
            assembly.target_traces[t]
            - 2.0 * np.trace(m @ sigma_rx.T)
            + np.trace(m @ assembly.sigma_x @ m.T)
        )
    return out
