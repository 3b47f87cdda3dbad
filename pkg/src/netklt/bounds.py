"""Cut-set lower bounds on achievable weighted MSE.

Every cut relaxes the network to a point-to-point link: sources on the
transmitting side merge into one super-encoder, everything on the other side
merges into one super-decoder that also receives the remaining sources as
side information.  Three bounds are computed per cut:

* closed form for an ideal (noiseless) link of the cut's total bandwidth,
  from the largest eigenvalues of the weighted canonical-correlation matrix;
* a semidefinite relaxation for a noisy link under the cut's total power,
  valid for any linear scheme (rank constraint dropped);
* an information-theoretic bound for declared-Gaussian sources, equating
  the conditional rate-distortion function (reverse water-filling) with the
  AWGN capacity of the collapsed link; this one binds any coding strategy,
  not just linear.

The tightest (largest) per-cut bound lower-bounds the total weighted
distortion, since receivers outside a cut's receiver subset contribute
nonnegative terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .errors import NonGaussianModel, TargetOutOfRange
from .graph import Cut, NetworkGraph
from .linalg import symmetrize
from .solvers import SdpProblem, solve_sdp_relaxation
from .sources import InnovationPair, SourceModel, innovations


def _regularized_inverse(sigma: np.ndarray) -> np.ndarray:
    """Inverse with a tiny ridge when near-singular.

    Enlarging the residual covariance only loosens (lowers) the bounds, so
    the regularization is bound-preserving.
    """
    sigma = symmetrize(np.atleast_2d(np.asarray(sigma, dtype=float)))
    n = sigma.shape[0]
    if n == 0:
        return sigma.copy()
    eigs = np.linalg.eigvalsh(sigma)
    if eigs[0] <= 1e-10 * max(eigs[-1], 1e-300):
        sigma = sigma + (1e-10 * np.trace(sigma) / n + 1e-300) * np.eye(n)
    return np.linalg.inv(sigma)


def ideal_bound(innov: InnovationPair, w_mat: np.ndarray, c: int) -> float:
    """Minimum weighted MSE of a noiseless rank-c link with side information.

    Equals tr(sigma_nu W^T W) minus the sum of the c largest eigenvalues of
    W sigma_nu_xi sigma_xi^-1 sigma_xi_nu W^T.  Nonincreasing in c; for c at
    least the rank it reaches the full-extraction residual.
    """
    w_mat = np.atleast_2d(np.asarray(w_mat, dtype=float))
    if c < 0:
        raise ValueError("bandwidth must be nonnegative")
    total = float(np.trace(innov.sigma_nu @ w_mat.T @ w_mat))
    if c == 0 or innov.sigma_xi.size == 0:
        return total
    inv_xi = _regularized_inverse(innov.sigma_xi)
    mat = symmetrize(w_mat @ innov.sigma_nu_xi @ inv_xi @ innov.sigma_nu_xi.T @ w_mat.T)
    lam = np.clip(np.linalg.eigvalsh(mat)[::-1], 0.0, None)
    return total - float(lam[: min(c, lam.size)].sum())


def sdp_bound(
    innov: InnovationPair,
    w_mat: np.ndarray,
    sigma_x: np.ndarray,
    power: float,
    tol: float = 1e-7,
) -> float:
    """Lower bound for a noisy power-limited link (unit noise covariance)."""
    prob = SdpProblem(
        sigma_xi=innov.sigma_xi,
        sigma_nu=innov.sigma_nu,
        sigma_nu_xi=innov.sigma_nu_xi,
        weight=w_mat,
        sigma_x=sigma_x,
        power=power,
    )
    value, _, _ = solve_sdp_relaxation(prob, tol=tol)
    return value


def awgn_capacity(c12: int, power: float) -> float:
    """Capacity in bits per network use of a c12-dimensional AWGN vector
    channel with unit noise covariance and total input power ``power``."""
    if c12 < 1:
        raise ValueError("channel dimension must be >= 1")
    if power < 0:
        raise ValueError("power must be nonnegative")
    return 0.5 * c12 * math.log2(1.0 + power / c12)


@dataclass(frozen=True)
class WaterfillResult:
    rate: float
    distortion: float
    per_component: np.ndarray
    theta: float


def reverse_waterfill(
    eigs,
    distortion: Optional[float] = None,
    rate: Optional[float] = None,
    max_iter: int = 200,
) -> WaterfillResult:
    """Gaussian rate-distortion allocation over independent components.

    Each component gets distortion min(theta, lambda_i); the water level
    theta is found by monotone bisection so the totals match the requested
    distortion, or (inverse direction) the requested rate.  Rates are in
    bits: R = sum max(0.5 log2(lambda_i / D_i), 0).
    """
    lam = np.asarray(list(eigs), dtype=float)
    if lam.size == 0 or np.any(lam <= 0):
        raise TargetOutOfRange("eigenvalues must be positive")
    total = float(lam.sum())
    if (distortion is None) == (rate is None):
        raise ValueError("give exactly one of distortion or rate")

    def rate_at(theta: float) -> float:
        d_i = np.minimum(theta, lam)
        return float(np.sum(np.maximum(0.5 * np.log2(lam / d_i), 0.0)))

    if distortion is not None:
        if not (0.0 < distortion <= total):
            raise TargetOutOfRange(
                f"distortion {distortion} outside (0, {total}]"
            )
        lo, hi = 0.0, float(lam.max())
        theta = hi
        for _ in range(max_iter):
            theta = 0.5 * (lo + hi)
            allotted = float(np.minimum(theta, lam).sum())
            if abs(allotted - distortion) <= 1e-13 * max(1.0, distortion):
                break
            if allotted < distortion:
                lo = theta
            else:
                hi = theta
        d_i = np.minimum(theta, lam)
        return WaterfillResult(
            rate=rate_at(theta), distortion=float(d_i.sum()), per_component=d_i,
            theta=theta,
        )

    if rate < 0:
        raise TargetOutOfRange("rate must be nonnegative")
    if rate == 0.0:
        theta = float(lam.max())
        return WaterfillResult(rate=0.0, distortion=total, per_component=lam.copy(),
                               theta=theta)
    # R(theta) decreases from +inf (theta -> 0) to 0 (theta >= lambda_max).
    hi = float(lam.max())
    lo = hi * 2.0 ** (-(2.0 * rate + 60.0))
    for _ in range(max_iter):
        theta = math.sqrt(lo * hi)
        if rate_at(theta) > rate:
            lo = theta
        else:
            hi = theta
    theta = math.sqrt(lo * hi)
    d_i = np.minimum(theta, lam)
    return WaterfillResult(
        rate=rate_at(theta), distortion=float(d_i.sum()), per_component=d_i,
        theta=theta,
    )


# --------------------------------------------------------------------------- #
# Per-cut statistics
# --------------------------------------------------------------------------- #


@dataclass
class CutStatistics:
    """Statistics of the point-to-point relaxation induced by one cut.

    ``sigma_nu`` of the innovation pair is block-diagonal across receiver
    targets unless ``nu_cross_exact`` (selector targets, cross blocks
    derivable); eigen-based bounds that need the full matrix check the flag.
    """

    innov: InnovationPair
    w_sub: np.ndarray
    sigma_x_f: np.ndarray
    nu_cross_exact: bool
    sigma_nu_full: Optional[np.ndarray]


def cut_statistics(
    graph: NetworkGraph,
    model: SourceModel,
    cut: Cut,
    weights: Optional[Dict[int, float]] = None,
) -> CutStatistics:
    """Slice the model into (transmitted sources, side info, targets)."""
    src_order = list(graph.sources)
    src_in = [s for s in src_order if s in cut.f_side]
    src_out = [s for s in src_order if s not in cut.f_side]

    def col_indices(nodes):
        cols = []
        for v in nodes:
            sl = model.block_slice(src_order.index(v))
            cols.extend(range(sl.start, sl.stop))
        return np.asarray(cols, dtype=int)

    ix_f = col_indices(src_in)
    ix_s = col_indices(src_out)
    recvs = sorted(cut.receiver_subset)

    sigma_x_f = model.sigma_x[np.ix_(ix_f, ix_f)] if ix_f.size else np.zeros((0, 0))
    sigma_s = model.sigma_x[np.ix_(ix_s, ix_s)] if ix_s.size else None
    sigma_fs = model.sigma_x[np.ix_(ix_f, ix_s)] if ix_s.size else None

    specs = [model.targets[t] for t in recvs]
    selectors_ok = all(spec.selector is not None for spec in specs)
    sigma_rx_rows = np.vstack([spec.sigma_rx for spec in specs])
    sigma_r_xf = sigma_rx_rows[:, ix_f] if ix_f.size else sigma_rx_rows[:, :0]
    sigma_rs = sigma_rx_rows[:, ix_s] if ix_s.size else None

    if selectors_ok:
        sel = np.vstack([spec.selector for spec in specs])
        sigma_r = symmetrize(sel @ model.sigma_x @ sel.T)
        cross_exact = True
    else:
        blocks = [spec.sigma_r for spec in specs]
        dim = sum(b.shape[0] for b in blocks)
        sigma_r = np.zeros((dim, dim))
        pos = 0
        for b in blocks:
            k = b.shape[0]
            sigma_r[pos : pos + k, pos : pos + k] = b
            pos += k
        cross_exact = False

    innov = innovations(
        sigma_x=sigma_x_f,
        sigma_r=sigma_r,
        sigma_rx=sigma_r_xf,
        sigma_s=sigma_s,
        sigma_xs=sigma_fs,
        sigma_rs=sigma_rs,
    )

    w_blocks = []
    for t, spec in zip(recvs, specs):
        w = model.weight_of(t) if weights is None else float(weights.get(t, 1.0))
        w_blocks.append(np.sqrt(w) * np.ones(spec.dim))
    w_sub = np.diag(np.concatenate(w_blocks)) if w_blocks else np.zeros((0, 0))

    return CutStatistics(
        innov=innov,
        w_sub=w_sub,
        sigma_x_f=sigma_x_f,
        nu_cross_exact=cross_exact,
        sigma_nu_full=innov.sigma_nu if cross_exact or len(recvs) == 1 else None,
    )


def _noise_floor(graph: NetworkGraph, cut: Cut) -> float:
    """Smallest per-dimension noise variance among the crossing edges.

    Replacing every crossing channel's noise with this white floor can only
    help the relaxed receiver, so bounds computed at unit noise with power
    scaled by 1/floor stay valid.  Edges without a declared noise model
    count as unit variance.
    """
    floors = []
    for e in graph.edges:
        if e.tail in cut.f_side and e.head not in cut.f_side:
            if e.noise_cov is None:
                floors.append(1.0)
            else:
                floors.append(float(np.linalg.eigvalsh(np.asarray(e.noise_cov))[0]))
    return min(floors) if floors else 1.0


def info_bound(
    graph: NetworkGraph,
    model: SourceModel,
    cut: Cut,
    weights: Optional[Dict[int, float]] = None,
) -> float:
    """Distortion below which no coding scheme can operate across the cut.

    Only valid (and only computed) for declared jointly Gaussian sources:
    the conditional rate-distortion function is then reverse water-filling
    over the eigenvalues of the target's conditional covariance, and the
    collapsed link is an AWGN channel of the cut's bandwidth and power.
    """
    if not model.gaussian:
        raise NonGaussianModel(
            "information-theoretic bound requires a declared Gaussian model"
        )
    stats = cut_statistics(graph, model, cut, weights)
    if stats.sigma_nu_full is None:
        raise NonGaussianModel(
            "multi-receiver cut needs selector targets for exact cross statistics"
        )
    c_f, p_f = graph.cut_capacity(cut, with_power=True)
    floor = _noise_floor(graph, cut)
    if floor <= 0.0:
        return 0.0  # a noiseless crossing dimension carries unbounded rate
    w_nu_w = stats.w_sub @ stats.sigma_nu_full @ stats.w_sub.T
    lam = np.linalg.eigvalsh(symmetrize(w_nu_w))[::-1]
    lam = lam[lam > 1e-12 * max(lam[0], 1e-300)]
    if lam.size == 0:
        return 0.0
    cap = awgn_capacity(c_f, p_f / floor) if c_f >= 1 else 0.0
    if cap <= 0.0:
        return float(lam.sum())
    return reverse_waterfill(lam, rate=cap).distortion


# --------------------------------------------------------------------------- #
# Network scan
# --------------------------------------------------------------------------- #


@dataclass
class BoundReport:
    """Bounds from one cut; all values lower-bound the total weighted MSE."""

    cut: Cut
    c_f: int
    p_f: Optional[float]
    d_ideal: float
    d_sdp: Optional[float] = None
    d_info: Optional[float] = None

    @property
    def d_noisy_lb(self) -> float:
        if self.d_sdp is None:
            return self.d_ideal
        return max(self.d_ideal, self.d_sdp)


@dataclass
class ScanResult:
    reports: List[BoundReport]
    tightest: BoundReport


def cutset_scan(
    graph: NetworkGraph,
    model: SourceModel,
    weights: Optional[Dict[int, float]] = None,
    noisy: bool = False,
    sdp_tol: float = 1e-7,
) -> ScanResult:
    """Bound every enumerated cut; the tightest report has the largest
    applicable bound (noisy lower bound when ``noisy``, else the ideal one).
    """
    reports = []
    for cut in graph.enumerate_cuts():
        stats = cut_statistics(graph, model, cut, weights)
        c_f, p_f = graph.cut_capacity(cut, with_power=noisy)
        d_ideal = ideal_bound(stats.innov, stats.w_sub, c_f)
        d_sdp = None
        d_info = None
        if noisy:
            floor = _noise_floor(graph, cut)
            p_eff = np.inf if floor <= 0 else p_f / floor
            if np.isfinite(p_eff):
                d_sdp = sdp_bound(
                    stats.innov, stats.w_sub, stats.sigma_x_f, p_eff, tol=sdp_tol
                )
            else:
                d_sdp = d_ideal
            if model.gaussian and stats.sigma_nu_full is not None:
                d_info = info_bound(graph, model, cut, weights)
        reports.append(
            BoundReport(cut=cut, c_f=c_f, p_f=p_f, d_ideal=d_ideal, d_sdp=d_sdp,
                        d_info=d_info)
        )
    key = (lambda r: r.d_noisy_lb) if noisy else (lambda r: r.d_ideal)
    tightest = max(reports, key=key)
    return ScanResult(reports=reports, tightest=tightest)
