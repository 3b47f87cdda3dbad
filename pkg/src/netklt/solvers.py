"""Small dense convex solvers.

Three entry points, all deterministic given identical inputs:

* :func:`solve_eq_qp` - equality-constrained convex QP (thin wrapper over the
  saddle-point solve, with a fast path for constraints that just pin single
  coordinates);
* :func:`solve_qcqp` - convex QP with additional quadratic inequality caps,
  via a logarithmic-barrier interior-point method with damped Newton steps
  and an active-set polish;
* :func:`solve_sdp_relaxation` - the power-limited estimation relaxation,
  reduced analytically to a smooth matrix program over the PSD cone and
  solved by the same barrier machinery.

Problem sizes here are tiny (hundreds of variables at most), so everything
uses dense factorizations; robustness is preferred over speed throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import Infeasible, MaxIterExceeded, NumericalFailure
from .linalg import DEFAULT_RTOL, solve_kkt, symmetrize


# --------------------------------------------------------------------------- #
# Equality-constrained QP
# --------------------------------------------------------------------------- #


def _canonical_pins(phi: np.ndarray, phi_rhs: np.ndarray):
    """Recognize constraint rows that each pin one coordinate to a value.

    Returns (pinned_index_array, values) or None when the constraints are
    not in canonical form.
    """
    if phi.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0)
    nz_per_row = (phi != 0.0).sum(axis=1)
    if not np.all(nz_per_row == 1):
        return None
    cols = np.argmax(phi != 0.0, axis=1)
    coef = phi[np.arange(phi.shape[0]), cols]
    if not np.all(coef == 1.0):
        return None
    values = np.asarray(phi_rhs, dtype=float)
    order = np.argsort(cols, kind="stable")
    cols, values = cols[order], values[order]
    keep_cols: List[int] = []
    keep_vals: List[float] = []
    for c, v in zip(cols, values):
        if keep_cols and keep_cols[-1] == c:
            if keep_vals[-1] != v:
                raise Infeasible(f"coordinate {c} pinned to both {keep_vals[-1]} and {v}")
            continue
        keep_cols.append(int(c))
        keep_vals.append(float(v))
    return np.asarray(keep_cols, dtype=int), np.asarray(keep_vals)


def solve_eq_qp(
    p_mat: np.ndarray,
    p_vec: np.ndarray,
    phi: np.ndarray,
    phi_rhs: np.ndarray,
) -> np.ndarray:
    """Minimize t^T P t + p^T t subject to Phi t = phi; returns the primal.

    When every constraint row pins a single coordinate (the canonical form
    produced by the topology masks) the problem is solved directly in the
    free coordinates, which keeps pinned entries exact.  Otherwise the full
    saddle-point system is used.  Singular reduced systems get the
    minimum-norm optimum.
    """
    p_mat = np.atleast_2d(np.asarray(p_mat, dtype=float))
    p_vec = np.asarray(p_vec, dtype=float).ravel()
    phi = np.atleast_2d(np.asarray(phi, dtype=float)) if np.size(phi) else np.zeros((0, p_vec.size))
    phi_rhs = np.asarray(phi_rhs, dtype=float).ravel()

    pins = _canonical_pins(phi, phi_rhs)
    if pins is None:
        return solve_kkt(p_mat, p_vec, phi, phi_rhs)[0]

    pin_idx, pin_vals = pins
    n = p_vec.size
    free = np.setdiff1d(np.arange(n), pin_idx, assume_unique=False)
    t = np.zeros(n)
    t[pin_idx] = pin_vals
    if free.size == 0:
        return t
    p_ff = symmetrize(p_mat[np.ix_(free, free)])
    rhs = -(p_vec[free] + 2.0 * p_mat[np.ix_(free, pin_idx)] @ pin_vals)
    try:
        u = np.linalg.solve(2.0 * p_ff, rhs)
        if not np.all(np.isfinite(u)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        u = np.linalg.lstsq(2.0 * p_ff, rhs, rcond=DEFAULT_RTOL)[0]
    t[free] = u
    return t


# --------------------------------------------------------------------------- #
# QCQP
# --------------------------------------------------------------------------- #


@dataclass
class QcqpProblem:
    """min t^T P t + p^T t + p0  s.t.  Phi t = phi,  t^T Gamma_k t <= cap_k."""

    p_mat: np.ndarray
    p_vec: np.ndarray
    p_scalar: float = 0.0
    phi: Optional[np.ndarray] = None
    phi_rhs: Optional[np.ndarray] = None
    quad_ineqs: List[Tuple[np.ndarray, float]] = field(default_factory=list)

    def objective(self, t: np.ndarray) -> float:
        return float(t @ self.p_mat @ t + self.p_vec @ t + self.p_scalar)


def _null_space_embedding(phi, phi_rhs, n):
    """Particular solution and basis of the equality feasible set t = t0 + Z u."""
    if phi is None or np.size(phi) == 0:
        return np.zeros(n), np.eye(n)
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    phi_rhs = np.asarray(phi_rhs, dtype=float).ravel()
    pins = _canonical_pins(phi, phi_rhs)
    if pins is not None:
        pin_idx, pin_vals = pins
        t0 = np.zeros(n)
        t0[pin_idx] = pin_vals
        free = np.setdiff1d(np.arange(n), pin_idx)
        z = np.zeros((n, free.size))
        z[free, np.arange(free.size)] = 1.0
        return t0, z
    t0, *_ = np.linalg.lstsq(phi, phi_rhs, rcond=DEFAULT_RTOL)
    if np.linalg.norm(phi @ t0 - phi_rhs) > 1e-8 * (1.0 + np.linalg.norm(phi_rhs)):
        raise Infeasible("equality constraints are inconsistent")
    _, svals, vt = np.linalg.svd(phi)
    rank = int(np.sum(svals > DEFAULT_RTOL * (svals[0] if svals.size else 1.0)))
    z = vt[rank:].T
    return t0, z


def solve_qcqp(
    prob: QcqpProblem,
    tol: float = 1e-9,
    start: Optional[np.ndarray] = None,
    max_newton: int = 4000,
) -> np.ndarray:
    """Interior-point solve of a convex QCQP.

    A strictly feasible start is built by pulling any equality-feasible
    point toward the minimum-norm equality solution (the interior anchor);
    the caller must ensure such a Slater point exists, e.g. caps strictly
    positive when the anchor hits the caps with equality.  The barrier
    parameter grows geometrically until the duality-gap bound m/tau falls
    below ``tol`` (times the objective scale), after which an active-set
    Newton polish sharpens boundary solutions to near machine precision.

    Raises Infeasible when no interior point is found and MaxIterExceeded
    when the Newton budget runs out before reaching the target gap.
    """
    p_mat = symmetrize(np.atleast_2d(np.asarray(prob.p_mat, dtype=float)))
    p_vec = np.asarray(prob.p_vec, dtype=float).ravel()
    n = p_vec.size
    gammas = [symmetrize(np.asarray(g, dtype=float)) for g, _ in prob.quad_ineqs]
    caps = np.array([float(c) for _, c in prob.quad_ineqs])
    m = len(gammas)

    if m == 0:
        return solve_eq_qp(p_mat, p_vec, prob.phi, prob.phi_rhs)

    t0, z_basis = _null_space_embedding(prob.phi, prob.phi_rhs, n)

    def quad_vals(t):
        return np.array([t @ g @ t for g in gammas])

    slack0 = caps - quad_vals(t0)
    if np.any(slack0 <= 0.0):
        raise Infeasible(
            "interior anchor violates a quadratic cap; no strictly feasible "
            "point available (caps must be strictly positive at the anchor)"
        )

    # Pull the start strictly inside the caps.
    if start is not None:
        u = z_basis.T @ (np.asarray(start, dtype=float).ravel() - t0)
    else:
        u = np.zeros(z_basis.shape[1])
    for _ in range(80):
        t = t0 + z_basis @ u
        if np.all(caps - quad_vals(t) > 0.02 * slack0):
            break
        u *= 0.5
    else:
        u = np.zeros(z_basis.shape[1])

    obj_scale = max(1.0, abs(prob.objective(t0)), float(np.abs(caps).max()))
    tau = max(1.0, m / obj_scale)
    newton_used = 0

    def barrier_value(t, tau_now):
        s = caps - quad_vals(t)
        if np.any(s <= 0.0):
            return np.inf
        f = t @ p_mat @ t + p_vec @ t
        return tau_now * f - float(np.sum(np.log(s)))

    while m / tau > tol * obj_scale:
        tau = min(tau * 20.0, 1e16)
        for _ in range(80):
            t = t0 + z_basis @ u
            s = caps - quad_vals(t)
            grad_t = tau * (2.0 * p_mat @ t + p_vec)
            hess_t = 2.0 * tau * p_mat.copy()
            for g_k, s_k in zip(gammas, s):
                gt = g_k @ t
                grad_t += 2.0 * gt / s_k
                hess_t += 2.0 * g_k / s_k + 4.0 * np.outer(gt, gt) / s_k**2
            g_u = z_basis.T @ grad_t
            h_u = z_basis.T @ hess_t @ z_basis
            du = _solve_spd(h_u, -g_u)
            decrement = float(-g_u @ du)
            if decrement < 0:  # numerical breakdown; regularize harder
                du = _solve_spd(h_u + np.eye(h_u.shape[0]) * 1e-8 * np.trace(h_u), -g_u)
                decrement = float(-g_u @ du)
            newton_used += 1
            if newton_used > max_newton:
                raise MaxIterExceeded("QCQP Newton budget exhausted")
            # Damped step with strict feasibility.
            base = barrier_value(t, tau)
            alpha = 1.0
            while alpha > 1e-14:
                cand = u + alpha * du
                val = barrier_value(t0 + z_basis @ cand, tau)
                if val <= base - 0.25 * alpha * decrement:
                    break
                alpha *= 0.5
            else:
                break
            u = u + alpha * du
            if decrement / 2.0 <= 1e-12 * max(1.0, tau * obj_scale):
                break

    t = t0 + z_basis @ u
    t_polished = _polish_active_set(p_mat, p_vec, t0, z_basis, gammas, caps, t, tau)
    if t_polished is not None:
        t = t_polished

    viol = np.max(np.maximum(quad_vals(t) - caps, 0.0), initial=0.0)
    if viol > 1e-7 * obj_scale:
        raise NumericalFailure(f"QCQP returned infeasible point (violation {viol:.2e})")
    return t


def _solve_spd(h, rhs):
    """Solve an (approximately) SPD system with escalating regularization."""
    scale = max(float(np.trace(h)) / max(h.shape[0], 1), 1e-30)
    for reg in (0.0, 1e-14, 1e-11, 1e-8, 1e-5):
        try:
            sol = np.linalg.solve(h + reg * scale * np.eye(h.shape[0]), rhs)
            if np.all(np.isfinite(sol)):
                return sol
        except np.linalg.LinAlgError:
            continue
    return np.linalg.lstsq(h, rhs, rcond=None)[0]


def _polish_active_set(p_mat, p_vec, t0, z_basis, gammas, caps, t_bar, tau):
    """Newton-refine the KKT system on the estimated active set.

    Returns the refined point, or None when the refinement fails to improve
    on the barrier solution (wrong active set, negative multipliers, ...).
    """
    s = caps - np.array([t_bar @ g @ t_bar for g in gammas])
    duals = 1.0 / (tau * np.maximum(s, 1e-300))
    active = [k for k in range(len(gammas)) if duals[k] > 1e-8 * max(1.0, duals.max())]
    u = z_basis.T @ (t_bar - t0)
    mu = duals[active] if active else np.zeros(0)
    n_u, n_a = u.size, len(active)

    def residual(u_now, mu_now):
        t = t0 + z_basis @ u_now
        grad = 2.0 * p_mat @ t + p_vec
        for k, m_k in zip(active, mu_now):
            grad = grad + m_k * 2.0 * gammas[k] @ t
        r1 = z_basis.T @ grad
        r2 = np.array([t @ gammas[k] @ t - caps[k] for k in active])
        return np.concatenate([r1, r2]), t

    best = None
    r, t = residual(u, mu)
    norm0 = np.linalg.norm(r)
    for _ in range(30):
        jac = np.zeros((n_u + n_a, n_u + n_a))
        h = 2.0 * p_mat.copy()
        for k, m_k in zip(active, mu):
            h += m_k * 2.0 * gammas[k]
        jac[:n_u, :n_u] = z_basis.T @ h @ z_basis
        for j, k in enumerate(active):
            col = z_basis.T @ (2.0 * gammas[k] @ t)
            jac[:n_u, n_u + j] = col
            jac[n_u + j, :n_u] = col
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            return best
        alpha = 1.0
        for _ in range(40):
            u_new = u + alpha * step[:n_u]
            mu_new = mu + alpha * step[n_u:]
            r_new, t_new = residual(u_new, mu_new)
            if np.linalg.norm(r_new) < np.linalg.norm(r):
                u, mu, r, t = u_new, mu_new, r_new, t_new
                break
            alpha *= 0.5
        else:
            break
        if np.linalg.norm(r) < 1e-13 * max(1.0, norm0):
            break

    if np.any(mu < -1e-9):
        return best
    inactive_ok = all(
        t @ gammas[k] @ t <= caps[k] * (1.0 + 1e-9) + 1e-12
        for k in range(len(gammas))
        if k not in active
    )
    if not inactive_ok:
        return best
    f_bar = t_bar @ p_mat @ t_bar + p_vec @ t_bar
    f_new = t @ p_mat @ t + p_vec @ t
    if f_new <= f_bar + 1e-10 * max(1.0, abs(f_bar)):
        return t
    return best


# --------------------------------------------------------------------------- #
# Power-limited estimation relaxation (small dense SDP)
# --------------------------------------------------------------------------- #


@dataclass
class SdpProblem:
    """Data of the rank-relaxed noisy point-to-point design.

    The program (with S = sigma_xi^-1 + Psi, M = W sigma_nu_xi sigma_xi^-1)

        minimize   tr(Phi) + tr(W [sigma_nu - sigma_nu_xi sigma_xi^-1
                                   sigma_xi_nu] W^T)
        subject to tr(sigma_x Psi) <= power,  Psi >= 0,
                   [[Phi, M], [M^T, S]] >= 0

    has the epigraph variable Phi eliminable in closed form (min tr(Phi) =
    tr(M S^-1 M^T) by a Schur complement), leaving a smooth convex program
    over Psi alone.  Note this epigraph matrix is unrelated to the equality
    constraint matrices elsewhere in the package that share the same Greek
    letter in the literature.
    """

    sigma_xi: np.ndarray
    sigma_nu: np.ndarray
    sigma_nu_xi: np.ndarray
    weight: np.ndarray
    sigma_x: np.ndarray
    power: float


def solve_sdp_relaxation(
    prob: SdpProblem, tol: float = 1e-7, max_newton: int = 6000
) -> tuple[float, np.ndarray, np.ndarray]:
    """Solve the relaxation; returns (value, psi, epigraph_phi).

    The returned pair is feasible for the original matrix program and the
    value is within ``tol`` (relative) duality gap of its optimum.  The
    value is monotone nonincreasing in ``power``.
    """
    sigma_xi = symmetrize(np.atleast_2d(np.asarray(prob.sigma_xi, dtype=float)))
    sigma_x = symmetrize(np.atleast_2d(np.asarray(prob.sigma_x, dtype=float)))
    w = np.atleast_2d(np.asarray(prob.weight, dtype=float))
    sigma_nu = np.atleast_2d(np.asarray(prob.sigma_nu, dtype=float))
    sigma_nu_xi = np.atleast_2d(np.asarray(prob.sigma_nu_xi, dtype=float))
    n = sigma_xi.shape[0]
    power = float(prob.power)
    if power < 0:
        raise Infeasible("power cap must be nonnegative")

    # Ridge regularization keeps the inverse meaningful for near-singular
    # residual covariances (e.g. perfect side information); enlarging
    # sigma_xi can only lower the bound, so validity is preserved.
    eigs = np.linalg.eigvalsh(sigma_xi)
    if eigs[0] <= 1e-10 * max(eigs[-1], 1e-300):
        sigma_xi = sigma_xi + (1e-10 * np.trace(sigma_xi) / n + 1e-300) * np.eye(n)

    a_inv = np.linalg.inv(sigma_xi)  # sigma_xi^-1
    m_mat = w @ sigma_nu_xi @ a_inv
    const = float(np.trace(w @ (sigma_nu - sigma_nu_xi @ a_inv @ sigma_nu_xi.T) @ w.T))

    def g_value(psi):
        s = a_inv + psi
        s_inv_mt = np.linalg.solve(s, m_mat.T)
        return float(np.trace(m_mat @ s_inv_mt)), s_inv_mt

    if power <= 0.0:
        psi = np.zeros((n, n))
        val, s_inv_mt = g_value(psi)
        return val + const, psi, symmetrize(m_mat @ s_inv_mt)

    trace_x = float(np.trace(sigma_x))
    psi = (0.4 * power / max(trace_x, 1e-300)) * np.eye(n)

    def barrier(psi_now, tau_now):
        slack = power - float(np.sum(sigma_x * psi_now))
        if slack <= 0.0:
            return np.inf
        try:
            chol = np.linalg.cholesky(psi_now)
        except np.linalg.LinAlgError:
            return np.inf
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        val, _ = g_value(psi_now)
        return tau_now * val - logdet - np.log(slack)

    nu_total = n + 1  # barrier parameter of the cone + the linear cap
    g0, _ = g_value(psi)
    scale = max(1.0, abs(g0 + const))
    tau = max(1.0, nu_total / scale)
    newton_used = 0
    vec_sx = sigma_x.reshape(-1)

    while nu_total / tau > tol * scale:
        tau = min(tau * 20.0, 1e15)
        for _ in range(100):
            s_mat = a_inv + psi
            s_inv = np.linalg.inv(s_mat)
            q_mat = symmetrize(s_inv @ m_mat.T @ m_mat @ s_inv)
            psi_inv = np.linalg.inv(psi)
            slack = power - float(np.sum(sigma_x * psi))
            grad = -tau * q_mat - psi_inv + sigma_x / slack
            hess = (
                tau * (np.kron(q_mat, s_inv) + np.kron(s_inv, q_mat))
                + np.kron(psi_inv, psi_inv)
                + np.outer(vec_sx, vec_sx) / slack**2
            )
            step_vec = _solve_spd(hess, -grad.reshape(-1))
            step = symmetrize(step_vec.reshape(n, n))
            decrement = float(-np.sum(grad * step))
            newton_used += 1
            if newton_used > max_newton:
                raise MaxIterExceeded("SDP Newton budget exhausted")
            base = barrier(psi, tau)
            alpha = 1.0
            while alpha > 1e-14:
                cand = psi + alpha * step
                val = barrier(cand, tau)
                if val <= base - 0.25 * alpha * decrement:
                    break
                alpha *= 0.5
            else:
                break
            psi = psi + alpha * step
            if decrement / 2.0 <= 1e-12 * max(1.0, tau * scale):
                break

    psi = symmetrize(psi)
    val, s_inv_mt = g_value(psi)
    epigraph_phi = symmetrize(m_mat @ s_inv_mt)
    if not np.all(np.isfinite(psi)) or not np.all(np.isfinite(epigraph_phi)):
        raise NumericalFailure("SDP solve produced non-finite iterates")
    return val + const, psi, epigraph_phi
