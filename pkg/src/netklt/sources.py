"""Second-order statistics of sources, reconstruction targets and weights.

The global source x stacks one block per source node.  Each receiver declares
a target either as a linear map of x (selector form, from which every needed
covariance follows) or as raw statistics (its own covariance and the cross
covariance with x).  All randomness flows through explicitly passed
``numpy.random.Generator`` instances so experiments are reproducible from a
single seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    GenerationFailed,
    NonpositiveWeight,
    SingularSideInfo,
)
from .linalg import DEFAULT_RTOL, is_psd, symmetrize


def gauss_markov(n: int, rho: float) -> np.ndarray:
    """Covariance with entries rho**|i-j| (first-order correlation decay)."""
    if n < 1:
        raise DimensionMismatch("n must be >= 1")
    if abs(rho) >= 1:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def hybrid_random_cov(
    n: int, seed=None, max_retries: int = 1000
) -> np.ndarray:
    """Random symmetric covariance with diagonal in [15, 17] and
    off-diagonal entries in [1, 3], resampled until strictly positive
    definite.

    Raises GenerationFailed after ``max_retries`` draws (the recipe does not
    guarantee positive definiteness, although failures are essentially
    impossible at the sizes used here).
    """
    if n < 1:
        raise DimensionMismatch("n must be >= 1")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    for _ in range(max_retries):
        u = rng.uniform(0.0, 1.0, size=(n, n))
        cov = 1.0 + 2.0 * np.triu(u, k=1)
        cov = cov + cov.T
        cov[np.diag_indices(n)] = 15.0 + 2.0 * np.diag(u)
        if np.linalg.eigvalsh(cov)[0] > 0.0:
            return cov
    raise GenerationFailed(f"no positive-definite draw in {max_retries} attempts")


@dataclass(frozen=True)
class InnovationPair:
    """Residual statistics after conditioning on side information.

    sigma_xi   : covariance of x minus its linear estimate from s
    sigma_nu   : covariance of r minus its linear estimate from s
    sigma_nu_xi: cross covariance of the two residuals
    """

    sigma_xi: np.ndarray
    sigma_nu: np.ndarray
    sigma_nu_xi: np.ndarray


def innovations(
    sigma_x: np.ndarray,
    sigma_r: np.ndarray,
    sigma_rx: np.ndarray,
    sigma_s: Optional[np.ndarray] = None,
    sigma_xs: Optional[np.ndarray] = None,
    sigma_rs: Optional[np.ndarray] = None,
    use_pinv: bool = True,
) -> InnovationPair:
    """Condition (x, r) on side information s and return residual statistics.

    With K = Sigma_s^-1 (pseudo-inverse when allowed):

        sigma_xi    = sigma_x  - sigma_xs K sigma_xs^T
        sigma_nu    = sigma_r  - sigma_rs K sigma_rs^T
        sigma_nu_xi = sigma_rx - sigma_rs K sigma_xs^T

    Passing ``sigma_s=None`` (or a 0-dimensional s) means no side
    information, so the raw statistics come back unchanged.

    Raises SingularSideInfo when sigma_s is singular and ``use_pinv`` is off.
    """
    sigma_x = np.atleast_2d(np.asarray(sigma_x, dtype=float))
    sigma_r = np.atleast_2d(np.asarray(sigma_r, dtype=float))
    sigma_rx = np.atleast_2d(np.asarray(sigma_rx, dtype=float))
    if sigma_s is None or np.size(sigma_s) == 0:
        return InnovationPair(sigma_x.copy(), sigma_r.copy(), sigma_rx.copy())

    sigma_s = np.atleast_2d(np.asarray(sigma_s, dtype=float))
    sigma_xs = np.atleast_2d(np.asarray(sigma_xs, dtype=float))
    sigma_rs = np.atleast_2d(np.asarray(sigma_rs, dtype=float))

    svals = np.linalg.svd(sigma_s, compute_uv=False)
    singular = svals[-1] <= DEFAULT_RTOL * svals[0]
    if singular and not use_pinv:
        raise SingularSideInfo("side-information covariance is singular")
    if singular:
        k = np.linalg.pinv(sigma_s, rcond=DEFAULT_RTOL)
    else:
        k = np.linalg.inv(sigma_s)

    sigma_xi = symmetrize(sigma_x - sigma_xs @ k @ sigma_xs.T)
    sigma_nu = symmetrize(sigma_r - sigma_rs @ k @ sigma_rs.T)
    sigma_nu_xi = sigma_rx - sigma_rs @ k @ sigma_xs.T
    return InnovationPair(sigma_xi, sigma_nu, sigma_nu_xi)


@dataclass(frozen=True)
class TargetSpec:
    """Reconstruction target of one receiver.

    Either built from a selector (r = selector @ x), in which case all cross
    statistics are derivable, or from raw (sigma_r, sigma_rx) blocks.
    """

    dim: int
    sigma_r: np.ndarray
    sigma_rx: np.ndarray
    selector: Optional[np.ndarray] = None

    @classmethod
    def from_selector(cls, selector: np.ndarray, sigma_x: np.ndarray) -> "TargetSpec":
        selector = np.atleast_2d(np.asarray(selector, dtype=float))
        sigma_rx = selector @ sigma_x
        return cls(
            dim=selector.shape[0],
            sigma_r=symmetrize(selector @ sigma_x @ selector.T),
            sigma_rx=sigma_rx,
            selector=selector,
        )


@dataclass
class SourceModel:
    """Global source statistics plus per-receiver targets and weights.

    block_dims : dimension of each source node's signal, in source order
    sigma_x    : covariance of the stacked source vector
    targets    : receiver node -> TargetSpec
    weights    : receiver node -> positive weight (default 1.0)
    gaussian   : declare the joint distribution Gaussian (enables the
                 information-theoretic bounds, which are otherwise refused)
    """

    block_dims: tuple
    sigma_x: np.ndarray
    targets: Dict[int, TargetSpec] = field(default_factory=dict)
    weights: Dict[int, float] = field(default_factory=dict)
    gaussian: bool = False

    def __post_init__(self):
        self.block_dims = tuple(int(d) for d in self.block_dims)
        self.sigma_x = symmetrize(np.atleast_2d(np.asarray(self.sigma_x, dtype=float)))
        if self.sigma_x.shape != (self.n, self.n):
            raise DimensionMismatch(
                f"sigma_x is {self.sigma_x.shape}, block dims sum to {self.n}"
            )
        if not is_psd(self.sigma_x):
            raise ValueError("sigma_x is not positive semi-definite")
        for node, spec in self.targets.items():
            if spec.sigma_rx.shape != (spec.dim, self.n):
                raise DimensionMismatch(
                    f"target of receiver {node}: cross covariance is "
                    f"{spec.sigma_rx.shape}, expected ({spec.dim}, {self.n})"
                )
            joint = np.block(
                [[spec.sigma_r, spec.sigma_rx], [spec.sigma_rx.T, self.sigma_x]]
            )
            if not is_psd(joint, tol=1e-8):
                raise ValueError(f"target of receiver {node}: joint covariance not PSD")

    @property
    def n(self) -> int:
        return sum(self.block_dims)

    def block_slice(self, source_index: int) -> slice:
        """Column range of the given source (by position in source order)."""
        start = sum(self.block_dims[:source_index])
        return slice(start, start + self.block_dims[source_index])

    def weight_of(self, receiver: int) -> float:
        return float(self.weights.get(receiver, 1.0))


def build_weight_matrix(model: SourceModel, receivers) -> np.ndarray:
    """Block-diagonal weighting with sqrt(w_i) * I per receiver target.

    The weighted squared error ||W(r - r_hat)||^2 then sums w_i times each
    receiver's distortion.  Raises NonpositiveWeight for w_i <= 0.
    """
    blocks = []
    for node in receivers:
        w = model.weight_of(node)
        if w <= 0:
            raise NonpositiveWeight(f"receiver {node} has weight {w}")
        dim = model.targets[node].dim
        blocks.append(np.sqrt(w) * np.ones(dim))
    if not blocks:
        return np.zeros((0, 0))
    return np.diag(np.concatenate(blocks))
