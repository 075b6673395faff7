"""
Matrix-valued triplet constraints.

For agents ``(i, j, k)`` with nominal offsets rotated into the scaling axes,

    W_jk = diag(R^T (pt_j - pt_k)) R^T
    W_ki = diag(R^T (pt_k - pt_i)) R^T
    W_kk = W_jk + W_ki = diag(R^T (pt_j - pt_i)) R^T

the relation ``W_jk (p_i - p_k) + W_ki (p_j - p_k) = 0`` holds for every
configuration obtained from the nominal one by translation and per-axis
scaling. ``W_kk`` is invertible exactly when every rotated component of the
anchor offset ``pt_j - pt_i`` is nonzero, in which case ``p_k`` is a function
of ``p_i`` and ``p_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularWeight
from .formation import AgentId, NominalFormation, as_rotation

IDENTITY_TOL = 1e-12
GENERICITY_RTOL = 1e-9


@dataclass(frozen=True)
class Triplet:
    """Ordered triple; ``k`` is the dependent (or newly joining) agent."""

    i: AgentId
    j: AgentId
    k: AgentId

    def __post_init__(self):
        if self.i == self.j or self.j == self.k or self.k == self.i:
            raise ValueError(f"triplet agents must be pairwise distinct, got {(self.i, self.j, self.k)}")

    def __iter__(self):
        return iter((self.i, self.j, self.k))


@dataclass(frozen=True)
class TripletWeights:
    w_jk: np.ndarray
    w_ki: np.ndarray
    w_kk: np.ndarray

    def __post_init__(self):
        if np.max(np.abs(self.w_kk - (self.w_jk + self.w_ki)), initial=0.0) > IDENTITY_TOL * max(
            1.0, np.max(np.abs(self.w_kk), initial=0.0)
        ):
            raise ValueError("w_kk must equal w_jk + w_ki")


def rotated_offset(a, b, R) -> np.ndarray:
    """R^T (a - b): the offset from b to a expressed along the scaling axes."""
    R = as_rotation(R).matrix
    return R.T @ (np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def _weight(offset_r: np.ndarray, R: np.ndarray) -> np.ndarray:
    return offset_r[:, None] * R.T


def weights_from_positions(p_i, p_j, p_k, R) -> TripletWeights:
    """Triplet weights from the three nominal positions alone (no formation needed)."""
    Rm = as_rotation(R).matrix
    w_jk = _weight(rotated_offset(p_j, p_k, Rm), Rm)
    w_ki = _weight(rotated_offset(p_k, p_i, Rm), Rm)
    w_kk = w_jk + w_ki
    direct = _weight(rotated_offset(p_j, p_i, Rm), Rm)
    scale = max(1.0, float(np.max(np.abs(direct), initial=0.0)))
    if np.max(np.abs(w_kk - direct), initial=0.0) > IDENTITY_TOL * scale:
        raise ArithmeticError("W_kk disagrees with diag(R^T (pt_j - pt_i)) R^T")
    return TripletWeights(w_jk, w_ki, w_kk)


def constraint_weights(t: Triplet, F: NominalFormation) -> TripletWeights:
    return weights_from_positions(F.position(t.i), F.position(t.j), F.position(t.k), F.rotation)


def default_eps(offset) -> float:
    return GENERICITY_RTOL * (1.0 + float(np.linalg.norm(offset)))


def genericity_check(i_pos, j_pos, R, eps: float | None = None) -> bool:
    """True iff every component of R^T (j_pos - i_pos) exceeds ``eps`` in magnitude."""
    off = rotated_offset(j_pos, i_pos, R)
    if eps is None:
        eps = default_eps(off)
    if eps <= 0:
        raise ValueError("eps must be positive")
    return bool(np.all(np.abs(off) > eps))


def genericity_margin(i_pos, j_pos, R) -> float:
    """Smallest rotated-offset component magnitude; zero means W_kk is singular."""
    return float(np.min(np.abs(rotated_offset(j_pos, i_pos, R))))


def constraint_residual(w: TripletWeights, p_i, p_j, p_k) -> np.ndarray:
    p_i, p_j, p_k = (np.asarray(x, dtype=float) for x in (p_i, p_j, p_k))
    return w.w_jk @ (p_i - p_k) + w.w_ki @ (p_j - p_k)


def resolve_dependent(w: TripletWeights, p_i, p_j, eps: float | None = None) -> np.ndarray:
    """Solve W_kk p_k = W_jk p_i + W_ki p_j for p_k.

    Raises SingularWeight when the smallest singular value of W_kk is at or
    below ``eps`` (default 1e-9 relative to the largest).
    """
    sv = np.linalg.svd(w.w_kk, compute_uv=False)
    if eps is None:
        eps = GENERICITY_RTOL * max(1.0, float(sv[0]))
    if sv[-1] <= eps:
        raise SingularWeight(
            f"W_kk is singular (sigma_min={sv[-1]:.3e} <= {eps:.3e}); anchor pair is not generic",
            float(sv[-1]),
        )
    rhs = w.w_jk @ np.asarray(p_i, dtype=float) + w.w_ki @ np.asarray(p_j, dtype=float)
    return np.linalg.solve(w.w_kk, rhs)


def require_generic(p_i, p_j, R, eps: float | None = None) -> None:
    if not genericity_check(p_i, p_j, R, eps):
        off = rotated_offset(p_j, p_i, R)
        raise SingularWeight(
            f"anchor offset along scaling axes {np.round(off, 12).tolist()} has a vanishing component",
            float(np.min(np.abs(off))),
        )

