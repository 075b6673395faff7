"""
Geometry of non-uniform scaling maneuvers.

A nominal formation is a set of agents with reference positions ``ptilde``
and a rotation ``R`` whose columns are the scaling axes. A maneuver with
per-axis ratios ``s`` and translation ``tau`` moves agent ``i`` to

    p_i = R diag(s) R^T ptilde_i + tau

and the set of all such stacked configurations is a linear subspace (the
shape space) spanned by ``d`` translations and ``d`` per-axis scalings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, DuplicateAgent, InvalidRotation, UnknownAgent

AgentId = Hashable

ORTHO_TOL = 1e-12
RANK_RTOL = 1e-8


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Rotation:
    """Element of SO(d). Construction checks orthonormality and det = +1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise InvalidRotation(f"rotation must be a non-empty square matrix, got shape {m.shape}")
        d = m.shape[0]
        if not np.all(np.isfinite(m)):
            raise InvalidRotation("rotation has non-finite entries")
        if np.max(np.abs(m.T @ m - np.eye(d))) > ORTHO_TOL * max(1.0, d):
            raise InvalidRotation("rotation violates R^T R = I")
        if abs(np.linalg.det(m) - 1.0) > ORTHO_TOL * max(1.0, d):
            raise InvalidRotation("rotation violates det(R) = 1")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, d: int) -> "Rotation":
        return cls(np.eye(d))

    @classmethod
    def planar(cls, angle: float) -> "Rotation":
        """Counter-clockwise rotation of the plane by ``angle`` radians."""
        c, s = np.cos(angle), np.sin(angle)
        return cls(np.array([[c, -s], [s, c]]))

    @classmethod
    def random(cls, d: int, rng: np.random.Generator) -> "Rotation":
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        # re-orthonormalise so the 1e-12 invariant holds for large d
        u, _, vt = np.linalg.svd(q)
        return cls(u @ vt)


def as_rotation(R) -> Rotation:
    return R if isinstance(R, Rotation) else Rotation(R)


@dataclass(frozen=True)
class ManeuverParams:
    s: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        s = _frozen(np.atleast_1d(self.s))
        tau = _frozen(np.atleast_1d(self.tau))
        if s.shape != tau.shape or s.ndim != 1:
            raise DimensionMismatch(f"s has shape {s.shape}, tau has shape {tau.shape}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(tau))):
            raise ValueError("maneuver parameters must be finite")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "tau", tau)

    @classmethod
    def identity(cls, d: int) -> "ManeuverParams":
        return cls(np.ones(d), np.zeros(d))


@dataclass(frozen=True)
class NominalFormation:
    """Reference shape: ordered agents, their nominal positions, the axes and the leader set.

    ``positions`` has one row per agent in ``agent_ids`` order. An empty
    follower set is allowed so that a leader-only seed pair is representable.
    """

    agent_ids: tuple
    positions: np.ndarray
    rotation: Rotation
    leaders: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        ids = tuple(self.agent_ids)
        if len(set(ids)) != len(ids):
            raise DuplicateAgent(f"agent ids are not unique: {ids}")
        rot = as_rotation(self.rotation)
        pos = np.array(self.positions, dtype=float).reshape(len(ids), -1) if ids else np.zeros((0, rot.d))
        if pos.shape[1] != rot.d:
            raise DimensionMismatch(f"positions have dimension {pos.shape[1]}, rotation has {rot.d}")
        leaders = frozenset(self.leaders)
        if not leaders:
            raise ValueError("leader set must be non-empty")
        missing = leaders - set(ids)
        if missing:
            raise UnknownAgent(f"leaders not in formation: {sorted(missing, key=str)}")
        object.__setattr__(self, "agent_ids", ids)
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "leaders", leaders)
        object.__setattr__(self, "_index", {a: k for k, a in enumerate(ids)})

    @property
    def d(self) -> int:
        return self.rotation.d

    @property
    def n(self) -> int:
        return len(self.agent_ids)

    @property
    def ptilde(self) -> np.ndarray:
        """Stacked nominal positions in R^{dn}."""
        return self.positions.reshape(-1)

    @property
    def leader_ids(self) -> list:
        return [a for a in self.agent_ids if a in self.leaders]

    @property
    def follower_ids(self) -> list:
        return [a for a in self.agent_ids if a not in self.leaders]

    def index(self, agent) -> int:
        try:
            return self._index[agent]
        except KeyError:
            raise UnknownAgent(f"unknown agent id {agent!r}") from None

    def __contains__(self, agent) -> bool:
        return agent in self._index

    def position(self, agent) -> np.ndarray:
        return self.positions[self.index(agent)]

    def with_agent(self, agent, position, leader: bool = False) -> "NominalFormation":
        if agent in self._index:
            raise DuplicateAgent(f"agent {agent!r} already in formation")
        position = np.asarray(position, dtype=float)
        if position.shape != (self.d,):
            raise DimensionMismatch(f"new agent position must have shape ({self.d},)")
        return NominalFormation(
            self.agent_ids + (agent,),
            np.vstack([self.positions, position]),
            self.rotation,
            self.leaders | {agent} if leader else self.leaders,
        )

    @classmethod
    def from_mapping(cls, nominal: dict, rotation, leaders: Iterable) -> "NominalFormation":
        ids = tuple(nominal)
        return cls(ids, np.array([nominal[a] for a in ids], dtype=float), as_rotation(rotation), frozenset(leaders))


def scaling_transform(s, R) -> np.ndarray:
    """Return S(s, R) = R diag(s) R^T."""
    R = as_rotation(R).matrix
    s = np.asarray(s, dtype=float)
    if s.shape != (R.shape[0],):
        raise DimensionMismatch(f"s has shape {s.shape}, rotation is {R.shape[0]}x{R.shape[0]}")
    S = (R * s) @ R.T
    return 0.5 * (S + S.T)


def apply_maneuver(F: NominalFormation, m: ManeuverParams) -> np.ndarray:
    """Stacked positions (I_n kron S(s,R)) ptilde + 1_n kron tau."""
    S = scaling_transform(m.s, F.rotation)
    if m.tau.shape != (F.d,):
        raise DimensionMismatch("translation dimension does not match formation")
    return (F.positions @ S.T + m.tau).reshape(-1)


@dataclass(frozen=True)
class ShapeSpaceBasis:
    columns: np.ndarray
    rank: int

    def project(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return self.columns @ (self.columns.T @ p)


def shape_space_generators(F: NominalFormation) -> np.ndarray:
    """The dn x 2d matrix [1_n kron e_l | (I_n kron R E_l R^T) ptilde], l = 1..d."""
    d, n = F.d, F.n
    gens = np.zeros((d * n, 2 * d))
    for l in range(d):
        e = np.zeros(d)
        e[l] = 1.0
        gens[:, l] = np.tile(e, n)
        gens[:, d + l] = apply_maneuver(F, ManeuverParams(e, np.zeros(d)))
    return gens


def numerical_rank(singular_values: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if singular_values.size == 0 or singular_values[0] == 0.0:
        return 0
    return int(np.sum(singular_values > rtol * singular_values[0]))


def shape_space_basis(F: NominalFormation) -> ShapeSpaceBasis:
    gens = shape_space_generators(F)
    u, sv, _ = np.linalg.svd(gens, full_matrices=False)
    r = numerical_rank(sv)
    return ShapeSpaceBasis(_frozen(u[:, :r]), r)


def distance_to_shape_space(p, B: ShapeSpaceBasis) -> float:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape[0] != B.columns.shape[0]:
        raise DimensionMismatch(f"p has length {p.shape[0]}, basis lives in R^{B.columns.shape[0]}")
    return float(np.linalg.norm(p - B.project(p)))


def stack(positions: Sequence) -> np.ndarray:
    return np.asarray(positions, dtype=float).reshape(-1)
