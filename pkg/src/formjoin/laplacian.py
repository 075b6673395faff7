"""
Matrix-valued Laplacians and their incremental extension.

Only off-diagonal blocks are stored, one per undirected edge; the diagonal
block of agent ``a`` is always ``-sum_b L_ab`` so block rows sum to zero by
construction. A join attaches a new agent ``v`` to an anchor pair ``(i, j)``
by padding the Laplacian with an isolated agent and adding the 3x3 block
stamp ``M^T D M`` with ``M = [W_jv, W_vi, -W_vv]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .constraints import Triplet, require_generic, weights_from_positions
from .errors import (
    DimensionMismatch,
    DuplicateAgent,
    SingularFollowerBlock,
    UnknownAgent,
    UnknownAnchor,
)
from .formation import AgentId, NominalFormation, as_rotation, shape_space_basis

TOL_PSD = 1e-9
TOL_KER = 1e-8
TOL_ANGLE = 1e-6
SYMMETRY_TOL = 1e-10


def _block(a, d: int) -> np.ndarray:
    b = np.array(a, dtype=float)
    if b.shape != (d, d):
        raise DimensionMismatch(f"block must be {d}x{d}, got shape {b.shape}")
    b.setflags(write=False)
    return b


@dataclass(frozen=True)
class DesignWeight:
    """Positive diagonal constraint weighting ``D``."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.ndim == 2:
            if np.any(e != np.diag(np.diag(e))):
                raise ValueError("design weight must be diagonal")
            e = np.diag(e).copy()
        if e.ndim != 1 or e.size == 0 or not np.all(np.isfinite(e)) or np.any(e <= 0):
            raise ValueError("design weight diagonal must be finite and strictly positive")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @classmethod
    def identity(cls, d: int) -> "DesignWeight":
        return cls(np.ones(d))

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.entries)


@dataclass(frozen=True)
class BlockLaplacian:
    d: int
    agent_ids: tuple
    edges: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = tuple(self.agent_ids)
        if len(set(ids)) != len(ids):
            raise DuplicateAgent(f"agent ids are not unique: {ids}")
        index = {a: k for k, a in enumerate(ids)}
        edges = {}
        for (a, b), blk in dict(self.edges).items():
            if a not in index or b not in index:
                raise UnknownAgent(f"edge ({a!r}, {b!r}) references an unknown agent")
            if a == b:
                raise ValueError("self-loops are not stored; diagonal blocks are derived")
            blk = np.asarray(blk, dtype=float)
            if index[a] > index[b]:
                a, b, blk = b, a, blk.T
            if (a, b) in edges:
                raise ValueError(f"edge ({a!r}, {b!r}) given twice")
            edges[(a, b)] = _block(blk, self.d)
        object.__setattr__(self, "agent_ids", ids)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_index", index)

    @property
    def n(self) -> int:
        return len(self.agent_ids)

    def index(self, agent) -> int:
        try:
            return self._index[agent]
        except KeyError:
            raise UnknownAgent(f"unknown agent id {agent!r}") from None

    def __contains__(self, agent) -> bool:
        return agent in self._index

    def _key(self, a, b):
        return (a, b) if self.index(a) < self.index(b) else (b, a)

    def block(self, a, b) -> np.ndarray:
        """L_ab; for a == b the derived diagonal block."""
        if a == b:
            return self.diag_block(a)
        key = self._key(a, b)
        blk = self.edges.get(key)
        if blk is None:
            return np.zeros((self.d, self.d))
        return blk if key == (a, b) else blk.T

    def diag_block(self, a) -> np.ndarray:
        self.index(a)
        total = np.zeros((self.d, self.d))
        for b in self.neighbors(a):
            total -= self.block(a, b)
        return total

    def neighbors(self, a) -> list:
        self.index(a)
        out = [b if x == a else x for (x, b) in self.edges if a in (x, b)]
        return sorted(out, key=self.index)

    def dense(self) -> np.ndarray:
        d = self.d
        L = np.zeros((d * self.n, d * self.n))
        for (a, b), blk in self.edges.items():
            ia, ib = self._index[a] * d, self._index[b] * d
            L[ia:ia + d, ib:ib + d] += blk
            L[ib:ib + d, ia:ia + d] += blk.T
            L[ia:ia + d, ia:ia + d] -= blk
            L[ib:ib + d, ib:ib + d] -= blk.T
        return L

    def spectral_norm(self) -> float:
        if self.n == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvalsh(self.dense())), initial=0.0))

    def with_increments(self, increments: Iterable["EdgeDelta"]) -> "BlockLaplacian":
        edges = dict(self.edges)
        for delta in increments:
            key = self._key(delta.a, delta.b)
            blk = delta.block if key == (delta.a, delta.b) else delta.block.T
            edges[key] = edges[key] + blk if key in edges else blk
        return BlockLaplacian(self.d, self.agent_ids, edges)

    # serialization: {d, agent_ids, edges: [{a, b, block: row-major}]}
    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "agent_ids": list(self.agent_ids),
            "edges": [
                {"a": a, "b": b, "block": [float(x) for x in blk.reshape(-1)]}
                for (a, b), blk in self.edges.items()
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BlockLaplacian":
        d = int(doc["d"])
        edges = {}
        for e in doc["edges"]:
            blk = np.array(e["block"], dtype=float)
            if blk.size != d * d:
                raise DimensionMismatch(f"edge ({e['a']}, {e['b']}) block has {blk.size} entries, expected {d * d}")
            edges[(e["a"], e["b"])] = blk.reshape(d, d)
        return cls(d, tuple(doc["agent_ids"]), edges)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), allow_nan=False, **kw)

    @classmethod
    def from_json(cls, text: str) -> "BlockLaplacian":
        return cls.from_dict(json.loads(text))

    @classmethod
    def zero(cls, d: int, agent_ids: Sequence) -> "BlockLaplacian":
        return cls(d, tuple(agent_ids), {})


class EdgeDelta(NamedTuple):
    """Increment to the block L_ab (L_ba receives its transpose)."""

    a: AgentId
    b: AgentId
    block: np.ndarray


@dataclass(frozen=True)
class TripletStamp:
    triplet: Triplet
    blocks: np.ndarray  # (3, 3, d, d), index order (i, j, v)

    def matrix(self) -> np.ndarray:
        d = self.blocks.shape[-1]
        return self.blocks.transpose(0, 2, 1, 3).reshape(3 * d, 3 * d)

    def edge_deltas(self) -> list[EdgeDelta]:
        i, j, v = self.triplet
        b = self.blocks
        return [EdgeDelta(i, j, b[0, 1]), EdgeDelta(i, v, b[0, 2]), EdgeDelta(j, v, b[1, 2])]


def stamp_blocks(p_i, p_j, p_v, R, D: DesignWeight | None = None) -> np.ndarray:
    """The 3x3 grid of d x d blocks of M^T D M for the triplet with the given nominal positions."""
    R = as_rotation(R)
    require_generic(p_i, p_j, R)
    w = weights_from_positions(p_i, p_j, p_v, R)
    D = DesignWeight.identity(R.d) if D is None else D
    if D.entries.shape != (R.d,):
        raise DimensionMismatch("design weight dimension does not match formation")
    M = [w.w_jk, w.w_ki, -w.w_kk]
    Dm = D.matrix
    return np.array([[Ma.T @ Dm @ Mb for Mb in M] for Ma in M])


def triplet_stamp(t: Triplet, F: NominalFormation, D: DesignWeight | None = None) -> TripletStamp:
    blocks = stamp_blocks(F.position(t.i), F.position(t.j), F.position(t.k), F.rotation, D)
    return TripletStamp(t, blocks)


def pad(L: BlockLaplacian, new_ids: Sequence) -> BlockLaplacian:
    """Embed L into a larger agent set; the new agents are isolated."""
    new_ids = tuple(new_ids)
    clash = [a for a in new_ids if a in L] + [a for k, a in enumerate(new_ids) if a in new_ids[:k]]
    if clash:
        raise DuplicateAgent(f"cannot pad with existing or repeated ids {clash}")
    return BlockLaplacian(L.d, L.agent_ids + new_ids, L.edges)


class JoinUpdate(NamedTuple):
    laplacian: BlockLaplacian
    formation: NominalFormation
    deltas: list


def join_update(
    L: BlockLaplacian,
    F: NominalFormation,
    v_id,
    v_pos,
    i,
    j,
    D: DesignWeight | None = None,
    leader: bool = False,
) -> JoinUpdate:
    """Attach ``v_id`` at nominal ``v_pos`` to anchors ``i`` and ``j``: L+ = pad(L) + pad(L^{ijv})."""
    if L.agent_ids != F.agent_ids or L.d != F.d:
        raise DimensionMismatch("Laplacian and formation disagree on agents or dimension")
    for anchor in (i, j):
        if anchor not in F:
            raise UnknownAnchor(f"anchor {anchor!r} is not in the formation")
    if v_id in F:
        raise DuplicateAgent(f"agent {v_id!r} already in formation")
    F_plus = F.with_agent(v_id, v_pos, leader=leader)
    stamp = triplet_stamp(Triplet(i, j, v_id), F_plus, D)
    deltas = stamp.edge_deltas()
    return JoinUpdate(pad(L, [v_id]).with_increments(deltas), F_plus, deltas)


class JoinStep(NamedTuple):
    v_id: AgentId
    v_pos: Sequence[float]
    i: AgentId
    j: AgentId
    D: DesignWeight | None = None


def iter_incremental(seed, steps: Iterable[JoinStep], rotation, leaders=None) -> Iterator[tuple]:
    """Yield ``(L, F)`` for the seed pair and after every join step.

    ``seed`` is ``((id_a, pos_a), (id_b, pos_b))``; the seed agents are the
    leaders unless ``leaders`` says otherwise. The seed Laplacian is zero,
    whose kernel is the whole space, i.e. the shape space of a generic pair.
    """
    R = as_rotation(rotation)
    (a, pa), (b, pb) = seed
    require_generic(pa, pb, R)
    F = NominalFormation((a, b), np.array([pa, pb], dtype=float), R, frozenset(leaders or (a, b)))
    L = BlockLaplacian.zero(R.d, (a, b))
    yield L, F
    for k, step in enumerate(steps):
        step = JoinStep(*step)
        try:
            L, F, _ = join_update(L, F, step.v_id, step.v_pos, step.i, step.j, step.D)
        except Exception as exc:
            raise type(exc)(f"step {k} (agent {step.v_id!r}): {exc}") from exc
        yield L, F


def build_incremental(seed, steps: Iterable[JoinStep], rotation, leaders=None) -> tuple[BlockLaplacian, NominalFormation]:
    for L, F in iter_incremental(seed, steps, rotation, leaders):
        pass
    return L, F


@dataclass(frozen=True)
class SpectralReport:
    psd: bool
    min_eig: float
    kernel_dim: int
    kernel_matches_shape_space: bool
    max_principal_angle: float
    lff_min_eig: float
    rank: int
    shape_space_rank: int
    norm: float

    @property
    def passed(self) -> bool:
        return self.psd and self.kernel_matches_shape_space and self.lff_min_eig > 0

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "psd": self.psd,
            "min_eig": self.min_eig,
            "kernel_dim": self.kernel_dim,
            "shape_space_rank": self.shape_space_rank,
            "kernel_matches_shape_space": self.kernel_matches_shape_space,
            "max_principal_angle": self.max_principal_angle,
            "lff_min_eig": self.lff_min_eig if np.isfinite(self.lff_min_eig) else None,
            "rank": self.rank,
            "norm": self.norm,
        }


def follower_indices(F: NominalFormation) -> np.ndarray:
    d = F.d
    return np.array([F.index(a) * d + c for a in F.follower_ids for c in range(d)], dtype=int)


def leader_indices(F: NominalFormation) -> np.ndarray:
    d = F.d
    return np.array([F.index(a) * d + c for a in F.leader_ids for c in range(d)], dtype=int)


def validate_spectral(
    L: BlockLaplacian,
    F: NominalFormation,
    tol_psd: float = TOL_PSD,
    tol_ker: float = TOL_KER,
    tol_angle: float = TOL_ANGLE,
) -> SpectralReport:
    """Check L >= 0, ker L = shape space of F and L_ff > 0 numerically."""
    if L.agent_ids != F.agent_ids or L.d != F.d:
        raise DimensionMismatch("Laplacian and formation disagree on agents or dimension")
    A = L.dense()
    if np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(A), initial=0.0)):
        raise ArithmeticError("assembled Laplacian is not symmetric")
    evals, evecs = np.linalg.eigh(A)
    norm = float(np.max(np.abs(evals), initial=0.0))
    scale = norm if norm > 0 else 1.0
    min_eig = float(evals[0]) if evals.size else 0.0
    in_kernel = np.abs(evals) <= tol_ker * scale
    kernel = evecs[:, in_kernel]
    kernel_dim = int(kernel.shape[1])

    basis = shape_space_basis(F)
    if kernel_dim == basis.rank and kernel_dim > 0:
        angle = float(np.max(scipy.linalg.subspace_angles(kernel, basis.columns)))
    elif kernel_dim == basis.rank:
        angle = 0.0
    else:
        angle = float(np.pi / 2)

    f = follower_indices(F)
    if f.size:
        lff_min = float(np.linalg.eigvalsh(A[np.ix_(f, f)])[0])
    else:
        lff_min = float("inf")

    return SpectralReport(
        psd=min_eig >= -tol_psd * scale,
        min_eig=min_eig,
        kernel_dim=kernel_dim,
        kernel_matches_shape_space=kernel_dim == basis.rank and angle <= tol_angle,
        max_principal_angle=angle,
        lff_min_eig=lff_min,
        rank=A.shape[0] - kernel_dim,
        shape_space_rank=basis.rank,
        norm=norm,
    )


def follower_equilibrium(L: BlockLaplacian, F: NominalFormation, p_l) -> np.ndarray:
    """Follower positions solving L_ff p_f = -L_fl p_l, one row per follower.

    ``p_l`` has one row per leader in formation order. Positive definiteness
    of L_ff is tested by Cholesky factorisation.
    """
    d = F.d
    p_l = np.asarray(p_l, dtype=float).reshape(-1)
    l_idx, f_idx = leader_indices(F), follower_indices(F)
    if p_l.shape[0] != l_idx.size:
        raise DimensionMismatch(f"expected {len(F.leader_ids)} leader positions in R^{d}")
    if f_idx.size == 0:
        return np.zeros((0, d))
    A = L.dense()
    try:
        factor = scipy.linalg.cho_factor(A[np.ix_(f_idx, f_idx)])
    except np.linalg.LinAlgError as exc:
        raise SingularFollowerBlock(f"follower block L_ff is not positive definite: {exc}") from None
    p_f = scipy.linalg.cho_solve(factor, -A[np.ix_(f_idx, l_idx)] @ p_l)
    return p_f.reshape(-1, d)


def laplacian_apply(L: BlockLaplacian, p) -> np.ndarray:
    """(Lp)_a = sum over neighbours b of L_ab (p_b - p_a), evaluated edge by edge."""
    d = L.d
    P = np.asarray(p, dtype=float).reshape(-1)
    if P.shape[0] != d * L.n:
        raise DimensionMismatch(f"p has length {P.shape[0]}, expected {d * L.n}")
    P = P.reshape(L.n, d)
    out = np.zeros_like(P)
    for (a, b), blk in L.edges.items():
        ia, ib = L._index[a], L._index[b]
        diff = P[ib] - P[ia]
        out[ia] += blk @ diff
        out[ib] -= blk.T @ diff
    return out.reshape(-1)

