"""
Leader-follower maneuver control with single-integrator agents.

Leaders track their maneuvered reference with a saturated law
``u = -a1 tanh(a2 (p - p*)) + dp*``; followers only use relative positions
of their neighbours, ``z = sum_j L_ij (p_j - p_i)`` and
``u = -b1 z - b2 sgn(z)``. The closed loop is integrated with explicit Euler.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch, MissingNeighbor, NumericalInstability
from .formation import NominalFormation, as_rotation
from .laplacian import BlockLaplacian
from .protocol import LEADER, AgentState, world_from_laplacian


@dataclass(frozen=True)
class Gains:
    """Controller gains. ``boundary_layer`` is the sgn smoothing width; None means ideal sgn."""

    alpha1: float = 1.0
    alpha2: float = 2.0
    beta1: float = 8.0
    beta2: float = 0.2
    boundary_layer: float | None = 1e-3

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "beta1", "beta2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"gain {name} must be finite and > 0, got {v}")
        if self.boundary_layer is not None and not self.boundary_layer > 0:
            raise ValueError("boundary_layer width must be > 0")


@dataclass(frozen=True)
class Phase:
    t_start: float
    t_end: float
    s_start: np.ndarray
    s_end: np.ndarray
    tau_start: np.ndarray
    tau_end: np.ndarray

    def __post_init__(self):
        for name in ("s_start", "s_end", "tau_start", "tau_end"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not self.t_end > self.t_start:
            raise ValueError(f"phase must have t_end > t_start, got [{self.t_start}, {self.t_end}]")

    @property
    def s_rate(self) -> np.ndarray:
        return (self.s_end - self.s_start) / (self.t_end - self.t_start)

    @property
    def tau_rate(self) -> np.ndarray:
        return (self.tau_end - self.tau_start) / (self.t_end - self.t_start)


CONTINUITY_TOL = 1e-12


@dataclass(frozen=True)
class ManeuverSchedule:
    """Piecewise-linear s(t), tau(t); before the first phase s = 1, tau = tau0."""

    d: int
    phases: tuple = ()
    tau0: np.ndarray | None = None

    def __post_init__(self):
        tau0 = np.zeros(self.d) if self.tau0 is None else np.asarray(self.tau0, dtype=float)
        object.__setattr__(self, "tau0", tau0)
        object.__setattr__(self, "phases", tuple(self.phases))
        s_prev, tau_prev, t_prev = np.ones(self.d), tau0, -np.inf
        for k, ph in enumerate(self.phases):
            if any(np.shape(x) != (self.d,) for x in (ph.s_start, ph.s_end, ph.tau_start, ph.tau_end)):
                raise DimensionMismatch(f"phase {k}: s and tau must have dimension {self.d}")
            if ph.t_start < t_prev:
                raise ValueError(f"phase {k} overlaps or precedes the previous phase")
            if np.max(np.abs(ph.s_start - s_prev)) > CONTINUITY_TOL or np.max(np.abs(ph.tau_start - tau_prev)) > CONTINUITY_TOL:
                raise ValueError(f"phase {k} does not start where the schedule left off (s, tau must be continuous)")
            s_prev, tau_prev, t_prev = ph.s_end, ph.tau_end, ph.t_end

    @classmethod
    def static(cls, d: int) -> "ManeuverSchedule":
        return cls(d)

    def params(self, t: float):
        """(s, tau, s_dot, tau_dot) at time t; rates are right-derivatives."""
        s, tau = np.ones(self.d), self.tau0
        zero = np.zeros(self.d)
        for ph in self.phases:
            if t < ph.t_start:
                break
            if t < ph.t_end:
                f = t - ph.t_start
                return ph.s_start + f * ph.s_rate, ph.tau_start + f * ph.tau_rate, ph.s_rate, ph.tau_rate
            s, tau = ph.s_end, ph.tau_end
        return s, tau, zero, zero


def reference(ptilde_i, sched: ManeuverSchedule, R, t: float):
    """Target position and velocity of one agent at time t."""
    if t < 0:
        raise ValueError("time must be non-negative")
    Rm = as_rotation(R).matrix
    s, tau, s_dot, tau_dot = sched.params(t)
    q = Rm.T @ np.asarray(ptilde_i, dtype=float)
    return Rm @ (s * q) + tau, Rm @ (s_dot * q) + tau_dot


def references(positions: np.ndarray, sched: ManeuverSchedule, R, t: float):
    """Row-wise ``reference`` for an (n, d) array of nominal positions."""
    Rm = as_rotation(R).matrix
    s, tau, s_dot, tau_dot = sched.params(t)
    q = np.asarray(positions, dtype=float) @ Rm
    return (q * s) @ Rm.T + tau, (q * s_dot) @ Rm.T + tau_dot


def leader_control(p_i, p_star, dp_star, g: Gains) -> np.ndarray:
    e = np.asarray(p_i, dtype=float) - np.asarray(p_star, dtype=float)
    return -g.alpha1 * np.tanh(g.alpha2 * e) + np.asarray(dp_star, dtype=float)


def _sgn(z: np.ndarray, width: float | None) -> np.ndarray:
    if width is None:
        return np.sign(z)
    return z / np.maximum(np.abs(z), width)


def follower_control(agent: AgentState, neighbor_positions: Mapping, own_position, g: Gains) -> np.ndarray:
    """Formation-keeping input from neighbour-relative measurements only."""
    own = np.asarray(own_position, dtype=float)
    z = np.zeros(agent.d)
    for j in agent.neighbors:
        try:
            p_j = neighbor_positions[j]
        except KeyError:
            raise MissingNeighbor(f"agent {agent.id!r} has no position for neighbour {j!r}") from None
        z += agent.local_blocks[j] @ (np.asarray(p_j, dtype=float) - own)
    return -g.beta1 * z - g.beta2 * _sgn(z, g.boundary_layer)


@dataclass(frozen=True)
class SimState:
    t: float
    positions: np.ndarray  # (n, d), rows in formation order
    formation: NominalFormation
    laplacian: BlockLaplacian
    agents: dict = field(default_factory=dict)  # id -> AgentState, derived from laplacian

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (self.formation.n, self.formation.d):
            raise DimensionMismatch(f"positions must have shape ({self.formation.n}, {self.formation.d})")
        object.__setattr__(self, "positions", pos)
        if not self.agents:
            object.__setattr__(self, "agents", world_from_laplacian(self.laplacian, self.formation))

    def position_map(self) -> dict:
        return dict(zip(self.formation.agent_ids, self.positions))


def control_inputs(state: SimState, sched: ManeuverSchedule, g: Gains) -> np.ndarray:
    F = state.formation
    targets, velocities = references(F.positions, sched, F.rotation, state.t)
    pos = state.position_map()
    u = np.empty_like(state.positions)
    for k, a in enumerate(F.agent_ids):
        agent = state.agents[a]
        if agent.role == LEADER:
            u[k] = leader_control(state.positions[k], targets[k], velocities[k], g)
        else:
            nbr = {b: pos[b] for b in agent.neighbors}
            u[k] = follower_control(agent, nbr, state.positions[k], g)
    return u


def step(state: SimState, sched: ManeuverSchedule, g: Gains, dt: float) -> SimState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = control_inputs(state, sched, g)
    nxt = state.positions + dt * u
    if not np.all(np.isfinite(nxt)):
        raise NumericalInstability(f"non-finite state at t={state.t + dt:.6g}; reduce dt or the gains")
    return replace(state, t=state.t + dt, positions=nxt)


def tracking_error(state: SimState, sched: ManeuverSchedule):
    """Per-agent distance to the maneuvered target and its maximum."""
    F = state.formation
    targets, _ = references(F.positions, sched, F.rotation, state.t)
    err = np.linalg.norm(state.positions - targets, axis=1)
    return err, float(err.max(initial=0.0))


def simulate(state: SimState, sched: ManeuverSchedule, g: Gains, dt: float, duration: float) -> SimState:
    for _ in range(int(round(duration / dt))):
        state = step(state, sched, g, dt)
    return state


def schedule_from_segments(d: int, segments: Sequence[dict], tau0=None) -> ManeuverSchedule:
    """Build a schedule from dicts with t_start, t_end, s_end, tau_end and optional starts."""
    tau0 = np.zeros(d) if tau0 is None else np.asarray(tau0, dtype=float)
    phases, s_prev, tau_prev = [], np.ones(d), tau0
    for seg in segments:
        s_start = np.asarray(seg.get("s_start", s_prev), dtype=float)
        tau_start = np.asarray(seg.get("tau_start", tau_prev), dtype=float)
        s_end = np.asarray(seg.get("s_end", s_start), dtype=float)
        tau_end = np.asarray(seg.get("tau_end", tau_start), dtype=float)
        try:
            phases.append(Phase(seg["t_start"], seg["t_end"], s_start, s_end, tau_start, tau_end))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        s_prev, tau_prev = s_end, tau_end
    return ManeuverSchedule(d, tuple(phases), tau0)
