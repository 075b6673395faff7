"""
Scenario configuration, orchestration and artifact emission.

A scenario is one JSON document: the initial agents and their Laplacian
(either explicit edge blocks or an incremental build from a seed pair), a
maneuver schedule, timed join events, gains and integration settings.
``run`` integrates the closed loop, pausing at every join to execute the
distributed protocol and re-validate the spectrum of the new Laplacian.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import control
from .constraints import genericity_margin
from .errors import ConfigError, FormationError, InvalidRotation, NoGenericPair, SpectralViolation
from .formation import NominalFormation, Rotation
from .laplacian import BlockLaplacian, DesignWeight, JoinStep, iter_incremental, validate_spectral
from .protocol import (
    FOLLOWER,
    LEADER,
    AgentState,
    Bus,
    assemble_global,
    execute_join,
    formation_from_world,
    select_pair,
    world_from_laplacian,
)

log = logging.getLogger(__name__)

BUNDLED = ("paper_4_1", "paper_4_2")
JOIN_WINDOW = 3.0


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


Vector = list[float]


class AgentSpec(_Strict):
    id: int
    nominal: Vector
    role: Literal["leader", "follower"] = FOLLOWER
    initial: Optional[Vector] = None


class EdgeSpec(_Strict):
    a: int
    b: int
    block: Vector  # row-major d x d


class FixtureLaplacian(_Strict):
    source: Literal["fixture"]
    edges: list[EdgeSpec]


class BuildStepSpec(_Strict):
    id: int
    i: int
    j: int
    D: Optional[Vector] = None


class IncrementalLaplacian(_Strict):
    source: Literal["incremental"]
    seed: tuple[int, int]
    steps: list[BuildStepSpec] = []


class PhaseSpec(_Strict):
    t_start: float
    t_end: float
    s_start: Optional[Vector] = None
    s_end: Optional[Vector] = None
    tau_start: Optional[Vector] = None
    tau_end: Optional[Vector] = None


class JoinEventSpec(_Strict):
    time: float
    id: int
    nominal: Vector
    D: Optional[Vector] = None
    sensing_radius: float = Field(gt=0)
    spawn_offset: Optional[Vector] = None
    anchors: Optional[list[int]] = None
    role: Literal["leader", "follower"] = FOLLOWER


class GainsSpec(_Strict):
    alpha1: float = Field(1.0, gt=0)
    alpha2: float = Field(2.0, gt=0)
    beta1: float = Field(8.0, gt=0)
    beta2: float = Field(0.2, gt=0)
    boundary_layer: Optional[float] = Field(1e-3, gt=0)


class ScenarioConfig(_Strict):
    name: str = "scenario"
    dimension: int = Field(ge=1)
    rotation: Optional[list[Vector]] = None
    agents: list[AgentSpec]
    laplacian: Annotated[Union[FixtureLaplacian, IncrementalLaplacian], Field(discriminator="source")]
    schedule: list[PhaseSpec] = []
    tau0: Optional[Vector] = None
    join_events: list[JoinEventSpec] = []
    gains: GainsSpec = GainsSpec()
    dt: float = Field(1e-3, gt=0)
    duration: float = Field(gt=0)
    sample_every: int = Field(10, ge=1)
    seed: int = 0
    initial_spread: float = Field(1.0, ge=0)
    default_spawn_offset: float = 0.3
    output: Optional[str] = None

    @model_validator(mode="after")
    def _semantics(self):
        d = self.dimension

        def vec(where, v, n=d):
            if v is not None and len(v) != n:
                raise ValueError(f"{where}: expected {n} components, got {len(v)}")
            if v is not None and not all(math.isfinite(x) for x in v):
                raise ValueError(f"{where}: components must be finite")

        if self.rotation is not None:
            try:
                Rotation(np.array(self.rotation, dtype=float))
            except (InvalidRotation, ValueError) as exc:
                raise ValueError(f"rotation: RotationMatrix invariant violated ({exc})") from None
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("agents: ids must be unique")
        for a in self.agents:
            vec(f"agents[{a.id}].nominal", a.nominal)
            vec(f"agents[{a.id}].initial", a.initial)
        if not any(a.role == LEADER for a in self.agents):
            raise ValueError("agents: at least one leader is required")
        known = set(ids)
        lap = self.laplacian
        if isinstance(lap, FixtureLaplacian):
            for e in lap.edges:
                if e.a not in known or e.b not in known:
                    raise ValueError(f"laplacian.edges: ({e.a}, {e.b}) references an unknown agent")
                vec(f"laplacian.edges[({e.a}, {e.b})].block", e.block, d * d)
        else:
            order = list(lap.seed) + [s.id for s in lap.steps]
            if sorted(order) != sorted(ids):
                raise ValueError("laplacian: seed and steps must cover every agent exactly once")
            placed = set(lap.seed)
            for k, s in enumerate(lap.steps):
                if s.i not in placed or s.j not in placed:
                    raise ValueError(f"laplacian.steps[{k}]: anchors must already be placed")
                vec(f"laplacian.steps[{k}].D", s.D)
                placed.add(s.id)
        for k, p in enumerate(self.schedule):
            for name in ("s_start", "s_end", "tau_start", "tau_end"):
                vec(f"schedule[{k}].{name}", getattr(p, name))
        vec("tau0", self.tau0)
        try:
            control.schedule_from_segments(d, [p.model_dump(exclude_none=True) for p in self.schedule], self.tau0)
        except (ValueError, FormationError) as exc:
            raise ValueError(f"schedule: {exc}") from None
        last = -math.inf
        for k, ev in enumerate(self.join_events):
            if not 0 <= ev.time <= self.duration:
                raise ValueError(f"join_events[{k}].time: {ev.time} is outside [0, duration={self.duration}]")
            if ev.time < last:
                raise ValueError(f"join_events[{k}].time: join events must be in time order")
            last = ev.time
            if ev.id in known:
                raise ValueError(f"join_events[{k}].id: agent {ev.id} already exists")
            known.add(ev.id)
            vec(f"join_events[{k}].nominal", ev.nominal)
            vec(f"join_events[{k}].D", ev.D)
            vec(f"join_events[{k}].spawn_offset", ev.spawn_offset)
        return self

    # derived objects -----------------------------------------------------

    @property
    def rotation_obj(self) -> Rotation:
        if self.rotation is None:
            return Rotation.identity(self.dimension)
        return Rotation(np.array(self.rotation, dtype=float))

    @property
    def leader_ids(self) -> frozenset:
        return frozenset(a.id for a in self.agents if a.role == LEADER)

    def gains_obj(self) -> control.Gains:
        return control.Gains(**self.gains.model_dump())

    def schedule_obj(self) -> control.ManeuverSchedule:
        return control.schedule_from_segments(
            self.dimension, [p.model_dump(exclude_none=True) for p in self.schedule], self.tau0
        )

    def resolved(self) -> dict:
        """The configuration with every default filled in."""
        doc = self.model_dump(mode="json")
        if doc["rotation"] is None:
            doc["rotation"] = np.eye(self.dimension).tolist()
        return doc


def _config_error(exc: ValidationError, source: str) -> ConfigError:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return ConfigError(f"{source}: invalid scenario: " + "; ".join(parts))


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: JSON parse error: {exc.msg}") from None
    return scenario_from_dict(doc, source)


def scenario_from_dict(doc: dict, source: str = "<dict>") -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(doc)
    except ValidationError as exc:
        raise _config_error(exc, source) from None


def load_scenario(path) -> ScenarioConfig:
    """Load a scenario from a file path or one of the bundled names."""
    if str(path) in BUNDLED:
        text = resources.files("formjoin").joinpath("data", f"{path}.json").read_text()
        return parse_scenario(text, str(path))
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read scenario: {exc}") from None
    return parse_scenario(text, str(p))


def initial_epoch(cfg: ScenarioConfig) -> tuple[BlockLaplacian, NominalFormation]:
    R = cfg.rotation_obj
    d = cfg.dimension
    nominal = {a.id: a.nominal for a in cfg.agents}
    lap = cfg.laplacian
    if isinstance(lap, FixtureLaplacian):
        F = NominalFormation.from_mapping(nominal, R, cfg.leader_ids)
        edges = {(e.a, e.b): np.array(e.block, dtype=float).reshape(d, d) for e in lap.edges}
        return BlockLaplacian(d, F.agent_ids, edges), F
    a, b = lap.seed
    steps = [
        JoinStep(s.id, nominal[s.id], s.i, s.j, DesignWeight(s.D) if s.D else None) for s in lap.steps
    ]
    *_, (L, F) = iter_incremental(((a, nominal[a]), (b, nominal[b])), steps, R, cfg.leader_ids)
    return L, F


def six_agent_fixture() -> tuple[BlockLaplacian, NominalFormation]:
    """The bundled six-agent Laplacian and nominal formation (leaders 1 and 2)."""
    return initial_epoch(load_scenario("paper_4_1"))


# running -------------------------------------------------------------------


@dataclass
class RunArtifacts:
    config: dict
    trajectory: list = field(default_factory=list)  # (t, agent, x1..xd)
    errors: list = field(default_factory=list)  # (t, agent, error)
    events: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)  # BlockLaplacian.to_dict() per epoch
    error_trace: np.ndarray | None = None  # (steps + 1, 2): t, max error

    def max_error_at(self, t: float) -> float:
        k = int(np.argmin(np.abs(self.error_trace[:, 0] - t)))
        return float(self.error_trace[k, 1])

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        d = len(self.trajectory[0]) - 2 if self.trajectory else self.config["dimension"]
        _write_csv(out / "trajectory.csv", ["t", "agent"] + [f"x{c + 1}" for c in range(d)], self.trajectory)
        _write_csv(out / "errors.csv", ["t", "agent", "error"], self.errors)
        with open(out / "events.jsonl", "w") as fh:
            for rec in self.events:
                fh.write(json.dumps(rec) + "\n")
        (out / "metrics.json").write_text(json.dumps(self.metrics, indent=2) + "\n")
        (out / "config.json").write_text(json.dumps(self.config, indent=2) + "\n")
        for k, snap in enumerate(self.snapshots):
            (out / f"laplacian_epoch{k}.json").write_text(json.dumps(snap) + "\n")
        return out


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(row[0])), row[1], *(repr(float(x)) for x in row[2:])])
    path.write_text(buf.getvalue())


def _join_newcomer(ev: JoinEventSpec) -> AgentState:
    return AgentState(ev.id, ev.nominal, ev.role)


def _epoch_record(bus: Bus, t: float, epoch: int, joined, pair, report) -> dict:
    return {
        "seq": bus.next_seq(),
        "time": t,
        "src": "kernel",
        "dst": "*",
        "variant": "EpochTransition",
        "payload": {"epoch": epoch, "joined": joined, "pair": list(pair) if pair else None, "spectral": report.to_dict()},
    }


def _segments(cfg: ScenarioConfig) -> list[float]:
    pts = {0.0, float(cfg.duration)}
    pts.update(ev.time for ev in cfg.join_events)
    for p in cfg.schedule:
        pts.update((p.t_start, p.t_end))
    return sorted(t for t in pts if 0 <= t <= cfg.duration)


def run(cfg: ScenarioConfig, dt: float | None = None, seed: int | None = None, sample_every: int | None = None) -> RunArtifacts:
    """Integrate the scenario, executing joins at their scheduled times."""
    dt = cfg.dt if dt is None else dt
    seed = cfg.seed if seed is None else seed
    sample_every = cfg.sample_every if sample_every is None else sample_every
    resolved = cfg.resolved() | {"dt": dt, "seed": seed, "sample_every": sample_every}
    R = cfg.rotation_obj
    sched = cfg.schedule_obj()
    gains = cfg.gains_obj()
    rng = np.random.default_rng(seed)

    L, F = initial_epoch(cfg)
    report = validate_spectral(L, F)
    if not report.passed:
        raise SpectralViolation(f"epoch 0 Laplacian fails the spectral conditions: {report.to_dict()}", 0)
    world = world_from_laplacian(L, F)
    initial = {a.id: a.initial for a in cfg.agents}
    pos = np.array(
        [
            initial[a] if initial[a] is not None else F.position(a) + rng.uniform(-cfg.initial_spread, cfg.initial_spread, F.d)
            for a in F.agent_ids
        ]
    )
    state = control.SimState(0.0, pos, F, L, world)

    bus = Bus()
    art = RunArtifacts(resolved)
    art.events.append(_epoch_record(bus, 0.0, 0, None, None, report))
    art.snapshots.append(L.to_dict())
    epochs = [{"epoch": 0, "time": 0.0, "n": F.n, "joined": None, "pair": None, "spectral": report.to_dict()}]

    n_steps = int(round(cfg.duration / dt))
    joins = sorted(cfg.join_events, key=lambda ev: ev.time)
    join_steps = [min(n_steps, int(math.ceil(ev.time / dt - 1e-9))) for ev in joins]
    trace = np.empty((n_steps + 1, 2))
    next_join = 0

    def do_joins(k: int):
        nonlocal state, world, next_join
        while next_join < len(joins) and join_steps[next_join] == k:
            ev = joins[next_join]
            t = k * dt
            D = DesignWeight(ev.D) if ev.D else None
            out = execute_join(world, _join_newcomer(ev), R, ev.sensing_radius, D, ev.anchors, t, bus=bus)
            world = out.world
            Lk = assemble_global(world, F.d)
            Fk = formation_from_world(world, R)
            rep = validate_spectral(Lk, Fk)
            epoch = len(epochs)
            art.events.extend(out.records())
            art.events.append(_epoch_record(bus, t, epoch, ev.id, out.pair, rep))
            if not rep.passed:
                raise SpectralViolation(f"epoch {epoch} (agent {ev.id} joined) fails the spectral conditions", epoch)
            log.info("t=%.3f: agent %s joined via %s (epoch %d)", t, ev.id, out.pair, epoch)
            target, _ = control.reference(ev.nominal, sched, R, t)
            offset = np.asarray(ev.spawn_offset) if ev.spawn_offset is not None else cfg.default_spawn_offset * np.eye(F.d)[0]
            pos = np.vstack([state.positions, target + offset])
            state = control.SimState(t, pos, Fk, Lk, world)
            art.snapshots.append(Lk.to_dict())
            epochs.append({"epoch": epoch, "time": t, "n": Fk.n, "joined": ev.id, "pair": list(out.pair), "spectral": rep.to_dict()})
            next_join += 1

    for k in range(n_steps):
        do_joins(k)
        trace[k] = (k * dt, control.tracking_error(state, sched)[1])
        state = control.step(state, sched, gains, dt)
        state = control.SimState((k + 1) * dt, state.positions, state.formation, state.laplacian, state.agents)
        if (k + 1) % sample_every == 0:
            t = (k + 1) * dt
            errs, _ = control.tracking_error(state, sched)
            for a, p, e in zip(state.formation.agent_ids, state.positions, errs):
                art.trajectory.append((t, a, *p))
                art.errors.append((t, a, e))
    do_joins(n_steps)
    trace[n_steps] = (n_steps * dt, control.tracking_error(state, sched)[1])
    art.error_trace = trace
    art.metrics = _metrics(cfg, trace, joins, epochs)
    return art


def _metrics(cfg: ScenarioConfig, trace: np.ndarray, joins, epochs) -> dict:
    t, e = trace[:, 0], trace[:, 1]
    bounds = _segments(cfg)
    phases = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        last = b >= bounds[-1]
        m = (t >= a - 1e-12) & ((t <= b + 1e-12) if last else (t < b - 1e-12))
        phases.append({"t_start": a, "t_end": b, "max_error": float(e[m].max()), "final_error": float(e[m][-1])})
    transients = []
    for ev in joins:
        m = (t >= ev.time - 1e-12) & (t <= ev.time + JOIN_WINDOW + 1e-12)
        if m.any():
            transients.append(
                {"id": ev.id, "time": ev.time, "peak_error": float(e[m].max()), "error_after_window": float(e[m][-1]), "window": JOIN_WINDOW}
            )
    return {
        "name": cfg.name,
        "final_max_error": float(e[-1]),
        "phases": phases,
        "join_transients": transients,
        "epochs": epochs,
    }


# validation without integration ------------------------------------------


def validate(cfg: ScenarioConfig) -> dict:
    """Spectral report for epoch 0 and a dry run of every join on nominal data."""
    R = cfg.rotation_obj
    L, F = initial_epoch(cfg)
    rep0 = validate_spectral(L, F)
    result = {"name": cfg.name, "epochs": [{"epoch": 0, "n": F.n, "spectral": rep0.to_dict()}], "joins": []}
    ok = rep0.passed
    world = world_from_laplacian(L, F)
    prev_rank = rep0.rank
    for k, ev in enumerate(cfg.join_events, start=1):
        D = DesignWeight(ev.D) if ev.D else None
        out = execute_join(world, _join_newcomer(ev), R, ev.sensing_radius, D, ev.anchors, ev.time)
        world = out.world
        i, j = out.pair
        Lk = assemble_global(world, F.d)
        Fk = formation_from_world(world, R)
        rep = validate_spectral(Lk, Fk)
        rank_ok = rep.rank == prev_rank + F.d
        prev_rank = rep.rank
        ok = ok and rep.passed and rank_ok
        result["joins"].append(
            {
                "id": ev.id,
                "candidates": out.candidates,
                "pair": [i, j],
                "genericity_margin": genericity_margin(world[i].nominal_pos, world[j].nominal_pos, R),
                "rank_increase_ok": rank_ok,
            }
        )
        result["epochs"].append({"epoch": k, "n": Fk.n, "spectral": rep.to_dict()})
    result["passed"] = bool(ok)
    return result


# random scenarios ----------------------------------------------------------


MAX_ATTEMPTS = 100


def random_scenario(d: int, n: int, seed: int = 0, box: float = 5.0, min_margin: float = 0.1) -> dict:
    """A generic random formation of n agents in R^d, built incrementally from a leader seed pair.

    Each new agent anchors on the placed pair with the largest genericity
    margin (the rule ``select_pair`` applies during a live join). Picking
    merely admissible pairs at random lets the spectrum spread until genuine
    nonzero eigenvalues fall under the kernel tolerance. A draw whose best
    margin is below ``min_margin`` is resampled, up to 100 times.
    """
    if n < 2 or d < 1:
        raise ConfigError("random scenario needs n >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_ATTEMPTS):
        R = Rotation.random(d, rng)
        pts = rng.uniform(-box, box, size=(n + 1, d))
        if genericity_margin(pts[0], pts[1], R) < min_margin:
            continue
        steps = []
        for v in range(2, n + 1):
            try:
                i, j = select_pair(dict(enumerate(pts[:v])), pts[v], R)
            except NoGenericPair:
                break
            if genericity_margin(pts[i], pts[j], R) < min_margin:
                break
            if v < n:
                steps.append({"id": v + 1, "i": int(i) + 1, "j": int(j) + 1})
        else:
            return {
                "name": f"random_d{d}_n{n}_seed{seed}",
                "dimension": d,
                "rotation": R.matrix.tolist(),
                "agents": [
                    {"id": k + 1, "nominal": pts[k].tolist(), "role": LEADER if k < 2 else FOLLOWER} for k in range(n)
                ],
                "laplacian": {"source": "incremental", "seed": [1, 2], "steps": steps},
                "join_events": [
                    {"time": 1.0, "id": n + 1, "nominal": pts[n].tolist(), "sensing_radius": 4 * box * math.sqrt(d)}
                ],
                "duration": 2.0,
                "seed": seed,
            }
    raise ConfigError(f"could not sample a generic configuration in {MAX_ATTEMPTS} attempts")
