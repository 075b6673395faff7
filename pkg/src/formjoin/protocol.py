"""
Distributed agent joining over a simulated message bus.

Each agent only knows its own nominal position, role, neighbour set and the
Laplacian blocks toward its neighbours. A newcomer ``v`` discovers agents in
sensing range, asks them for their nominal positions, picks a generic anchor
pair ``(i, j)`` and tells both. Then ``i``, ``j`` and ``v`` each compute the
stamp increments for their own block row, cross-check the shared blocks with
their peers, and commit. No other agent sends or receives anything.

Delivery is lossless, FIFO per sender, and globally ordered by visiting
senders round-robin in ascending id order, so a join is fully deterministic.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

import numpy as np

from .constraints import genericity_check, genericity_margin
from .errors import InconsistentBlocks, NoCandidates, NoGenericPair
from .formation import AgentId, NominalFormation, Rotation, as_rotation
from .laplacian import BlockLaplacian, DesignWeight, stamp_blocks

BLOCK_TOL = 1e-12

LEADER = "leader"
FOLLOWER = "follower"


@dataclass(frozen=True)
class AgentState:
    id: AgentId
    nominal_pos: np.ndarray
    role: str = FOLLOWER
    neighbors: frozenset = frozenset()
    local_blocks: Mapping[AgentId, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        pos = np.array(self.nominal_pos, dtype=float)
        pos.setflags(write=False)
        object.__setattr__(self, "nominal_pos", pos)
        if self.role not in (LEADER, FOLLOWER):
            raise ValueError(f"role must be {LEADER!r} or {FOLLOWER!r}, got {self.role!r}")
        blocks = {}
        for b, blk in dict(self.local_blocks).items():
            blk = np.array(blk, dtype=float)
            blk.setflags(write=False)
            blocks[b] = blk
        object.__setattr__(self, "local_blocks", blocks)
        object.__setattr__(self, "neighbors", frozenset(self.neighbors))
        if set(blocks) != set(self.neighbors):
            raise ValueError(f"agent {self.id!r}: local_blocks keys must equal the neighbour set")

    @property
    def d(self) -> int:
        return self.nominal_pos.shape[0]


World = dict  # AgentId -> AgentState, insertion order defines block order


# message bodies ------------------------------------------------------------


@dataclass(frozen=True)
class JoinRequest:
    v_id: AgentId
    v_nominal: tuple


@dataclass(frozen=True)
class CandidateInfo:
    id: AgentId
    nominal: tuple
    role: str


@dataclass(frozen=True)
class PairSelection:
    i: AgentId
    j: AgentId
    v: AgentId
    D: tuple
    nominals: tuple  # (pt_i, pt_j, pt_v)


@dataclass(frozen=True)
class BlockDelta:
    about_pair: tuple  # (sender, receiver); increment is for L_{sender, receiver}
    increment: tuple  # row-major d x d


@dataclass(frozen=True)
class JoinAck:
    pass


@dataclass(frozen=True)
class Message:
    seq: int
    src: AgentId
    dst: AgentId
    body: Any

    @property
    def variant(self) -> str:
        return type(self.body).__name__

    def record(self, time: float) -> dict:
        """Trace record with stable key order: seq, time, src, dst, variant, payload."""
        payload = {k: _plain(v) for k, v in vars(self.body).items()}
        return {"seq": self.seq, "time": time, "src": self.src, "dst": self.dst, "variant": self.variant, "payload": payload}


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _tup(a) -> tuple:
    return tuple(float(x) for x in np.asarray(a, dtype=float).reshape(-1))


class Bus:
    """Lossless bus: per-sender FIFO queues drained round-robin by sender id."""

    def __init__(self):
        self._queues: dict[AgentId, deque] = {}
        self._seq = itertools.count()

    def send(self, src, dst, body) -> Message:
        msg = Message(next(self._seq), src, dst, body)
        self._queues.setdefault(src, deque()).append(msg)
        return msg

    def next_seq(self) -> int:
        """Reserve a sequence number for a record that is not a delivered message."""
        return next(self._seq)

    def pending(self) -> int:
        return sum(len(q) for q in self._queues.values())

    def drain(self, handlers: Mapping[AgentId, Any]) -> list[Message]:
        """Deliver until quiescent; ``handlers[dst](msg)`` returns ``[(dst, body), ...]`` to send."""
        delivered = []
        while self.pending():
            for src in sorted(self._queues, key=_id_key):
                q = self._queues[src]
                if not q:
                    continue
                msg = q.popleft()
                delivered.append(msg)
                for dst, body in handlers[msg.dst](msg) or ():
                    self.send(msg.dst, dst, body)
        return delivered


def _id_key(a):
    return (0, a, "") if isinstance(a, (int, float)) else (1, 0, str(a))


# local agent logic ---------------------------------------------------------


def discover_candidates(v_pos, world: Mapping[AgentId, AgentState], radius: float) -> list:
    """Ids of agents whose nominal position lies within ``radius`` of ``v_pos``, sorted."""
    if radius <= 0:
        raise ValueError("sensing radius must be positive")
    v_pos = np.asarray(v_pos, dtype=float)
    hits = [a for a, st in world.items() if np.linalg.norm(st.nominal_pos - v_pos) <= radius]
    return sorted(hits, key=_id_key)


def select_pair(candidates, v_nominal, R, eps: float | None = None) -> tuple:
    """Best generic anchor pair among ``candidates`` (a mapping or list of (id, nominal)).

    Maximises the smallest rotated-offset component; ties go to the
    lexicographically smallest (i, j) with i before j in id order.
    Pairs with an anchor sitting exactly on ``v_nominal`` are skipped.
    """
    items = sorted(dict(candidates).items(), key=lambda kv: _id_key(kv[0]))
    R = as_rotation(R)
    if len(items) < 2:
        raise NoGenericPair(f"need at least two candidates, got {len(items)}")
    best, best_margin = None, -1.0
    for (i, pi), (j, pj) in itertools.combinations(items, 2):
        pi, pj = np.asarray(pi, float), np.asarray(pj, float)
        if v_nominal is not None and (np.array_equal(pi, v_nominal) or np.array_equal(pj, v_nominal)):
            continue
        if not genericity_check(pi, pj, R, eps):
            continue
        margin = genericity_margin(pi, pj, R)
        if margin > best_margin:
            best, best_margin = (i, j), margin
    if best is None:
        raise NoGenericPair(f"no candidate pair among {[a for a, _ in items]} satisfies the genericity condition")
    return best


class _Node:
    """Runtime state machine of one agent during a join."""

    def __init__(self, state: AgentState, rotation: Rotation):
        self.state = state
        self.R = rotation
        self.pending: dict[AgentId, np.ndarray] = {}  # own increments L_{self,b}
        self.peer_deltas: dict[AgentId, np.ndarray] = {}
        self.expected_peers: set = set()
        self.acked = False
        self.v_id = None

    def handle(self, msg: Message):
        body = msg.body
        if isinstance(body, JoinRequest):
            self.v_id = body.v_id
            return [(msg.src, CandidateInfo(self.state.id, _tup(self.state.nominal_pos), self.state.role))]
        if isinstance(body, PairSelection):
            return self._on_selection(body)
        if isinstance(body, BlockDelta):
            return self._on_delta(msg.src, body)
        raise TypeError(f"agent {self.state.id!r} cannot handle {type(body).__name__}")

    def _on_selection(self, sel: PairSelection):
        me = self.state.id
        order = (sel.i, sel.j, sel.v)
        blocks = stamp_blocks(*sel.nominals, self.R, DesignWeight(sel.D))
        row = order.index(me)
        self.pending = {order[c]: blocks[row, c] for c in range(3) if c != row}
        self.expected_peers = set(self.pending)
        out = [(b, BlockDelta((me, b), _tup(blk))) for b, blk in self.pending.items()]
        return out + self._maybe_ack()

    def _on_delta(self, src, body: BlockDelta):
        d = self.state.d
        self.peer_deltas[src] = np.array(body.increment).reshape(d, d)
        return self._maybe_ack()

    def _verify(self):
        for b, blk in self.pending.items():
            theirs = self.peer_deltas[b]
            if np.max(np.abs(theirs.T - blk)) > BLOCK_TOL * max(1.0, np.max(np.abs(blk))):
                raise InconsistentBlocks(f"agents {self.state.id!r} and {b!r} computed different increments")

    def _maybe_ack(self):
        if self.acked or not self.expected_peers or not self.expected_peers <= set(self.peer_deltas):
            return []
        self._verify()
        self.acked = True
        if self.state.id == self.v_id:
            return []
        return [(self.v_id, JoinAck())]

    def committed(self) -> AgentState:
        blocks = dict(self.state.local_blocks)
        for b, inc in self.pending.items():
            blocks[b] = blocks[b] + inc if b in blocks else inc
        return replace(self.state, neighbors=frozenset(blocks), local_blocks=blocks)


class _Newcomer(_Node):
    def __init__(self, state: AgentState, rotation: Rotation, D: DesignWeight, expected: list, anchors=None, eps=None):
        super().__init__(state, rotation)
        self.v_id = state.id
        self.D = D
        self.expected = list(expected)
        self.anchors = tuple(anchors) if anchors else None
        self.eps = eps
        self.infos: dict[AgentId, CandidateInfo] = {}
        self.pair = None
        self.acks: set = set()

    def start(self):
        return [(c, JoinRequest(self.state.id, _tup(self.state.nominal_pos))) for c in self.expected]

    def handle(self, msg: Message):
        body = msg.body
        if isinstance(body, CandidateInfo):
            self.infos[body.id] = body
            if len(self.infos) == len(self.expected):
                return self._select()
            return []
        if isinstance(body, JoinAck):
            self.acks.add(msg.src)
            return []
        return super().handle(msg)

    def _select(self):
        pool = {a: info.nominal for a, info in self.infos.items()}
        if self.anchors is not None:
            pool = {a: pool[a] for a in self.anchors}
        i, j = select_pair(pool, self.state.nominal_pos, self.R, self.eps)
        self.pair = (i, j)
        sel = PairSelection(i, j, self.state.id, _tup(self.D.entries), (pool[i], pool[j], _tup(self.state.nominal_pos)))
        out = [(i, sel), (j, sel)]
        return out + self._on_selection(sel)

    @property
    def done(self) -> bool:
        return self.pair is not None and self.acked and self.acks == set(self.pair)


@dataclass(frozen=True)
class JoinOutcome:
    world: dict
    trace: list  # delivered Messages in order
    pair: tuple
    candidates: list
    time: float = 0.0

    def records(self) -> list[dict]:
        return [m.record(self.time) for m in self.trace]


def execute_join(
    world: Mapping[AgentId, AgentState],
    newcomer: AgentState,
    rotation,
    radius: float,
    D: DesignWeight | None = None,
    anchors: Iterable | None = None,
    time: float = 0.0,
    eps: float | None = None,
    bus: Bus | None = None,
) -> JoinOutcome:
    """Run the joining exchange for ``newcomer`` and return the updated world.

    The input world is never modified, so a failed join leaves every agent
    as it was. ``anchors`` optionally restricts the pair choice to the given
    agents, which must be in sensing range.
    """
    R = as_rotation(rotation)
    D = DesignWeight.identity(R.d) if D is None else D
    if newcomer.id in world:
        raise ValueError(f"agent {newcomer.id!r} is already part of the formation")
    newcomer = replace(newcomer, neighbors=frozenset(), local_blocks={})
    candidates = discover_candidates(newcomer.nominal_pos, world, radius)
    if not candidates:
        raise NoCandidates(f"agent {newcomer.id!r}: no agents within sensing radius {radius}")
    if anchors is not None:
        anchors = tuple(anchors)
        missing = [a for a in anchors if a not in candidates]
        if missing:
            raise NoCandidates(f"forced anchors {missing} are not within sensing radius {radius}")
        if len(anchors) < 2:
            raise NoGenericPair("at least two forced anchors are required")

    v = _Newcomer(newcomer, R, D, candidates, anchors, eps)
    nodes: dict[AgentId, _Node] = {c: _Node(world[c], R) for c in candidates}
    nodes[newcomer.id] = v
    bus = Bus() if bus is None else bus
    for dst, body in v.start():
        bus.send(newcomer.id, dst, body)
    trace = bus.drain({a: node.handle for a, node in nodes.items()})
    if not v.done:
        raise InconsistentBlocks(f"join of {newcomer.id!r} did not complete")

    new_world = dict(world)
    for a in (*v.pair, newcomer.id):
        new_world[a] = nodes[a].committed()
    return JoinOutcome(new_world, trace, v.pair, candidates, time)


# world <-> global Laplacian -------------------------------------------------


def world_from_laplacian(L: BlockLaplacian, F: NominalFormation) -> dict:
    if L.agent_ids != F.agent_ids:
        raise ValueError("Laplacian and formation disagree on agents")
    world = {}
    for a in F.agent_ids:
        nbrs = L.neighbors(a)
        world[a] = AgentState(
            a,
            F.position(a),
            LEADER if a in F.leaders else FOLLOWER,
            frozenset(nbrs),
            {b: L.block(a, b) for b in nbrs},
        )
    return world


def assemble_global(world: Mapping[AgentId, AgentState], d: int | None = None) -> BlockLaplacian:
    """Collect all local blocks into one Laplacian, checking endpoint consistency."""
    ids = tuple(world)
    if d is None:
        if not ids:
            raise ValueError("dimension is required for an empty world")
        d = world[ids[0]].d
    edges = {}
    for a, st in world.items():
        for b, blk in st.local_blocks.items():
            if b not in world:
                raise InconsistentBlocks(f"agent {a!r} lists unknown neighbour {b!r}")
            other = world[b].local_blocks.get(a)
            if other is None:
                raise InconsistentBlocks(f"edge ({a!r}, {b!r}) is only known to {a!r}")
            if np.max(np.abs(other.T - blk)) > BLOCK_TOL * max(1.0, np.max(np.abs(blk))):
                raise InconsistentBlocks(f"agents {a!r} and {b!r} disagree on their shared block")
            if (b, a) not in edges:
                edges[(a, b)] = blk
    return BlockLaplacian(d, ids, edges)


def formation_from_world(world: Mapping[AgentId, AgentState], rotation) -> NominalFormation:
    ids = tuple(world)
    return NominalFormation(
        ids,
        np.array([world[a].nominal_pos for a in ids]),
        as_rotation(rotation),
        frozenset(a for a in ids if world[a].role == LEADER),
    )

