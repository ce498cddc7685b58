"""Deterministic message-passing simulator for a static agent network.

Agents are numbered ``1..P``. Two delivery models are provided:

* :class:`SyncDelivery` -- a global clock; each directed link carries at most
  one message per tick, FIFO. A message sent during tick ``t`` arrives at
  tick ``t + 1`` at the earliest.
* :class:`AsyncDelivery` -- every message gets a seeded random integer delay
  in ``[1, max_delay]``; messages may overtake each other.

The simulator only moves messages; protocol logic lives with the caller,
which drains :meth:`Network.step` and dispatches each delivered message.
"""
from __future__ import annotations

import heapq
import itertools
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import GenerationError, InvalidArgument, ProtocolError

MAX_GENERATION_ATTEMPTS = 100

TREE_REQ = "TREE_REQ"
TREE_ACK = "TREE_ACK"


class Topology:
    """Connected, undirected simple graph on agents ``1..P``."""

    def __init__(self, P, edges, positions=None):
        P = int(P)
        if P < 1:
            raise InvalidArgument("a topology needs at least one agent")
        norm = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise InvalidArgument(f"self-loop on agent {u}")
            if not (1 <= u <= P and 1 <= v <= P):
                raise InvalidArgument(f"edge ({u}, {v}) references an agent outside 1..{P}")
            e = (min(u, v), max(u, v))
            if e in norm:
                raise InvalidArgument(f"duplicate edge {e}")
            norm.add(e)
        self.P = P
        self.edges = tuple(sorted(norm))
        nbrs = {p: [] for p in range(1, P + 1)}
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        self.neighbors = {p: tuple(sorted(n)) for p, n in nbrs.items()}
        self._nbr_sets = {p: frozenset(n) for p, n in self.neighbors.items()}
        self.positions = positions
        if not _connected(P, self.neighbors):
            raise InvalidArgument("topology is not connected")

    @property
    def E(self):
        return len(self.edges)

    def degree(self, p):
        return len(self.neighbors[p])

    @property
    def degrees(self):
        return {p: len(n) for p, n in self.neighbors.items()}

    def are_neighbors(self, u, v):
        return v in self._nbr_sets[u]

    def __eq__(self, other):
        return isinstance(other, Topology) and (self.P, self.edges) == (other.P, other.edges)

    def __hash__(self):
        return hash((self.P, self.edges))

    def __repr__(self):
        return f"Topology(P={self.P}, E={self.E})"

    @classmethod
    def path(cls, P):
        return cls(P, [(p, p + 1) for p in range(1, P)])

    @classmethod
    def complete(cls, P):
        return cls(P, itertools.combinations(range(1, P + 1), 2))

    def write_edge_list(self, path):
        """Header line ``P E``, then one ``u v`` pair per line."""
        lines = [f"{self.P} {self.E}"] + [f"{u} {v}" for u, v in self.edges]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_edge_list(cls, path):
        rows = [ln.split() for ln in Path(path).read_text().splitlines()
                if ln.strip() and not ln.lstrip().startswith("#")]
        if not rows or len(rows[0]) != 2:
            raise InvalidArgument(f"{path}: missing 'P E' header")
        P, E = int(rows[0][0]), int(rows[0][1])
        edges = [(int(u), int(v)) for u, v in rows[1:]]
        if len(edges) != E:
            raise InvalidArgument(f"{path}: header says {E} edges, found {len(edges)}")
        return cls(P, edges)


def _connected(P, neighbors):
    seen = {1}
    stack = [1]
    while stack:
        u = stack.pop()
        for v in neighbors[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == P


def _try_build(P, edges, positions=None):
    nbrs = {p: [] for p in range(1, P + 1)}
    for u, v in edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    if not _connected(P, nbrs):
        return None
    return Topology(P, edges, positions)


def make_er_topology(P, prob, seed):
    """Erdos-Renyi graph, resampled until connected.

    Attempt ``i`` draws one uniform number per vertex pair from a generator
    seeded with ``(seed, i)``; a pair becomes an edge when its draw is below
    ``prob``. Graphs with the same seed are therefore nested in ``prob``.
    """
    if not 0 < prob <= 1:
        raise InvalidArgument(f"edge probability must lie in (0, 1], got {prob}")
    if P < 2:
        raise InvalidArgument("an ER topology needs P >= 2")
    pairs = list(itertools.combinations(range(1, P + 1), 2))
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        draws = np.random.default_rng([seed, attempt]).random(len(pairs))
        topo = _try_build(P, [e for e, u in zip(pairs, draws) if u < prob])
        if topo is not None:
            return topo
    raise GenerationError(
        f"no connected ER({P}, {prob}) graph in {MAX_GENERATION_ATTEMPTS} attempts")


def make_geometric_topology(P, d, seed):
    """Random geometric graph in the unit square, resampled until connected."""
    if not d > 0:
        raise InvalidArgument(f"connection radius must be positive, got {d}")
    if P < 1:
        raise InvalidArgument("need at least one agent")
    pairs = list(itertools.combinations(range(P), 2))
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        pts = np.random.default_rng([seed, attempt]).random((P, 2))
        edges = [(i + 1, j + 1) for i, j in pairs if np.hypot(*(pts[i] - pts[j])) <= d]
        topo = _try_build(P, edges, positions=pts)
        if topo is not None:
            return topo
    raise GenerationError(
        f"no connected geometric({P}, d={d}) graph in {MAX_GENERATION_ATTEMPTS} attempts")


class Message(NamedTuple):
    src: int
    dst: int
    kind: str
    key: object = None
    value: float = 0.0


@dataclass(frozen=True)
class SyncDelivery:
    mode = "sync"


@dataclass(frozen=True)
class AsyncDelivery:
    """Seeded random delays: start at 1 tick, extend by one tick with
    probability ``p_extend`` each time, capped at ``max_delay``."""

    seed: int = 0
    max_delay: int = 8
    p_extend: float = 0.5
    mode = "async"


class Network:
    """Message transport over a :class:`Topology`.

    Every :meth:`send` counts as exactly one message, whatever the payload.
    """

    def __init__(self, topology, delivery=None, trace=False):
        self.topology = topology
        self.delivery = delivery if delivery is not None else SyncDelivery()
        self.tick = 0
        self.messages_sent = 0
        self.messages_delivered = 0
        self.sent_by = [0] * (topology.P + 1)
        self.received_by = [0] * (topology.P + 1)
        self.trace = [] if trace else None
        self._async = self.delivery.mode == "async"
        if self._async:
            self._rng = random.Random(self.delivery.seed)
            self._heap = []
            self._seq = 0
        else:
            self._links = {}
        self._nbrs = topology._nbr_sets

    def send(self, src, dst, kind, key=None, value=0.0):
        if dst not in self._nbrs[src]:
            raise ProtocolError(f"agent {src} tried to send {kind} to non-neighbor {dst}")
        msg = Message(src, dst, kind, key, value)
        self.messages_sent += 1
        self.sent_by[src] += 1
        if self._async:
            delay = 1
            rng = self._rng
            while delay < self.delivery.max_delay and rng.random() < self.delivery.p_extend:
                delay += 1
            self._seq += 1
            heapq.heappush(self._heap, (self.tick + delay, self._seq, msg))
        else:
            q = self._links.get((src, dst))
            if q is None:
                self._links[(src, dst)] = q = deque()
            q.append(msg)
        return msg

    @property
    def pending(self):
        if self._async:
            return len(self._heap)
        return sum(len(q) for q in self._links.values())

    def idle(self):
        return not (self._heap if self._async else self._links)

    def step(self):
        """Advance to the next delivery instant and return what arrives."""
        if self._async:
            out = self._step_async()
        else:
            out = self._step_sync()
        self.messages_delivered += len(out)
        for m in out:
            self.received_by[m.dst] += 1
        if self.trace is not None:
            self.trace.extend((self.tick, m.src, m.dst, m.kind) for m in out)
        return out

    def _step_sync(self):
        if not self._links:
            return []
        self.tick += 1
        out = []
        drained = []
        for link, q in self._links.items():
            out.append(q.popleft())
            if not q:
                drained.append(link)
        for link in drained:
            del self._links[link]
        return out

    def _step_async(self):
        heap = self._heap
        if not heap:
            return []
        t = heap[0][0]
        out = []
        while heap and heap[0][0] == t:
            out.append(heapq.heappop(heap)[2])
        self._rng.shuffle(out)
        self.tick = t
        return out

    def run(self, dispatch, max_steps=None):
        """Deliver until quiescent, handing each message to ``dispatch``."""
        steps = 0
        while not self.idle():
            for msg in self.step():
                dispatch(msg)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break

    def write_trace(self, path):
        if self.trace is None:
            raise InvalidArgument("network was created without trace=True")
        with open(path, "w") as fh:
            for tick, src, dst, kind in self.trace:
                fh.write(f"{tick} {src} {dst} {kind}\n")


@dataclass(frozen=True)
class BroadcastTree:
    root: int
    parent: dict
    children: dict

    @property
    def edges(self):
        return sorted((min(c, p), max(c, p)) for c, p in self.parent.items())

    def depth_of(self, p):
        d = 0
        while p != self.root:
            p = self.parent[p]
            d += 1
        return d

    @property
    def depth(self):
        return max(self.depth_of(p) for p in self.children)

    def spans(self, topology):
        if set(self.children) != set(range(1, topology.P + 1)):
            return False
        if len(self.parent) != topology.P - 1:
            return False
        if not all(topology.are_neighbors(c, p) for c, p in self.parent.items()):
            return False
        return all(self.depth_of(p) < topology.P for p in self.children)


@dataclass
class Preprocessing:
    """Result of building one broadcast tree per agent."""

    trees: dict
    messages: int
    ticks: int
    per_tree_messages: dict = field(default_factory=dict)


def build_broadcast_tree(topology, root):
    """Flood-and-ack BFS tree rooted at ``root`` on a synchronous network.

    The root floods a request; an agent adopts the lowest-id sender among
    the requests reaching it in its first receiving tick, acknowledges that
    parent, and forwards the request to every neighbor it has not heard
    from. Returns ``(tree, messages, ticks)``; at most ``2E`` messages are
    sent and fewer whenever some non-tree edge joins two BFS levels.
    """
    net = Network(topology)
    nbrs = topology.neighbors
    parent = {root: None}
    heard = {p: set() for p in nbrs}
    children = {p: [] for p in nbrs}

    def forward(p):
        for q in nbrs[p]:
            if q != parent[p] and q not in heard[p]:
                net.send(p, q, TREE_REQ)

    forward(root)
    while not net.idle():
        adopted = []
        for msg in sorted(net.step(), key=lambda m: (m.dst, m.src)):
            if msg.kind == TREE_REQ:
                heard[msg.dst].add(msg.src)
                if msg.dst not in parent:
                    parent[msg.dst] = msg.src
                    adopted.append(msg.dst)
            else:
                children[msg.dst].append(msg.src)
        for p in adopted:
            net.send(p, parent[p], TREE_ACK)
            forward(p)
    del parent[root]
    tree = BroadcastTree(root, parent, {p: tuple(sorted(c)) for p, c in children.items()})
    return tree, net.messages_sent, net.tick


def build_broadcast_trees(topology):
    """One flood-built BFS tree per agent; costs are summed over all roots.

    Trees are always built on the synchronous model, one root after the
    other, so the resulting trees (and hence every later summation order)
    do not depend on the delivery model used for the main run.
    """
    trees, per_tree = {}, {}
    ticks = 0
    for root in range(1, topology.P + 1):
        tree, msgs, t = build_broadcast_tree(topology, root)
        trees[root] = tree
        per_tree[root] = msgs
        ticks += t
    return Preprocessing(trees, sum(per_tree.values()), ticks, per_tree)


def bfs_tree(topology, root):
    """Centralized BFS tree with lowest-id parent choice (test oracle)."""
    parent = {}
    level = {root: 0}
    frontier = [root]
    while frontier:
        nxt = []
        for u in sorted(frontier):
            for v in topology.neighbors[u]:
                if v not in level:
                    level[v] = level[u] + 1
                    parent[v] = u
                    nxt.append(v)
        frontier = nxt
    children = {p: [] for p in topology.neighbors}
    for c, p in parent.items():
        children[p].append(c)
    return BroadcastTree(root, parent, {p: tuple(sorted(c)) for p, c in children.items()})
