"""Top-K selection over per-agent lists.

Every agent ``p`` holds a vector ``z_p``; the score of object ``o`` is
``|sum_p z_p[o]|``. Three ways to find the ``K`` best objects live here:

* :func:`brute_force_topk` sums every object (the oracle),
* :func:`ta_topk` is the leader-based threshold algorithm for non-negative
  values, with a step-by-step trace,
* :func:`data_topk` runs the decentralized two-sided variant (DATA) on the
  network simulator: every agent reads its sorted list from the top or the
  bottom, starts one group sum per round, and agent 1 also sums the current
  threshold for the side being read.

Object and agent ids are 1-based throughout.
"""
from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .aggregate import SUM_REQ, GroupSumNode, SumKey
from .errors import InvalidArgument, ProtocolError
from .netsim import Network, build_broadcast_trees

TOP = "top"
BOTTOM = "bottom"
OBJ = "obj"
THR = "thr"

MAGNITUDE_RULE = "magnitude"
LITERAL_RULE = "literal"

# Three agents' vectors from the classic TA walk-through (K=2).
TA_EXAMPLE_VECTORS = (
    (21, 14, 11, 13, 2, 4, 10, 6, 12, 1),
    (28, 3, 26, 45, 20, 10, 1, 13, 18, 22),
    (2, 5, 30, 14, 6, 15, 27, 1, 29, 7),
)


class SortedList:
    """An agent's ``(object id, value)`` pairs, value-descending.

    Equal values are ordered by ascending object id. Two cursors consume the
    list from either end; ``last_top`` / ``last_bottom`` hold the most recent
    value taken from each side (``None`` before the first access).
    """

    def __init__(self, ids, values):
        self.ids = [int(i) for i in ids]
        self.values = [float(v) for v in values]
        if len(self.ids) != len(self.values):
            raise InvalidArgument("ids and values differ in length")
        self._by_id = dict(zip(self.ids, self.values))
        self.top = 0
        self.bottom = len(self.ids) - 1
        self.last_top = None
        self.last_bottom = None

    def __len__(self):
        return len(self.ids)

    @property
    def entries(self):
        return list(zip(self.ids, self.values))

    @property
    def universe(self):
        return frozenset(self.ids)

    def value_of(self, oid):
        return self._by_id[oid]

    def fresh(self):
        return SortedList(self.ids, self.values)

    def next_from_top(self, skip=()):
        """Consume the first entry from the top whose id is not in ``skip``."""
        i = self.top
        ids = self.ids
        while i <= self.bottom and ids[i] in skip:
            i += 1
        if i > self.bottom:
            return None
        self.top = i + 1
        self.last_top = self.values[i]
        return ids[i], self.values[i]

    def next_from_bottom(self, skip=()):
        i = self.bottom
        ids = self.ids
        while i >= self.top and ids[i] in skip:
            i -= 1
        if i < self.top:
            return None
        self.bottom = i - 1
        self.last_bottom = self.values[i]
        return ids[i], self.values[i]

    def top_bound(self):
        # Upper bound on every value not yet consumed from the top.
        return self.last_top if self.last_top is not None else self.values[0]

    def bottom_bound(self):
        return self.last_bottom if self.last_bottom is not None else self.values[-1]


def build_sorted_list(z):
    """Sorted list of a vector; object ``i + 1`` carries ``z[i]``."""
    z = np.asarray(z, dtype=float)
    order = np.lexsort((np.arange(z.size), -z))
    return SortedList(order + 1, z[order])


class TopKList:
    """The ``K`` best ``(object, sum)`` pairs seen so far.

    Ordered by magnitude, descending; a magnitude tie keeps the lower id.
    """

    def __init__(self, K):
        self.K = K
        self._keys = []
        self._items = []

    def offer(self, oid, value):
        key = (-abs(value), oid)
        if len(self._keys) == self.K:
            if key >= self._keys[-1]:
                return
            self._keys.pop()
            self._items.pop()
        i = bisect.bisect(self._keys, key)
        self._keys.insert(i, key)
        self._items.insert(i, (oid, value))

    @property
    def full(self):
        return len(self._keys) == self.K

    @property
    def min_abs(self):
        return -self._keys[-1][0]

    def items(self):
        return tuple(self._items)

    def __len__(self):
        return len(self._items)


def _check_universes(lists):
    if not lists:
        raise InvalidArgument("need at least one list")
    u = lists[0].universe
    for p, lst in enumerate(lists[1:], start=2):
        if lst.universe != u:
            raise InvalidArgument(f"agent {p}'s list covers different objects than agent 1's")
    return sorted(u)


def brute_force_topk(lists, K):
    """Sum every object across all lists and keep the ``K`` largest ``|sum|``."""
    universe = _check_universes(lists)
    best = TopKList(K)
    for o in universe:
        s = 0.0
        for lst in lists:
            s += lst.value_of(o)
        best.offer(o, s)
    return best.items()


def finalize_estimate(topk, N):
    """Dense length-``N`` vector holding each ``(id, sum)`` at index ``id``."""
    x = np.zeros(N)
    seen = set()
    for oid, value in topk:
        if not 1 <= oid <= N:
            raise InvalidArgument(f"object id {oid} outside 1..{N}")
        if oid in seen:
            raise InvalidArgument(f"object id {oid} appears twice")
        seen.add(oid)
        x[oid - 1] = value
    return x


# -- threshold algorithm ----------------------------------------------------

@dataclass
class TAStep:
    step: int
    agent: int
    object: int
    sum: float
    taus: list
    threshold: float | None
    topk: tuple


@dataclass
class TAResult:
    topk: tuple
    sums_computed: int
    steps: list


def ta_topk(lists, K):
    """Leader-based threshold algorithm for non-negative lists.

    Agents are polled round-robin in id order; a poll walks the agent's list
    past already-seen objects to the next new one, whose full sum the leader
    then computes. ``tau_p`` is the value of the last object polled from
    agent ``p`` and the threshold is their sum once every agent has been
    polled. The run stops when the ``K`` best sums all reach the threshold,
    or every object has been summed.
    """
    universe = _check_universes(lists)
    for p, lst in enumerate(lists, start=1):
        if any(v < 0 for v in lst.values):
            raise InvalidArgument(
                f"agent {p}'s list has negative values; use data_topk for signed lists")
    P, N = len(lists), len(universe)
    cursors = [0] * P
    taus = [None] * P
    seen = {}
    best = TopKList(K)
    steps = []
    p = 0
    while len(seen) < N:
        lst = lists[p]
        i = cursors[p]
        while i < N and lst.ids[i] in seen:
            i += 1
        if i < N:
            oid = lst.ids[i]
            cursors[p] = i + 1
            taus[p] = lst.values[i]
            total = 0.0
            for other in lists:
                total += other.value_of(oid)
            seen[oid] = total
            best.offer(oid, total)
            threshold = sum(taus) if None not in taus else None
            steps.append(TAStep(len(steps) + 1, p + 1, oid, total, list(taus),
                                threshold, best.items()))
            if threshold is not None and best.full and best.min_abs >= threshold:
                break
        else:
            cursors[p] = N
        p = (p + 1) % P
    return TAResult(best.items(), len(seen), steps)


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def format_topk(topk):
    return "{" + ", ".join(f"({o},{_fmt(s)})" for o, s in topk) + "}"


def ta_trace_csv(result, P):
    """CSV rendering of a TA trace.

    Threshold columns show the new ``tau_p`` for the polled agent, ``-`` for
    an unchanged known value and ``?`` for an agent not yet polled.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "agent", "object", "sum"] + [f"tau_{p}" for p in range(1, P + 1)]
               + ["tau", "topk"])
    for s in result.steps:
        cells = []
        for p, tau in enumerate(s.taus, start=1):
            if p == s.agent:
                cells.append(_fmt(tau))
            else:
                cells.append("?" if tau is None else "-")
        thr = "?" if s.threshold is None else _fmt(s.threshold)
        w.writerow([s.step, s.agent, s.object, _fmt(s.sum)] + cells + [thr, format_topk(s.topk)])
    return buf.getvalue()


# -- DATA -------------------------------------------------------------------

def choose_side(tau_top, tau_bot, rule=MAGNITUDE_RULE):
    """Which end of the list to read next.

    The magnitude rule reads the side whose threshold has the larger
    magnitude, treating an infinite threshold as "not yet probed" (top goes
    first, then bottom). The literal rule compares signed values.
    """
    if rule == LITERAL_RULE:
        return TOP if tau_top > tau_bot else BOTTOM
    if rule != MAGNITUDE_RULE:
        raise InvalidArgument(f"unknown side rule {rule!r}")
    if math.isinf(tau_top) and math.isinf(tau_bot):
        return TOP
    if math.isinf(tau_bot):
        return BOTTOM
    if math.isinf(tau_top):
        return TOP
    return TOP if abs(tau_top) >= abs(tau_bot) else BOTTOM


class DataState:
    """One agent's bookkeeping for a single DATA execution."""

    def __init__(self, slist, K, rule=MAGNITUDE_RULE):
        self.slist = slist
        self.K = K
        self.N = len(slist)
        self.rule = rule
        self.tau_top = math.inf
        self.tau_bot = math.inf
        self.summed = {}
        self.topk = TopKList(K)
        self.rounds = 0
        self.history = []
        self.exhausted = False

    def select(self):
        side = choose_side(self.tau_top, self.tau_bot, self.rule)
        pick = (self.slist.next_from_top(self.summed) if side == TOP
                else self.slist.next_from_bottom(self.summed))
        if pick is None:
            raise ProtocolError("sorted list exhausted while unsummed objects remain")
        return side, pick[0]

    def threshold_contribution(self, side):
        if side == TOP:
            return self.slist.top_bound()
        if side == BOTTOM:
            return self.slist.bottom_bound()
        raise LookupError(f"unknown threshold side {side!r}")

    def absorb(self, object_sums, side, threshold):
        """Fold in one round's sums; return True once the top-K is final.

        ``object_sums`` holds ``(initiator, object, sum)`` triples. When two
        initiators summed the same object, the lowest initiator's value is
        kept so that every agent stores the same number.
        """
        for _, oid, total in sorted(object_sums):
            if oid not in self.summed:
                self.summed[oid] = total
                self.topk.offer(oid, total)
        if side == TOP:
            self.tau_top = threshold
        else:
            self.tau_bot = threshold
        self.rounds += 1
        self.history.append((side, self.tau_top, self.tau_bot))
        if self.rounds > self.N:
            raise AssertionError("DATA ran more rounds than there are objects")
        if len(self.summed) == self.N:
            self.exhausted = True
            return True
        return self.topk.full and self.topk.min_abs >= max(abs(self.tau_top), abs(self.tau_bot))


class DataAgent:
    """Network participant running DATA, one execution per iteration.

    Requests for a later ``(iteration, round)`` than the agent's own are held
    back until it gets there, so every contribution is read from the state
    of the round it belongs to, whatever the delivery order.
    """

    def __init__(self, agent_id, P, K, trees, network, rule=MAGNITUDE_RULE,
                 on_done=None, on_initiate=None):
        self.id = agent_id
        self.P = P
        self.K = K
        self.rule = rule
        self.on_done = on_done
        self.on_initiate = on_initiate
        self.node = GroupSumNode(agent_id, trees, network, self._contribute, self._on_result)
        self.state = None
        self.active = False
        self.iteration = -1
        self.round = 0
        self.result = None
        self._held = []
        self._object_sums = []
        self._threshold = None
        self._advancing = False

    def begin(self, iteration, slist):
        self.iteration = iteration
        self.round = 0
        self.state = DataState(slist, self.K, self.rule)
        self.result = None
        self.active = True
        self._start_round()

    def receive(self, msg):
        if msg.kind == SUM_REQ and self._ahead(msg.key):
            self._held.append(msg)
        else:
            self.node.handle(msg)

    def _ahead(self, key):
        return not self.active or (key.iteration, key.round) > (self.iteration, self.round)

    def _start_round(self):
        side, oid = self.state.select()
        it, r = self.iteration, self.round
        self._initiate(SumKey(self.id, it, r, (OBJ, oid)))
        if self.id == 1:
            self._initiate(SumKey(self.id, it, r, (THR, side)))
        if self._held:
            ready = [m for m in self._held if not self._ahead(m.key)]
            if ready:
                self._held = [m for m in self._held if self._ahead(m.key)]
                for m in ready:
                    self.node.handle(m)

    def _initiate(self, key):
        if self.on_initiate is not None:
            self.on_initiate(key)
        self.node.initiate(key)

    def _contribute(self, query):
        kind, arg = query
        if kind == OBJ:
            return self.state.slist.value_of(arg)
        if kind == THR:
            return self.state.threshold_contribution(arg)
        raise LookupError(f"unknown query kind {kind!r}")

    def _on_result(self, key, total):
        if (key.iteration, key.round) != (self.iteration, self.round):
            raise ProtocolError(f"agent {self.id} got a stale result for {key}")
        kind, arg = key.query
        if kind == OBJ:
            self._object_sums.append((key.initiator, arg, total))
        else:
            self._threshold = (arg, total)
        self._advance()

    def _advance(self):
        # Loop instead of recursing: with P = 1 every sum completes inline.
        if self._advancing:
            return
        self._advancing = True
        try:
            while (self.active and self._threshold is not None
                   and len(self._object_sums) == self.P):
                done = self.state.absorb(self._object_sums, *self._threshold)
                self._object_sums = []
                self._threshold = None
                if done:
                    self.active = False
                    self.result = self.state.topk.items()
                    if self.on_done is not None:
                        self.on_done(self)
                else:
                    self.round += 1
                    self._start_round()
        finally:
            self._advancing = False

    @property
    def held(self):
        return list(self._held)


@dataclass
class DataOutcome:
    results: dict
    sums: int
    rounds: int
    messages: int
    ticks: int
    states: dict = field(default_factory=dict)

    @property
    def topk(self):
        return self.results[1]


def data_topk(topology, lists, K, trees=None, delivery=None, rule=MAGNITUDE_RULE):
    """Run one DATA execution over ``lists`` (agent ``p`` holds ``lists[p-1]``).

    Returns a :class:`DataOutcome` with every agent's top-K list, the number
    of group sums started (object and threshold sums), rounds, messages sent
    and clock ticks. Broadcast-tree construction is not included in the
    message count; pass ``trees`` to reuse a preprocessing result.
    """
    P = topology.P
    if len(lists) != P:
        raise InvalidArgument(f"expected {P} lists, got {len(lists)}")
    try:
        _check_universes(lists)
    except InvalidArgument as exc:
        raise ProtocolError(str(exc)) from exc
    if not 1 <= K <= len(lists[0]):
        raise InvalidArgument(f"K must lie in [1, {len(lists[0])}]")
    if trees is None:
        trees = build_broadcast_trees(topology).trees
    net = Network(topology, delivery)
    counter = [0]

    def count(_key):
        counter[0] += 1

    agents = {p: DataAgent(p, P, K, trees, net, rule, on_initiate=count)
              for p in range(1, P + 1)}
    for p, agent in agents.items():
        agent.begin(0, lists[p - 1].fresh())
    net.run(lambda m: agents[m.dst].receive(m))
    for p, agent in agents.items():
        if agent.result is None or agent.held:
            raise ProtocolError(f"agent {p} did not finish cleanly")
    return DataOutcome({p: a.result for p, a in agents.items()}, counter[0],
                       agents[1].state.rounds, net.messages_sent, net.tick,
                       {p: a.state for p, a in agents.items()})
