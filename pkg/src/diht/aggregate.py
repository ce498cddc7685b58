"""Broadcast-convergecast group sums.

A sum is identified by a :class:`SumKey`. The initiator pushes ``SUM_REQ``
down its broadcast tree; each agent waits for its children's ``SUM_UP``
partials, adds them in ascending child id order followed by its own
contribution, and passes the partial to its parent. The initiator then pushes
the total back down as ``SUM_RESULT``. Each sum costs exactly ``3(P-1)``
messages and every agent ends up holding the bit-identical total.

Wire format (simulated): ``Message(src, dst, kind, key, value)`` with ``kind``
one of ``SUM_REQ``, ``SUM_UP``, ``SUM_RESULT``; ``key`` carries the
initiator, iteration, round and query; ``value`` is the single numeric
payload (unused by ``SUM_REQ``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ProtocolError
from .netsim import Network

SUM_REQ = "SUM_REQ"
SUM_UP = "SUM_UP"
SUM_RESULT = "SUM_RESULT"


class SumKey(NamedTuple):
    initiator: int
    iteration: int
    round: int
    query: object


class GroupSumNode:
    """One agent's side of every group sum it takes part in.

    ``contribute(query)`` returns this agent's value for a query and is
    evaluated when the agent's partial is assembled, not when the request
    arrives. ``on_result(key, total)`` fires once per completed sum.
    """

    __slots__ = ("id", "trees", "net", "contribute", "on_result", "_partials")

    def __init__(self, agent_id, trees, network, contribute, on_result):
        self.id = agent_id
        self.trees = trees
        self.net = network
        self.contribute = contribute
        self.on_result = on_result
        self._partials = {}

    def initiate(self, key):
        if key.initiator != self.id:
            raise ProtocolError(f"agent {self.id} cannot initiate a sum owned by {key.initiator}")
        self._request(key)

    def handle(self, msg):
        kind = msg.kind
        if kind == SUM_UP:
            key = msg.key
            parts = self._partials[key]
            parts[msg.src] = msg.value
            if len(parts) == len(self.trees[key.initiator].children[self.id]):
                del self._partials[key]
                self._report(key, parts)
        elif kind == SUM_REQ:
            self._request(msg.key)
        elif kind == SUM_RESULT:
            self._result(msg.key, msg.value)
        else:
            raise ProtocolError(f"agent {self.id} got unexpected message kind {kind}")

    def _request(self, key):
        kids = self.trees[key.initiator].children[self.id]
        if kids:
            if key in self._partials:
                raise ProtocolError(f"agent {self.id} saw sum {key} twice")
            self._partials[key] = {}
            send = self.net.send
            for c in kids:
                send(self.id, c, SUM_REQ, key)
        else:
            self._report(key, None)

    def _report(self, key, parts):
        acc = 0.0
        if parts:
            for c in sorted(parts):
                acc += parts[c]
        try:
            acc += self.contribute(key.query)
        except LookupError as exc:
            raise ProtocolError(
                f"agent {self.id} cannot resolve query {key.query!r}: {exc}") from exc
        if key.initiator == self.id:
            self._result(key, acc)
        else:
            self.net.send(self.id, self.trees[key.initiator].parent[self.id], SUM_UP, key, acc)

    def _result(self, key, total):
        send = self.net.send
        for c in self.trees[key.initiator].children[self.id]:
            send(self.id, c, SUM_RESULT, key, total)
        self.on_result(key, total)

    @property
    def busy(self):
        return bool(self._partials)


@dataclass
class GroupSumOutcome:
    """What every agent learned, keyed by ``(initiator, query)``."""

    results: dict
    messages: int
    ticks: int
    sent_by: list = field(default_factory=list)

    @property
    def sum(self):
        if len(self.results) != 1:
            raise ValueError("outcome holds more than one sum")
        per_agent = next(iter(self.results.values()))
        return per_agent[min(per_agent)]


def concurrent_group_sums(topology, trees, requests, contribution, delivery=None,
                          round=0, trace=False):
    """Run several group sums at once on a fresh network.

    Args:
        requests: ``(initiator, query)`` pairs, at most one per initiator.
        contribution: ``contribution(agent, query) -> float``.

    Returns:
        A :class:`GroupSumOutcome`; ``results[(initiator, query)]`` maps every
        agent to the total it received.
    """
    initiators = [i for i, _ in requests]
    if len(set(initiators)) != len(initiators):
        raise ProtocolError("an agent may initiate at most one group sum per round")
    net = Network(topology, delivery, trace=trace)
    results = {(i, q): {} for i, q in requests}

    def make_node(p):
        def on_result(key, total):
            results[(key.initiator, key.query)][p] = total
        return GroupSumNode(p, trees, net, lambda q: contribution(p, q), on_result)

    nodes = {p: make_node(p) for p in range(1, topology.P + 1)}
    for i, q in requests:
        nodes[i].initiate(SumKey(i, 0, round, q))
    net.run(lambda m: nodes[m.dst].handle(m))
    for (i, q), got in results.items():
        if len(got) != topology.P:
            raise ProtocolError(f"sum ({i}, {q!r}) reached only {len(got)} of {topology.P} agents")
    return GroupSumOutcome(results, net.messages_sent, net.tick, list(net.sent_by))


def group_sum(topology, trees, contribution, initiator=1, query=None, delivery=None):
    """A single broadcast-convergecast sum initiated by ``initiator``."""
    return concurrent_group_sums(topology, trees, [(initiator, query)], contribution, delivery)
