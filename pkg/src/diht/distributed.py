"""Distributed IHT on the network simulator.

Each agent keeps an identical iterate ``x``. Per iteration it forms its
intermediate vector from local data only (see :func:`local_intermediate`);
the vectors sum to the centralized IHT pre-threshold update, and the next
iterate is the top-K of that sum, found either with DATA
(:func:`diht_run`) or by summing all ``N`` entries (:func:`naive_diht_run`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregate import SUM_REQ, GroupSumNode, SumKey
from .errors import DivergenceError, InvalidArgument
from .netsim import Network, build_broadcast_trees
from .recovery import (Estimate, centralized_iht, divergence_guard, hard_threshold,
                       recovery_error)
from .topk import MAGNITUDE_RULE, OBJ, DataAgent, build_sorted_list, finalize_estimate

CONVERGED = "converged"
MAX_ITER = "max_iter"
DIVERGED = "diverged"


def local_intermediate(A_p, b_p, x_hat, alpha, first):
    """``alpha * A_p^T (b_p - A_p x)``, plus ``x`` itself at agent 1.

    Summed over all agents this is ``x + alpha A^T (b - A x)``.
    """
    A_p = np.asarray(A_p, dtype=float)
    b_p = np.asarray(b_p, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if A_p.ndim != 2 or A_p.shape != (b_p.size, x_hat.size):
        raise InvalidArgument(
            f"shapes A_p={A_p.shape}, b_p={b_p.shape}, x={x_hat.shape} do not line up")
    z = alpha * (A_p.T @ (b_p - A_p @ x_hat))
    if first:
        z = x_hat + z
    return z


@dataclass
class AgentState:
    agent_id: int
    A_p: np.ndarray
    b_p: np.ndarray
    alpha: float
    iterate: np.ndarray
    iteration: int = 0

    def intermediate(self):
        return local_intermediate(self.A_p, self.b_p, self.iterate, self.alpha,
                                  self.agent_id == 1)


@dataclass
class RunMetrics:
    """Per-iteration and total costs of one run.

    ``sums[j-1]`` is the number of group sums started in iteration ``j``
    (threshold sums included); ``errors[t]`` is the error of iterate ``t``;
    ``ticks[j-1]`` is the clock at which the last agent finished iteration
    ``j``, preprocessing included.
    """

    algorithm: str
    P: int
    N: int
    sums: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    ticks: list = field(default_factory=list)
    preprocessing_messages: int = 0
    preprocessing_ticks: int = 0
    protocol_messages: int = 0
    clock_ticks: int = 0
    status: str = MAX_ITER
    agreement: bool = True

    @property
    def iterations(self):
        return len(self.errors) - 1

    @property
    def total_messages(self):
        return self.preprocessing_messages + self.protocol_messages

    @property
    def total_sums(self):
        return sum(self.sums)

    @property
    def messages_per_sum(self):
        return 3 * (self.P - 1)

    def cumulative_messages(self, j):
        return self.preprocessing_messages + self.messages_per_sum * sum(self.sums[:j])

    def iteration_rows(self):
        """``(t, S_t, cumulative messages, cumulative ticks, error)`` for t >= 1."""
        for j in range(1, self.iterations + 1):
            s = self.sums[j - 1] if self.sums else None
            msgs = self.cumulative_messages(j) if self.sums else 0
            tick = self.ticks[j - 1] if self.ticks else 0
            yield j, s, msgs, tick, self.errors[j]


@dataclass
class RunResult:
    estimate: Estimate
    metrics: RunMetrics
    iterates: list = field(default_factory=list)
    network: Network | None = None


class _Session:
    """Bookkeeping shared by the simulated agents of one run.

    Holds the recorder only; every stopping decision is made by each agent
    from its own iterate.
    """

    def __init__(self, problem, metrics, net, keep_iterates):
        self.problem = problem
        self.metrics = metrics
        self.net = net
        self.keep_iterates = keep_iterates
        self.first_x = {}
        self.finished = {}
        self.iterates = [np.zeros(problem.N)] if keep_iterates else []

    def count(self, key):
        j = key.iteration
        sums = self.metrics.sums
        while len(sums) <= j:
            sums.append(0)
        sums[j] += 1

    def record(self, t, x, err):
        ref = self.first_x.get(t)
        if ref is None:
            self.first_x[t] = x
            self.metrics.errors.append(err)
            if self.keep_iterates:
                self.iterates.append(x)
        elif not np.array_equal(ref, x):
            self.metrics.agreement = False
        self.finished[t] = self.net.tick
        # Only the latest iterate is needed for agreement checks.
        self.first_x.pop(t - 2, None)


class _IterationDriver:
    """Iterate bookkeeping common to both D-IHT flavours."""

    def __init__(self, p, problem, tol, max_iter, session):
        self.id = p
        self.state = AgentState(p, problem.agent_matrices[p - 1],
                                problem.agent_measurements[p - 1], problem.step_size,
                                np.zeros(problem.N))
        self.K = problem.sparsity
        self.ref = problem.planted_signal
        self.guard = divergence_guard(self.ref)
        self.tol = tol
        self.max_iter = max_iter
        self.session = session
        self.status = None

    def start(self):
        if recovery_error(self.state.iterate, self.ref) <= self.tol:
            self.status = CONVERGED
        elif self.max_iter <= 0:
            self.status = MAX_ITER
        else:
            self._begin()

    def _finish(self, x):
        st = self.state
        st.iterate = x
        st.iteration += 1
        err = recovery_error(x, self.ref)
        self.session.record(st.iteration, x, err)
        if not np.isfinite(x).all() or np.linalg.norm(x) > self.guard:
            self.status = DIVERGED
        elif err <= self.tol:
            self.status = CONVERGED
        elif st.iteration >= self.max_iter:
            self.status = MAX_ITER
        else:
            self._begin()

    def _begin(self):
        raise NotImplementedError


class DihtAgent(_IterationDriver):
    def __init__(self, p, problem, tol, max_iter, session, trees, net, rule):
        super().__init__(p, problem, tol, max_iter, session)
        self.data = DataAgent(p, problem.P, problem.sparsity, trees, net, rule,
                              on_done=self._data_done, on_initiate=session.count)
        self.receive = self.data.receive

    def _begin(self):
        z = self.state.intermediate()
        self.data.begin(self.state.iteration, build_sorted_list(z))

    def _data_done(self, data):
        self._finish(finalize_estimate(data.result, self.state.iterate.size))


class NaiveAgent(_IterationDriver):
    """Sums every entry each iteration; agent ``p`` starts the sums for
    objects ``p, p + P, p + 2P, ...``."""

    def __init__(self, p, problem, tol, max_iter, session, trees, net):
        super().__init__(p, problem, tol, max_iter, session)
        self.P = problem.P
        self.N = problem.N
        self.node = GroupSumNode(p, trees, net, self._contribute, self._on_result)
        self.z = None
        self.sums = None
        self.active = False
        self._held = []
        self._advancing = False

    def receive(self, msg):
        if msg.kind == SUM_REQ and (not self.active or msg.key.iteration > self.state.iteration):
            self._held.append(msg)
        else:
            self.node.handle(msg)

    def _contribute(self, query):
        return float(self.z[query[1] - 1])

    def _begin(self):
        t = self.state.iteration
        self.z = self.state.intermediate()
        self.sums = np.zeros(self.N)
        self._pending = self.N
        self.active = True
        for o in range(self.id, self.N + 1, self.P):
            key = SumKey(self.id, t, 0, (OBJ, o))
            self.session.count(key)
            self.node.initiate(key)
        ready = [m for m in self._held if m.key.iteration == t]
        if ready:
            self._held = [m for m in self._held if m.key.iteration != t]
            for m in ready:
                self.node.handle(m)

    def _on_result(self, key, total):
        self.sums[key.query[1] - 1] = total
        self._pending -= 1
        if self._advancing:
            return
        self._advancing = True
        try:
            while self.active and self._pending == 0:
                self.active = False
                self._finish(hard_threshold(self.sums, self.K))
        finally:
            self._advancing = False


def _simulate(problem, topology, tol, max_iter, delivery, keep_iterates, preprocessing,
              trace, make_agent, algorithm):
    if topology.P != problem.P:
        raise InvalidArgument(f"topology has {topology.P} agents, problem has {problem.P}")
    if preprocessing is None:
        preprocessing = build_broadcast_trees(topology)
    net = Network(topology, delivery, trace=trace)
    metrics = RunMetrics(algorithm, problem.P, problem.N,
                         preprocessing_messages=preprocessing.messages,
                         preprocessing_ticks=preprocessing.ticks)
    metrics.errors.append(recovery_error(np.zeros(problem.N), problem.planted_signal))
    session = _Session(problem, metrics, net, keep_iterates)
    agents = {p: make_agent(p, session, preprocessing.trees, net)
              for p in range(1, problem.P + 1)}
    for agent in agents.values():
        agent.start()
    net.run(lambda m: agents[m.dst].receive(m))

    statuses = {a.status for a in agents.values()}
    if len(statuses) != 1 or None in statuses:
        raise AssertionError(f"agents ended in different states: {statuses}")
    metrics.status = statuses.pop()
    metrics.protocol_messages = net.messages_sent
    metrics.clock_ticks = preprocessing.ticks + net.tick
    metrics.ticks = [preprocessing.ticks + session.finished[j]
                     for j in range(1, metrics.iterations + 1)]
    # The last iteration starts no sums when the run stops right after it.
    del metrics.sums[metrics.iterations:]
    x = agents[1].state.iterate
    result = RunResult(Estimate(x, agents[1].state.iteration), metrics, session.iterates, net)
    if metrics.status == DIVERGED:
        raise DivergenceError(
            f"D-IHT diverged at iteration {metrics.iterations} with step size "
            f"alpha={problem.step_size:g}", alpha=problem.step_size,
            iteration=metrics.iterations)
    return result


def diht_run(problem, topology, tol=1e-2, max_iter=2000, delivery=None,
             rule=MAGNITUDE_RULE, keep_iterates=False, preprocessing=None, trace=False):
    """D-IHT with DATA as the global top-K step.

    Runs until every agent's iterate is within ``tol`` (relative) of the
    planted signal or ``max_iter`` iterations have passed. Broadcast trees
    are built first unless ``preprocessing`` is given; their cost is part of
    the reported totals.
    """
    return _simulate(
        problem, topology, tol, max_iter, delivery, keep_iterates, preprocessing, trace,
        lambda p, s, trees, net: DihtAgent(p, problem, tol, max_iter, s, trees, net, rule),
        "diht")


def naive_diht_run(problem, topology, tol=1e-2, max_iter=2000, delivery=None,
                   keep_iterates=False, preprocessing=None, trace=False):
    """D-IHT baseline that group-sums all ``N`` entries every iteration."""
    return _simulate(
        problem, topology, tol, max_iter, delivery, keep_iterates, preprocessing, trace,
        lambda p, s, trees, net: NaiveAgent(p, problem, tol, max_iter, s, trees, net),
        "naive")


@dataclass
class EquivalenceReport:
    passed: bool
    iterations: int
    max_relative_diff: float
    first_failure: dict | None = None

    def __str__(self):
        if self.passed:
            return (f"{self.iterations} iterates match "
                    f"(max relative difference {self.max_relative_diff:.3g})")
        return f"trajectories diverge: {self.first_failure}"


class EquivalenceError(AssertionError):
    def __init__(self, report):
        super().__init__(str(report))
        self.report = report


def equivalence_check(problem, topology, tol=1e-9, max_iter=50, delivery=None,
                      stop_tol=1e-2, preprocessing=None):
    """Run centralized IHT and D-IHT side by side and compare every iterate.

    Raises:
        EquivalenceError: some iterate differs by more than ``tol`` relative
            to the centralized one, or the runs stop at different iterations.
    """
    central = centralized_iht(problem, tol=stop_tol, max_iter=max_iter, keep_iterates=True)
    dist = diht_run(problem, topology, tol=stop_tol, max_iter=max_iter, delivery=delivery,
                    keep_iterates=True, preprocessing=preprocessing)
    worst = 0.0
    n = min(len(central.iterates), len(dist.iterates))
    for t in range(n):
        xc, xd = central.iterates[t], dist.iterates[t]
        scale = np.linalg.norm(xc)
        diff = np.linalg.norm(xd - xc)
        rel = diff / scale if scale > 0 else diff
        worst = max(worst, rel)
        if rel > tol:
            i = int(np.argmax(np.abs(xd - xc)))
            report = EquivalenceReport(False, t, worst, {
                "iteration": t, "index": i + 1, "centralized": float(xc[i]),
                "distributed": float(xd[i]), "relative_diff": rel})
            raise EquivalenceError(report)
    if len(central.iterates) != len(dist.iterates):
        report = EquivalenceReport(False, n - 1, worst, {
            "iteration": n, "reason": "runs stopped at different iterations",
            "centralized_iterations": len(central.iterates) - 1,
            "distributed_iterations": len(dist.iterates) - 1})
        raise EquivalenceError(report)
    return EquivalenceReport(True, n - 1, worst)
