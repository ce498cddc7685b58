"""
Recovering a sparse signal across a network
===========================================

A 1000-entry signal with 20 nonzeros is measured by 250 random
projections, split among 50 agents (5 rows each). The agents only talk to
neighbors in a random graph, yet they all end up with the same estimate.
"""

import numpy as np

from diht import (centralized_iht, diht_run, generate_problem, make_er_topology,
                  naive_diht_run)

problem = generate_problem(N=1000, M=250, P=50, K=20, seed=0, alpha=0.8)
topology = make_er_topology(50, 0.25, seed=0)
print(f"{topology.E} links, mean degree {2 * topology.E / topology.P:.1f}")

# Plain IHT on the full matrix is the reference trajectory.
central = centralized_iht(problem)
print(f"centralized: {central.estimate.iteration} iterations, "
      f"error {central.errors[-1]:.2e}")

# D-IHT: each agent forms a local intermediate vector, then DATA finds the
# 20 largest entries of their sum.
run = diht_run(problem, topology)
m = run.metrics
print(f"D-IHT: {m.iterations} iterations, {m.total_messages:,} messages, "
      f"{m.clock_ticks:,} ticks")
print("group sums per iteration:", m.sums)
np.testing.assert_allclose(run.estimate.iterate, central.estimate.iterate, rtol=1e-9)

# The naive baseline sums every one of the 1000 entries each iteration.
# Here P * K = N, so DATA has to walk about K rounds of P + 1 sums before
# its thresholds drop below the 20th largest entry, and it saves nothing.
naive = naive_diht_run(problem, topology)
print(f"naive: {naive.metrics.total_messages:,} messages "
      f"({naive.metrics.total_messages / m.total_messages:.2f}x D-IHT)")
