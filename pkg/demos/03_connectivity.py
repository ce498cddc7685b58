"""
Denser graphs finish sooner
===========================

The same problem on a sparse and a dense random graph. Message counts
barely move (each group sum costs 3(P-1) messages whatever the graph), but
broadcast trees get shallower, so the clock runs for fewer ticks.
"""

from diht import diht_run, generate_problem, make_er_topology, make_geometric_topology

problem = generate_problem(N=1000, M=250, P=50, K=20, seed=0, alpha=0.8)
graphs = {
    "ER(0.25)": make_er_topology(50, 0.25, seed=0),
    "ER(0.75)": make_er_topology(50, 0.75, seed=0),
    "geometric(0.5)": make_geometric_topology(50, 0.5, seed=0),
}

print(f"{'graph':>15} {'edges':>6} {'messages':>10} {'ticks':>7}")
for name, topo in graphs.items():
    m = diht_run(problem, topo).metrics
    print(f"{name:>15} {topo.E:>6} {m.total_messages:>10,} {m.clock_ticks:>7,}")
