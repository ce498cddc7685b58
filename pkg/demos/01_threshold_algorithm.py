"""
Finding the top-K of summed lists
=================================

Three agents each hold a score for ten objects. We want the two objects
with the largest total score without adding up all ten columns.
"""

from diht.topk import (TA_EXAMPLE_VECTORS, brute_force_topk, build_sorted_list, data_topk,
                       ta_topk, ta_trace_csv)
from diht.netsim import Topology

# Each agent sorts its own scores; object ids are 1-based.
lists = [build_sorted_list(v) for v in TA_EXAMPLE_VECTORS]
for p, lst in enumerate(lists, start=1):
    print(f"agent {p}:", lst.entries[:4], "...")

# The threshold algorithm polls the agents in turn and stops once the two
# best sums reach the threshold tau, the sum of the last values seen.
result = ta_topk(lists, K=2)
print()
print(ta_trace_csv(result, P=3))
print(f"{result.sums_computed} of 10 sums needed")

# Summing everything gives the same answer.
assert result.topk == brute_force_topk(lists, 2)

# The decentralized version runs on a network: every agent starts one
# group sum per round, reading its list from whichever end has the larger
# threshold. Here the three agents sit on a path.
out = data_topk(Topology.path(3), lists, K=2)
print(f"DATA: {out.topk} after {out.rounds} rounds, {out.sums} group sums, "
      f"{out.messages} messages, {out.ticks} ticks")
