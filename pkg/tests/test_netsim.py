import pytest

from diht.errors import GenerationError, InvalidArgument, ProtocolError
from diht.netsim import (AsyncDelivery, Network, Topology, bfs_tree,
                         build_broadcast_tree, build_broadcast_trees, make_er_topology,
                         make_geometric_topology)


def triangle():
    return Topology(3, [(1, 2), (2, 3), (1, 3)])


def test_topology_rejects_bad_graphs():
    with pytest.raises(InvalidArgument):
        Topology(3, [(1, 2)])  # disconnected
    with pytest.raises(InvalidArgument):
        Topology(2, [(1, 1), (1, 2)])
    with pytest.raises(InvalidArgument):
        Topology(2, [(1, 2), (2, 1)])
    with pytest.raises(InvalidArgument):
        Topology(2, [(1, 3)])


def test_topology_degrees_and_neighbors():
    t = Topology.path(4)
    assert t.E == 3
    assert t.degrees == {1: 1, 2: 2, 3: 2, 4: 1}
    assert t.are_neighbors(2, 3) and not t.are_neighbors(1, 3)
    assert Topology.complete(5).E == 10


def test_er_two_agents_full_probability():
    t = make_er_topology(2, 1.0, seed=123)
    assert t.edges == {(1, 2)} or sorted(t.edges) == [(1, 2)]


def test_er_edge_count_concentrates():
    t = make_er_topology(50, 0.25, seed=3)
    assert 200 <= t.E <= 420


def test_er_monotone_coupling():
    for seed in range(5):
        lo = make_er_topology(50, 0.25, seed)
        hi = make_er_topology(50, 0.75, seed)
        assert hi.E > lo.E


def test_er_is_deterministic():
    assert make_er_topology(20, 0.3, 4) == make_er_topology(20, 0.3, 4)


@pytest.mark.parametrize("P,prob", [(1, 0.5), (5, 0.0), (5, 1.5)])
def test_er_rejects_bad_parameters(P, prob):
    with pytest.raises(InvalidArgument):
        make_er_topology(P, prob, 0)


def test_er_gives_up_after_retry_budget():
    with pytest.raises(GenerationError):
        make_er_topology(30, 1e-6, 0)


def test_geometric_large_radius_is_complete():
    assert make_geometric_topology(12, 1.5, 0) == Topology.complete(12)


def test_geometric_reference_radius_connected():
    t = make_geometric_topology(50, 0.5, 9)
    assert t.P == 50 and t.E >= 49


def test_geometric_tiny_radius_fails():
    with pytest.raises(GenerationError):
        make_geometric_topology(3, 1e-9, 0)


def test_edge_list_round_trip(tmp_path):
    t = make_er_topology(15, 0.3, 1)
    t.write_edge_list(tmp_path / "g.txt")
    first = (tmp_path / "g.txt").read_text().splitlines()[0]
    assert first.split() == ["15", str(t.E)]
    assert Topology.read_edge_list(tmp_path / "g.txt") == t


def test_sync_single_message_delivered_next_tick():
    net = Network(Topology.path(2))
    net.send(1, 2, "X", value=1.0)
    assert net.messages_sent == 1
    got = net.step()
    assert net.tick == 1 and [m.dst for m in got] == [2]
    assert net.messages_delivered == 1 and net.idle()


def test_sync_link_capacity_is_one_per_tick():
    net = Network(Topology.path(2))
    net.send(1, 2, "X", value=1.0)
    net.send(1, 2, "X", value=2.0)
    net.send(2, 1, "X", value=3.0)  # opposite direction is a separate link
    first = net.step()
    assert sorted(m.value for m in first) == [1.0, 3.0]
    second = net.step()
    assert [m.value for m in second] == [2.0] and net.tick == 2


def test_sync_disjoint_links_deliver_together():
    net = Network(Topology.complete(6))
    for q in range(2, 7):
        net.send(1, q, "X")
        net.send(q, 1, "X")
    assert len(net.step()) == 10 and net.idle() and net.tick == 1


def test_send_to_non_neighbor_is_a_violation():
    net = Network(Topology.path(3))
    with pytest.raises(ProtocolError):
        net.send(1, 3, "X")


def _flood(net):
    net.send(1, 2, "X")
    net.send(1, 3, "X")
    log = []

    def dispatch(m):
        log.append((net.tick, m.src, m.dst))
        if m.dst == 2:
            net.send(2, 4, "X")

    net.run(dispatch)
    return log


def test_async_delivers_everything_deterministically():
    t = Topology(4, [(1, 2), (1, 3), (2, 4), (3, 4)])
    a = Network(t, AsyncDelivery(seed=5))
    b = Network(t, AsyncDelivery(seed=5))
    log_a, log_b = _flood(a), _flood(b)
    assert log_a == log_b
    assert a.messages_sent == a.messages_delivered == 3
    assert all(1 <= tick for tick, *_ in log_a)


def test_async_delay_bounded():
    t = Topology.path(2)
    net = Network(t, AsyncDelivery(seed=1, max_delay=3))
    for _ in range(200):
        net.send(1, 2, "X")
    ticks = set()
    net.run(lambda m: ticks.add(net.tick))
    assert ticks <= {1, 2, 3} and net.messages_delivered == 200


def test_per_agent_counters():
    net = Network(triangle())
    net.send(1, 2, "X")
    net.send(1, 3, "X")
    net.send(3, 2, "X")
    net.run(lambda m: None)
    assert net.sent_by[1:] == [2, 0, 1]
    assert net.received_by[1:] == [0, 2, 1]


def test_trace_records(tmp_path):
    net = Network(Topology.path(2), trace=True)
    net.send(1, 2, "SUM_REQ")
    net.run(lambda m: None)
    net.write_trace(tmp_path / "t.txt")
    assert (tmp_path / "t.txt").read_text().split() == ["1", "1", "2", "SUM_REQ"]


def test_tree_on_path():
    tree, msgs, ticks = build_broadcast_tree(Topology.path(3), 1)
    assert tree.parent == {2: 1, 3: 2}
    assert msgs <= 4 and tree.depth == 2


def test_tree_on_triangle():
    tree, msgs, _ = build_broadcast_tree(triangle(), 1)
    assert tree.children[1] == (2, 3) and tree.depth == 1
    # a same-level edge carries one request each way
    assert msgs == 2 * 3


def test_tree_saves_messages_across_adjacent_levels():
    square = Topology(4, [(1, 2), (1, 3), (2, 4), (3, 4)])
    tree, msgs, _ = build_broadcast_tree(square, 1)
    assert tree.parent[4] == 2
    # agent 4 hears from 2 and 3 in the same tick and forwards nothing
    assert msgs == 7


@pytest.mark.parametrize("seed", range(4))
def test_flood_tree_matches_bfs_oracle(seed):
    t = make_er_topology(30, 0.2, seed)
    for root in (1, 7, 30):
        tree, msgs, _ = build_broadcast_tree(t, root)
        oracle = bfs_tree(t, root)
        assert tree.parent == oracle.parent
        assert tree.spans(t) and len(tree.edges) == t.P - 1
        assert msgs <= 2 * t.E


def test_preprocessing_bound_on_er_graph():
    t = make_er_topology(50, 0.25, 0)
    pre = build_broadcast_trees(t)
    assert set(pre.trees) == set(range(1, 51))
    assert pre.messages == sum(pre.per_tree_messages.values())
    assert pre.messages < 2 * t.E * t.P
    assert all(m < 2 * t.E for m in pre.per_tree_messages.values())


def test_preprocessing_equals_bound_on_trees():
    t = Topology.path(5)
    pre = build_broadcast_trees(t)
    assert pre.messages == 2 * t.E * t.P


def test_sync_broadcast_ticks_equal_depth():
    t = make_er_topology(25, 0.2, 2)
    tree = build_broadcast_trees(t).trees[4]
    net = Network(t)
    for c in tree.children[4]:
        net.send(4, c, "B")

    def dispatch(m):
        for c in tree.children[m.dst]:
            net.send(m.dst, c, "B")

    net.run(dispatch)
    assert net.tick == tree.depth
    assert net.messages_sent == t.P - 1
