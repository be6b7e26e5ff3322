import pytest
from hypothesis import given, settings, strategies as st

from xnet import flowsim
from xnet.errors import ValidationError
from xnet.flowsim import (
    LinkFeatures,
    LinkMetrics,
    LinkState,
    NormalizedMetrics,
    RouteSet,
    apply_routes,
    idle_metrics,
    link_delay,
    link_loss,
    normalize_metrics,
    read_metrics,
    write_metrics,
)
from xnet.netcore import TrafficMatrix

from conftest import random_connected_topology


def full_mesh_routes(t):
    from xnet.netcore import shortest_path_hops
    return RouteSet(routes={
        (s, d): shortest_path_hops(t, s, d)
        for s in t.nodes for d in t.nodes if s != d
    })


# ---------------------------------------------------------------------------
# link models
# ---------------------------------------------------------------------------

def test_link_delay_idle():
    assert link_delay(10.0, 0.0, 1.0) == 1.0


def test_link_delay_half_load():
    assert link_delay(10.0, 5.0, 1.0) == pytest.approx(2.0)


def test_link_delay_saturation_cap():
    assert link_delay(10.0, 20.0, 1.0) == pytest.approx(100.0)


def test_link_loss_under_capacity():
    assert link_loss(10.0, 5.0) == 0.0


def test_link_loss_overload():
    assert link_loss(10.0, 20.0) == pytest.approx(0.5)


def test_link_loss_boundary():
    assert link_loss(10.0, 10.0) == 0.0
    assert link_loss(10.0, 0.0) == 0.0


@given(cap=st.floats(0.5, 1000), a=st.floats(0, 2000), b=st.floats(0, 2000),
       prop=st.floats(0.01, 50))
@settings(max_examples=200, deadline=None)
def test_delay_and_loss_monotone_in_load(cap, a, b, prop):
    lo, hi = sorted((a, b))
    assert link_delay(cap, lo, prop) <= link_delay(cap, hi, prop)
    assert link_loss(cap, lo) <= link_loss(cap, hi)


# ---------------------------------------------------------------------------
# apply_routes
# ---------------------------------------------------------------------------

def test_apply_routes_zero_tm(triangle):
    m = apply_routes(triangle, full_mesh_routes(triangle), TrafficMatrix(tag="z"))
    for arc in triangle.arcs:
        s = m.states[arc]
        assert s.load == 0.0
        assert s.available == s.capacity
        assert s.loss == 0.0
        assert s.delay == s.prop_delay


def test_apply_routes_two_hop_demand(line4):
    routes = full_mesh_routes(line4)
    tm = TrafficMatrix(tag="t", demand={("a", "c"): 5.0})
    m = apply_routes(line4, routes, tm)
    assert m.states[("a", "b")].load == 5.0
    assert m.states[("b", "c")].load == 5.0
    assert m.states[("a", "b")].available == 5.0
    assert m.states[("c", "d")].load == 0.0
    assert m.states[("b", "a")].load == 0.0  # direction matters


def test_apply_routes_shared_link(line4):
    tm = TrafficMatrix(tag="t", demand={("a", "c"): 3.0, ("b", "c"): 4.0})
    m = apply_routes(line4, full_mesh_routes(line4), tm)
    assert m.states[("b", "c")].load == pytest.approx(7.0)
    assert m.states[("a", "b")].load == pytest.approx(3.0)


def test_apply_routes_unknown_link(triangle):
    routes = RouteSet(routes={("a", "b"): ("a", "x", "b")})
    with pytest.raises(ValidationError, match="unknown link"):
        apply_routes(triangle, routes, TrafficMatrix(tag="t", demand={("a", "b"): 1.0}))


def test_apply_routes_missing_route(triangle):
    routes = RouteSet(routes={})
    with pytest.raises(ValidationError, match="no route"):
        apply_routes(triangle, routes, TrafficMatrix(tag="t", demand={("a", "b"): 1.0}))


def test_conservation_sum_load_equals_rate_times_hops():
    for seed in range(6):
        t = random_connected_topology(seed, 5 + seed)
        routes = full_mesh_routes(t)
        import random
        rng = random.Random(seed)
        demand = {}
        for s in t.nodes:
            for d in t.nodes:
                if s != d and rng.random() < 0.4:
                    demand[(s, d)] = rng.uniform(0.1, 5.0)
        tm = TrafficMatrix(tag="t", demand=demand)
        m = apply_routes(t, routes, tm)
        total_load = sum(st_.load for st_ in m.states.values())
        expected = sum(rate * (len(routes.routes[pair]) - 1)
                       for pair, rate in demand.items())
        assert total_load == pytest.approx(expected)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def make_metrics(raw: dict) -> LinkMetrics:
    """raw: arc -> (load, available, delay, loss, capacity)."""
    return LinkMetrics(states={
        arc: LinkState(load=v[0], available=v[1], delay=v[2], loss=v[3],
                       capacity=v[4], prop_delay=1.0)
        for arc, v in raw.items()
    })


def test_normalize_constant_snapshot_maps_to_zero(triangle):
    nm = normalize_metrics(idle_metrics(triangle))
    for feats in nm.feats.values():
        assert feats.as_tuple() == (0.0, 0.0, 0.0)


def test_normalize_bwd_inverted():
    m = make_metrics({
        ("a", "b"): (0, 0.0, 1, 0, 100),
        ("b", "c"): (0, 50.0, 1, 0, 100),
        ("c", "a"): (0, 100.0, 1, 0, 100),
    })
    nm = normalize_metrics(m)
    assert nm.feats[("a", "b")].bwd_hat == pytest.approx(1.0)
    assert nm.feats[("b", "c")].bwd_hat == pytest.approx(0.5)
    assert nm.feats[("c", "a")].bwd_hat == pytest.approx(0.0)


def test_normalize_delay_endpoints():
    m = make_metrics({
        ("a", "b"): (0, 1, 1.0, 0, 10),
        ("b", "a"): (0, 1, 3.0, 0, 10),
    })
    nm = normalize_metrics(m)
    assert nm.feats[("a", "b")].delay_hat == 0.0
    assert nm.feats[("b", "a")].delay_hat == 1.0


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0.1, 100),
                          st.floats(0, 1)), min_size=1, max_size=12))
@settings(max_examples=100, deadline=None)
def test_normalize_always_in_unit_interval(rows):
    raw = {(f"n{i}", f"m{i}"): (1.0, av, dl, ls, 100.0)
           for i, (av, dl, ls) in enumerate(rows)}
    nm = normalize_metrics(make_metrics(raw))
    for f in nm.feats.values():
        for v in f.as_tuple():
            assert 0.0 <= v <= 1.0


def test_normalize_preserves_rank_order():
    raw = {(f"n{i}", f"m{i}"): (1.0, float(av), float(dl), ls, 100.0)
           for i, (av, dl, ls) in enumerate(
               [(10, 5, 0.1), (20, 3, 0.0), (30, 8, 0.3), (5, 1, 0.2)])}
    m = make_metrics(raw)
    nm = normalize_metrics(m)
    arcs = sorted(raw)
    # delays sort identically before and after normalization
    order_before = sorted(arcs, key=lambda a: m.states[a].delay)
    order_after = sorted(arcs, key=lambda a: nm.feats[a].delay_hat)
    assert order_before == order_after
    # available sorts opposite to bwd_hat
    rev = sorted(arcs, key=lambda a: -nm.feats[a].bwd_hat)
    assert sorted(arcs, key=lambda a: m.states[a].available) == rev


# ---------------------------------------------------------------------------
# CSV round-trip
# ---------------------------------------------------------------------------

def test_metrics_roundtrip(tmp_path, triangle):
    tm = TrafficMatrix(tag="t", demand={("a", "b"): 3.0, ("b", "c"): 9.0})
    m = apply_routes(triangle, full_mesh_routes(triangle), tm)
    p = tmp_path / "m.csv"
    write_metrics(m, p)
    back = read_metrics(p, triangle)
    assert back == m


def test_metrics_read_rejects_bad_header(tmp_path, triangle):
    p = tmp_path / "m.csv"
    p.write_text("src,dst,load\n")
    with pytest.raises(ValidationError, match="header"):
        read_metrics(p, triangle)


def test_metrics_read_rejects_missing_arcs(tmp_path, triangle):
    p = tmp_path / "m.csv"
    p.write_text("src,dst,load_mbps,available_mbps,delay_ms,loss\na,b,0,10,1,0\n")
    with pytest.raises(ValidationError, match="missing arcs"):
        read_metrics(p, triangle)
