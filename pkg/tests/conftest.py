"""Shared fixtures and tiny independent oracles used across test modules."""

from __future__ import annotations

import heapq
import random
from collections import deque

import pytest

from xnet import netcore
from xnet.flowsim import LinkFeatures, NormalizedMetrics
from xnet.netcore import Link, Topology


@pytest.fixture
def triangle() -> Topology:
    return Topology(
        nodes=("a", "b", "c"),
        links=(Link("a", "b", 10.0, 1.0), Link("b", "c", 10.0, 1.0),
               Link("a", "c", 10.0, 1.0)),
    )


@pytest.fixture
def line4() -> Topology:
    return Topology(
        nodes=("a", "b", "c", "d"),
        links=(Link("a", "b", 10.0, 1.0), Link("b", "c", 10.0, 1.0),
               Link("c", "d", 10.0, 1.0)),
    )


def random_connected_topology(seed: int, n: int, capacity: float = 10.0) -> Topology:
    """Random spanning tree plus a few extra edges; always connected."""
    rng = random.Random(seed)
    nodes = [f"n{i:02d}" for i in range(n)]
    order = nodes[:]
    rng.shuffle(order)
    links = []
    seen = set()
    for i in range(1, n):
        u, v = order[i], order[rng.randrange(i)]
        seen.add(frozenset((u, v)))
        links.append(Link(u, v, capacity, 1.0))
    for _ in range(rng.randrange(0, n)):
        u, v = rng.sample(nodes, 2)
        if frozenset((u, v)) not in seen:
            seen.add(frozenset((u, v)))
            links.append(Link(u, v, capacity, 1.0))
    return Topology(nodes=tuple(nodes), links=tuple(links))


def static_costs(t: Topology, seed: int, lo: float = 0.1, hi: float = 1.0):
    """Symmetric random per-link costs packed into the bwd_hat feature."""
    rng = random.Random(seed)
    feats = {}
    for link in t.links:
        c = rng.uniform(lo, hi)
        feats[(link.src, link.dst)] = LinkFeatures(c, 0.0, 0.0)
        feats[(link.dst, link.src)] = LinkFeatures(c, 0.0, 0.0)
    nm = NormalizedMetrics(feats=feats)
    costs = {arc: f.bwd_hat for arc, f in feats.items()}
    return nm, costs


def dijkstra_cost(t: Topology, costs: dict, src: str, dst: str) -> float:
    """Independent shortest-path oracle on arbitrary arc costs."""
    dist = {src: 0.0}
    done = set()
    pq = [(0.0, src)]
    while pq:
        d, u = heapq.heappop(pq)
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return d
        for v in t.neighbors[u]:
            nd = d + costs[(u, v)]
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                heapq.heappush(pq, (nd, v))
    return dist[dst]


def enumerate_min_hop_paths(t: Topology, src: str, dst: str) -> list[tuple[str, ...]]:
    """All minimum-hop paths by BFS layer expansion (oracle for tie-breaking)."""
    dist = {dst: 0}
    queue = deque([dst])
    while queue:
        u = queue.popleft()
        for v in t.neighbors[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    paths = []

    def walk(node, acc):
        if node == dst:
            paths.append(tuple(acc))
            return
        for v in t.neighbors[node]:
            if dist.get(v, -1) == dist[node] - 1:
                walk(v, acc + [v])

    walk(src, [src])
    return paths
