"""Synthetic navigation worlds: jittered-grid graphs with landmark placements.

Worlds are small undirected graphs whose nodes sit on a perturbed square grid
(spacing ~2.0 length units), so every edge length falls in [1.5, 2.5] and node
degree never exceeds 4.  Landmarks are point objects attached to nodes at a
global heading angle; a configurable fraction of landmark classes is placed at
two distinct nodes to create referential ambiguity.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

GRID_SPACING = 2.0
JITTER = 0.15
NUM_HEADINGS = 12
HEADING_STEP = 2.0 * math.pi / NUM_HEADINGS
DEFAULT_LANDMARK_CLASSES = 24

STOP = -1  # action sentinel: end the episode in place


class AgentState(NamedTuple):
    node: int
    heading: int          # heading bin in [0, 12)
    completed: bool = False


class Route(NamedTuple):
    """A state sequence plus the action taken at each step.

    ``actions[k]`` moves ``states[k] -> states[k+1]``; a move action is the
    target node id, STOP keeps the node and marks the final state completed.
    """

    states: tuple
    actions: tuple

    @property
    def nodes(self):
        out = [self.states[0].node]
        for s in self.states[1:]:
            if s.node != out[-1]:
                out.append(s.node)
        return out

    @property
    def final_node(self):
        return self.states[-1].node


class Landmark(NamedTuple):
    class_id: int
    heading: float        # placement heading, radians in (-pi, pi]


@dataclass
class NavGraph:
    environment_id: int
    positions: dict            # node id -> (x, y)
    adjacency: dict            # node id -> sorted tuple of neighbor ids
    landmarks: dict            # node id -> tuple of Landmark
    num_landmark_classes: int = DEFAULT_LANDMARK_CLASSES
    _dist_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def nodes(self):
        return sorted(self.positions)

    def neighbors(self, node):
        return self.adjacency[node]

    def has_edge(self, a, b):
        return b in self.adjacency[a]

    def position(self, node):
        return self.positions[node]

    def distance(self, a, b):
        (ax, ay), (bx, by) = self.positions[a], self.positions[b]
        return math.hypot(ax - bx, ay - by)

    def edge_heading(self, a, b):
        (ax, ay), (bx, by) = self.positions[a], self.positions[b]
        return math.atan2(by - ay, bx - ax)

    def hop_distances(self, source):
        """BFS hop counts from ``source`` to every reachable node (cached)."""
        if source not in self._dist_cache:
            dist = {source: 0}
            queue = deque([source])
            while queue:
                u = queue.popleft()
                for v in self.adjacency[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        queue.append(v)
            self._dist_cache[source] = dist
        return self._dist_cache[source]


def wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    a = math.fmod(angle + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def heading_bin(angle):
    return int(round(angle / HEADING_STEP)) % NUM_HEADINGS


def bin_angle(b):
    return wrap_angle(b * HEADING_STEP)


def relative_angle(angle, heading):
    """Angle relative to the centre of a heading bin, wrapped to (-pi, pi]."""
    return wrap_angle(angle - bin_angle(heading))


def sector_index(rel_angle):
    """30-degree sector of a relative angle; sector 0 is dead ahead."""
    return int(math.floor((rel_angle + HEADING_STEP / 2.0) / HEADING_STEP)) % NUM_HEADINGS


def generate_environment(seed, size, ambiguity_level, *, num_classes=DEFAULT_LANDMARK_CLASSES,
                         environment_id=None):
    """Build a connected jittered-grid world with landmark placements.

    ``ambiguity_level`` in [0, 1] sets the fraction of used landmark classes
    that are placed at >= 2 distinct nodes.  Deterministic in ``seed``.
    """
    if size < 8:
        raise ValueError(f"environment size must be >= 8, got {size}")
    if not 0.0 <= ambiguity_level <= 1.0:
        raise ValueError(f"ambiguity_level must be in [0, 1], got {ambiguity_level}")
    rng = np.random.default_rng([int(seed), 0x5EED])

    cols = math.ceil(math.sqrt(size))
    rows = math.ceil(size / cols)
    cells = [(r, c) for r in range(rows) for c in range(cols)][:size]
    index = {cell: i for i, cell in enumerate(cells)}

    positions = {}
    for (r, c), i in index.items():
        jx, jy = rng.uniform(-JITTER, JITTER, size=2)
        positions[i] = (c * GRID_SPACING + float(jx), r * GRID_SPACING + float(jy))

    grid_edges = []
    for (r, c), i in index.items():
        for dr, dc in ((0, 1), (1, 0)):
            j = index.get((r + dr, c + dc))
            if j is not None:
                grid_edges.append((i, j))

    # randomized spanning tree, then keep a fraction of the remaining grid edges
    adjacency = {i: set() for i in positions}
    in_tree = {0}
    frontier = [e for e in grid_edges if 0 in e]
    remaining = [e for e in grid_edges if 0 not in e]
    while len(in_tree) < size:
        pick = int(rng.integers(len(frontier)))
        a, b = frontier.pop(pick)
        new = b if a in in_tree else a
        if new in in_tree:
            continue
        adjacency[a].add(b)
        adjacency[b].add(a)
        in_tree.add(new)
        keep = []
        for e in remaining:
            if new in e:
                frontier.append(e)
            else:
                keep.append(e)
        remaining = keep
    for a, b in grid_edges:
        if b not in adjacency[a] and rng.random() < 0.5:
            adjacency[a].add(b)
            adjacency[b].add(a)
    adjacency = {i: tuple(sorted(nbrs)) for i, nbrs in adjacency.items()}

    landmarks = _place_landmarks(rng, size, ambiguity_level, num_classes)

    graph = NavGraph(
        environment_id=int(seed) if environment_id is None else int(environment_id),
        positions=positions,
        adjacency=adjacency,
        landmarks=landmarks,
        num_landmark_classes=num_classes,
    )
    _check_invariants(graph, ambiguity_level)
    return graph


def _place_landmarks(rng, size, ambiguity_level, num_classes):
    used = min(num_classes, max(2, (2 * size) // 3))
    duplicated = math.ceil(ambiguity_level * used)
    class_ids = rng.permutation(num_classes)[:used]
    placements = {}  # node -> list of Landmark
    nodes = list(range(size))
    for k, class_id in enumerate(class_ids):
        count = 2 if k < duplicated else 1
        chosen = rng.choice(nodes, size=count, replace=False)
        for node in sorted(int(n) for n in chosen):
            heading = wrap_angle(float(rng.uniform(-math.pi, math.pi)))
            placements.setdefault(node, []).append(Landmark(int(class_id), heading))
    return {n: tuple(ls) for n, ls in sorted(placements.items())}


def _check_invariants(graph, ambiguity_level):
    nodes = graph.nodes
    assert len(set(graph.positions.values())) == len(nodes), "positions not distinct"
    for n in nodes:
        deg = len(graph.adjacency[n])
        assert 1 <= deg <= 4, f"node {n} degree {deg}"
        for m in graph.adjacency[n]:
            assert n in graph.adjacency[m]
            d = graph.distance(n, m)
            assert 1.5 <= d <= 2.5, f"edge ({n},{m}) length {d}"
    assert len(graph.hop_distances(nodes[0])) == len(nodes), "graph not connected"
    by_class = {}
    for n, lms in graph.landmarks.items():
        for lm in lms:
            assert lm.class_id < graph.num_landmark_classes
            by_class.setdefault(lm.class_id, set()).add(n)
    if by_class:
        dup = sum(1 for ns in by_class.values() if len(ns) >= 2)
        assert dup >= math.ceil(ambiguity_level * len(by_class)), "ambiguity target missed"


def shortest_path(graph, start, goal):
    """Hop-count shortest path; ties resolved to the lexicographically
    smallest node-id sequence."""
    dist_to_goal = graph.hop_distances(goal)
    if start not in dist_to_goal:
        raise ValueError(f"no path from {start} to {goal}")
    path = [start]
    node = start
    while node != goal:
        node = min(v for v in graph.adjacency[node]
                   if dist_to_goal[v] == dist_to_goal[node] - 1)
        path.append(node)
    return path


def route_from_path(graph, path, start_heading=None):
    """Turn a node path into a Route: headings face the next node and the
    route ends with Stop at the final node."""
    if len(path) < 2:
        raise ValueError("path must contain at least two nodes")
    headings = [heading_bin(graph.edge_heading(a, b)) for a, b in zip(path, path[1:])]
    states = [AgentState(path[0], headings[0] if start_heading is None else start_heading)]
    actions = []
    for node, h in zip(path[1:], headings):
        states.append(AgentState(node, h))
        actions.append(node)
    states.append(AgentState(path[-1], headings[-1], completed=True))
    actions.append(STOP)
    return Route(tuple(states), tuple(actions))


def qualifying_pairs(graph, min_hops=4, max_hops=6):
    pairs = []
    for start in graph.nodes:
        dist = graph.hop_distances(start)
        for goal, d in sorted(dist.items()):
            if min_hops <= d <= max_hops:
                pairs.append((start, goal))
    return pairs


def sample_route(graph, seed, *, min_hops=4, max_hops=6, random_start_heading=True):
    """Sample a shortest-path route of 5-7 nodes (4-6 hops)."""
    pairs = qualifying_pairs(graph, min_hops, max_hops)
    if not pairs:
        raise ValueError("graph has no node pair with a 5-7 node shortest path")
    rng = np.random.default_rng([int(seed), graph.environment_id, 0xA11])
    start, goal = pairs[int(rng.integers(len(pairs)))]
    path = shortest_path(graph, start, goal)
    start_heading = int(rng.integers(NUM_HEADINGS)) if random_start_heading else None
    return route_from_path(graph, path, start_heading=start_heading)


def validate_route(graph, route):
    """Raise ValueError unless the route is executable in the graph."""
    states, actions = route.states, route.actions
    if len(states) < 1 or len(actions) != len(states) - 1:
        raise ValueError("route must have |actions| = |states| - 1")
    for k, action in enumerate(actions):
        cur, nxt = states[k], states[k + 1]
        if cur.completed:
            raise ValueError("completed state has a successor")
        if action == STOP:
            if nxt.node != cur.node or not nxt.completed:
                raise ValueError("stop must keep the node and complete the route")
        else:
            if action != nxt.node or not graph.has_edge(cur.node, nxt.node):
                raise ValueError(f"move {cur.node}->{action} is not navigable")
            if nxt.completed:
                raise ValueError("only stop may complete the route")
    if states[-1].completed != (len(actions) > 0 and actions[-1] == STOP):
        raise ValueError("final state completed iff last action is stop")
