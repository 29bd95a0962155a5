"""Navigation metrics: NE, SR, OSR, TL over agent-produced trajectories."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .worldgen import validate_route

SUCCESS_THRESHOLD = 3.0   # length units; node spacing is ~2.0


@dataclass
class EvalReport:
    ne: float                 # mean final distance to goal
    sr: float                 # fraction of episodes with final distance < threshold
    osr: float                # fraction whose closest visited point < threshold
    tl: float                 # mean executed trajectory length
    num_episodes: int
    threshold: float
    episodes: list

    def to_json(self):
        return {"format_version": 1, "NE": round(self.ne, 6), "SR": round(self.sr, 6),
                "OSR": round(self.osr, 6), "TL": round(self.tl, 6),
                "num_episodes": self.num_episodes, "threshold": self.threshold,
                "episodes": self.episodes}


def episode_metrics(graph, trajectory, goal, threshold):
    """Metrics for one executed trajectory (a Route-shaped walk)."""
    nodes = trajectory.nodes
    goal_pos = graph.position(goal)

    def dist(n):
        (x, y) = graph.position(n)
        return ((x - goal_pos[0]) ** 2 + (y - goal_pos[1]) ** 2) ** 0.5

    ne = dist(nodes[-1])
    closest = min(dist(n) for n in nodes)
    tl = sum(graph.distance(a, b) for a, b in zip(nodes, nodes[1:]))
    return {"ne": ne, "success": ne < threshold, "oracle_success": closest < threshold,
            "tl": tl, "steps": len(trajectory.actions)}


def evaluate(agent, examples, graphs, threshold=SUCCESS_THRESHOLD, *, workers=1):
    """Run ``agent(example, graph) -> Route`` over the examples and aggregate.

    Invalid agent output marks the episode failed (SR 0, NE = start-to-goal
    distance) rather than dropping it.  Episodes are independent; ``workers``
    bounds optional thread parallelism.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")

    def run_one(ex):
        graph = graphs[ex.environment_id]
        goal = ex.route.final_node
        try:
            traj = agent(ex, graph)
            validate_route(graph, traj)
            rec = episode_metrics(graph, traj, goal, threshold)
            rec["failed"] = False
        except Exception as err:
            start = ex.route.states[0].node
            gx, gy = graph.position(goal)
            sx, sy = graph.position(start)
            ne = ((gx - sx) ** 2 + (gy - sy) ** 2) ** 0.5
            rec = {"ne": ne, "success": False, "oracle_success": ne < threshold,
                   "tl": 0.0, "steps": 0, "failed": True, "error": str(err)}
        rec["example_id"] = ex.example_id
        return rec

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_one, examples))
    else:
        records = [run_one(ex) for ex in examples]

    n = len(records)
    report = EvalReport(
        ne=sum(r["ne"] for r in records) / n,
        sr=sum(r["success"] for r in records) / n,
        osr=sum(r["oracle_success"] for r in records) / n,
        tl=sum(r["tl"] for r in records) / n,
        num_episodes=n, threshold=threshold,
        episodes=[{k: (round(v, 6) if isinstance(v, float) else v)
                   for k, v in r.items()} for r in records])
    assert report.osr >= report.sr - 1e-12
    return report
