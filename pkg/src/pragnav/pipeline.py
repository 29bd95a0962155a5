"""Experiment orchestration: speaker-driven augmentation, two-phase follower
training, pragmatic evaluation modes, the sequential physically-plausible
trajectory, and the ablation grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import worldgen
from .dataset import DatasetExample
from .follower import FollowerInference, TrainSchedule, train_follower
from .metrics import evaluate
from .search import (PragmaticConfig, greedy_follow, pragmatic_select,
                     select_best, score_candidates, state_factored_search)
from .speaker import speaker_generate
from .worldgen import (STOP, AgentState, Route, qualifying_pairs, route_from_path,
                       shortest_path)


@dataclass
class AugmentConfig:
    multiplier: int = 25         # M as a multiple of the original train-route count
    aug_iterations: int = 2500   # phase 1, on synthetic + original data
    finetune_iterations: int = 1000  # phase 2, on original data only

    def num_routes(self, original_count):
        return self.multiplier * original_count


def augment_dataset(speaker_model, train_graphs, M, seed):
    """Sample M shortest-path routes from training environments and caption
    them with greedy speaker decoding."""
    rng = np.random.default_rng([int(seed), 0xA06])
    env_ids = sorted(train_graphs)
    examples = []
    pair_cache = {eid: qualifying_pairs(train_graphs[eid]) for eid in env_ids}
    for k in range(M):
        eid = env_ids[int(rng.integers(len(env_ids)))]
        graph = train_graphs[eid]
        pairs = pair_cache[eid]
        start, goal = pairs[int(rng.integers(len(pairs)))]
        path = shortest_path(graph, start, goal)
        heading = int(rng.integers(worldgen.NUM_HEADINGS))
        route = route_from_path(graph, path, start_heading=heading)
        tokens = speaker_generate(speaker_model, route, graph)
        examples.append(DatasetExample(
            example_id=f"syn{k:06d}", environment_id=eid, split="train",
            provenance="speaker_synthetic", route=route, instruction=tokens))
    return examples


def two_phase_train(model, original, synthetic, graphs, schedule, aug_config, *,
                    checkpoint_hook=None):
    """Phase 1 trains on synthetic + original, phase 2 fine-tunes on the
    original data only.  ``checkpoint_hook(tag, model)`` fires at the phase
    boundary and at the end."""
    log = []
    phase1 = TrainSchedule(iterations=aug_config.aug_iterations,
                           batch_size=schedule.batch_size,
                           learning_rate=schedule.learning_rate,
                           seed=schedule.seed, mode=schedule.mode,
                           max_actions=schedule.max_actions,
                           log_every=schedule.log_every)
    train_follower(model, list(synthetic) + list(original), graphs, phase1, log=log)
    if checkpoint_hook:
        checkpoint_hook("phase1", model)
    phase2 = TrainSchedule(iterations=aug_config.finetune_iterations,
                           batch_size=schedule.batch_size,
                           learning_rate=schedule.learning_rate,
                           seed=schedule.seed + 1, mode=schedule.mode,
                           max_actions=schedule.max_actions,
                           log_every=schedule.log_every)
    train_follower(model, list(original), graphs, phase2, log=log)
    if checkpoint_hook:
        checkpoint_hook("final", model)
    return log


# -- evaluation agents ---------------------------------------------------------

def greedy_agent(follower_model, config):
    policies = {}

    def agent(example, graph):
        if graph.environment_id not in policies:
            policies[graph.environment_id] = FollowerInference(follower_model, graph)
        return greedy_follow(policies[graph.environment_id], example.instruction,
                             example.route.states[0], config)
    return agent


def pragmatic_agent(follower_model, speaker_model, config, *, sequential=False):
    policies = {}

    def agent(example, graph):
        if graph.environment_id not in policies:
            policies[graph.environment_id] = FollowerInference(follower_model, graph)
        policy = policies[graph.environment_id]
        outcome = state_factored_search(policy, example.instruction,
                                        example.route.states[0], config,
                                        record_trace=sequential)
        selected = pragmatic_select(outcome.candidates, speaker_model,
                                    example.instruction, graph, config)
        if sequential:
            return sequential_challenge_trajectory(outcome.trace, selected, graph)
        return selected.route
    return agent


# -- sequential physically plausible trajectory ---------------------------------

def sequential_challenge_trajectory(trace, selected, graph):
    """Replay the search's expansions as one connected walk.

    Between expansions of different routes the agent backtracks to the
    closest common ancestor state (longest common prefix) and walks forward
    along the next route's prefix.  It finally walks (shortest path) to the
    selected route's end node and stops there, so the end state matches the
    pragmatic selection exactly.
    """
    if not trace:
        raise ValueError("empty search trace")
    walk = [trace[0][0].node]
    current = trace[0]
    for states in trace[1:]:
        lcp = 0
        while lcp < min(len(current), len(states)) and current[lcp] == states[lcp]:
            lcp += 1
        for s in reversed(current[lcp - 1:-1]):
            _walk_to(walk, s.node)
        for s in states[lcp:]:
            _walk_to(walk, s.node)
        current = states
    goal = selected.route.final_node
    for node in shortest_path(graph, walk[-1], goal)[1:]:
        _walk_to(walk, node)

    states = [AgentState(walk[0], _walk_heading(graph, walk, 0))]
    actions = []
    for i, node in enumerate(walk[1:], start=1):
        states.append(AgentState(node, _walk_heading(graph, walk, i)))
        actions.append(node)
    final_heading = selected.route.states[-1].heading
    states.append(AgentState(goal, final_heading, completed=True))
    actions.append(STOP)
    return Route(tuple(states), tuple(actions))


def _walk_to(walk, node):
    if node != walk[-1]:
        walk.append(node)


def _walk_heading(graph, walk, i):
    if i + 1 < len(walk):
        return worldgen.heading_bin(graph.edge_heading(walk[i], walk[i + 1]))
    if i > 0:
        return worldgen.heading_bin(graph.edge_heading(walk[i - 1], walk[i]))
    return 0


# -- ablation grid ---------------------------------------------------------------

GRID_ROWS = ("baseline_greedy", "augmented_greedy", "baseline_pragmatic",
             "augmented_pragmatic")


def run_ablation_grid(models, bundle, config, *, k_values=(1, 2, 5, 10, 20, 40),
                      lambda_values=(0.0, 0.5, 0.9, 0.95, 1.0), threshold=3.0,
                      workers=1):
    """The 4-row x 2-split component grid plus K and lambda sweeps.

    ``models`` maps {"baseline": FollowerModel, "augmented": FollowerModel,
    "speaker": SpeakerModel}.  Returns a json-ready dict; sweeps are run on
    the full system (augmented follower + speaker rescoring) on val_unseen.
    """
    splits = {"val_seen": bundle.split("val_seen"),
              "val_unseen": bundle.split("val_unseen")}
    agents = {
        "baseline_greedy": greedy_agent(models["baseline"], config),
        "augmented_greedy": greedy_agent(models["augmented"], config),
        "baseline_pragmatic": pragmatic_agent(models["baseline"], models["speaker"], config),
        "augmented_pragmatic": pragmatic_agent(models["augmented"], models["speaker"], config),
    }
    grid = {}
    for row in GRID_ROWS:
        grid[row] = {}
        for split_name, examples in splits.items():
            report = evaluate(agents[row], examples, bundle.graphs, threshold,
                              workers=workers)
            grid[row][split_name] = _summary(report)

    sweeps = sweep_k_lambda(models["augmented"], models["speaker"],
                            splits["val_unseen"], bundle.graphs, config,
                            k_values=k_values, lambda_values=lambda_values,
                            threshold=threshold)
    return {"format_version": 1, "grid": grid, "k_sweep": sweeps["k_sweep"],
            "lambda_sweep": sweeps["lambda_sweep"]}


def sweep_k_lambda(follower_model, speaker_model, examples, graphs, config, *,
                   k_values, lambda_values, threshold):
    """One search pass per instruction (snapshots give every K); speaker
    scores are computed once per candidate and reused across K and lambda."""
    k_values = sorted(set(k_values))
    max_k = max(k_values + [config.num_candidates])
    search_cfg = PragmaticConfig(num_candidates=max_k,
                                 speaker_weight=config.speaker_weight,
                                 max_route_actions=config.max_route_actions)
    policies = {}
    per_example = []
    for ex in examples:
        graph = graphs[ex.environment_id]
        if ex.environment_id not in policies:
            policies[ex.environment_id] = FollowerInference(follower_model, graph)
        outcome = state_factored_search(policies[ex.environment_id], ex.instruction,
                                        ex.route.states[0], search_cfg,
                                        snapshot_ks=k_values)
        scored_full = score_candidates(outcome.candidates, speaker_model,
                                       ex.instruction, graph, search_cfg)
        by_states = {sc_route.route.states: sc_route for sc_route in scored_full}

        def scored_for(cands):
            out = []
            for c in cands:
                hit = by_states.get(c.as_route().states)
                if hit is None:
                    hit = score_candidates([c], speaker_model, ex.instruction,
                                           graph, search_cfg)[0]
                    by_states[hit.route.states] = hit
                out.append(hit)
            return out

        per_example.append((ex, {k: scored_for(outcome.snapshots[k]) for k in k_values}))

    selections = {(k, lam): {} for k in k_values for lam in lambda_values}
    for ex, by_k in per_example:
        for k in k_values:
            for lam in lambda_values:
                selections[(k, lam)][ex.example_id] = select_best(by_k[k], lam).route

    def report_for(k, lam):
        chosen = selections[(k, lam)]
        rep = evaluate(lambda ex, g: chosen[ex.example_id],
                       [ex for ex, _ in per_example], graphs, threshold)
        return _summary(rep)

    lam_star = config.speaker_weight
    k_sweep = [{"K": k, "lambda": lam_star, **report_for(k, lam_star)}
               for k in k_values]
    lambda_sweep = [{"K": max(k_values), "lambda": lam,
                     **report_for(max(k_values), lam)} for lam in lambda_values]
    return {"k_sweep": k_sweep, "lambda_sweep": lambda_sweep}


def _summary(report):
    return {"NE": round(report.ne, 4), "SR": round(report.sr, 4),
            "OSR": round(report.osr, 4), "TL": round(report.tl, 4),
            "num_episodes": report.num_episodes}


def format_grid_table(result):
    """Aligned-column text rendering of an ablation grid result."""
    lines = []
    header = f"{'system':<22} {'split':<11} {'NE':>7} {'SR':>7} {'OSR':>7} {'TL':>8}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in GRID_ROWS:
        for split_name in ("val_seen", "val_unseen"):
            s = result["grid"][row][split_name]
            lines.append(f"{row:<22} {split_name:<11} {s['NE']:>7.3f} {s['SR']:>7.3f} "
                         f"{s['OSR']:>7.3f} {s['TL']:>8.2f}")
    lines.append("")
    lines.append("K sweep (val_unseen, full system)")
    for s in result["k_sweep"]:
        lines.append(f"  K={s['K']:>3} lambda={s['lambda']:.2f} SR={s['SR']:.3f} "
                     f"NE={s['NE']:.3f} OSR={s['OSR']:.3f}")
    lines.append("lambda sweep (val_unseen, full system)")
    for s in result["lambda_sweep"]:
        lines.append(f"  K={s['K']:>3} lambda={s['lambda']:.2f} SR={s['SR']:.3f} "
                     f"NE={s['NE']:.3f} OSR={s['OSR']:.3f}")
    return "\n".join(lines) + "\n"
