"""Dataset assembly and on-disk formats (environment JSON, JSON-lines examples)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import worldgen
from .instructions import Vocabulary, oracle_instruction
from .worldgen import (AgentState, Landmark, NavGraph, Route, generate_environment,
                       qualifying_pairs, route_from_path, shortest_path)

FORMAT_VERSION = 1

SPLITS = ("train", "val_seen", "val_unseen")


@dataclass(frozen=True)
class DatasetExample:
    example_id: str
    environment_id: int
    split: str
    provenance: str           # "oracle" | "speaker_synthetic"
    route: Route
    instruction: list


@dataclass
class DatasetBundle:
    examples: list
    graphs: dict              # environment_id -> NavGraph
    vocab: Vocabulary

    def split(self, name):
        return [ex for ex in self.examples if ex.split == name]

    def train_graphs(self):
        train_ids = {ex.environment_id for ex in self.examples if ex.split != "val_unseen"}
        return {eid: g for eid, g in self.graphs.items() if eid in train_ids}


def build_dataset(num_envs, routes_per_env, seed, split_fracs, *, env_size=30,
                  ambiguity=0.5, num_classes=worldgen.DEFAULT_LANDMARK_CLASSES,
                  paraphrases=(3, 1)):
    """Generate environments, sample shortest-path routes, and emit oracle
    instructions, split the R2R way: val_unseen holds out whole environments,
    val_seen holds out routes inside training environments.

    ``split_fracs`` is (train route fraction, val_seen route fraction,
    val_unseen environment fraction); ``paraphrases`` gives the number of
    oracle instructions per train route and per validation route.
    """
    f_train, f_vs, f_unseen = split_fracs
    if f_train + f_vs > 1.0 + 1e-9 or min(split_fracs) < 0:
        raise ValueError(f"bad split fractions {split_fracs}")
    if num_envs < 3:
        raise ValueError("need at least 3 environments")

    graphs = {
        eid: generate_environment(_env_seed(seed, eid), env_size, ambiguity,
                                  num_classes=num_classes, environment_id=eid)
        for eid in range(num_envs)
    }
    rng = np.random.default_rng([int(seed), 0xD5])
    order = [int(e) for e in rng.permutation(num_envs)]
    n_unseen = max(1, math.ceil(f_unseen * num_envs))
    unseen_ids = set(order[:n_unseen])
    if len(unseen_ids) >= num_envs:
        raise ValueError("val_unseen fraction leaves no training environments")

    vocab = Vocabulary.default()
    examples = []
    for eid in range(num_envs):
        graph = graphs[eid]
        routes = _sample_routes(graph, routes_per_env, seed)
        if eid in unseen_ids:
            tags = ["val_unseen"] * len(routes)
        else:
            n_vs = int(round(f_vs * len(routes)))
            n_tr = len(routes) - n_vs
            tags = ["train"] * n_tr + ["val_seen"] * n_vs
        for ridx, (route, tag) in enumerate(zip(routes, tags)):
            count = paraphrases[0] if tag == "train" else paraphrases[1]
            for p in range(count):
                tokens = oracle_instruction(graph, route,
                                            _para_seed(seed, eid, ridx, p), vocab)
                examples.append(DatasetExample(
                    example_id=f"env{eid:03d}_r{ridx:03d}_p{p}",
                    environment_id=eid, split=tag, provenance="oracle",
                    route=route, instruction=tokens))

    for name in SPLITS:
        if not any(ex.split == name for ex in examples):
            raise ValueError(f"split {name!r} is empty under this configuration")
    return DatasetBundle(examples=examples, graphs=graphs, vocab=vocab)


def _env_seed(seed, eid):
    return int(seed) * 1_000_003 + eid


def _para_seed(seed, eid, ridx, p):
    return ((int(seed) * 1_000_003 + eid) * 1_009 + ridx) * 11 + p


def _sample_routes(graph, count, seed):
    """Distinct (start, goal) shortest-path routes, 5-7 nodes each."""
    pairs = qualifying_pairs(graph)
    if not pairs:
        raise ValueError(f"environment {graph.environment_id} has no 5-7 node routes")
    rng = np.random.default_rng([int(seed), graph.environment_id, 0xA11])
    routes, used = [], set()
    attempts = 0
    while len(routes) < count:
        attempts += 1
        if attempts > 60 * count:
            raise ValueError(f"cannot sample {count} distinct routes "
                             f"in environment {graph.environment_id}")
        start, goal = pairs[int(rng.integers(len(pairs)))]
        if (start, goal) in used:
            continue
        used.add((start, goal))
        path = shortest_path(graph, start, goal)
        heading = int(rng.integers(worldgen.NUM_HEADINGS))
        routes.append(route_from_path(graph, path, start_heading=heading))
    return routes


# ---------------------------------------------------------------------------
# serialization

def graph_to_json(graph):
    return {
        "format_version": FORMAT_VERSION,
        "environment_id": graph.environment_id,
        "num_landmark_classes": graph.num_landmark_classes,
        "nodes": [{"id": n, "pos": [graph.positions[n][0], graph.positions[n][1]]}
                  for n in graph.nodes],
        "edges": sorted([a, b] for a in graph.nodes for b in graph.adjacency[a] if a < b),
        "landmarks": {str(n): [{"class_id": lm.class_id, "heading": lm.heading}
                               for lm in lms]
                      for n, lms in sorted(graph.landmarks.items())},
    }


def graph_from_json(doc):
    _require_version(doc)
    positions = {n["id"]: (n["pos"][0], n["pos"][1]) for n in doc["nodes"]}
    adjacency = {n: [] for n in positions}
    for a, b in doc["edges"]:
        adjacency[a].append(b)
        adjacency[b].append(a)
    landmarks = {int(n): tuple(Landmark(lm["class_id"], lm["heading"]) for lm in lms)
                 for n, lms in doc["landmarks"].items()}
    return NavGraph(environment_id=doc["environment_id"], positions=positions,
                    adjacency={n: tuple(sorted(ns)) for n, ns in adjacency.items()},
                    landmarks=landmarks,
                    num_landmark_classes=doc["num_landmark_classes"])


def route_to_json(route):
    return {
        "states": [[s.node, s.heading, 1 if s.completed else 0] for s in route.states],
        "actions": list(route.actions),
    }


def route_from_json(doc):
    states = tuple(AgentState(n, h, bool(c)) for n, h, c in doc["states"])
    return Route(states, tuple(doc["actions"]))


def example_to_json(ex):
    return {
        "format_version": FORMAT_VERSION,
        "example_id": ex.example_id,
        "environment_id": ex.environment_id,
        "split": ex.split,
        "provenance": ex.provenance,
        "route": route_to_json(ex.route),
        "instruction": list(ex.instruction),
    }


def example_from_json(doc):
    _require_version(doc)
    return DatasetExample(
        example_id=doc["example_id"], environment_id=doc["environment_id"],
        split=doc["split"], provenance=doc["provenance"],
        route=route_from_json(doc["route"]), instruction=list(doc["instruction"]))


def vocab_to_json(vocab):
    return {"format_version": FORMAT_VERSION, "tokens": list(vocab.tokens)}


def vocab_from_json(doc):
    _require_version(doc)
    return Vocabulary(tuple(doc["tokens"]))


def _require_version(doc):
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {doc.get('format_version')!r}")


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_examples(examples, path):
    with open(path, "w") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_json(ex), sort_keys=True,
                                separators=(",", ":")))
            fh.write("\n")


def read_examples(path):
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(example_from_json(json.loads(line)))
    return out
