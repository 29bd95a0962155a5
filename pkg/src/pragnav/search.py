"""Candidate route generation (state-factored search) and pragmatic selection.

Search states are (node, heading, completed) triples.  The best route found so
far to each state is cached; the globally highest-scoring unexpanded partial
route is expanded by every legal action, and a cache entry is replaced only on
strict score improvement, which also re-queues the state for expansion.  The
procedure ends once K routes ending in distinct states have taken Stop, or no
unexpanded candidates remain.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .follower import FollowerInference
from .speaker import speaker_logprob
from .worldgen import STOP, AgentState, Route


@dataclass(frozen=True)
class PragmaticConfig:
    num_candidates: int = 40          # K
    speaker_weight: float = 0.95      # lambda
    max_route_actions: int = 20

    def __post_init__(self):
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be >= 1")
        if not 0.0 <= self.speaker_weight <= 1.0:
            raise ValueError("speaker_weight must be in [0, 1]")


class SearchRoute:
    __slots__ = ("states", "score", "ctx", "expanded", "order")

    def __init__(self, states, score, ctx, order):
        self.states = states
        self.score = score
        self.ctx = ctx
        self.expanded = False
        self.order = order

    @property
    def end(self):
        return self.states[-1]

    def as_route(self):
        actions = tuple(STOP if s.completed else s.node for s in self.states[1:])
        return Route(self.states, actions)


@dataclass(frozen=True)
class ScoredRoute:
    route: Route
    follower_logprob: float
    speaker_logprob: float
    combined: float
    speaker_weight: float


@dataclass
class SearchOutcome:
    candidates: list              # completed SearchRoutes, first-completion order
    trace: list                   # expanded state tuples, in expansion order
    snapshots: dict               # k -> candidate list of the equivalent K=k run


def state_factored_search(policy, tokens, start, config, *, record_trace=False,
                          snapshot_ks=()):
    """Generate up to K completed candidate routes for an instruction.

    ``policy`` provides encode/initial/step/chose plus a ``provider``
    (FollowerInference does).  ``snapshot_ks`` asks for the candidate lists
    the search would have returned for smaller K values; the search is
    deterministic, so the snapshot taken when the k-th distinct completed
    state appears is exactly the K=k run's result.
    """
    K = config.num_candidates
    enc = policy.encode(tokens)
    counter = 0
    root = SearchRoute((start,), 0.0, policy.initial(enc), counter)

    partial = {start: root}
    completed = {}
    completion_order = []
    heap = [(-0.0, counter, root)]
    trace = []
    pending_ks = sorted(set(snapshot_ks))
    snapshots = {}

    while len(completed) < K and heap:
        _, _, route = heapq.heappop(heap)
        if route.expanded or partial.get(route.end) is not route:
            continue
        route.expanded = True
        if record_trace:
            trace.append(route.states)
        state = route.end
        stepped, logp, obs = policy.step(enc, route.ctx, state)
        at_cap = len(route.states) >= config.max_route_actions
        for idx, target in enumerate(obs.targets):
            new_score = route.score + float(logp[idx])
            assert new_score <= route.score + 1e-9, "scores must be non-increasing"
            if target == STOP:
                succ = AgentState(state.node, state.heading, completed=True)
                prev = completed.get(succ)
                if prev is None or prev.score < new_score:
                    counter += 1
                    completed[succ] = SearchRoute(route.states + (succ,), new_score,
                                                  None, counter)
                    if prev is None:
                        completion_order.append(succ)
            elif not at_cap:
                succ = AgentState(target, policy.provider.successor(state, target).heading)
                prev = partial.get(succ)
                if prev is None or prev.score < new_score:
                    counter += 1
                    new = SearchRoute(route.states + (succ,), new_score,
                                      policy.chose(stepped, obs, target), counter)
                    partial[succ] = new
                    heapq.heappush(heap, (-new_score, counter, new))
        while pending_ks and len(completed) >= pending_ks[0]:
            snapshots[pending_ks.pop(0)] = [completed[key] for key in completion_order]

    results = [completed[key] for key in completion_order]
    for k in pending_ks:              # search exhausted before reaching k
        snapshots[k] = results
    _check_search_invariants(results)
    return SearchOutcome(candidates=results, trace=trace, snapshots=snapshots)


def search_candidates(policy, tokens, start, config):
    return state_factored_search(policy, tokens, start, config).candidates


def _check_search_invariants(results):
    ends = set()
    for r in results:
        assert r.end.completed and r.end not in ends
        ends.add(r.end)
        seen = set()
        for s in r.states:
            assert s not in seen, "route revisits a state"
            seen.add(s)
        assert r.score <= 1e-9, "log-probability score must be <= 0"


def follower_policy(model, graph):
    return FollowerInference(model, graph)


def greedy_follow(policy, tokens, start, config):
    """Argmax rollout until Stop or the action cap (Stop is then forced).
    Ties prefer moves in canonical direction order over Stop."""
    enc = policy.encode(tokens)
    ctx = policy.initial(enc)
    states = [start]
    actions = []
    state = start
    while True:
        stepped, logp, obs = policy.step(enc, ctx, state)
        if len(actions) == config.max_route_actions - 1:
            choice = 0
        else:
            choice = max(range(len(obs.targets)),
                         key=lambda j: (logp[j], 1 if j > 0 else 0, -j))
        if obs.targets[choice] == STOP:
            states.append(AgentState(state.node, state.heading, completed=True))
            actions.append(STOP)
            return Route(tuple(states), tuple(actions))
        target = obs.targets[choice]
        ctx = policy.chose(stepped, obs, target)
        state = policy.provider.successor(state, target)
        states.append(state)
        actions.append(target)


def score_candidates(candidates, speaker_model, tokens, graph, config):
    """Attach speaker scores and the Eq-style combined score to candidates."""
    scored = []
    for cand in candidates:
        route = cand.as_route()
        s_lp = speaker_logprob(speaker_model, tokens, route, graph)
        lam = config.speaker_weight
        scored.append(ScoredRoute(route=route, follower_logprob=cand.score,
                                  speaker_logprob=s_lp,
                                  combined=lam * s_lp + (1.0 - lam) * cand.score,
                                  speaker_weight=lam))
    return scored


def select_best(scored, speaker_weight=None):
    """Highest combined score; ties go to the higher follower score, then to
    the earlier candidate."""
    if not scored:
        raise ValueError("no candidate routes to select from")
    best, best_key = None, None
    for pos, sr in enumerate(scored):
        lam = sr.speaker_weight if speaker_weight is None else speaker_weight
        combined = lam * sr.speaker_logprob + (1.0 - lam) * sr.follower_logprob
        key = (combined, sr.follower_logprob, -pos)
        if best is None or key > best_key:
            best = ScoredRoute(sr.route, sr.follower_logprob, sr.speaker_logprob,
                               combined, lam)
            best_key = key
    return best


def pragmatic_select(candidates, speaker_model, tokens, graph, config):
    """Rescore candidates with the speaker and return the route maximizing
    lambda * log P_S + (1 - lambda) * log P_F."""
    return select_best(score_candidates(candidates, speaker_model, tokens,
                                        graph, config))
