"""The instruction follower: panoramic observations, attention decoder with
bilinear action scoring, and student-forcing training.

Two execution paths share the kernel backend: a tape path used for training
and gradient checks, and a tape-free numpy path used for scoring, greedy
rollouts and search (tested to produce identical distributions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .optim import Adam
from .params import init_lstm, init_param
from .worldgen import (HEADING_STEP, NUM_HEADINGS, STOP, AgentState, Route,
                       bin_angle, heading_bin, relative_angle, sector_index,
                       validate_route, wrap_angle)

ELEVATIONS = (-HEADING_STEP, 0.0, HEADING_STEP)   # 3 rows x 12 headings = 36 views
NUM_VIEWS = len(ELEVATIONS) * NUM_HEADINGS


class PanoObservation(NamedTuple):
    views: np.ndarray        # (36, F) appearance + orientation per view angle
    nav: np.ndarray          # (D+1, F) direction encodings; row 0 is Stop (all zero)
    targets: tuple           # action targets; targets[0] == STOP, then neighbor ids


def observe(graph, state, dtype=np.float64):
    """Panoramic features at a state.

    View slot (row r, sector k) covers elevation ELEVATIONS[r] and the 30-degree
    sector centred k sectors counterclockwise from the agent heading.  Only the
    middle elevation row carries landmark one-hots (worlds are planar).
    Navigable encodings point at each neighbor; Stop is the zero vector.
    """
    L = graph.num_landmark_classes
    F = L + 4
    views = np.zeros((NUM_VIEWS, F), dtype=dtype)
    for r, elev in enumerate(ELEVATIONS):
        for k in range(NUM_HEADINGS):
            psi = k * HEADING_STEP
            views[r * NUM_HEADINGS + k, L:] = (math.sin(psi), math.cos(psi),
                                               math.sin(elev), math.cos(elev))
    for lm in graph.landmarks.get(state.node, ()):
        k = sector_index(relative_angle(lm.heading, state.heading))
        views[NUM_HEADINGS + k, lm.class_id] = 1.0   # middle elevation row

    neighbors = sorted(
        graph.adjacency[state.node],
        key=lambda nb: (sector_index(relative_angle(graph.edge_heading(state.node, nb),
                                                    state.heading)), nb))
    nav = np.zeros((len(neighbors) + 1, F), dtype=dtype)
    for j, nb in enumerate(neighbors, start=1):
        rel = relative_angle(graph.edge_heading(state.node, nb), state.heading)
        for lm in graph.landmarks.get(state.node, ()):
            if abs(wrap_angle(lm.heading - bin_angle(state.heading) - rel)) <= HEADING_STEP / 2.0:
                nav[j, lm.class_id] = 1.0
        nav[j, L:] = (math.sin(rel), math.cos(rel), 0.0, 1.0)
    return PanoObservation(views, nav, (STOP,) + tuple(neighbors))


class ObservationProvider:
    """Memoizes observations and goal-distance tables for one graph."""

    def __init__(self, graph, dtype=np.float32):
        self.graph = graph
        self.dtype = dtype
        self._obs = {}
        self._mean_views = {}

    def get(self, state):
        key = (state.node, state.heading)
        if key not in self._obs:
            self._obs[key] = observe(self.graph, AgentState(*key), dtype=self.dtype)
        return self._obs[key]

    def mean_views(self, state):
        key = (state.node, state.heading)
        if key not in self._mean_views:
            self._mean_views[key] = self.get(state).views.mean(axis=0)
        return self._mean_views[key]

    def successor(self, state, action):
        if action == STOP:
            return AgentState(state.node, state.heading, completed=True)
        return AgentState(action, heading_bin(self.graph.edge_heading(state.node, action)))

    def supervision_index(self, state, goal, obs=None):
        """Index (into the observation's action list) of a shortest-path
        action from ``state`` toward ``goal``; Stop when already there."""
        if state.node == goal:
            return 0
        obs = obs or self.get(state)
        dist = self.graph.hop_distances(goal)
        best = min(self.graph.adjacency[state.node], key=lambda nb: (dist[nb], nb))
        return obs.targets.index(best)


@dataclass
class ModelHyper:
    vocab_size: int
    hidden_size: int = 64
    embed_size: int = 32
    attention_size: int = 64
    num_landmark_classes: int = 24
    dtype: str = "float32"

    @property
    def feat_size(self):
        return self.num_landmark_classes + 4

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_json(self):
        return {"vocab_size": self.vocab_size, "hidden_size": self.hidden_size,
                "embed_size": self.embed_size, "attention_size": self.attention_size,
                "num_landmark_classes": self.num_landmark_classes, "dtype": self.dtype}

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)


def init_follower_params(seed, hyper):
    H, E, A, F = (hyper.hidden_size, hyper.embed_size, hyper.attention_size,
                  hyper.feat_size)
    dt = hyper.np_dtype
    params = {"embed": init_param(seed, "embed", (hyper.vocab_size, E), dt)}
    params.update(init_lstm(seed, "enc", E, H, dt))
    params.update(init_lstm(seed, "dec", 2 * F + H, H, dt))
    for name, shape in (("att.W1", (A, H)), ("att.W2", (A, F)),
                        ("act.W3", (A, H)), ("act.W4", (A, F))):
        params[name] = init_param(seed, name, shape, dt)
    return params


@dataclass
class FollowerModel:
    hyper: ModelHyper
    params: dict

    @classmethod
    def create(cls, seed, hyper):
        return cls(hyper=hyper, params=init_follower_params(seed, hyper))


# -- tape path (training / gradient checks) -----------------------------------

def encode_instruction_tape(model, tokens):
    p = model.params
    H = model.hyper.hidden_size
    dt = model.hyper.np_dtype
    h = ad.constant(np.zeros(H, dtype=dt))
    c = ad.constant(np.zeros(H, dtype=dt))
    outs = []
    for tok in tokens:
        x = ad.embed_row(p["embed"], tok)
        h, c = ad.lstm_cell(p["enc.W"], p["enc.b"], [x, h], c)
        outs.append(h)
    return ad.stack_rows(outs), h, c


def follower_step_tape(model, memory, h, c, u_prev, obs):
    """One decoder step on the tape; returns (h, c, action_logits, alpha)."""
    p = model.params
    dt = model.hyper.np_dtype
    views_t = ad.constant(np.ascontiguousarray(obs.views.T, dtype=dt))
    q = ad.matmul(p["att.W1"], h)
    scores = ad.matmul_tv(ad.matmul(p["att.W2"], views_t), q)
    alpha = ad.softmax(scores)
    v_att = ad.matmul(views_t, alpha)

    beta = ad.softmax(ad.matmul(memory, h))
    ctx = ad.matmul_tv(memory, beta)

    h, c = ad.lstm_cell(p["dec.W"], p["dec.b"], [v_att, ctx, u_prev, h], c)

    nav_t = ad.constant(np.ascontiguousarray(obs.nav.T, dtype=dt))
    r = ad.matmul(p["act.W3"], h)
    logits = ad.matmul_tv(ad.matmul(p["act.W4"], nav_t), r)
    return h, c, logits, alpha


def _zero_u(model):
    return ad.constant(np.zeros(model.hyper.feat_size, dtype=model.hyper.np_dtype))


def episode_loss_tape(model, provider, tokens, route, *, goal=None, mode="teacher",
                      rng=None, max_actions=20):
    """Summed step losses and step count for one episode.

    teacher mode replays the route's actions; student mode samples actions
    from the model and supervises each step with a shortest-path action
    toward the goal.
    """
    memory, h, c = encode_instruction_tape(model, tokens)
    state = route.states[0]
    goal = route.final_node if goal is None else goal
    u_prev = _zero_u(model)
    losses = []
    steps = route.actions if mode == "teacher" else range(max_actions)
    for t, planned in enumerate(steps):
        obs = provider.get(state)
        h, c, logits, _ = follower_step_tape(model, memory, h, c, u_prev, obs)
        if mode == "teacher":
            action = planned
            target = 0 if action == STOP else obs.targets.index(action)
        else:
            target = provider.supervision_index(state, goal, obs)
            probs = _np_softmax(logits.data.astype(np.float64))
            probs /= probs.sum()
            action = obs.targets[int(rng.choice(len(probs), p=probs))]
        losses.append(ad.scale(ad.log_softmax_pick(logits, target), -1.0))
        if action == STOP:
            break
        u_prev = ad.constant(obs.nav[obs.targets.index(action)])
        state = provider.successor(state, action)
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    return total, len(losses)


def _np_softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


# -- inference path ------------------------------------------------------------

class FollowerInference:
    """Frozen-parameter fast path; caches per-state bilinear projections."""

    def __init__(self, model, graph):
        self.model = model
        self.w = {k: t.data for k, t in model.params.items()}
        self.provider = ObservationProvider(graph, dtype=model.hyper.np_dtype)
        self._proj = {}

    def encode(self, tokens):
        w = self.w
        H = self.model.hyper.hidden_size
        dt = self.model.hyper.np_dtype
        from . import kernels
        h = np.zeros(H, dtype=dt)
        c = np.zeros(H, dtype=dt)
        outs = np.empty((len(tokens), H), dtype=dt)
        for t, tok in enumerate(tokens):
            z = np.concatenate([w["embed"][tok], h])
            hc = kernels.lstm_infer(w["enc.W"], w["enc.b"], z, c)
            h, c = hc[:H], hc[H:]
            outs[t] = h
        return outs, h, c

    def _projections(self, state):
        key = (state.node, state.heading)
        if key not in self._proj:
            obs = self.provider.get(state)
            self._proj[key] = (obs, self.w["att.W2"] @ obs.views.T,
                               self.w["act.W4"] @ obs.nav.T)
        return self._proj[key]

    def initial(self, enc):
        memory, h, c = enc
        return (h, c, np.zeros(self.model.hyper.feat_size, dtype=h.dtype))

    def step(self, enc, ctx, state):
        """Advance one decoder step at ``state``; returns the new context,
        action log-probabilities, and the observation used."""
        from . import kernels
        memory, _, _ = enc
        h, c, u_prev = ctx
        w = self.w
        H = self.model.hyper.hidden_size
        obs, views_proj, nav_proj = self._projections(state)

        alpha = _np_softmax((w["att.W1"] @ h) @ views_proj)
        v_att = obs.views.T @ alpha
        beta = _np_softmax(memory @ h)
        text_ctx = memory.T @ beta
        z = np.concatenate([v_att, text_ctx, u_prev, h])
        hc = kernels.lstm_infer(w["dec.W"], w["dec.b"], z, c)
        h, c = hc[:H], hc[H:]
        logits = ((w["act.W3"] @ h) @ nav_proj).astype(np.float64)
        logp = logits - _logsumexp(logits)
        return (h, c, u_prev), logp, obs

    def chose(self, ctx, obs, action):
        """Context after committing to ``action`` from the last step."""
        h, c, _ = ctx
        return (h, c, obs.nav[obs.targets.index(action)])


def _logsumexp(x):
    m = x.max()
    return m + math.log(np.exp(x - m).sum())


def follower_logprob(model, tokens, route, graph):
    """Sum of per-action log-probabilities of the route, Stop included."""
    validate_route(graph, route)
    inf = FollowerInference(model, graph)
    enc = inf.encode(tokens)
    ctx = inf.initial(enc)
    total = 0.0
    state = route.states[0]
    for action in route.actions:
        ctx, logp, obs = inf.step(enc, ctx, state)
        idx = 0 if action == STOP else obs.targets.index(action)
        total += float(logp[idx])
        if action != STOP:
            ctx = inf.chose(ctx, obs, action)
            state = inf.provider.successor(state, action)
    return total


# -- training ------------------------------------------------------------------

@dataclass
class TrainSchedule:
    iterations: int
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    mode: str = "student"           # "student" | "teacher"
    max_actions: int = 20
    log_every: int = 100


def train_follower(model, examples, graphs, schedule, *, log=None, optimizer=None):
    """Student-forcing (or teacher-forcing) training over (instruction, route)
    examples; returns the training log as a list of dicts."""
    if not examples:
        raise ValueError("empty training set")
    providers = {eid: ObservationProvider(g, dtype=model.hyper.np_dtype)
                 for eid, g in graphs.items()}
    rng = np.random.default_rng([schedule.seed, 0xF0110])
    opt = optimizer or Adam(model.params, lr=schedule.learning_rate)
    log = [] if log is None else log
    for it in range(schedule.iterations):
        batch = [examples[int(i)] for i in
                 rng.integers(len(examples), size=schedule.batch_size)]

        def builder(params):
            total, steps = None, 0
            for ex in batch:
                loss, n = episode_loss_tape(
                    model, providers[ex.environment_id], ex.instruction, ex.route,
                    mode=schedule.mode, rng=rng, max_actions=schedule.max_actions)
                total = loss if total is None else ad.add(total, loss)
                steps += n
            return ad.scale(total, 1.0 / steps)

        value, grads = ad.forward_backward(builder, model.params)
        opt.step(model.params, grads)
        if schedule.log_every and (it % schedule.log_every == 0
                                   or it == schedule.iterations - 1):
            log.append({"iteration": it, "loss": round(value, 6)})
    return log
