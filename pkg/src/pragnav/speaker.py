"""The speaker: encodes a route's observation/action sequence and produces or
scores token sequences for it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .follower import (ModelHyper, ObservationProvider, TrainSchedule,
                       _logsumexp, _np_softmax)
from .instructions import BOS, EOS, MAX_INSTRUCTION_TOKENS, PAD, UNK
from .optim import Adam
from .params import init_lstm, init_param
from .worldgen import STOP, validate_route


def init_speaker_params(seed, hyper):
    H, E, F = hyper.hidden_size, hyper.embed_size, hyper.feat_size
    dt = hyper.np_dtype
    params = {"embed": init_param(seed, "embed", (hyper.vocab_size, E), dt)}
    params.update(init_lstm(seed, "enc", 2 * F, H, dt))
    params.update(init_lstm(seed, "dec", E + H, H, dt))
    params["out.W"] = init_param(seed, "out.W", (hyper.vocab_size, H), dt)
    params["out.b"] = init_param(seed, "out.b", (hyper.vocab_size,), dt)
    return params


@dataclass
class SpeakerModel:
    hyper: ModelHyper
    params: dict

    @classmethod
    def create(cls, seed, hyper):
        return cls(hyper=hyper, params=init_speaker_params(seed, hyper))


def route_step_features(provider, route):
    """Per-action encoder inputs: mean of the 36 view features at the step's
    state, concatenated with the taken action's direction encoding (zero for
    Stop)."""
    feats = []
    for k, action in enumerate(route.actions):
        state = route.states[k]
        mean_views = provider.mean_views(state)
        if action == STOP:
            u = np.zeros_like(mean_views)
        else:
            obs = provider.get(state)
            u = obs.nav[obs.targets.index(action)]
        feats.append(np.concatenate([mean_views, u]))
    return feats


# -- tape path -----------------------------------------------------------------

def encode_route_tape(model, provider, route):
    p = model.params
    H = model.hyper.hidden_size
    dt = model.hyper.np_dtype
    h = ad.constant(np.zeros(H, dtype=dt))
    c = ad.constant(np.zeros(H, dtype=dt))
    outs = []
    for feat in route_step_features(provider, route):
        x = ad.constant(np.asarray(feat, dtype=dt))
        h, c = ad.lstm_cell(p["enc.W"], p["enc.b"], [x, h], c)
        outs.append(h)
    return ad.stack_rows(outs), h, c


def instruction_loss_tape(model, provider, route, tokens):
    """Teacher-forced negative log-likelihood of ``tokens`` (EOS included)."""
    p = model.params
    memory, h, c = encode_route_tape(model, provider, route)
    prev = BOS
    losses = []
    for tok in _scored_tokens(tokens):
        emb = ad.embed_row(p["embed"], prev)
        beta = ad.softmax(ad.matmul(memory, h))
        ctx = ad.matmul_tv(memory, beta)
        h, c = ad.lstm_cell(p["dec.W"], p["dec.b"], [emb, ctx, h], c)
        logits = ad.add(ad.matmul(p["out.W"], h), p["out.b"])
        losses.append(ad.scale(ad.log_softmax_pick(logits, tok), -1.0))
        prev = tok
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    return total, len(losses)


def _scored_tokens(tokens):
    """Tokens up to and including the first EOS; padding after EOS is ignored."""
    out = []
    for tok in tokens:
        out.append(tok)
        if tok == EOS:
            return out
    raise ValueError("instruction must be EOS-terminated")


# -- inference path --------------------------------------------------------------

class SpeakerInference:
    def __init__(self, model, graph):
        self.model = model
        self.w = {k: t.data for k, t in model.params.items()}
        self.provider = ObservationProvider(graph, dtype=model.hyper.np_dtype)

    def encode(self, route):
        w = self.w
        H = self.model.hyper.hidden_size
        dt = self.model.hyper.np_dtype
        feats = route_step_features(self.provider, route)
        h = np.zeros(H, dtype=dt)
        c = np.zeros(H, dtype=dt)
        outs = np.empty((len(feats), H), dtype=dt)
        for t, feat in enumerate(feats):
            z = np.concatenate([feat.astype(dt), h])
            hc = kernels.lstm_infer(w["enc.W"], w["enc.b"], z, c)
            h, c = hc[:H], hc[H:]
            outs[t] = h
        return outs, h, c

    def step(self, memory, h, c, prev_token):
        w = self.w
        H = self.model.hyper.hidden_size
        beta = _np_softmax(memory @ h)
        ctx = memory.T @ beta
        z = np.concatenate([w["embed"][prev_token], ctx, h])
        hc = kernels.lstm_infer(w["dec.W"], w["dec.b"], z, c)
        h, c = hc[:H], hc[H:]
        logits = (w["out.W"] @ h + w["out.b"]).astype(np.float64)
        return h, c, logits


def speaker_logprob(model, tokens, route, graph):
    """Sum of per-token conditional log-probabilities (EOS included)."""
    validate_route(graph, route)
    if any(t >= model.hyper.vocab_size or t < 0 for t in tokens):
        raise ValueError("token id out of vocabulary")
    inf = SpeakerInference(model, graph)
    memory, h, c = inf.encode(route)
    total = 0.0
    prev = BOS
    for tok in _scored_tokens(tokens):
        h, c, logits = inf.step(memory, h, c, prev)
        total += float(logits[tok] - _logsumexp(logits))
        prev = tok
    return total


def speaker_generate(model, route, graph, *, max_tokens=MAX_INSTRUCTION_TOKENS):
    """Greedy decoding; ties resolve to the lowest token id, PAD/BOS/UNK are
    never emitted, and EOS is forced at the length cap."""
    validate_route(graph, route)
    inf = SpeakerInference(model, graph)
    memory, h, c = inf.encode(route)
    tokens = []
    prev = BOS
    while len(tokens) < max_tokens:
        if len(tokens) == max_tokens - 1:
            tokens.append(EOS)
            break
        h, c, logits = inf.step(memory, h, c, prev)
        logits[[PAD, BOS, UNK]] = -np.inf
        tok = int(np.argmax(logits))
        tokens.append(tok)
        if tok == EOS:
            break
        prev = tok
    return tokens


# -- training --------------------------------------------------------------------

def train_speaker(model, examples, graphs, schedule, *, val_examples=None,
                  log=None, optimizer=None):
    """Maximum-likelihood training with teacher forcing; logs per-token loss
    and, when a validation set is given, validation perplexity."""
    if not examples:
        raise ValueError("empty training set")
    providers = {eid: ObservationProvider(g, dtype=model.hyper.np_dtype)
                 for eid, g in graphs.items()}
    rng = np.random.default_rng([schedule.seed, 0x5BEA])
    opt = optimizer or Adam(model.params, lr=schedule.learning_rate)
    log = [] if log is None else log
    for it in range(schedule.iterations):
        batch = [examples[int(i)] for i in
                 rng.integers(len(examples), size=schedule.batch_size)]

        def builder(params):
            total, count = None, 0
            for ex in batch:
                loss, n = instruction_loss_tape(
                    model, providers[ex.environment_id], ex.route, ex.instruction)
                total = loss if total is None else ad.add(total, loss)
                count += n
            return ad.scale(total, 1.0 / count)

        value, grads = ad.forward_backward(builder, model.params)
        opt.step(model.params, grads)
        if schedule.log_every and (it % schedule.log_every == 0
                                   or it == schedule.iterations - 1):
            entry = {"iteration": it, "loss": round(value, 6)}
            log.append(entry)
    if val_examples:
        log.append({"val_perplexity": round(perplexity(model, val_examples, graphs), 4)})
    return log


def perplexity(model, examples, graphs):
    """exp of the mean per-token negative log-likelihood."""
    total, count = 0.0, 0
    infs = {}
    for ex in examples:
        if ex.environment_id not in infs:
            infs[ex.environment_id] = SpeakerInference(model, graphs[ex.environment_id])
        inf = infs[ex.environment_id]
        memory, h, c = inf.encode(ex.route)
        prev = BOS
        for tok in _scored_tokens(ex.instruction):
            h, c, logits = inf.step(memory, h, c, prev)
            total -= float(logits[tok] - _logsumexp(logits))
            count += 1
            prev = tok
    return float(np.exp(total / count))
