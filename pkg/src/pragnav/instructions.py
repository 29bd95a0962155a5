"""Templated oracle instructions and the token vocabulary.

One clause is emitted per route action (moves and the final stop).  Each
clause names the maneuver implied by the change of heading and, when one is
visible in the 90-degree frontal cone at the segment start, the nearest
landmark.  Clauses end with the separator token "." and instructions end
with EOS.
"""

from __future__ import annotations

import math

import numpy as np

from .worldgen import (NUM_HEADINGS, STOP, bin_angle, relative_angle,
                       wrap_angle)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
SEPARATOR = "."
MAX_INSTRUCTION_TOKENS = 60

LANDMARK_NAMES = (
    "basket", "bench", "cabinet", "chair", "clock", "couch", "desk", "door",
    "fern", "fountain", "fridge", "lamp", "mirror", "painting", "piano",
    "plant", "rug", "shelf", "sink", "sofa", "statue", "stove", "table",
    "vase",
)

# maneuver -> (templates with a landmark slot, landmark-free templates);
# three synonymous variants each so the speaker has real language modeling
# to learn rather than a one-to-one code.
TEMPLATES = {
    "forward": (
        ("go forward to the {}", "go forward past the {}", "walk straight past the {}"),
        ("go forward", "walk straight ahead", "continue forward"),
    ),
    "slight_left": (
        ("bear left at the {}", "angle left at the {}", "take a slight left at the {}"),
        ("bear left", "angle left", "take a slight left"),
    ),
    "left": (
        ("turn left at the {}", "take a left at the {}", "go left at the {}"),
        ("turn left", "take a left", "go left"),
    ),
    "sharp_left": (
        ("turn sharply left at the {}", "make a sharp left at the {}", "hook left at the {}"),
        ("turn sharply left", "make a sharp left", "hook left"),
    ),
    "around": (
        ("turn around at the {}", "double back at the {}", "turn back at the {}"),
        ("turn around", "double back", "turn back"),
    ),
    "sharp_right": (
        ("turn sharply right at the {}", "make a sharp right at the {}", "hook right at the {}"),
        ("turn sharply right", "make a sharp right", "hook right"),
    ),
    "right": (
        ("turn right at the {}", "take a right at the {}", "go right at the {}"),
        ("turn right", "take a right", "go right"),
    ),
    "slight_right": (
        ("bear right at the {}", "angle right at the {}", "take a slight right at the {}"),
        ("bear right", "angle right", "take a slight right"),
    ),
    "stop": (
        ("stop at the {}", "wait at the {}", "stop near the {}"),
        ("stop", "stop here", "wait here"),
    ),
}

_MANEUVER_BY_DELTA = {
    0: "forward", 1: "slight_left", 2: "slight_left", 3: "left",
    4: "sharp_left", 5: "sharp_left", 6: "around",
    7: "sharp_right", 8: "sharp_right", 9: "right",
    10: "slight_right", 11: "slight_right",
}


class Vocabulary:
    """Bijective token <-> id map with fixed reserved ids."""

    def __init__(self, tokens):
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError("reserved tokens must be first and in order")
        self.tokens = tuple(tokens)
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise ValueError("duplicate tokens")

    def __len__(self):
        return len(self.tokens)

    def encode(self, words):
        return [self.ids.get(w, UNK) for w in words]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    @classmethod
    def default(cls):
        words = set()
        for with_lm, plain in TEMPLATES.values():
            for tpl in with_lm:
                words.update(tpl.replace("{}", "").split())
            for tpl in plain:
                words.update(tpl.split())
        words.update(LANDMARK_NAMES)
        words.add(SEPARATOR)
        return cls(RESERVED + tuple(sorted(words)))


def landmark_name(class_id):
    return LANDMARK_NAMES[class_id % len(LANDMARK_NAMES)]


def visible_landmark(graph, node, heading, cone=math.pi / 2.0):
    """Nearest landmark (by angular offset) within the frontal cone of the
    given heading bin at ``node``; None when nothing is visible."""
    best = None
    for lm in graph.landmarks.get(node, ()):
        off = abs(relative_angle(lm.heading, heading))
        if off <= cone / 2.0 and (best is None or (off, lm.class_id) < best[:2]):
            best = (off, lm.class_id)
    return None if best is None else best[1]


def maneuver_for(prev_heading, new_heading):
    return _MANEUVER_BY_DELTA[(new_heading - prev_heading) % NUM_HEADINGS]


def route_maneuvers(graph, route):
    """One (maneuver, landmark_class_or_None) pair per route action."""
    out = []
    for k, action in enumerate(route.actions):
        state = route.states[k]
        name = "stop" if action == STOP else maneuver_for(state.heading,
                                                          route.states[k + 1].heading)
        out.append((name, visible_landmark(graph, state.node, state.heading)))
    return out


def oracle_instruction(graph, route, seed, vocab=None):
    """Template-based instruction for a route; deterministic in ``seed``."""
    vocab = vocab or Vocabulary.default()
    rng = np.random.default_rng([int(seed), 0x0AC1E])
    words = []
    for name, lm_class in route_maneuvers(graph, route):
        with_lm, plain = TEMPLATES[name]
        if lm_class is not None:
            tpl = with_lm[int(rng.integers(len(with_lm)))]
            clause = tpl.format(landmark_name(lm_class))
        else:
            clause = plain[int(rng.integers(len(plain)))]
        words.extend(clause.split())
        words.append(SEPARATOR)
    tokens = vocab.encode(words) + [EOS]
    assert len(tokens) <= MAX_INSTRUCTION_TOKENS
    return tokens


def clause_count(tokens, vocab):
    sep = vocab.ids[SEPARATOR]
    return sum(1 for t in tokens if t == sep)
