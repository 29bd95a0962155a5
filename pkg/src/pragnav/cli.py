"""Command-line entry point.

Subcommands: gen-world, train, augment, eval, ablate.  All behavior comes
from one JSON config file; flags only override the seed and output directory.
Every command writes a manifest so results are re-derivable from config alone.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataset as ds
from .config import ConfigError, load_config, resolve_out_dir, write_manifest
from .follower import FollowerModel, ModelHyper, TrainSchedule, train_follower
from .metrics import evaluate
from .params import load_checkpoint, save_checkpoint
from .pipeline import (AugmentConfig, augment_dataset, format_grid_table,
                       greedy_agent, pragmatic_agent, run_ablation_grid,
                       two_phase_train)
from .search import PragmaticConfig
from .speaker import SpeakerModel, train_speaker


class CliError(RuntimeError):
    pass


def _world_dir(out):
    return os.path.join(out, "world")


def _ckpt(out, name):
    return os.path.join(out, "checkpoints", f"{name}.ckpt")


def _build_bundle(cfg):
    w = cfg.world
    return ds.build_dataset(
        w.num_envs, w.routes_per_env, cfg.seed, tuple(w.split_fracs),
        env_size=w.env_size, ambiguity=w.ambiguity,
        num_classes=w.landmark_classes,
        paraphrases=(w.paraphrases_train, w.paraphrases_val))


def _write_bundle(bundle, out):
    wdir = _world_dir(out)
    os.makedirs(os.path.join(wdir, "envs"), exist_ok=True)
    for eid, graph in sorted(bundle.graphs.items()):
        ds.dump_json(ds.graph_to_json(graph),
                     os.path.join(wdir, "envs", f"env_{eid:03d}.json"))
    ds.write_examples(bundle.examples, os.path.join(wdir, "dataset.jsonl"))
    ds.dump_json(ds.vocab_to_json(bundle.vocab), os.path.join(wdir, "vocab.json"))


def _load_bundle(out):
    wdir = _world_dir(out)
    if not os.path.isdir(wdir):
        raise CliError(f"no generated world under {wdir}; run gen-world first")
    vocab = ds.vocab_from_json(ds.load_json(os.path.join(wdir, "vocab.json")))
    examples = ds.read_examples(os.path.join(wdir, "dataset.jsonl"))
    graphs = {}
    env_dir = os.path.join(wdir, "envs")
    for name in sorted(os.listdir(env_dir)):
        graph = ds.graph_from_json(ds.load_json(os.path.join(env_dir, name)))
        graphs[graph.environment_id] = graph
    return ds.DatasetBundle(examples=examples, graphs=graphs, vocab=vocab)


def _hyper(cfg, vocab):
    return ModelHyper(vocab_size=len(vocab), hidden_size=cfg.model.hidden_size,
                      embed_size=cfg.model.embed_size,
                      attention_size=cfg.model.attention_size,
                      num_landmark_classes=cfg.world.landmark_classes,
                      dtype=cfg.model.dtype)


def _schedule(cfg, iterations, kind):
    return TrainSchedule(iterations=iterations, batch_size=cfg.training.batch_size,
                         learning_rate=cfg.training.learning_rate, seed=cfg.seed,
                         mode="student" if kind == "follower" else "teacher",
                         max_actions=cfg.training.max_episode_actions,
                         log_every=cfg.training.log_every)


def _write_log(entries, out, name):
    os.makedirs(os.path.join(out, "logs"), exist_ok=True)
    with open(os.path.join(out, "logs", f"{name}.jsonl"), "w") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")


def _load_model(cfg, out, name, model_cls):
    path = _ckpt(out, name)
    if not os.path.exists(path):
        raise CliError(f"missing checkpoint {path}")
    kind, hyper_doc, params = load_checkpoint(
        path, dtype=np.float32 if cfg.model.dtype == "float32" else np.float64)
    return model_cls(hyper=ModelHyper.from_json(hyper_doc), params=params)


def _pragmatic_config(cfg):
    return PragmaticConfig(num_candidates=cfg.pragmatics.num_candidates,
                           speaker_weight=cfg.pragmatics.speaker_weight,
                           max_route_actions=cfg.pragmatics.max_route_actions)


# -- commands -------------------------------------------------------------------

def cmd_gen_world(cfg, out):
    bundle = _build_bundle(cfg)
    _write_bundle(bundle, out)
    counts = {name: len(bundle.split(name)) for name in ("train", "val_seen", "val_unseen")}
    print(f"world written to {_world_dir(out)}: {counts}")
    return 0


def cmd_train(cfg, out, kind, synthetic_path=None):
    bundle = _load_bundle(out)
    hyper = _hyper(cfg, bundle.vocab)
    train_examples = bundle.split("train")
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
    if kind == "speaker":
        model = SpeakerModel.create(cfg.seed, hyper)
        log = train_speaker(model, train_examples, bundle.graphs,
                            _schedule(cfg, cfg.training.speaker_iterations, "speaker"),
                            val_examples=bundle.split("val_seen"))
        save_checkpoint(_ckpt(out, "speaker"), "speaker", hyper.to_json(), model.params)
        _write_log(log, out, "train_speaker")
        print(f"speaker checkpoint written ({len(train_examples)} examples)")
    elif synthetic_path is None:
        model = FollowerModel.create(cfg.seed, hyper)
        log = train_follower(model, train_examples, bundle.graphs,
                             _schedule(cfg, cfg.training.follower_iterations, "follower"))
        save_checkpoint(_ckpt(out, "follower"), "follower", hyper.to_json(), model.params)
        _write_log(log, out, "train_follower")
        print("baseline follower checkpoint written")
    else:
        synthetic = ds.read_examples(synthetic_path)
        model = FollowerModel.create(cfg.seed, hyper)
        aug = AugmentConfig(multiplier=cfg.augment.multiplier,
                            aug_iterations=cfg.augment.aug_iterations,
                            finetune_iterations=cfg.augment.finetune_iterations)

        def hook(tag, m):
            save_checkpoint(_ckpt(out, f"follower_{tag}" if tag != "final"
                                  else "follower_augmented"),
                            "follower", hyper.to_json(), m.params)
        log = two_phase_train(model, train_examples, synthetic, bundle.graphs,
                              _schedule(cfg, 0, "follower"), aug, checkpoint_hook=hook)
        _write_log(log, out, "train_follower_augmented")
        print(f"two-phase follower checkpoint written ({len(synthetic)} synthetic examples)")
    return 0


def cmd_augment(cfg, out):
    bundle = _load_bundle(out)
    speaker = _load_model(cfg, out, "speaker", SpeakerModel)
    train_examples = bundle.split("train")
    n_routes = len({(ex.environment_id, ex.route.states) for ex in train_examples})
    M = cfg.augment.multiplier * n_routes
    synthetic = augment_dataset(speaker, bundle.train_graphs(), M, cfg.seed)
    path = os.path.join(out, "synthetic.jsonl")
    ds.write_examples(synthetic, path)
    print(f"{len(synthetic)} synthetic examples written to {path} "
          f"(M = {cfg.augment.multiplier} x {n_routes} routes)")
    return 0


def cmd_eval(cfg, out, mode, split, follower_name):
    bundle = _load_bundle(out)
    examples = bundle.split(split)
    pconfig = _pragmatic_config(cfg)
    follower = _load_model(cfg, out, follower_name, FollowerModel)
    if mode == "greedy":
        agent = greedy_agent(follower, pconfig)
    else:
        speaker = _load_model(cfg, out, "speaker", SpeakerModel)
        agent = pragmatic_agent(follower, speaker, pconfig,
                                sequential=(mode == "sequential"))
    report = evaluate(agent, examples, bundle.graphs,
                      cfg.eval.success_threshold, workers=cfg.eval.workers)
    os.makedirs(os.path.join(out, "reports"), exist_ok=True)
    path = os.path.join(out, "reports", f"eval_{mode}_{split}.json")
    ds.dump_json(report.to_json(), path)
    print(f"{mode}/{split}: NE={report.ne:.3f} SR={report.sr:.3f} "
          f"OSR={report.osr:.3f} TL={report.tl:.2f} -> {path}")
    return 0


def cmd_ablate(cfg, out):
    """End-to-end ablation: world, models, augmentation, grid, sweeps."""
    bundle = _build_bundle(cfg)
    _write_bundle(bundle, out)
    hyper = _hyper(cfg, bundle.vocab)
    train_examples = bundle.split("train")
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)

    speaker = SpeakerModel.create(cfg.seed, hyper)
    log = train_speaker(speaker, train_examples, bundle.graphs,
                        _schedule(cfg, cfg.training.speaker_iterations, "speaker"),
                        val_examples=bundle.split("val_seen"))
    save_checkpoint(_ckpt(out, "speaker"), "speaker", hyper.to_json(), speaker.params)
    _write_log(log, out, "train_speaker")
    print("ablate: speaker trained")

    baseline = FollowerModel.create(cfg.seed, hyper)
    log = train_follower(baseline, train_examples, bundle.graphs,
                         _schedule(cfg, cfg.training.follower_iterations, "follower"))
    save_checkpoint(_ckpt(out, "follower"), "follower", hyper.to_json(), baseline.params)
    _write_log(log, out, "train_follower")
    print("ablate: baseline follower trained")

    n_routes = len({(ex.environment_id, ex.route.states) for ex in train_examples})
    synthetic = augment_dataset(speaker, bundle.train_graphs(),
                                cfg.augment.multiplier * n_routes, cfg.seed)
    ds.write_examples(synthetic, os.path.join(out, "synthetic.jsonl"))
    print(f"ablate: {len(synthetic)} synthetic examples")

    augmented = FollowerModel.create(cfg.seed, hyper)
    aug = AugmentConfig(multiplier=cfg.augment.multiplier,
                        aug_iterations=cfg.augment.aug_iterations,
                        finetune_iterations=cfg.augment.finetune_iterations)

    def hook(tag, m):
        save_checkpoint(_ckpt(out, "follower_phase1" if tag == "phase1"
                              else "follower_augmented"),
                        "follower", hyper.to_json(), m.params)
    log = two_phase_train(augmented, train_examples, synthetic, bundle.graphs,
                          _schedule(cfg, 0, "follower"), aug, checkpoint_hook=hook)
    _write_log(log, out, "train_follower_augmented")
    print("ablate: augmented follower trained")

    result = run_ablation_grid(
        {"baseline": baseline, "augmented": augmented, "speaker": speaker},
        bundle, _pragmatic_config(cfg),
        k_values=tuple(cfg.ablation.k_values),
        lambda_values=tuple(cfg.ablation.lambda_values),
        threshold=cfg.eval.success_threshold, workers=cfg.eval.workers)
    os.makedirs(os.path.join(out, "reports"), exist_ok=True)
    ds.dump_json(result, os.path.join(out, "reports", "ablation_grid.json"))
    table = format_grid_table(result)
    with open(os.path.join(out, "reports", "ablation_grid.txt"), "w") as fh:
        fh.write(table)
    _write_sweep_csv(result, os.path.join(out, "reports", "sweeps.csv"))
    print(table)
    return 0


def _write_sweep_csv(result, path):
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep", "K", "lambda", "NE", "SR", "OSR", "TL"])
        for name in ("k_sweep", "lambda_sweep"):
            for s in result[name]:
                writer.writerow([name, s["K"], s["lambda"], s["NE"], s["SR"],
                                 s["OSR"], s["TL"]])


# -- argument handling -------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="pragnav")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override config out_dir")

    common(sub.add_parser("gen-world", help="generate environments and the dataset"))
    p = sub.add_parser("train", help="train the speaker or the follower")
    common(p)
    p.add_argument("--kind", choices=("speaker", "follower"), required=True)
    p.add_argument("--synthetic", default=None,
                   help="synthetic dataset path; enables two-phase follower training")
    common(sub.add_parser("augment", help="speaker-generate a synthetic dataset"))
    p = sub.add_parser("eval", help="evaluate a trained follower")
    common(p)
    p.add_argument("--mode", choices=("greedy", "pragmatic", "sequential"),
                   default="greedy")
    p.add_argument("--split", choices=("train", "val_seen", "val_unseen"),
                   default="val_unseen")
    p.add_argument("--follower", choices=("follower", "follower_augmented"),
                   default="follower", help="which follower checkpoint to evaluate")
    common(sub.add_parser("ablate", help="run the full ablation grid end-to-end"))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        out = resolve_out_dir(cfg)
        os.makedirs(out, exist_ok=True)
        write_manifest(cfg, args.command.replace("-", "_"), out)
        if args.command == "gen-world":
            return cmd_gen_world(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out, args.kind, args.synthetic)
        if args.command == "augment":
            return cmd_augment(cfg, out)
        if args.command == "eval":
            return cmd_eval(cfg, out, args.mode, args.split, args.follower)
        if args.command == "ablate":
            return cmd_ablate(cfg, out)
        raise CliError(f"unknown command {args.command}")
    except (CliError, ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
