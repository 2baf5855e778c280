"""Command-line operator surface.

Subcommands: `synth` (generate a synthetic corpus), `extract` (audio to
normalized feature files plus corpus stats), `train`, `embed`, `score`,
and `eer`. Global flags `--config`, `--seed`, `--jobs`; `DSAE_*`
environment variables override config keys.

Exit codes: 0 success, 2 usage error, 3 data error, 4 incompatibility,
5 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import evaluator, features, formats, model, synth, trainer
from .config import Config
from .errors import (ConfigError, DatasetShapeError, DsaeError, EmptyFeatures,
                     FormatError, IncompatibleConfig, NumericFailure,
                     UnsupportedAudio)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INCOMPATIBLE = 4
EXIT_NUMERIC = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsae",
        description="Duration-robust speaker verification with segment-attentive embeddings.")
    parser.add_argument("--config", metavar="PATH", help="config file (key = value lines)")
    parser.add_argument("--seed", type=int, metavar="N", help="override the configured seed")
    parser.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="parallel workers for per-utterance work")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train-speakers", type=int, default=10)
    p.add_argument("--train-utterances", type=int, default=20)
    p.add_argument("--valid-speakers", type=int, default=0)
    p.add_argument("--valid-utterances", type=int, default=4)
    p.add_argument("--test-speakers", type=int, default=5)
    p.add_argument("--test-utterances", type=int, default=8)
    p.add_argument("--train-duration", type=float, nargs=2, default=(2.0, 4.0),
                   metavar=("LO", "HI"))
    p.add_argument("--test-duration", type=float, nargs=2, default=(15.0, 25.0),
                   metavar=("LO", "HI"))
    p.add_argument("--trials", type=int, default=200)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract normalized log-mel features")
    p.add_argument("--manifest", help="corpus manifest (defaults to paths.manifest)")
    p.add_argument("--features-dir", help="output directory (defaults to paths.features_dir)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the embedding network")
    p.add_argument("--manifest")
    p.add_argument("--features-dir")
    p.add_argument("--checkpoint-dir")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a saved state")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="write utterance embeddings")
    p.add_argument("checkpoint")
    p.add_argument("ids", nargs="+", help="utterance ids to embed")
    p.add_argument("--features-dir")
    p.add_argument("--out", required=True, help="output directory for embedding files")
    p.add_argument("--pooling", choices=("attentive", "average"), default="attentive")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("score", help="score a trial list")
    p.add_argument("checkpoint")
    p.add_argument("--trials")
    p.add_argument("--features-dir")
    p.add_argument("--out", required=True, help="output score file")
    p.add_argument("--pooling", choices=("attentive", "average"), default="attentive")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eer", help="recompute the EER report from a score file")
    p.add_argument("scores", help="score file from the score command")
    p.set_defaults(func=cmd_eer)
    return parser


def _load_config(args) -> Config:
    cfg = Config.load(args.config)
    if args.seed is not None:
        cfg.values["train.seed"] = int(args.seed)
    return cfg


def _required_path(args, attr: str, cfg: Config, key: str) -> str:
    value = getattr(args, attr, None) or cfg[key]
    if not value:
        raise ConfigError(f"no {attr.replace('_', '-')} given and config {key} is empty")
    return value


# synth ------------------------------------------------------------------------


def cmd_synth(args, cfg: Config) -> int:
    scfg = synth.SynthConfig(
        train_speakers=args.train_speakers, train_utterances=args.train_utterances,
        valid_speakers=args.valid_speakers, valid_utterances=args.valid_utterances,
        test_speakers=args.test_speakers, test_utterances=args.test_utterances,
        train_duration=tuple(args.train_duration), test_duration=tuple(args.test_duration),
        trials=args.trials, sample_rate=cfg["feature.sample_rate"], seed=cfg["train.seed"])
    manifest_path, trials_path = synth.generate_corpus(args.out, scfg)
    print(f"manifest: {manifest_path}")
    print(f"trials: {trials_path}")
    return EXIT_OK


# extract ----------------------------------------------------------------------


def _feature_canon(cfg: Config) -> str:
    keys = [k for k in sorted(cfg.values) if k.startswith("feature.")]
    return "\n".join(f"{k} = {cfg.values[k]!r}" for k in keys)


def _hash_hex(*parts: bytes) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.hexdigest()


def _read_sidecar(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read().strip()
    except OSError:
        return ""


def cmd_extract(args, cfg: Config) -> int:
    manifest_path = _required_path(args, "manifest", cfg, "paths.manifest")
    features_dir = _required_path(args, "features_dir", cfg, "paths.features_dir")
    entries = synth.read_manifest(manifest_path)
    if not entries:
        raise FormatError(f"{manifest_path}: no utterances")
    os.makedirs(features_dir, exist_ok=True)
    root = os.path.dirname(os.path.abspath(manifest_path))
    fcfg = cfg.feature_config()
    canon = _feature_canon(cfg).encode("utf-8")

    audio_hash = {}
    failures = []
    for e in entries:
        path = os.path.join(root, e.path)
        try:
            with open(path, "rb") as fh:
                audio_hash[e.utterance] = _hash_hex(fh.read())
        except OSError as err:
            failures.append((e.utterance, f"{path}: {err}"))
    train_entries = sorted((e for e in entries if e.split == "train"), key=lambda e: e.utterance)
    stats_src = _hash_hex(canon, "\n".join(
        f"{e.utterance}:{audio_hash.get(e.utterance, 'missing')}" for e in train_entries
    ).encode("utf-8"))

    def extract_one(entry) -> features.FeatureMatrix:
        clip = features.read_wav(os.path.join(root, entry.path), fcfg.sample_rate)
        return features.extract(clip, fcfg)

    stats_path = os.path.join(features_dir, "norm.dsan")
    unnormalized = {}
    if _read_sidecar(stats_path + ".src") == stats_src and os.path.exists(stats_path):
        mean, std, count = formats.read_norm_stats(stats_path)
        stats = features.NormStats(mean=mean, std=std, frame_count=count)
    else:
        acc = None
        for e in train_entries:
            if e.utterance not in audio_hash:
                continue
            try:
                feats = extract_one(e)
            except DsaeError as err:
                failures.append((e.utterance, str(err)))
                continue
            unnormalized[e.utterance] = feats
            if acc is None:
                acc = features.NormAccumulator(feats.dims)
            acc.update(feats)
        if acc is None:
            raise EmptyFeatures("no train-split features could be extracted")
        stats = acc.finalize()
        formats.write_norm_stats(stats_path, stats.mean, stats.std, stats.frame_count)
        with open(stats_path + ".src", "w", encoding="utf-8") as fh:
            fh.write(stats_src)

    failed_ids = {u for u, _ in failures}
    written = skipped = 0

    def process(entry):
        if entry.utterance in failed_ids:
            return None
        out_path = os.path.join(features_dir, f"{entry.utterance}.dsaf")
        src = _hash_hex(canon, audio_hash[entry.utterance].encode(), stats_src.encode())
        if os.path.exists(out_path) and _read_sidecar(out_path + ".src") == src:
            return ("skipped", entry.utterance)
        try:
            feats = unnormalized.get(entry.utterance) or extract_one(entry)
            normed = features.apply_norm(feats, stats)
        except DsaeError as err:
            return ("failed", entry.utterance, str(err))
        formats.write_features(out_path, normed.values)
        with open(out_path + ".src", "w", encoding="utf-8") as fh:
            fh.write(src)
        return ("written", entry.utterance)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(process, entries))
    else:
        results = [process(e) for e in entries]
    for r in results:
        if r is None:
            continue
        if r[0] == "written":
            written += 1
        elif r[0] == "skipped":
            skipped += 1
        else:
            failures.append((r[1], r[2]))

    for utt, reason in failures:
        print(f"failed: {utt}: {reason}", file=sys.stderr)
    print(f"features written: {written}, up-to-date: {skipped}, failed: {len(failures)}")
    print(f"norm stats: {stats_path} ({stats.frame_count} frames)")
    return EXIT_DATA if failures else EXIT_OK


# train ------------------------------------------------------------------------


def _load_split_features(entries, features_dir: str, split: str):
    by_speaker = {}
    feature_map = {}
    for e in entries:
        if e.split != split:
            continue
        path = os.path.join(features_dir, f"{e.utterance}.dsaf")
        values = formats.read_features(path)
        by_speaker.setdefault(e.speaker, []).append((e.utterance, values))
        feature_map[e.utterance] = features.FeatureMatrix(values=values, normalized=True)
    return by_speaker, feature_map


def cmd_train(args, cfg: Config) -> int:
    manifest_path = _required_path(args, "manifest", cfg, "paths.manifest")
    features_dir = _required_path(args, "features_dir", cfg, "paths.features_dir")
    checkpoint_dir = _required_path(args, "checkpoint_dir", cfg, "paths.checkpoint_dir")
    os.makedirs(checkpoint_dir, exist_ok=True)
    entries = synth.read_manifest(manifest_path)
    by_speaker, _ = _load_split_features(entries, features_dir, "train")
    if not by_speaker:
        raise DatasetShapeError(f"{manifest_path}: no train-split utterances")
    dataset = trainer.Dataset(by_speaker)
    tcfg = cfg.train_config()
    mcfg = cfg.model_config()
    digest = cfg.digest()
    if args.resume:
        state = trainer.load_checkpoint(args.resume, mcfg, tcfg, digest)
    else:
        state = trainer.init_state(mcfg, tcfg)

    validation = None
    if tcfg.validate_every:
        valid_speakers, valid_map = _load_split_features(entries, features_dir, "valid")
        try:
            valid_trials = synth.make_trials(entries, tcfg.validation_trials,
                                             tcfg.seed, split="valid")
        except DsaeError:
            valid_trials = []
        if valid_trials:
            policy = cfg.window_policy("test")
            triples = [(t.label, t.id_a, t.id_b) for t in valid_trials]

            def validation(state):
                eer = trainer.validate_and_schedule(state, valid_map, triples, policy)
                print(f"validation at step {state.step}: eer={eer!r} lr={state.lr!r}")
                return eer
        else:
            print("validation requested but the valid split cannot form trials; skipping",
                  file=sys.stderr)

    log_path = os.path.join(checkpoint_dir, "train.log")
    final_path = os.path.join(checkpoint_dir, "final.dsac")

    def checkpoint_fn(state):
        trainer.save_checkpoint(state, os.path.join(checkpoint_dir, f"step{state.step}.dsac"),
                                digest)

    with open(log_path, "a", encoding="utf-8") as log:
        trainer.run_training(
            state, dataset, cfg.window_policy("train"),
            log_fn=lambda line: print(line, file=log),
            validation=validation,
            checkpoint_fn=checkpoint_fn if tcfg.checkpoint_every else None)
    trainer.save_checkpoint(state, final_path, digest)
    print(f"trained {state.step} batches; checkpoint: {final_path}; log: {log_path}")
    return EXIT_OK


# embed / score / eer ------------------------------------------------------------


def _load_params(checkpoint: str, cfg: Config) -> model.ModelParams:
    return trainer.load_model_params(checkpoint, cfg.model_config(), cfg.digest())


def cmd_embed(args, cfg: Config) -> int:
    features_dir = _required_path(args, "features_dir", cfg, "paths.features_dir")
    params = _load_params(args.checkpoint, cfg)
    os.makedirs(args.out, exist_ok=True)
    policy = cfg.window_policy("test")
    cache = evaluator.EmbeddingCache(params, policy,
                                     evaluator.features_dir_loader(features_dir),
                                     pooling=args.pooling)

    def embed_one(uid: str):
        emb = cache.get(uid)
        formats.write_features(os.path.join(args.out, f"{uid}.dsaf"), emb[None, :])

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(embed_one, args.ids))
    else:
        for uid in args.ids:
            embed_one(uid)
    print(f"wrote {len(args.ids)} embeddings to {args.out}")
    return EXIT_OK


def cmd_score(args, cfg: Config) -> int:
    features_dir = _required_path(args, "features_dir", cfg, "paths.features_dir")
    trials_path = _required_path(args, "trials", cfg, "paths.trials")
    params = _load_params(args.checkpoint, cfg)
    trials = evaluator.read_trials(trials_path)
    report = evaluator.run_trials(params, trials, cfg.window_policy("test"),
                                  evaluator.features_dir_loader(features_dir),
                                  pooling=args.pooling)
    evaluator.write_scores(args.out, report)
    print(report.key_values())
    return EXIT_OK


def cmd_eer(args, cfg: Config) -> int:
    trials, scores = evaluator.read_scores(args.scores)
    if not trials:
        raise FormatError(f"{args.scores}: no scored trials")
    report = evaluator.report_from_scores(trials, scores)
    print(report.key_values())
    return EXIT_OK


# entry point ---------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except IncompatibleConfig as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except NumericFailure as e:
        print(f"error: {e}", file=sys.stderr)
        for key, value in e.diagnostics.items():
            print(f"  {key}: {value}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UnsupportedAudio, ConfigError, DsaeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
