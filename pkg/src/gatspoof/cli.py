"""Command-line entry point: synth, extract, train, score, evaluate, fuse.

Commands communicate only through files.  Exit status is 0 on success, 1
on data errors (missing audio, unaligned scores), 2 on usage/config errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint
from .audio_io import load_utterance, parse_protocol
from .config import ConfigError, describe_keys, load_config
from .features import lfb, read_cache, write_cache
from .fusion import FusionModel, align, fit_svm, fuse_sets
from .metrics import MetricError, ScoreSet, per_attack_report, read_scores, write_scores
from .synthdata import SynthSpec, generate
from .systems import SYSTEMS, CMSystem, score_batches
from .training import FeatureSet, train

log = logging.getLogger("gatspoof")


class DataError(RuntimeError):
    pass


def _extract_one(args):
    path, target_len, feat_cfg = args
    try:
        return lfb(load_utterance(path, target_len), feat_cfg).values, None
    except (OSError, ValueError) as exc:
        return None, f"{exc}"


def cmd_extract(cfg, protocol, audio_dir, out_cache):
    records = parse_protocol(protocol)
    jobs = [(Path(audio_dir) / f"{r.utt_id}.wav", cfg["audio.target_len"], cfg.feature_config()) for r in records]
    workers = cfg["run.workers"]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_one, jobs, chunksize=4))
    else:
        results = [_extract_one(j) for j in jobs]
    items, failures = [], []
    for rec, (values, err) in zip(records, results):
        if err is None:
            items.append((rec.utt_id, values))
        else:
            failures.append((rec.utt_id, err))
    write_cache(out_cache, items)
    print(f"extracted {len(items)} of {len(records)} utterances -> {out_cache}")
    for utt, err in failures:
        print(f"FAILED {utt}: {err}", file=sys.stderr)
    return 1 if failures else 0


def load_feature_set(protocol, cache):
    records = parse_protocol(protocol)
    feats = dict(read_cache(cache))
    missing = [r.utt_id for r in records if r.utt_id not in feats]
    if missing:
        raise DataError(f"{len(missing)} protocol trials missing from {cache}: {missing[:10]}")
    if not records:
        raise DataError(f"{protocol} lists no trials")
    x = np.stack([feats[r.utt_id] for r in records])[:, None]
    return FeatureSet(x, [int(r.is_bonafide) for r in records], [r.utt_id for r in records],
                      [r.attack_id for r in records])


def build_model(cfg):
    return CMSystem(cfg["train.system"], cfg.encoder_config(), gat_dim=cfg["encoder.gat_dim"],
                    att_dim=cfg["encoder.att_dim"], seed=cfg["run.seed"], dtype=cfg.dtype)


def cmd_train(cfg):
    if not cfg["paths.train_protocol"] or not cfg["paths.train_features"]:
        raise ConfigError("paths.train_protocol and paths.train_features are required for training")
    train_set = load_feature_set(cfg["paths.train_protocol"], cfg["paths.train_features"])
    dev_set = None
    if cfg["paths.dev_protocol"]:
        dev_set = load_feature_set(cfg["paths.dev_protocol"], cfg["paths.dev_features"])
    result = train(cfg.train_config(), train_set, dev_set, model=build_model(cfg), costs=cfg.tdcf_costs(),
                   dtype=cfg.dtype)
    checkpoint.save(cfg["paths.checkpoint"], result.best_state)
    Path(cfg["paths.train_log"]).write_text(result.log_text(), encoding="utf-8")
    print(f"trained {cfg['train.system']} for {result.steps} steps; best epoch {result.best_epoch} "
          f"-> {cfg['paths.checkpoint']}")
    return 0


def cmd_score(cfg, ckpt, protocol, features, out):
    model = build_model(cfg)
    model.load_state_dict(checkpoint.load(ckpt))
    data = load_feature_set(protocol, features)
    bs = cfg["train.eval_batch_size"]
    workers = cfg["run.workers"]
    if workers > 1:
        chunks = [data.features[i:i + bs] for i in range(0, len(data), bs)]
        model.eval()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: score_batches(model, c, bs), chunks))
        scores = np.concatenate(parts)
    else:
        scores = score_batches(model, data.features, bs)
    write_scores(out, data.utt_ids, scores)
    print(f"scored {len(scores)} trials -> {out}")
    return 0


def _score_set(score_file, protocol):
    return ScoreSet.from_records(parse_protocol(protocol), read_scores(score_file))


def cmd_evaluate(cfg, score_file, protocol, out=None, csv=None):
    report = per_attack_report(_score_set(score_file, protocol), cfg.tdcf_costs())
    text = report.to_text()
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if csv:
        Path(csv).write_text(report.to_csv(), encoding="utf-8")
    return 0


def cmd_fuse(cfg, mode, score_files, protocol, model_path, out=None, names=None):
    sets = [_score_set(f, protocol) for f in score_files]
    aligned = align(sets)
    names = tuple(names) if names else tuple(Path(f).stem for f in score_files)
    if mode == "fit":
        model = fit_svm(aligned.X, aligned.is_bonafide, C=cfg["fusion.c"], tol=cfg["fusion.tol"], names=names)
        model.save(model_path)
        print(f"fusion model over {model.k} systems -> {model_path}")
    else:
        model = FusionModel.load(model_path)
        if model.k != aligned.X.shape[1]:
            raise ConfigError(f"model expects {model.k} systems, got {aligned.X.shape[1]} score files")
        fused = fuse_sets(model, aligned)
        write_scores(out, fused.utt_ids, fused.scores)
        print(f"fused {len(fused)} trials -> {out}")
    return 0


def cmd_synth(cfg, out_dir, n_bonafide, n_spoof, prefix):
    path = generate(SynthSpec(n_bonafide, n_spoof, seed=cfg["run.seed"], n_samples=cfg["audio.target_len"],
                              prefix=prefix), out_dir)
    print(f"wrote {n_bonafide + n_spoof} utterances and {path}")
    return 0


def build_parser():
    epilog = "configuration keys (section.key = default):\n" + describe_keys() + (
        "\n\nOverride order: defaults < --config file < GATSPOOF_<SECTION>_<KEY> env vars < flags.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file of 'section.key = value' lines")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--workers", type=int, help="overrides run.workers")
    common.add_argument("--system", choices=SYSTEMS, help="overrides train.system")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="gatspoof", description=__doc__, epilog=epilog, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common], epilog=epilog, formatter_class=fmt)

    p = add("synth", "generate a synthetic labelled corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bonafide", type=int, default=16)
    p.add_argument("--spoof", type=int, default=16)
    p.add_argument("--prefix", default="SYN")

    p = add("extract", "compute LFB features for every protocol entry")
    p.add_argument("--protocol", required=True)
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--out", required=True, help="feature cache path")

    p = add("train", "train a countermeasure system")
    for key in ("train_protocol", "train_features", "dev_protocol", "dev_features", "checkpoint", "train_log"):
        p.add_argument("--" + key.replace("_", "-"), dest=key, help=f"overrides paths.{key}")

    p = add("score", "score trials with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", "pooled and per-attack EER / min t-DCF")
    p.add_argument("--scores", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--out", help="report file (default: stdout)")
    p.add_argument("--csv", help="also write the comma-separated table")

    p = add("fuse", "fit or apply SVM score fusion")
    p.add_argument("mode", choices=("fit", "apply"))
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--model", required=True, help="fusion model file (written by fit, read by apply)")
    p.add_argument("--names", nargs="+")
    p.add_argument("--out", help="fused score file (apply)")
    return parser


def resolve_config(args, environ=None):
    cfg = load_config(args.config, environ)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    if args.seed is not None:
        cfg.set("run.seed", args.seed)
    if args.workers is not None:
        cfg.set("run.workers", args.workers)
    if args.system is not None:
        cfg.set("train.system", args.system)
    if args.command == "train":
        for key in ("train_protocol", "train_features", "dev_protocol", "dev_features", "checkpoint", "train_log"):
            if getattr(args, key) is not None:
                cfg.set(f"paths.{key}", getattr(args, key))
    cfg.validate()
    return cfg


def main(argv=None, environ=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args, environ)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "synth":
            return cmd_synth(cfg, args.out_dir, args.bonafide, args.spoof, args.prefix)
        if args.command == "extract":
            return cmd_extract(cfg, args.protocol, args.audio_dir, args.out)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "score":
            return cmd_score(cfg, args.checkpoint, args.protocol, args.features, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.scores, args.protocol, args.out, args.csv)
        if args.command == "fuse":
            if args.mode == "apply" and not args.out:
                raise ConfigError("fuse apply needs --out")
            return cmd_fuse(cfg, args.mode, args.scores, args.protocol, args.model, args.out, args.names)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, MetricError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
