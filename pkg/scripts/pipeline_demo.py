#!/usr/bin/env python3
"""End-to-end CLI walk-through on synthetic data: synth, extract, train, score, evaluate, fuse."""
import argparse
from pathlib import Path

from gatspoof.cli import main as gatspoof


def run(*argv):
    rc = gatspoof(list(argv))
    if rc != 0:
        raise SystemExit(f"command failed ({rc}): {' '.join(argv)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work-dir", default="demo_run")
    ap.add_argument("--epochs", type=int, default=2)
    args = ap.parse_args()
    root = Path(args.work_dir)
    common = ["--set", f"train.epochs={args.epochs}", "--set", "train.batch_size=16"]

    for split, seed in (("train", "1"), ("dev", "2")):
        run("synth", "--out-dir", str(root / split), "--seed", seed, "--prefix", split.upper(), *common)
        run("extract", "--protocol", str(root / split / "protocol.txt"), "--audio-dir", str(root / split),
            "--out", str(root / f"{split}.lfb"), *common)

    score_files = []
    for system in ("gat_t", "gat_s"):
        ckpt = root / f"{system}.ckpt"
        run("train", "--system", system, "--train-protocol", str(root / "train" / "protocol.txt"),
            "--train-features", str(root / "train.lfb"), "--checkpoint", str(ckpt),
            "--train-log", str(root / f"{system}_log.csv"), *common)
        scores = root / f"{system}.scores"
        run("score", "--system", system, "--checkpoint", str(ckpt), "--protocol", str(root / "dev" / "protocol.txt"),
            "--features", str(root / "dev.lfb"), "--out", str(scores), *common)
        run("evaluate", "--scores", str(scores), "--protocol", str(root / "dev" / "protocol.txt"))
        score_files.append(str(scores))

    proto = str(root / "dev" / "protocol.txt")
    run("fuse", "fit", "--scores", *score_files, "--protocol", proto, "--model", str(root / "fusion.txt"))
    run("fuse", "apply", "--scores", *score_files, "--protocol", proto, "--model", str(root / "fusion.txt"),
        "--out", str(root / "fused.scores"))
    run("evaluate", "--scores", str(root / "fused.scores"), "--protocol", proto)


if __name__ == "__main__":
    main()
