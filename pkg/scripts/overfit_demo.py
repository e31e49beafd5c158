#!/usr/bin/env python3
"""Overfit one system on the synthetic 32-utterance corpus and report the step count.

Stops once the full-set BCE (eval mode) is below 0.1 and the EER is zero.
"""
import argparse
import logging
import time

import numpy as np

from gatspoof.features import lfb
from gatspoof.metrics import eer
from gatspoof.synthdata import SynthSpec, synth_corpus
from gatspoof.systems import SYSTEMS, score_batches
from gatspoof.training import FeatureSet, TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--system", choices=SYSTEMS, default="gat_t")
    ap.add_argument("--max-steps", type=int, default=200)
    ap.add_argument("--batch-size", type=int, default=8)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    corpus = synth_corpus(SynthSpec(seed=args.seed))
    x = np.stack([lfb(w).values for _, w in corpus])[:, None].astype(np.float32)
    data = FeatureSet(x, [int(r.is_bonafide) for r, _ in corpus], [r.utt_id for r, _ in corpus],
                      [r.attack_id for r, _ in corpus])

    def on_epoch(stats, model):
        z = score_batches(model, data.features)
        bce = np.mean(np.where(data.labels == 1, np.logaddexp(0, -z), np.logaddexp(0, z)))
        e = eer(data.score_set(z))
        print(f"epoch {stats.epoch}: batch loss {stats.train_loss:.4f}  full-set BCE {bce:.4f}  EER {e:.3f}")
        return bce < 0.1 and e == 0.0

    cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.max_steps, seed=args.seed,
                      system=args.system, max_steps=args.max_steps)
    t0 = time.perf_counter()
    res = train(cfg, data, on_epoch=on_epoch)
    print(f"{args.system}: {res.steps} steps in {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
