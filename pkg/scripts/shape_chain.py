#!/usr/bin/env python3
"""Print the encoder's per-layer output sizes for a given input size."""
import argparse

from gatspoof.autodiff import ContractError
from gatspoof.encoder import EncoderConfig, format_layers, min_frames, parse_layers, shape_chain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bands", type=int, default=60)
    ap.add_argument("--frames", type=int, default=202)
    ap.add_argument("--layers", default=format_layers(EncoderConfig().layers), help="layer table text")
    args = ap.parse_args()

    cfg = EncoderConfig(layers=parse_layers(args.layers))
    print(f"input 1x{args.bands}x{args.frames}")
    try:
        for name, (c, h, w) in shape_chain(cfg, (args.bands, args.frames)):
            print(f"  {name:<12} {c}x{h}x{w}")
    except ContractError as exc:
        print(f"  {exc}")
    print(f"minimum frames for {args.bands} bands: {min_frames(cfg, args.bands)}")


if __name__ == "__main__":
    main()
