"""Write every bundled zoo model to <out>/<name>/ as a manifest plus weight blob."""
import argparse
from pathlib import Path

from modprune.graph import count_params_macs
from modprune.manifest import save_model
from modprune.zoo import ZOO, load_zoo


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "zoo")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for name in ZOO:
        g = load_zoo(name, args.seed)
        path = save_model(g, args.out / name)
        params, macs = count_params_macs(g)
        print(f"{name:16s} params={params:8d} macs={macs:10d} -> {path}")


if __name__ == "__main__":
    main()
