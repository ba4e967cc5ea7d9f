"""Two-stage synthetic round trip: fit the monomer, then the dimer on top of it.

Run ``make_synthetic.py`` first. Prints the recovered parameters next to the
generating values.
"""

import argparse
import json
from pathlib import Path

import yaml

from dimerfit.cli import cmd_fit, cmd_landscape
from dimerfit.model import TDI_DIMERS, TDI_MONOMER


def write_config(path, doc):
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def compare(label, found, truth):
    print(label)
    for name, value in truth.items():
        print(f"  {name:>12}: fitted {found[name]:10.2f}   true {value:10.2f}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", default="synthetic", help="directory written by make_synthetic.py")
    p.add_argument("--dimer", type=int, choices=sorted(TDI_DIMERS), default=0)
    p.add_argument("--budget", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="round_trip")
    p.add_argument("--landscape", action="store_true", help="write surrogate cuts for both stages")
    args = p.parse_args()

    data, out = Path(args.data).resolve(), Path(args.out).resolve()
    out.mkdir(parents=True, exist_ok=True)
    mono_cfg = write_config(out / "monomer.yaml", {
        "stage": "monomer", "spectrum": str(data / "monomer.txt"), "budget": args.budget,
        "seed": args.seed, "output": str(out / "monomer")})
    mono = cmd_fit(mono_cfg)
    compare(f"monomer (cost {mono['best']['cost']:.4f})", mono["best"]["params"], TDI_MONOMER.as_dict())

    dimer_cfg = write_config(out / "dimer.yaml", {
        "stage": "dimer", "spectrum": str(data / f"dimer{args.dimer}.txt"),
        "monomer_manifest": str(out / "monomer" / "manifest.json"), "budget": args.budget,
        "seed": args.seed, "output": str(out / "dimer")})
    dimer = cmd_fit(dimer_cfg)
    compare(f"dimer {args.dimer} (cost {dimer['best']['cost']:.4f})", dimer["best"]["params"],
            TDI_DIMERS[args.dimer].as_dict())

    if args.landscape:
        for stage in ("monomer", "dimer"):
            summary = cmd_landscape(out / stage)
            for entry in summary["landscapes"]:
                sizes = {key: r["n_nodes"] for key, r in entry["regions"].items()}
                print(f"{stage} {entry['name']}: region nodes {json.dumps(sizes)}")


if __name__ == "__main__":
    main()
