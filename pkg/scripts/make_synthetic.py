"""Write synthetic reference spectra at the tabulated monomer and dimer parameters.

The files are labelled synthetic in their headers; they stand in for measured
spectra in the round-trip experiments.
"""

import argparse
import warnings
from pathlib import Path

import numpy as np

from dimerfit.model import TDI_DIMERS, TDI_MONOMER, BasisSpec
from dimerfit.spectra import CoverageWarning, Spectrum, simulate_dimer, simulate_monomer, write_spectrum


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="synthetic")
    p.add_argument("--nu-min", type=float, default=13000.0)
    p.add_argument("--nu-max", type=float, default=23000.0)
    p.add_argument("--n-nu", type=int, default=2001)
    p.add_argument("--n-max", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.0, help="relative Gaussian noise on the amplitude")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    nu = np.linspace(args.nu_min, args.nu_max, args.n_nu)
    b = BasisSpec(args.n_max)
    rng = np.random.default_rng(args.seed)
    jobs = {"monomer": lambda: simulate_monomer(TDI_MONOMER, b, nu_grid=nu)}
    for k, pd in TDI_DIMERS.items():
        jobs[f"dimer{k}"] = lambda pd=pd: simulate_dimer(TDI_MONOMER, pd, b, nu_grid=nu)
    for name, make in jobs.items():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CoverageWarning)
            s = make()
        if args.noise > 0:
            s = Spectrum(s.nu, s.amp + args.noise * s.amp.max() * rng.standard_normal(s.amp.size))
        comments = ["origin: synthetic", f"monomer: {TDI_MONOMER.as_dict()}", f"n_max: {args.n_max}",
                    f"noise: {args.noise}"]
        if name != "monomer":
            comments.append(f"dimer: {TDI_DIMERS[int(name[-1])].as_dict()}")
        write_spectrum(s, out / f"{name}.txt", comments=comments)
        print(f"wrote {out / name}.txt")


if __name__ == "__main__":
    main()
