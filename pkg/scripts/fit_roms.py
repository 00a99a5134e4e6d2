"""Fit ROM-1/2/3 templates to a dataset and print per-curve R².

    python scripts/fit_roms.py [--dataset path/to/dataset.json] [--stride 1]
"""
import argparse

from egsrom.cli import bundled_dataset_path
from egsrom.regression import Dataset, FitOptions, RomTemplate, fit_rom, score
from egsrom.rom import builtin_rom


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset", default=None)
    ap.add_argument("--stride", type=int, default=1)
    args = ap.parse_args()
    data = Dataset.load(args.dataset or bundled_dataset_path())
    for kind in (1, 2, 3):
        builtin = {s.name: s.metrics.r2 for s in score(builtin_rom(kind), data)}
        report = fit_rom(RomTemplate.for_kind(kind), data, FitOptions(stride=args.stride))
        print(f"\nROM-{kind}: {report.n_parameters} free coefficients, {report.reason}")
        print(f"{'curve':<24}{'split':<10}{'fitted R2':>12}{'printed-table R2':>20}")
        for s in report.scores:
            print(f"{s.name:<24}{s.split.value:<10}{s.metrics.r2:>12.4f}{builtin[s.name]:>20.4g}")


if __name__ == "__main__":
    main()
