"""Generate the bundled synthetic surrogate dataset.

Seven simulator curves at the published log-permeability split plus a
"field" stand-in: the base-case curve with fixed-seed smooth steps added
to imitate operational fluctuations. Everything here is synthetic.

    python scripts/make_surrogate_data.py [--out src/egsrom/data/surrogate]
"""
import argparse
import json
import math
from pathlib import Path

import numpy as np

from egsrom.core import Quantity, TimeSeries
from egsrom.regression import TRAIN_LOG10K, VALIDATE_LOG10K, Curve, Dataset, Split
from egsrom.simulator import ReservoirConfig, run

SEED = 1978
N_STEPS = 12


def perturb(times, values, seed=SEED, n_steps=N_STEPS):
    rng = np.random.default_rng(seed)
    centers = np.sort(rng.uniform(5.0, 115.0, n_steps))
    amps = rng.normal(0.0, 0.08, n_steps)
    out = values.copy()
    for tc, m in zip(centers, amps):
        out += m * (1.0 + np.tanh(2.0 * (times - tc)))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path,
                    default=Path(__file__).resolve().parent.parent / "src/egsrom/data/surrogate")
    ap.add_argument("--t-end", type=float, default=120.0)
    args = ap.parse_args()

    base = ReservoirConfig()
    times = np.arange(0.0, args.t_end + 1.0)
    curves = []
    for split, keys in ((Split.TRAIN, TRAIN_LOG10K), (Split.VALIDATE, VALIDATE_LOG10K)):
        for lk in keys:
            power = run(base.replace(k_fz=10.0 ** lk), args.t_end, output_times=times).power
            curves.append(Curve(lk, power, split, f"{split.value}_logk{lk:+.3f}"))
            print(f"simulated log10 k = {lk}")
    field = run(base, args.t_end, output_times=times).power
    noisy = TimeSeries(times, perturb(times, field.values), Quantity.POWER_MW)
    pred = Curve(math.log10(base.k_fz), noisy, Split.PREDICT, "synthetic_field")
    manifest = Dataset(tuple(curves), pred).save(args.out)

    doc = json.loads(manifest.read_text(encoding="utf-8"))
    doc["note"] = ("SYNTHETIC: simulator curves plus a base-case curve with fixed-seed "
                   f"smooth steps (seed {SEED}); not field data")
    manifest.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {manifest}")


if __name__ == "__main__":
    main()
