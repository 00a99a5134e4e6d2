"""Default one-at-a-time sweep on the base case; prints scores and ranking.

    python scripts/run_sweep.py [--out out/sweep] [--workers 1]
"""
import argparse
import json
import time
from pathlib import Path

from egsrom.sensitivity import SweepPlan, export_curves, linearity_deviation, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("out/sweep"))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    start = time.perf_counter()
    rep = run_sweep(SweepPlan(), workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "sweep.json").write_text(json.dumps(rep.to_json_dict(), indent=2) + "\n")
    export_curves(rep, args.out)
    for name in rep.ranking:
        print(f"{name:<12} score {rep.scores[name]:.4g}")
    q = rep.families["q_inj"]
    lin = max(linearity_deviation(q.samples, q.curves[:, i]) for i in range(rep.times.size))
    print(f"q_inj linearity deviation {lin:.2e}; {time.perf_counter() - start:.0f} s")


if __name__ == "__main__":
    main()
