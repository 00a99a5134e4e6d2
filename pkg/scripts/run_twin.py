"""Twin-experiment calibration: truth at the calibrated base case, guesses off by 3x.

    python scripts/run_twin.py [--factor 3] [--workers 1] [--out out/twin.json]
"""
import argparse
import json
import time
from pathlib import Path

from egsrom.calibrate import calibrate, twin_problem
from egsrom.simulator import ReservoirConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--factor", type=float, default=3.0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("out/twin.json"))
    args = ap.parse_args()
    truth = ReservoirConfig()
    start = time.perf_counter()
    problem = twin_problem(truth, factor=args.factor, workers=args.workers)
    res = calibrate(problem)
    for p in problem.free:
        got = res.values[p.name]
        true = getattr(truth, p.name)
        print(f"{p.name:<12} guess {p.initial:<12.4g} fit {got:<14.6g} truth {true:<12.4g} "
              f"rel err {abs(got / true - 1):.1e}")
    print(f"R2 {res.metrics.r2:.8f}, {res.iterations} iterations, {res.evaluations} runs, "
          f"{res.reason}, {time.perf_counter() - start:.0f} s")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(res.to_json_dict(), indent=2) + "\n")


if __name__ == "__main__":
    main()
