"""Evaluation counts and runtime of the two greedy variants.

The original variant recalibrates after every candidate and re-evaluates the
accepted set, so its evaluation count grows quadratically in the number of
segments. The initial-parameter variant evaluates each segment once.

    python demos/complexity.py [--L 8,16,32] [--repeats 1]
"""

import argparse

from imucal import analysis


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--L", default="8,16,32")
    ap.add_argument("--repeats", type=int, default=1)
    args = ap.parse_args()
    grid = [int(v) for v in args.L.split(",")]

    rows = {p: analysis.bench_complexity(grid, p, repeats=args.repeats) for p in ("greedy-original", "greedy-init")}
    print(f"{'L':>4} {'orig evals':>10} {'init evals':>10} {'orig ms':>10} {'init ms':>10} {'ratio':>7}")
    for o, i in zip(rows["greedy-original"], rows["greedy-init"]):
        print(f"{o['L']:>4} {o['evals']:>10} {i['evals']:>10} {o['total_ms']:>10.0f} {i['total_ms']:>10.0f} "
              f"{o['total_ms'] / i['total_ms']:>7.1f}")
    for p, r in rows.items():
        s = analysis.bench_summary(r)
        print(f"{p}: evals ~ L^{s['evals_exponent']:.2f}, time ~ L^{s['time_exponent']:.2f}")


if __name__ == "__main__":
    main()
