"""How robust the segment ranking is to a poor initial guess.

Segment information is computed at the true extrinsics and at perturbed
ones; the Spearman correlation between the two rankings shows how much a
lever-arm or orientation error reorders the segments.

    python demos/sensitivity.py [--seed 0]
"""

import argparse

import imucal
from imucal import analysis


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = imucal.simulate_edge_case(seed=args.seed)
    points = [(0.0, 0.0), (0.05, 0.0), (0.2, 0.0), (0.0, 10.0), (0.0, 45.0), (0.1, 20.0)]
    sweep = analysis.sensitivity_sweep(data, data.ground_truth.rig, None, None, seed=args.seed, points=points)
    print(f"{'dp [m]':>7} {'dq [deg]':>9} {'rho':>7}")
    for dp, dq in points:
        print(f"{dp:>7.2f} {dq:>9.1f} {sweep.rho(dp, dq):>7.3f}")


if __name__ == "__main__":
    main()
