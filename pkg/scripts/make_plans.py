#!/usr/bin/env python3
"""Write the stock experiment plans into plans/.

Three plans are emitted: the two desk-scale studies (known source count with
monotone threshold selection; unknown count with Pareto testing) and a tiny
smoke plan that exercises every pipeline stage in a few seconds.
"""
import argparse
import os

from doarisk.harness import ExperimentPlan, RoomSpec


def stock_plans():
    known = ExperimentPlan(
        mode="known_crc",
        seed=101,
        k_max=1,
        counts_per_k={1: 300},
        n_cal=200,
        n_test=100,
        n_trials=100,
    )
    unknown = ExperimentPlan(
        mode="unknown_pt",
        seed=202,
        k_max=3,
        counts_per_k={1: 100, 2: 100, 3: 100},
        n_cal=240,
        n_test=60,
        n_trials=50,
    )
    smoke = ExperimentPlan(
        mode="known_crc",
        seed=9,
        k_max=1,
        counts_per_k={1: 4},
        n_cal=2,
        n_test=2,
        n_trials=3,
        duration_s=0.25,
        el_step_deg=15.0,
        az_step_deg=15.0,
        crc_lam_points=25,
        rooms=[RoomSpec()],
    )
    return {"known_crc_desk": known, "unknown_pt_desk": unknown, "smoke": smoke}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="plans", help="target directory")
    args = parser.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)
    for name, plan in stock_plans().items():
        path = os.path.join(args.out_dir, name + ".json")
        plan.save(path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
