"""Profile throughput scaling of the rotation and pointcloud kernels.

Times each selected operation over a grid of (frame count, residue count)
cells with synthetic inputs, then reports the fitted log-log slopes per
dimension.  Slopes near 1 mean linear cost in that dimension, near 2
quadratic.  Writes the raw timings (CSV) and the summary (JSON).
"""

import argparse
from pathlib import Path

from orientmd import bench


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output-dir", default="profile_run")
    ap.add_argument("--ops", nargs="+", choices=bench.PROFILE_OPS,
                    default=list(bench.PROFILE_OPS))
    ap.add_argument("--replicas", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--full-grid", action="store_true",
                    help="use the large grid instead of the desk-scale one")
    ap.add_argument("--sample-counts", nargs="+", type=int, metavar="T",
                    help="explicit frame counts (powers of two)")
    ap.add_argument("--residue-counts", nargs="+", type=int, metavar="R",
                    help="explicit residue counts (powers of two)")
    args = ap.parse_args(argv)

    if args.sample_counts or args.residue_counts:
        if not (args.sample_counts and args.residue_counts):
            ap.error("--sample-counts and --residue-counts go together")
        grid = bench.ProfileGrid(
            tuple(args.sample_counts), tuple(args.residue_counts), args.replicas
        )
    elif args.full_grid:
        grid = bench.full_grid(replicas=args.replicas)
    else:
        grid = bench.desk_grid(replicas=args.replicas)
    report = bench.profile(grid, ops=tuple(args.ops), seed=args.seed)

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "profile.csv")
    report.write_json(out / "profile.json")

    for op in args.ops:
        frames_slope, residues_slope = report.slopes(op)
        fmt = lambda s: "n/a" if s is None else f"{s:.2f}"  # noqa: E731
        print(f"{op}: frames slope = {fmt(frames_slope)}, "
              f"residues slope = {fmt(residues_slope)}")
    print(f"wrote {out / 'profile.csv'} and {out / 'profile.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
