"""Run the full analysis chain on a synthetic two-state complex.

Generates the demo system if it is not already present, then drives the
installed command-line tool in-process: featurize -> kinetics ->
similarity -> cluster -> associate.  All reports land in the working
directory, so this doubles as a smoke test of the CLI surface.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
from make_synthetic_system import build_two_state_complex  # noqa: E402

from orientmd import cli, trajio  # noqa: E402


def run(args):
    print("$ orientmd " + " ".join(args))
    rc = cli.main(args)
    if rc != 0:
        raise SystemExit(rc)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="demo_run", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    traj_path = work / "trajectory.mpb1"
    crystal_path = work / "crystal.mpb1"
    if not traj_path.exists() or not crystal_path.exists():
        traj, crystal = build_two_state_complex(seed=args.seed)
        trajio.save_trajectory(traj, traj_path)
        trajio.save_trajectory(crystal, crystal_path)

    out = ["--output-dir", str(work), "--seed", str(args.seed)]
    run(["featurize", "--trajectory", str(traj_path),
         "--kinds", "ca", "orientation", *out])
    run(["kinetics", "--features", str(work / "features_orientation.mpf1"),
         "--lag", "5", *out])
    run(["similarity", "--features", str(work / "features_ca.mpf1"),
         str(work / "features_orientation.mpf1"),
         "--rank1", "3", "--trajectory", str(traj_path), *out])
    run(["cluster", "--features", str(work / "features_ca.mpf1"),
         "--n-clusters", "2", *out])
    run(["associate", "--trajectory", str(traj_path),
         "--reference", str(crystal_path), "--metric", "cog", *out])

    print("\nreports:")
    for name in sorted(p.name for p in work.glob("*.json")):
        print(f"  {work / name}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
