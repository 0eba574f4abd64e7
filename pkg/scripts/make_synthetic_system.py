"""Generate a synthetic two-chain complex trajectory for pipeline demos.

The system alternates between a bound and an unbound chain separation in
fixed-length frame blocks, with Gaussian jitter on every backbone atom.
Both the trajectory and the bound-state reference are written in the
binary trajectory format the command-line tool consumes, so the output
directory can be fed straight into `orientmd featurize` / `associate`.
"""

import argparse
from pathlib import Path

import numpy as np

from orientmd import trajio

CA_STEP = 3.8  # rough CA-CA spacing along each chain, angstrom


def residue(ca):
    """Minimal N/CA/C triple around a CA position."""
    ca = np.asarray(ca, dtype=np.float64)
    return np.stack([ca + [1.2, 0.6, 0.3], ca, ca + [-0.4, 1.3, 0.2]])


def complex_frame(n_a, n_b, gap):
    """Two parallel straight chains separated by `gap` along y."""
    cas = [np.array([CA_STEP * i, -gap / 2.0, 0.0]) for i in range(n_a)]
    cas += [np.array([CA_STEP * i, +gap / 2.0, 0.0]) for i in range(n_b)]
    return np.stack([residue(ca) for ca in cas])


def build_two_state_complex(
    n_a=5,
    n_b=4,
    block=50,
    n_blocks=12,
    bound_gap=4.0,
    unbound_gap=12.0,
    jitter=0.05,
    seed=0,
):
    """Alternating bound/unbound blocks; returns (trajectory, crystal)."""
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(n_blocks):
        gap = bound_gap if i % 2 == 0 else unbound_gap
        for _ in range(block):
            frames.append(
                complex_frame(n_a, n_b, gap)
                + jitter * rng.normal(size=(n_a + n_b, 3, 3))
            )
    chain_ids = ["A"] * n_a + ["B"] * n_b
    traj = trajio.BackboneTrajectory(np.stack(frames), chain_ids=chain_ids)
    crystal = trajio.BackboneTrajectory(
        complex_frame(n_a, n_b, bound_gap)[None], chain_ids=chain_ids
    )
    return traj, crystal


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output-dir", default="demo_system", help="where to write the files")
    ap.add_argument("--chain-a", type=int, default=5, help="residues in chain A")
    ap.add_argument("--chain-b", type=int, default=4, help="residues in chain B")
    ap.add_argument("--block", type=int, default=50, help="frames per state block")
    ap.add_argument("--blocks", type=int, default=12, help="number of alternating blocks")
    ap.add_argument("--bound-gap", type=float, default=4.0)
    ap.add_argument("--unbound-gap", type=float, default=12.0)
    ap.add_argument("--jitter", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj, crystal = build_two_state_complex(
        n_a=args.chain_a,
        n_b=args.chain_b,
        block=args.block,
        n_blocks=args.blocks,
        bound_gap=args.bound_gap,
        unbound_gap=args.unbound_gap,
        jitter=args.jitter,
        seed=args.seed,
    )
    trajio.save_trajectory(traj, out / "trajectory.mpb1")
    trajio.save_trajectory(crystal, out / "crystal.mpb1")
    print(f"{out / 'trajectory.mpb1'}: {traj.n_frames} frames, {traj.n_residues} residues")
    print(f"{out / 'crystal.mpb1'}: bound-state reference")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
