"""Synthetic-data generators and a scaling profiler for the core kernels.

Four operations are profiled over a grid of frame counts T and residue
counts R, both powers of two: the batched SO(3) log with validation on, the
point-cloud log map with its tangent operator prebuilt, the metric-tensor
assembly, and the metric pseudo-inverse.  Input generation, operator setup
and one warm-up execution are excluded from the timings; each cell is then
timed over independent replicas with ``time.perf_counter``.

Cheap kernels are amortized over a deterministic repetition count so a
single timing never sits at the clock floor; recorded seconds are always
per single execution.  SO(3) logs run in bounded frame chunks, matching the
frame-wise production configuration, so the timed region scales with T * R
rather than with one giant allocation.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import pointcloud, so3
from .features import LcsStack

PROFILE_OPS = ("so3_log", "pointcloud_log", "metric_tensor", "metric_inverse")

# frames per chunk for the batched SO(3) log; ~2^18 rotation matrices
SO3_CHUNK_ELEMENTS = 2 ** 18

# amortization targets: repetitions are chosen so one timed region covers at
# least this much nominal work (rotations for frame ops, residues for the
# per-structure metric ops)
_FRAME_OP_MIN_WORK = 2 ** 12
_METRIC_TENSOR_MIN_WORK = 2 ** 14
_METRIC_INVERSE_MIN_WORK = 2 ** 11


def _is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ProfileGrid:
    """Cross product of frame and residue counts, all powers of two."""

    sample_counts: tuple
    residue_counts: tuple
    replicas: int = 3

    def __post_init__(self):
        object.__setattr__(self, "sample_counts",
                           tuple(int(t) for t in self.sample_counts))
        object.__setattr__(self, "residue_counts",
                           tuple(int(r) for r in self.residue_counts))
        if not self.sample_counts or not self.residue_counts:
            raise ValueError("grid needs at least one frame and residue count")
        for t in self.sample_counts:
            if not _is_power_of_two(t):
                raise ValueError(f"sample counts must be powers of two, got {t}")
        for r in self.residue_counts:
            if not _is_power_of_two(r) or r < 2:
                raise ValueError(
                    f"residue counts must be powers of two >= 2, got {r}"
                )
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")

    def cells(self):
        return [(t, r) for t in self.sample_counts for r in self.residue_counts]


def desk_grid(replicas=3):
    """Default grid capped at T <= 2^16, R <= 2^8."""
    return ProfileGrid(
        tuple(2 ** k for k in range(0, 17)),
        tuple(2 ** k for k in range(2, 9)),
        replicas,
    )


def full_grid(replicas=3):
    """Complete sweep: T up to 2^19, R up to 2^9."""
    return ProfileGrid(
        tuple(2 ** k for k in range(0, 20)),
        tuple(2 ** k for k in range(2, 10)),
        replicas,
    )


# ---------------------------------------------------------------------------
# synthetic inputs


def gen_random_rotations(t, r, seed):
    """Deterministic ``(t, r)`` stack of uniform-axis random rotations.

    Axes are normalized Gaussian 3-vectors; angles are uniform on
    ``[0, pi)``, so the cut locus at exactly pi is never hit.  All draws
    happen up front in a fixed order, then Rodrigues conversion runs in
    bounded chunks; the output is bit-identical for a fixed seed regardless
    of chunking.
    """
    t, r = int(t), int(r)
    if t < 1 or r < 1:
        raise ValueError(f"need t, r >= 1, got ({t}, {r})")
    rng = np.random.default_rng(seed)
    axes = rng.normal(size=(t, r, 3))
    axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
    angles = rng.uniform(0.0, np.pi, size=(t, r))
    vecs = axes * angles[..., None]
    out = np.empty((t, r, 3, 3), dtype=np.float64)
    chunk = max(1, SO3_CHUNK_ELEMENTS // r)
    for lo in range(0, t, chunk):
        out[lo:lo + chunk] = so3.exp_map(vecs[lo:lo + chunk])
    return LcsStack(out)


def gen_random_pointclouds(t, r, seed):
    """Deterministic ``(t, r, 3)`` standard-normal point clouds."""
    t, r = int(t), int(r)
    if t < 1 or r < 1:
        raise ValueError(f"need t, r >= 1, got ({t}, {r})")
    rng = np.random.default_rng(seed)
    return rng.normal(size=(t, r, 3))


# ---------------------------------------------------------------------------
# profiled kernels

# each entry: (generator kind, repetitions for (t, r), runner factory); the
# factory receives the generated data and returns a zero-argument callable
# covering exactly one execution of the kernel


def _so3_log_runner(stack):
    rot = stack.rotations
    t, r = rot.shape[:2]
    chunk = max(1, SO3_CHUNK_ELEMENTS // r)

    def run():
        for lo in range(0, t, chunk):
            so3.log_map(rot[lo:lo + chunk], validate=True)

    return run


def _pointcloud_log_runner(clouds):
    op = pointcloud.tangent_operator(clouds[0])

    def run():
        pointcloud.pointcloud_log(clouds, op)

    return run


def _metric_tensor_runner(clouds):
    base = clouds[0]

    def run():
        pointcloud.metric_tensor(base)

    return run


def _metric_inverse_runner(clouds):
    metric = pointcloud.metric_tensor(clouds[0])

    def run():
        pointcloud.metric_pseudo_inverse(metric, 0.1)

    return run


def _repetitions(op, t, r):
    if op in ("so3_log", "pointcloud_log"):
        return max(1, _FRAME_OP_MIN_WORK // (t * r))
    if op == "metric_tensor":
        return max(1, _METRIC_TENSOR_MIN_WORK // r)
    return max(1, _METRIC_INVERSE_MIN_WORK // r)


_RUNNERS = {
    "so3_log": (gen_random_rotations, _so3_log_runner),
    "pointcloud_log": (gen_random_pointclouds, _pointcloud_log_runner),
    "metric_tensor": (gen_random_pointclouds, _metric_tensor_runner),
    "metric_inverse": (gen_random_pointclouds, _metric_inverse_runner),
}


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class ProfileCell:
    """Per-replica seconds for one operation at one grid point."""

    op: str
    n_frames: int
    n_residues: int
    seconds: tuple

    def __post_init__(self):
        object.__setattr__(self, "seconds",
                           tuple(float(s) for s in self.seconds))
        if any(s <= 0.0 for s in self.seconds):
            raise ValueError("timings must be positive")

    @property
    def mean_seconds(self):
        return float(np.mean(self.seconds))


@dataclass(frozen=True)
class ProfileReport:
    """Timing cells plus ratio / slope summaries of a profiling run."""

    grid: ProfileGrid
    seed: int
    cells: tuple

    def _lookup(self, op, t, r):
        for cell in self.cells:
            if cell.op == op and cell.n_frames == t and cell.n_residues == r:
                return cell
        raise KeyError(f"no cell for op={op}, T={t}, R={r}")

    def mean_seconds(self, op, t, r):
        return self._lookup(op, t, r).mean_seconds

    def ratio(self, op, base, target):
        """Mean-time ratio target / base, each a ``(t, r)`` pair."""
        return self.mean_seconds(op, *target) / self.mean_seconds(op, *base)

    def log_ratios(self, op):
        """log2 of each cell's mean time relative to the smallest cell."""
        sizes = [(c.n_frames, c.n_residues) for c in self.cells if c.op == op]
        if not sizes:
            raise KeyError(f"no cells for op={op}")
        smallest = min(sizes, key=lambda tr: (tr[0] * tr[1], tr))
        ref = self.mean_seconds(op, *smallest)
        return {
            (c.n_frames, c.n_residues): math.log2(c.mean_seconds / ref)
            for c in self.cells
            if c.op == op
        }

    def slopes(self, op):
        """Least-squares log-log slopes of time against T and R.

        Returns ``(frames_slope, residues_slope)``; a slope is None when
        the grid holds a single value in that dimension.
        """
        sel = [c for c in self.cells if c.op == op]
        if not sel:
            raise KeyError(f"no cells for op={op}")
        lt = np.log2([c.n_frames for c in sel])
        lr = np.log2([c.n_residues for c in sel])
        ly = np.log2([c.mean_seconds for c in sel])
        cols = [np.ones(len(sel))]
        idx = {}
        if np.unique(lt).size > 1:
            idx["frames"] = len(cols)
            cols.append(lt)
        if np.unique(lr).size > 1:
            idx["residues"] = len(cols)
            cols.append(lr)
        coef, *_ = np.linalg.lstsq(np.column_stack(cols), ly, rcond=None)
        return (
            float(coef[idx["frames"]]) if "frames" in idx else None,
            float(coef[idx["residues"]]) if "residues" in idx else None,
        )

    def ops(self):
        seen = []
        for cell in self.cells:
            if cell.op not in seen:
                seen.append(cell.op)
        return tuple(seen)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["op", "T", "R", "replica", "seconds"])
            for cell in self.cells:
                for i, s in enumerate(cell.seconds):
                    writer.writerow(
                        [cell.op, cell.n_frames, cell.n_residues, i,
                         repr(float(s))]
                    )

    def summary(self):
        ops = {}
        for op in self.ops():
            frames_slope, residues_slope = self.slopes(op)
            ratios = self.log_ratios(op)
            ops[op] = {
                "frames_slope": frames_slope,
                "residues_slope": residues_slope,
                "cells": [
                    {
                        "T": c.n_frames,
                        "R": c.n_residues,
                        "mean_seconds": c.mean_seconds,
                        "log2_ratio": ratios[(c.n_frames, c.n_residues)],
                    }
                    for c in self.cells
                    if c.op == op
                ],
            }
        return {"seed": self.seed, "replicas": self.grid.replicas, "ops": ops}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def profile(grid, ops=PROFILE_OPS, seed=0):
    """Time every requested operation over every grid cell.

    Inputs are regenerated per (op, cell) from the seed sequence
    ``[seed, op_index, t, r]``, so any sub-grid of a larger run sees
    identical data.  Setup and one warm-up execution are untimed; cheap
    kernels run several times per replica and report per-execution seconds.
    """
    ops = tuple(ops)
    for op in ops:
        if op not in _RUNNERS:
            raise ValueError(f"unknown operation {op!r}; "
                             f"choose from {', '.join(PROFILE_OPS)}")
    cells = []
    for op in ops:
        op_index = PROFILE_OPS.index(op)
        generate, make_runner = _RUNNERS[op]
        for t, r in grid.cells():
            data = generate(t, r, [seed, op_index, t, r])
            run = make_runner(data)
            reps = _repetitions(op, t, r)
            run()  # warm-up, discarded
            seconds = []
            for _ in range(grid.replicas):
                t0 = time.perf_counter()
                for _ in range(reps):
                    run()
                seconds.append((time.perf_counter() - t0) / reps)
            cells.append(ProfileCell(op, t, r, tuple(seconds)))
    return ProfileReport(grid, int(seed), tuple(cells))
