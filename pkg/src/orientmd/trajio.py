"""Backbone trajectory ingest, reference parsing and rigid-body superposition.

Two trajectory carriers are supported and auto-detected:

* MPB1 binary: little-endian header ``magic "MPB1" | u32 version=1 | u32
  n_frames | u32 n_residues | u8 atom_count=3 | 7 reserved bytes`` followed
  by ``T * R * 3`` float32 ``(x, y, z)`` triples in angstrom, ordered
  frame-major, then residue, then atom ``(N, CA, C)``.  An optional trailing
  block of ``R`` ASCII bytes carries per-residue chain identifiers.
* CSV fallback with columns ``frame,residue,atom,x,y,z`` and atom names
  ``N``, ``CA``, ``C``.

Reference structures come from a fixed-width PDB subset reader (ATOM records
only, first altloc wins).  Superposition is Kabsch's SVD solution with the
usual determinant correction so a proper rotation is always returned.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, FormatError, TopologyError

MPB_MAGIC = b"MPB1"
MPB_VERSION = 1
# magic | u32 version | u32 frames | u32 residues | u8 atoms | 7 reserved
_HEADER_SIZE = 24

ATOM_NAMES = ("N", "CA", "C")
_ATOM_INDEX = {name: i for i, name in enumerate(ATOM_NAMES)}


# ---------------------------------------------------------------------------
# containers


def _as_chain_ids(chain_ids, n_residues):
    if chain_ids is None:
        return np.full(n_residues, "A", dtype="<U1")
    arr = np.asarray(chain_ids, dtype="<U1")
    if arr.shape != (n_residues,):
        raise TopologyError(
            f"chain id block has {arr.shape} entries for {n_residues} residues"
        )
    return arr


@dataclass
class BackboneTrajectory:
    """Coordinates ``(T, R, 3, 3)`` float64 in angstrom, atoms (N, CA, C)."""

    coords: np.ndarray
    chain_ids: np.ndarray = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 4 or self.coords.shape[2:] != (3, 3):
            raise TopologyError(
                f"expected (T, R, 3, 3) backbone coordinates, got {self.coords.shape}"
            )
        if self.coords.shape[0] == 0:
            raise TopologyError("trajectory contains no frames")
        if self.coords.shape[1] == 0:
            raise TopologyError("trajectory contains no residues")
        if not np.isfinite(self.coords).all():
            raise TopologyError("trajectory contains non-finite coordinates")
        self.chain_ids = _as_chain_ids(self.chain_ids, self.coords.shape[1])

    @property
    def n_frames(self):
        return self.coords.shape[0]

    @property
    def n_residues(self):
        return self.coords.shape[1]

    def ca(self):
        """CA coordinates, shape (T, R, 3)."""
        return self.coords[:, :, 1, :]

    def chains(self):
        """Chain identifiers in order of first appearance."""
        seen = []
        for c in self.chain_ids:
            if c not in seen:
                seen.append(c)
        return seen


@dataclass
class ReferenceStructure:
    """Single-structure backbone ``(R, 3, 3)`` with author residue numbers."""

    coords: np.ndarray
    chain_ids: np.ndarray = None
    residue_numbers: np.ndarray = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[1:] != (3, 3):
            raise TopologyError(
                f"expected (R, 3, 3) reference coordinates, got {self.coords.shape}"
            )
        if not np.isfinite(self.coords).all():
            raise TopologyError("reference contains non-finite coordinates")
        n = self.coords.shape[0]
        self.chain_ids = _as_chain_ids(self.chain_ids, n)
        if self.residue_numbers is None:
            self.residue_numbers = np.arange(n, dtype=np.int64)
        else:
            self.residue_numbers = np.asarray(self.residue_numbers, dtype=np.int64)
            if self.residue_numbers.shape != (n,):
                raise TopologyError("residue_numbers length mismatch")

    @property
    def n_residues(self):
        return self.coords.shape[0]

    def ca(self):
        return self.coords[:, 1, :]


@dataclass
class Superposition:
    """Rigid map ``x -> rotation @ x + translation`` with its fit RMSD."""

    rotation: np.ndarray
    translation: np.ndarray
    rmsd: float

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


# ---------------------------------------------------------------------------
# MPB1 binary + CSV trajectory I/O


def _apply_selection(coords, stride, frame_range):
    if stride < 1 or int(stride) != stride:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    n = coords.shape[0]
    if frame_range is not None:
        start, stop = frame_range
        if not (0 <= start <= stop <= n):
            raise ValueError(
                f"frame_range {frame_range} outside trajectory of {n} frames"
            )
        coords = coords[start:stop]
    return coords[:: int(stride)]


def _load_binary(raw, stride, frame_range, path):
    if len(raw) < _HEADER_SIZE:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    magic = raw[:4]
    if magic != MPB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    version, n_frames, n_residues, atom_count = struct.unpack_from("<IIIB", raw, 4)
    if version != MPB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    if atom_count != 3:
        raise FormatError(f"{path}: atom_count {atom_count} != 3", offset=16)
    n_values = n_frames * n_residues * 9
    payload_bytes = n_values * 4
    avail = len(raw) - _HEADER_SIZE
    if avail < payload_bytes:
        raise FormatError(
            f"{path}: payload needs {payload_bytes} bytes, found {avail}",
            offset=len(raw),
        )
    coords = np.frombuffer(raw, dtype="<f4", count=n_values, offset=_HEADER_SIZE)
    coords = coords.astype(np.float64).reshape(n_frames, n_residues, 3, 3)
    trailer = raw[_HEADER_SIZE + payload_bytes:]
    if len(trailer) == 0:
        chain_ids = None
    elif len(trailer) == n_residues:
        chain_ids = np.array([chr(b) for b in trailer], dtype="<U1")
    else:
        raise FormatError(
            f"{path}: {len(trailer)} trailing bytes; expected 0 or {n_residues} "
            "chain ids",
            offset=_HEADER_SIZE + payload_bytes,
        )
    coords = _apply_selection(coords, stride, frame_range)
    return BackboneTrajectory(coords, chain_ids)


def _load_csv(path, stride, frame_range):
    frames, residues, atoms, xyz = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() == "frame":
                continue  # header line
            if len(row) != 6:
                raise FormatError(f"{path}: line {lineno}: expected 6 columns")
            try:
                frames.append(int(row[0]))
                residues.append(int(row[1]))
                xyz.append((float(row[3]), float(row[4]), float(row[5])))
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
            name = row[2].strip().upper()
            if name not in _ATOM_INDEX:
                raise FormatError(
                    f"{path}: line {lineno}: unknown atom name {row[2]!r}"
                )
            atoms.append(_ATOM_INDEX[name])
    if not frames:
        raise TopologyError(f"{path}: no coordinate rows")

    frames = np.asarray(frames)
    residues = np.asarray(residues)
    atoms = np.asarray(atoms)
    xyz = np.asarray(xyz, dtype=np.float64)

    frame_ids, f_idx = np.unique(frames, return_inverse=True)
    res_ids, r_idx = np.unique(residues, return_inverse=True)
    n_frames, n_residues = len(frame_ids), len(res_ids)
    slots = (f_idx * n_residues + r_idx) * 3 + atoms
    counts = np.bincount(slots, minlength=n_frames * n_residues * 3)
    if counts.max() > 1:
        bad = int(np.argmax(counts > 1))
        raise TopologyError(
            f"{path}: duplicate row for frame {frame_ids[bad // (n_residues * 3)]}, "
            f"residue {res_ids[bad // 3 % n_residues]}, atom {ATOM_NAMES[bad % 3]}"
        )
    if counts.min() < 1:
        bad = int(np.argmin(counts))
        raise TopologyError(
            f"{path}: missing frame {frame_ids[bad // (n_residues * 3)]}, "
            f"residue {res_ids[bad // 3 % n_residues]}, atom {ATOM_NAMES[bad % 3]}"
        )
    coords = np.empty((n_frames * n_residues * 3, 3))
    coords[slots] = xyz
    coords = coords.reshape(n_frames, n_residues, 3, 3)
    coords = _apply_selection(coords, stride, frame_range)
    return BackboneTrajectory(coords, None)


def load_trajectory(path, stride=1, frame_range=None):
    """Load an MPB1 or CSV trajectory.

    ``frame_range`` is an optional ``(start, stop)`` half-open mask applied
    before ``stride``; the loader never truncates silently, so any frame
    bookkeeping convention has to be spelled out by the caller.
    """
    path = str(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] == MPB_MAGIC:
        return _load_binary(raw, stride, frame_range, path)
    # Binary-looking content without the magic is a broken MPB1 file, not CSV.
    if b"\x00" in raw or _is_binary(raw):
        raise FormatError(f"{path}: not an MPB1 file (bad magic)", offset=0)
    return _load_csv(path, stride, frame_range)


def _is_binary(raw):
    try:
        raw.decode("utf-8")
    except UnicodeDecodeError:
        return True
    return False


def save_trajectory(traj, path, chain_block=True):
    """Write MPB1.  Coordinates are stored as float32; a round trip through
    ``load_trajectory`` is bit-exact for float32-representable input."""
    header = MPB_MAGIC + struct.pack(
        "<IIIB7x", MPB_VERSION, traj.n_frames, traj.n_residues, 3
    )
    payload = np.ascontiguousarray(traj.coords, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        if chain_block:
            fh.write("".join(traj.chain_ids).encode("ascii"))


def save_trajectory_csv(traj, path):
    """Write the CSV fallback representation."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "residue", "atom", "x", "y", "z"])
        for t in range(traj.n_frames):
            for r in range(traj.n_residues):
                for a, name in enumerate(ATOM_NAMES):
                    x, y, z = traj.coords[t, r, a]
                    writer.writerow(
                        [t, r, name, repr(float(x)), repr(float(y)), repr(float(z))]
                    )


# ---------------------------------------------------------------------------
# PDB subset reference reader


def parse_reference(path):
    """Parse ATOM records of a PDB v3.3 file into a ReferenceStructure.

    HETATM and unknown records are ignored; for alternate locations the
    blank or 'A' altloc wins and any others are skipped with one warning.
    Every residue must provide all three backbone atoms.
    """
    path = str(path)
    order = []
    per_residue = {}
    skipped_altloc = False
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.startswith("ATOM"):
                continue
            if len(line) < 54:
                raise FormatError(f"{path}: line {lineno}: ATOM record too short")
            name = line[12:16].strip()
            if name not in _ATOM_INDEX:
                continue
            altloc = line[16]
            if altloc not in (" ", "A"):
                skipped_altloc = True
                continue
            chain = line[21]
            try:
                resseq = int(line[22:26])
                x = float(line[30:38])
                y = float(line[38:46])
                z = float(line[46:54])
            except ValueError:
                raise FormatError(
                    f"{path}: line {lineno}: malformed ATOM record"
                ) from None
            icode = line[26]
            key = (chain, resseq, icode)
            if key not in per_residue:
                per_residue[key] = {}
                order.append(key)
            # first accepted occurrence wins
            per_residue[key].setdefault(_ATOM_INDEX[name], (x, y, z))
    if skipped_altloc:
        warnings.warn(
            f"{path}: alternate locations other than 'A' were ignored",
            RuntimeWarning,
            stacklevel=2,
        )
    if not order:
        raise TopologyError(f"{path}: no usable ATOM records")
    coords = np.empty((len(order), 3, 3))
    chains = []
    numbers = []
    for i, key in enumerate(order):
        atoms = per_residue[key]
        missing = [ATOM_NAMES[a] for a in range(3) if a not in atoms]
        if missing:
            chain, resseq, icode = key
            raise TopologyError(
                f"{path}: residue {chain}{resseq}{icode.strip()} missing "
                f"backbone atom(s) {', '.join(missing)}"
            )
        for a in range(3):
            coords[i, a] = atoms[a]
        chains.append(key[0])
        numbers.append(key[1])
    return ReferenceStructure(coords, np.array(chains, dtype="<U1"), np.array(numbers))


# ---------------------------------------------------------------------------
# Kabsch superposition


def kabsch(moving, target):
    """Least-squares rigid superposition of `moving` onto `target`.

    Both inputs are ``(n, 3)`` with ``n >= 3``.  Returns a Superposition
    whose rotation always has determinant +1: if the best orthogonal map is
    a reflection, the singular direction with the smallest singular value is
    flipped.  Collinear (rank < 2) point sets are rejected.
    """
    p = np.asarray(moving, dtype=np.float64)
    q = np.asarray(target, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"point sets must share shape (n, 3), got {p.shape}, {q.shape}")
    if p.shape[0] < 3:
        raise ValueError("superposition needs at least 3 points")
    cm = p.mean(axis=0)
    ct = q.mean(axis=0)
    pc = p - cm
    qc = q - ct
    h = pc.T @ qc
    u, s, vt = np.linalg.svd(h)
    if s[1] <= 1e-10 * max(s[0], 1e-300):
        raise DegenerateGeometryError(
            "point set is collinear; rotation is not determined"
        )
    d = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    rot = (vt.T * np.array([1.0, 1.0, d])) @ u.T
    translation = ct - rot @ cm
    rmsd = float(np.sqrt(np.mean(np.sum((pc @ rot.T - qc) ** 2, axis=1))))
    return Superposition(rot, translation, rmsd)


def _selection_points(coords, selection):
    """(T, R, 3, 3) -> (T, n_points, 3) for 'ca' or 'backbone'."""
    if selection == "ca":
        return coords[:, :, 1, :]
    if selection == "backbone":
        t = coords.shape[0]
        return coords.reshape(t, -1, 3)
    raise ValueError(f"unknown atom selection {selection!r}")


def align_trajectory(traj, reference, selection="ca", per_chain=False):
    """Superpose every frame onto the reference structure.

    ``selection`` picks the fit atoms ("ca" or "backbone"); the transform is
    always applied to all backbone atoms.  With ``per_chain`` each chain is
    fitted and moved independently.  Residue counts (and chain layout, for
    per-chain mode) must match exactly; missing residues are an error, never
    silently skipped.
    """
    if traj.n_residues != reference.n_residues:
        raise TopologyError(
            f"trajectory has {traj.n_residues} residues, reference "
            f"{reference.n_residues}"
        )
    out = np.empty_like(traj.coords)
    if per_chain:
        if not np.array_equal(traj.chain_ids, reference.chain_ids):
            raise TopologyError("chain layout differs between trajectory and reference")
        groups = [np.where(traj.chain_ids == c)[0] for c in traj.chains()]
    else:
        groups = [np.arange(traj.n_residues)]
    for idx in groups:
        sub = traj.coords[:, idx]
        ref_pts = _selection_points(reference.coords[None, idx], selection)[0]
        mov_pts = _selection_points(sub, selection)
        for t in range(traj.n_frames):
            fit = kabsch(mov_pts[t], ref_pts)
            out[t, idx] = fit.apply(sub[t].reshape(-1, 3)).reshape(sub[t].shape)
    return BackboneTrajectory(out, traj.chain_ids.copy())
