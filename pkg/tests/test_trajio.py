"""Trajectory I/O, PDB parsing and Kabsch superposition."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orientmd import trajio
from orientmd.errors import DegenerateGeometryError, FormatError, TopologyError

from helpers import apply_rigid, make_backbone_trajectory, random_rotation


@pytest.fixture
def traj(tmp_path):
    rng = np.random.default_rng(42)
    coords = make_backbone_trajectory(rng, n_frames=5, n_residues=7)
    return trajio.BackboneTrajectory(coords, np.array(list("AAAABBB")))


# ---------------------------------------------------------------------------
# MPB1 binary round trips


def test_binary_round_trip_bit_exact(traj, tmp_path):
    path = tmp_path / "t.mpb"
    trajio.save_trajectory(traj, path)
    back = trajio.load_trajectory(path)
    # storage is float32; comparing against the f32 cast is bit-exact
    assert np.array_equal(back.coords, traj.coords.astype(np.float32).astype(np.float64))
    assert np.array_equal(back.chain_ids, traj.chain_ids)
    trajio.save_trajectory(back, tmp_path / "t2.mpb")
    assert (tmp_path / "t.mpb").read_bytes() == (tmp_path / "t2.mpb").read_bytes()


def test_chain_block_optional(traj, tmp_path):
    path = tmp_path / "t.mpb"
    trajio.save_trajectory(traj, path, chain_block=False)
    back = trajio.load_trajectory(path)
    assert np.array_equal(back.chain_ids, np.full(traj.n_residues, "A"))


def test_stride_matches_dense_load(traj, tmp_path):
    path = tmp_path / "t.mpb"
    trajio.save_trajectory(traj, path)
    dense = trajio.load_trajectory(path)
    strided = trajio.load_trajectory(path, stride=2)
    assert np.array_equal(strided.coords, dense.coords[::2])


def test_frame_range_applied_before_stride(traj, tmp_path):
    path = tmp_path / "t.mpb"
    trajio.save_trajectory(traj, path)
    dense = trajio.load_trajectory(path)
    masked = trajio.load_trajectory(path, stride=2, frame_range=(1, 5))
    assert np.array_equal(masked.coords, dense.coords[1:5][::2])


def test_bad_magic_reports_offset_zero(tmp_path):
    path = tmp_path / "bad.mpb"
    path.write_bytes(b"MPBX" + b"\x00" * 40)
    with pytest.raises(FormatError) as err:
        trajio.load_trajectory(path)
    assert err.value.offset == 0


def test_bad_version_reports_offset(tmp_path):
    path = tmp_path / "bad.mpb"
    path.write_bytes(trajio.MPB_MAGIC + struct.pack("<IIIB7x", 9, 1, 1, 3) + b"\x00" * 36)
    with pytest.raises(FormatError) as err:
        trajio.load_trajectory(path)
    assert err.value.offset == 4


def test_truncated_payload_reports_offset(traj, tmp_path):
    path = tmp_path / "t.mpb"
    trajio.save_trajectory(traj, path, chain_block=False)
    raw = path.read_bytes()
    cut = tmp_path / "cut.mpb"
    cut.write_bytes(raw[:-5])
    with pytest.raises(FormatError) as err:
        trajio.load_trajectory(cut)
    assert err.value.offset == len(raw) - 5


def test_wrong_atom_count_rejected(tmp_path):
    path = tmp_path / "bad.mpb"
    path.write_bytes(trajio.MPB_MAGIC + struct.pack("<IIIB7x", 1, 1, 1, 4) + b"\x00" * 48)
    with pytest.raises(FormatError) as err:
        trajio.load_trajectory(path)
    assert err.value.offset == 16


def test_bad_trailer_length_rejected(traj, tmp_path):
    path = tmp_path / "t.mpb"
    trajio.save_trajectory(traj, path, chain_block=False)
    with open(path, "ab") as fh:
        fh.write(b"AB")  # neither 0 nor R=7 bytes
    with pytest.raises(FormatError):
        trajio.load_trajectory(path)


def test_invalid_stride_and_range(traj, tmp_path):
    path = tmp_path / "t.mpb"
    trajio.save_trajectory(traj, path)
    with pytest.raises(ValueError):
        trajio.load_trajectory(path, stride=0)
    with pytest.raises(ValueError):
        trajio.load_trajectory(path, frame_range=(0, 99))


# ---------------------------------------------------------------------------
# CSV fallback


def test_csv_round_trip_matches_binary(traj, tmp_path):
    bpath, cpath = tmp_path / "t.mpb", tmp_path / "t.csv"
    trajio.save_trajectory(traj, bpath)
    trajio.save_trajectory_csv(traj, cpath)
    from_bin = trajio.load_trajectory(bpath)
    from_csv = trajio.load_trajectory(cpath)
    assert np.allclose(from_csv.coords, traj.coords, atol=0)
    assert np.allclose(from_bin.coords, from_csv.coords, atol=1e-6)


def test_csv_missing_row_is_structural_error(traj, tmp_path):
    cpath = tmp_path / "t.csv"
    trajio.save_trajectory_csv(traj, cpath)
    lines = cpath.read_text().splitlines()
    cpath.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(TopologyError):
        trajio.load_trajectory(cpath)


def test_csv_duplicate_row_is_structural_error(traj, tmp_path):
    cpath = tmp_path / "t.csv"
    trajio.save_trajectory_csv(traj, cpath)
    lines = cpath.read_text().splitlines()
    cpath.write_text("\n".join(lines + [lines[-1]]) + "\n")
    with pytest.raises(TopologyError):
        trajio.load_trajectory(cpath)


def test_csv_unknown_atom_name(tmp_path):
    cpath = tmp_path / "t.csv"
    cpath.write_text("frame,residue,atom,x,y,z\n0,0,CB,0,0,0\n")
    with pytest.raises(FormatError):
        trajio.load_trajectory(cpath)


# ---------------------------------------------------------------------------
# PDB subset parsing


def _pdb_atom(serial, name, resseq, x, y, z, chain="A", altloc=" "):
    return (
        f"ATOM  {serial:5d} {name:<4s}{altloc}ALA {chain}{resseq:4d}    "
        f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00           {name[0]}\n"
    )


def test_parse_reference_basic(tmp_path):
    path = tmp_path / "ref.pdb"
    path.write_text(
        _pdb_atom(1, "N", 1, 1.0, 0.0, 0.0)
        + _pdb_atom(2, "CA", 1, 0.0, 0.0, 0.0)
        + _pdb_atom(3, "C", 1, 0.0, 1.0, 0.0)
        + "HETATM    4  O   HOH A 200      9.000   9.000   9.000\n"
        + _pdb_atom(5, "N", 2, 4.0, 0.0, 0.0, chain="B")
        + _pdb_atom(6, "CA", 2, 3.0, 0.0, 0.0, chain="B")
        + _pdb_atom(7, "C", 2, 3.0, 1.0, 0.0, chain="B")
        + "END\n"
    )
    ref = trajio.parse_reference(path)
    assert ref.n_residues == 2
    assert np.array_equal(ref.chain_ids, ["A", "B"])
    assert np.array_equal(ref.residue_numbers, [1, 2])
    assert np.allclose(ref.coords[0, 0], [1, 0, 0])
    assert np.allclose(ref.coords[1, 1], [3, 0, 0])


def test_parse_reference_missing_atom_names_residue(tmp_path):
    path = tmp_path / "ref.pdb"
    path.write_text(
        _pdb_atom(1, "N", 7, 1.0, 0.0, 0.0) + _pdb_atom(2, "CA", 7, 0.0, 0.0, 0.0)
    )
    with pytest.raises(TopologyError, match="A7"):
        trajio.parse_reference(path)


def test_parse_reference_altloc_first_wins(tmp_path):
    path = tmp_path / "ref.pdb"
    path.write_text(
        _pdb_atom(1, "N", 1, 1.0, 0.0, 0.0, altloc="A")
        + _pdb_atom(2, "N", 1, 9.0, 9.0, 9.0, altloc="B")
        + _pdb_atom(3, "CA", 1, 0.0, 0.0, 0.0)
        + _pdb_atom(4, "C", 1, 0.0, 1.0, 0.0)
    )
    with pytest.warns(RuntimeWarning):
        ref = trajio.parse_reference(path)
    assert np.allclose(ref.coords[0, 0], [1, 0, 0])


def test_parse_reference_side_chain_atoms_ignored(tmp_path):
    path = tmp_path / "ref.pdb"
    path.write_text(
        _pdb_atom(1, "N", 1, 1.0, 0.0, 0.0)
        + _pdb_atom(2, "CA", 1, 0.0, 0.0, 0.0)
        + _pdb_atom(3, "CB", 1, 5.0, 5.0, 5.0)
        + _pdb_atom(4, "C", 1, 0.0, 1.0, 0.0)
    )
    ref = trajio.parse_reference(path)
    assert ref.n_residues == 1


# ---------------------------------------------------------------------------
# Kabsch


def test_kabsch_recovers_known_transform():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(10, 3)) * 3.0
    rot = random_rotation(rng)
    t = np.array([1.0, -2.0, 0.5])
    fit = trajio.kabsch(pts, apply_rigid(pts, rot, t))
    assert np.abs(fit.rotation - rot).max() < 1e-12
    assert np.abs(fit.translation - t).max() < 1e-10
    assert fit.rmsd < 1e-12


def test_kabsch_rmsd_matches_euler_grid_oracle():
    # Brute-force oracle: scan proper rotations on a 1-degree z-y-z Euler
    # grid.  With H = sum p q^T the pair RMSD is a linear function of
    # tr(M H), so the scan only touches 3x3 quantities.
    rng = np.random.default_rng(2)
    p = rng.normal(size=(10, 3)) * 2.0
    q = rng.normal(size=(10, 3)) * 2.0
    fit = trajio.kabsch(p, q)

    pc = p - p.mean(axis=0)
    qc = q - q.mean(axis=0)
    h = np.einsum("ni,nj->ij", pc, qc)
    sp = np.sum(pc * pc) + np.sum(qc * qc)

    step = np.deg2rad(1.0)
    beta = np.arange(0.0, np.pi + step / 2, step)
    gamma = np.arange(0.0, 2 * np.pi, step)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    # B = Ry(beta) @ Rz(gamma) for every (beta, gamma) pair
    b = np.zeros((len(beta), len(gamma), 3, 3))
    b[..., 0, 0] = cb[:, None] * cg[None, :]
    b[..., 0, 1] = -cb[:, None] * sg[None, :]
    b[..., 0, 2] = sb[:, None]
    b[..., 1, 0] = sg[None, :]
    b[..., 1, 1] = cg[None, :]
    b[..., 2, 0] = -sb[:, None] * cg[None, :]
    b[..., 2, 1] = sb[:, None] * sg[None, :]
    b[..., 2, 2] = cb[:, None]
    c = np.einsum("bgij,jk->bgik", b, h).reshape(-1, 3, 3)
    u = c[:, 0, 0] + c[:, 1, 1]
    v = c[:, 0, 1] - c[:, 1, 0]
    w = c[:, 2, 2]
    alpha = np.arange(0.0, 2 * np.pi, step)
    best = -np.inf
    for ca, sa in zip(np.cos(alpha), np.sin(alpha)):
        best = max(best, float(np.max(ca * u + sa * v + w)))
    grid_rmsd = np.sqrt((sp - 2.0 * best) / len(p))
    assert fit.rmsd <= grid_rmsd + 1e-12
    assert abs(fit.rmsd - grid_rmsd) < 1e-3


def test_kabsch_reflection_case_stays_proper():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(8, 3))
    mirrored = pts * np.array([1.0, 1.0, -1.0])
    fit = trajio.kabsch(pts, mirrored)
    assert abs(np.linalg.det(fit.rotation) - 1.0) < 1e-12
    assert fit.rmsd > 0.1


def test_kabsch_collinear_rejected():
    pts = np.outer(np.arange(5.0), [1.0, 2.0, 0.5])
    with pytest.raises(DegenerateGeometryError):
        trajio.kabsch(pts, pts + 1.0)


def test_kabsch_too_few_points():
    with pytest.raises(ValueError):
        trajio.kabsch(np.zeros((2, 3)), np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kabsch_rigid_motion_invariance(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(6, 3))
    q = rng.normal(size=(6, 3))
    base = trajio.kabsch(p, q).rmsd
    rot = random_rotation(rng)
    t = rng.normal(size=3) * 5
    moved = trajio.kabsch(apply_rigid(p, rot, t), apply_rigid(q, rot, t)).rmsd
    assert abs(base - moved) < 1e-8


# ---------------------------------------------------------------------------
# trajectory alignment


def test_align_removes_rigid_motion(traj):
    ref = trajio.ReferenceStructure(
        traj.coords[0], traj.chain_ids, np.arange(traj.n_residues)
    )
    rng = np.random.default_rng(4)
    moved = traj.coords.copy()
    for t in range(traj.n_frames):
        moved[t] = apply_rigid(
            moved[t].reshape(-1, 3), random_rotation(rng), rng.normal(size=3) * 10
        ).reshape(moved[t].shape)
    aligned = trajio.align_trajectory(
        trajio.BackboneTrajectory(moved, traj.chain_ids), ref
    )
    for t in range(traj.n_frames):
        fit = trajio.kabsch(aligned.coords[t, :, 1, :], traj.coords[t, :, 1, :])
        assert fit.rmsd < 1e-6


def test_align_idempotent(traj):
    ref = trajio.ReferenceStructure(traj.coords[2], traj.chain_ids)
    once = trajio.align_trajectory(traj, ref)
    twice = trajio.align_trajectory(once, ref)
    assert np.abs(once.coords - twice.coords).max() < 1e-8


def test_align_backbone_selection(traj):
    ref = trajio.ReferenceStructure(traj.coords[0], traj.chain_ids)
    aligned = trajio.align_trajectory(traj, ref, selection="backbone")
    assert aligned.coords.shape == traj.coords.shape
    assert np.abs(aligned.coords[0] - traj.coords[0]).max() < 1e-10


def test_align_per_chain_beats_global_for_hinged_motion(traj):
    ref = trajio.ReferenceStructure(traj.coords[0], traj.chain_ids)
    rng = np.random.default_rng(5)
    moved = traj.coords.copy()
    mask_b = traj.chain_ids == "B"
    for t in range(traj.n_frames):  # rigidly scatter chain B only
        moved[t, mask_b] = apply_rigid(
            moved[t, mask_b].reshape(-1, 3), random_rotation(rng), rng.normal(size=3) * 8
        ).reshape(moved[t, mask_b].shape)
    hinged = trajio.BackboneTrajectory(moved, traj.chain_ids)
    per_chain = trajio.align_trajectory(hinged, ref, per_chain=True)
    for t in range(traj.n_frames):
        for chain in ("A", "B"):
            m = traj.chain_ids == chain
            fit = trajio.kabsch(per_chain.coords[t, m, 1, :], traj.coords[t, m, 1, :])
            assert fit.rmsd < 1e-6


def test_align_residue_mismatch(traj):
    ref = trajio.ReferenceStructure(traj.coords[0, :-1], traj.chain_ids[:-1])
    with pytest.raises(TopologyError):
        trajio.align_trajectory(traj, ref)


def test_empty_trajectory_rejected():
    with pytest.raises(TopologyError):
        trajio.BackboneTrajectory(np.zeros((0, 3, 3, 3)))


def test_non_finite_rejected():
    coords = np.zeros((1, 2, 3, 3))
    coords[0, 0, 0, 0] = np.nan
    with pytest.raises(TopologyError):
        trajio.BackboneTrajectory(coords)
