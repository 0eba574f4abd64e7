import json

import numpy as np
import pytest

from orientmd.association import (
    AssociationSeries,
    InterfaceDefinition,
    MetricKind,
    association_report,
    cog_distance,
    cog_series,
    detect_interface,
    irmsd,
    irmsd_series,
    kde_threshold,
    knn_mi,
    two_step_pca,
    write_association_csv,
    write_association_report,
)
from orientmd.errors import DegenerateModelError, TopologyError
from orientmd.trajio import BackboneTrajectory, ReferenceStructure

from helpers import apply_rigid, random_rotation, rot_z


def make_reference(ca, chain_ids):
    """Reference structure with given CA sites; N and C ride along."""
    ca = np.asarray(ca, dtype=np.float64)
    coords = np.empty((ca.shape[0], 3, 3))
    coords[:, 0] = ca + np.array([-0.5, 0.9, 0.1])
    coords[:, 1] = ca
    coords[:, 2] = ca + np.array([0.7, 0.6, -0.2])
    return ReferenceStructure(coords, np.asarray(chain_ids))


def two_chain_complex(n_a=6, n_b=6, gap=6.0):
    ca_a = np.array([[3.8 * i, 0.0, 0.0] for i in range(n_a)])
    ca_b = np.array([[3.8 * i, gap, 0.0] for i in range(n_b)])
    return make_reference(
        np.vstack([ca_a, ca_b]), ["A"] * n_a + ["B"] * n_b
    )


def horn_rmsd(p, q):
    """Closed-form superposition RMSD via the 4x4 quaternion key matrix."""
    pc = p - p.mean(axis=0)
    qc = q - q.mean(axis=0)
    s = pc.T @ qc
    key = np.array(
        [
            [
                s[0, 0] + s[1, 1] + s[2, 2],
                s[1, 2] - s[2, 1],
                s[2, 0] - s[0, 2],
                s[0, 1] - s[1, 0],
            ],
            [
                s[1, 2] - s[2, 1],
                s[0, 0] - s[1, 1] - s[2, 2],
                s[0, 1] + s[1, 0],
                s[2, 0] + s[0, 2],
            ],
            [
                s[2, 0] - s[0, 2],
                s[0, 1] + s[1, 0],
                -s[0, 0] + s[1, 1] - s[2, 2],
                s[1, 2] + s[2, 1],
            ],
            [
                s[0, 1] - s[1, 0],
                s[2, 0] + s[0, 2],
                s[1, 2] + s[2, 1],
                -s[0, 0] - s[1, 1] + s[2, 2],
            ],
        ]
    )
    lam = np.linalg.eigvalsh(key)[-1]
    msd = (np.sum(pc * pc) + np.sum(qc * qc) - 2.0 * lam) / len(p)
    return float(np.sqrt(max(msd, 0.0)))


class TestDetectInterface:
    def test_frozen_distance_table(self):
        # A0(0,0) B0(0,9): 9 in; A1(4,0) B0: sqrt(97)=9.85 in;
        # A2(8,0) B0: sqrt(145)=12.0 out, B1(8,11): 11 out; rest far
        ca = [
            [0.0, 0.0, 0.0],
            [4.0, 0.0, 0.0],
            [8.0, 0.0, 0.0],
            [30.0, 0.0, 0.0],
            [40.0, 0.0, 0.0],
            [0.0, 9.0, 0.0],
            [8.0, 11.0, 0.0],
            [30.0, 50.0, 0.0],
        ]
        crystal = make_reference(ca, ["A"] * 5 + ["B"] * 3)
        iface = detect_interface(crystal, cutoff=10.0)
        assert iface.residues_a.tolist() == [0, 1]
        assert iface.residues_b.tolist() == [5]
        assert iface.cutoff == 10.0

    def test_close_pair_both_in(self):
        crystal = make_reference(
            [[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]], ["A", "B"]
        )
        iface = detect_interface(crystal)
        assert iface.residues_a.tolist() == [0]
        assert iface.residues_b.tolist() == [1]

    def test_distant_chains_empty(self):
        crystal = make_reference(
            [[0.0, 0.0, 0.0], [12.0, 0.0, 0.0]], ["A", "B"]
        )
        iface = detect_interface(crystal)
        assert iface.is_empty

    def test_cutoff_boundary_inclusive(self):
        crystal = make_reference(
            [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]], ["A", "B"]
        )
        assert not detect_interface(crystal, cutoff=10.0).is_empty

    def test_single_chain_rejected(self):
        crystal = make_reference([[0.0, 0.0, 0.0], [3.8, 0.0, 0.0]], ["A", "A"])
        with pytest.raises(TopologyError, match="two chains"):
            detect_interface(crystal)

    def test_three_chains_rejected(self):
        crystal = make_reference(
            [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            ["A", "B", "C"],
        )
        with pytest.raises(TopologyError, match="two chains"):
            detect_interface(crystal)

    def test_bad_cutoff_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            InterfaceDefinition(np.array([0]), np.array([1]), -1.0)


class TestIrmsd:
    def test_crystal_frame_is_zero(self):
        crystal = two_chain_complex()
        iface = detect_interface(crystal)
        assert irmsd(crystal.coords, crystal, iface) <= 1e-10

    def test_rigid_motion_is_zero(self):
        rng = np.random.default_rng(0)
        crystal = two_chain_complex()
        iface = detect_interface(crystal)
        moved = apply_rigid(crystal.coords, random_rotation(rng), [4.0, -2.0, 7.0])
        assert irmsd(moved, crystal, iface) <= 1e-8

    def test_rotated_monomer_matches_quaternion_oracle(self):
        crystal = two_chain_complex()
        iface = detect_interface(crystal)
        sel = iface.joint()
        frame = crystal.coords.copy()
        b = np.asarray(crystal.chain_ids) == "B"
        pivot = crystal.ca()[sel].mean(axis=0)
        frame[b] = (frame[b] - pivot) @ rot_z(np.radians(10.0)).T + pivot
        got = irmsd(frame, crystal, iface)
        want = horn_rmsd(frame[sel, 1, :], crystal.ca()[sel])
        assert got > 0.1
        assert got == pytest.approx(want, abs=1e-8)

    def test_empty_interface_rejected(self):
        crystal = two_chain_complex(gap=50.0)
        iface = detect_interface(crystal)
        with pytest.raises(ValueError, match="interface is empty"):
            irmsd(crystal.coords, crystal, iface)

    def test_series_matches_per_frame(self):
        rng = np.random.default_rng(1)
        crystal = two_chain_complex()
        iface = detect_interface(crystal)
        coords = np.repeat(crystal.coords[None], 5, axis=0)
        coords += rng.normal(scale=0.3, size=coords.shape)
        traj = BackboneTrajectory(coords, crystal.chain_ids)
        series = irmsd_series(traj, crystal, iface)
        want = [irmsd(coords[t], crystal, iface) for t in range(5)]
        assert np.array_equal(series, want)

    def test_series_residue_mismatch_rejected(self):
        crystal = two_chain_complex()
        iface = detect_interface(crystal)
        traj = BackboneTrajectory(np.zeros((2, 3, 3, 3)) + np.eye(3))
        with pytest.raises(ValueError, match="residues"):
            irmsd_series(traj, crystal, iface)


class TestCogDistance:
    def test_identical_centroids_zero(self):
        ca = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0]]
        crystal = make_reference(ca, ["A", "A", "B", "B"])
        assert cog_distance(crystal.coords, crystal.chain_ids) == 0.0

    def test_three_four_five(self):
        ca_a = np.array([[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]])
        ca_b = ca_a + np.array([3.0, 4.0, 0.0])
        crystal = make_reference(np.vstack([ca_a, ca_b]), ["A", "A", "B", "B"])
        assert cog_distance(crystal.coords, crystal.chain_ids) == 5.0

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(2)
        ca = rng.normal(scale=10.0, size=(9, 3))
        chains = np.array(["A"] * 4 + ["B"] * 5)
        crystal = make_reference(ca, chains)
        got = cog_distance(crystal.coords, chains)
        cog_a = sum(ca[i] for i in range(4)) / 4
        cog_b = sum(ca[i] for i in range(4, 9)) / 5
        want = float(np.sqrt(((cog_a - cog_b) ** 2).sum()))
        assert got == pytest.approx(want, abs=1e-12)

    def test_chain_order_symmetric(self):
        rng = np.random.default_rng(3)
        ca = rng.normal(size=(6, 3))
        chains = np.array(["A"] * 3 + ["B"] * 3)
        crystal = make_reference(ca, chains)
        d_ab = cog_distance(crystal.coords, chains, chains=("A", "B"))
        d_ba = cog_distance(crystal.coords, chains, chains=("B", "A"))
        assert d_ab == d_ba

    def test_missing_chain_rejected(self):
        crystal = make_reference([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], ["A", "B"])
        with pytest.raises(TopologyError, match="empty"):
            cog_distance(crystal.coords, crystal.chain_ids, chains=("A", "C"))

    def test_explicit_chains_allow_third_chain(self):
        ca = [[0.0, 0.0, 0.0], [3.0, 4.0, 0.0], [99.0, 0.0, 0.0]]
        crystal = make_reference(ca, ["A", "B", "C"])
        d = cog_distance(crystal.coords, crystal.chain_ids, chains=("A", "B"))
        assert d == 5.0

    def test_series_matches_per_frame(self):
        rng = np.random.default_rng(4)
        crystal = two_chain_complex()
        coords = np.repeat(crystal.coords[None], 4, axis=0)
        coords += rng.normal(scale=0.5, size=coords.shape)
        traj = BackboneTrajectory(coords, crystal.chain_ids)
        series = cog_series(traj)
        want = [cog_distance(coords[t], crystal.chain_ids) for t in range(4)]
        assert np.allclose(series, want, atol=1e-12)


class TestKdeThreshold:
    def test_bimodal_mixture_threshold_in_bracket(self):
        rng = np.random.default_rng(5)
        metric = np.concatenate(
            [rng.normal(1.0, 0.5, size=20_000), rng.normal(8.0, 0.5, size=20_000)]
        )
        thr = kde_threshold(metric)
        assert 2.5 <= thr <= 6.5

    def test_unimodal_lands_on_descending_flank(self):
        rng = np.random.default_rng(6)
        metric = rng.normal(5.0, 1.0, size=40_000)
        thr = kde_threshold(metric)
        # steepest descent of a Gaussian pdf sits one sigma above the mean;
        # the argmin wanders a few tenths because the derivative is flat
        # around its minimum
        assert thr == pytest.approx(6.0, abs=0.5)

    def test_strictly_inside_sample_range(self):
        rng = np.random.default_rng(7)
        metric = rng.normal(5.0, 1.0, size=5_000)
        thr = kde_threshold(metric)
        assert metric.min() < thr < metric.max()

    def test_constant_input_is_nan(self):
        assert np.isnan(kde_threshold(np.full(500, 3.0)))

    def test_near_constant_input_is_nan(self):
        rng = np.random.default_rng(8)
        metric = 3.0 + 1e-15 * rng.normal(size=500)
        assert np.isnan(kde_threshold(metric))

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError, match="at least 100"):
            kde_threshold(np.arange(99.0))

    def test_nan_samples_dropped(self):
        rng = np.random.default_rng(9)
        metric = np.concatenate(
            [rng.normal(1.0, 0.5, size=2_000), rng.normal(8.0, 0.5, size=2_000)]
        )
        with_nan = np.concatenate([metric, [np.nan] * 7])
        assert kde_threshold(with_nan) == kde_threshold(metric)


class TestAssociationSeries:
    def test_boundary_frame_is_unbound(self):
        series = AssociationSeries.from_metric([1.0, 2.0, 3.0], 2.0)
        assert series.labels.tolist() == [1, 0, 0]
        assert series.n_bound == 1
        assert series.n_unbound == 2

    def test_nan_threshold_all_unbound(self):
        series = AssociationSeries.from_metric([1.0, 2.0], float("nan"))
        assert series.labels.tolist() == [0, 0]

    def test_inconsistent_labels_rejected(self):
        with pytest.raises(ValueError, match="exactly"):
            AssociationSeries(np.array([1.0, 3.0]), np.array([0, 1]), 2.0)


def planted_monomers(rng, t=3000):
    s = rng.normal(size=t)
    xa = 0.3 * rng.normal(size=(t, 5))
    xa[:, 3] += 2.0 * s
    xb = 0.3 * rng.normal(size=(t, 4))
    xb[:, 0] += 1.42 * s
    xb[:, 1] += 1.42 * s
    return xa, xb


class TestTwoStepPca:
    def test_contributions_sum_to_one(self):
        rng = np.random.default_rng(10)
        xa, xb = planted_monomers(rng)
        model = two_step_pca(xa, xb)
        assert np.allclose(model.contributions.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(model.contributions >= 0.0)

    def test_identical_monomers_split_evenly(self):
        rng = np.random.default_rng(11)
        xa, _ = planted_monomers(rng, t=2000)
        model = two_step_pca(xa, xa.copy())
        total_a = model.contributions_a.sum(axis=1)
        total_b = model.contributions_b.sum(axis=1)
        assert np.allclose(total_a, 0.5, atol=1e-6)
        assert np.allclose(total_b, 0.5, atol=1e-6)

    def test_planted_residue_dominates_pc1(self):
        rng = np.random.default_rng(12)
        xa, xb = planted_monomers(rng)
        model = two_step_pca(xa, xb)
        pc1 = model.contributions[0]
        # column 3 of monomer A carries the planted mode undiluted
        assert np.argmax(pc1) == 3
        assert pc1[3] > 1.5 * np.delete(pc1, 3).max()

    def test_projections_whitened(self):
        rng = np.random.default_rng(13)
        xa, xb = planted_monomers(rng)
        model = two_step_pca(xa, xb)
        assert model.projections.shape == (3000, 2)
        cov = np.cov(model.projections.T, ddof=1)
        assert np.allclose(cov, np.eye(2), atol=1e-8)

    def test_stage_shapes(self):
        rng = np.random.default_rng(14)
        xa, xb = planted_monomers(rng, t=500)
        model = two_step_pca(xa, xb)
        assert model.stage1_a.components.shape == (2, 5)
        assert model.stage1_b.components.shape == (2, 4)
        assert model.stage2.components.shape == (2, 4)
        assert model.n_residues_a == 5

    def test_rank_one_monomer_rejected(self):
        rng = np.random.default_rng(15)
        s = rng.normal(size=400)
        xa = np.outer(s, [1.0, 2.0, 0.5])
        _, xb = planted_monomers(rng, t=400)
        with pytest.raises(DegenerateModelError, match="monomer A"):
            two_step_pca(xa, xb)

    def test_frame_count_mismatch_rejected(self):
        rng = np.random.default_rng(16)
        xa, xb = planted_monomers(rng, t=300)
        with pytest.raises(ValueError, match="frame count"):
            two_step_pca(xa, xb[:-1])

    def test_feature_matrix_input_groups_by_residue(self):
        from orientmd.features import FeatureKind, FeatureMatrix

        rng = np.random.default_rng(17)
        s = rng.normal(size=600)
        xa = 0.3 * rng.normal(size=(600, 15))
        xa[:, 10] += 2.0 * s
        xb = 0.3 * rng.normal(size=(600, 12))
        xb[:, 0] += 1.42 * s
        xb[:, 3] += 1.42 * s
        # CA features carry 3 columns per residue; grouped fractions must
        # equal the raw per-column fractions summed in triples
        fa = FeatureMatrix(xa, FeatureKind.CA, n_residues=5)
        fb = FeatureMatrix(xb, FeatureKind.CA, n_residues=4)
        got = two_step_pca(fa, fb)
        raw = two_step_pca(xa, xb)
        assert got.contributions.shape == (2, 9)
        assert got.n_residues_a == 5
        want_a = raw.contributions[:, :15].reshape(2, 5, 3).sum(axis=2)
        want_b = raw.contributions[:, 15:].reshape(2, 4, 3).sum(axis=2)
        assert np.allclose(got.contributions_a, want_a, atol=1e-12)
        assert np.allclose(got.contributions_b, want_b, atol=1e-12)


class TestKnnMi:
    def test_independent_near_zero(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=10_000)
        y = rng.integers(0, 2, size=10_000)
        mi = knn_mi(x, y)
        assert 0.0 <= mi < 0.02

    def test_separated_classes_reach_ln2(self):
        rng = np.random.default_rng(21)
        x = np.concatenate(
            [rng.uniform(0.0, 1.0, size=5_000), rng.uniform(2.0, 3.0, size=5_000)]
        )
        y = np.array([0] * 5_000 + [1] * 5_000)
        perm = rng.permutation(10_000)
        mi = knn_mi(x[perm], y[perm])
        assert mi == pytest.approx(np.log(2.0), rel=0.1)

    def test_noise_second_dimension_changes_little(self):
        rng = np.random.default_rng(22)
        x = np.concatenate(
            [rng.uniform(0.0, 1.0, size=5_000), rng.uniform(2.0, 3.0, size=5_000)]
        )
        y = np.array([0] * 5_000 + [1] * 5_000)
        mi1 = knn_mi(x, y)
        x2 = np.column_stack([x, rng.normal(size=10_000)])
        mi12 = knn_mi(x2, y)
        assert abs(mi12 - mi1) < 0.07

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(23)
        x = rng.normal(size=10_000)
        y = (x + 0.5 * rng.normal(size=10_000) > 0.0).astype(int)
        a = knn_mi(x, y)
        b = knn_mi(np.exp(x), y)
        assert a > 0.2
        assert abs(a - b) < 0.02

    def test_matches_sklearn_estimator(self):
        from sklearn.feature_selection import mutual_info_classif

        rng = np.random.default_rng(24)
        x = rng.normal(size=4_000)
        y = (x + rng.normal(size=4_000) > 0.0).astype(int)
        ours = knn_mi(x, y, k=3)
        theirs = float(
            mutual_info_classif(
                x[:, None], y, n_neighbors=3, random_state=0
            )[0]
        )
        assert ours == pytest.approx(theirs, abs=5e-3)

    def test_single_class_rejected(self):
        rng = np.random.default_rng(25)
        with pytest.raises(ValueError, match="both classes"):
            knn_mi(rng.normal(size=100), np.zeros(100, dtype=int))

    def test_tiny_class_rejected(self):
        rng = np.random.default_rng(26)
        y = np.zeros(100, dtype=int)
        y[0] = 1
        with pytest.raises(ValueError, match="at least 2 samples"):
            knn_mi(rng.normal(size=100), y)

    def test_too_few_samples_rejected(self):
        rng = np.random.default_rng(27)
        with pytest.raises(ValueError, match="at least 50"):
            knn_mi(rng.normal(size=30), np.tile([0, 1], 15))

    def test_length_mismatch_rejected(self):
        rng = np.random.default_rng(28)
        with pytest.raises(ValueError, match="frame count"):
            knn_mi(rng.normal(size=60), np.tile([0, 1], 29))


class TestReportAndCsv:
    def build(self, rng):
        metric = np.concatenate(
            [rng.normal(1.0, 0.3, size=300), rng.normal(8.0, 0.5, size=300)]
        )
        series = AssociationSeries.from_metric(metric, 4.5)
        xa, xb = planted_monomers(rng, t=600)
        model = two_step_pca(xa, xb)
        return series, model

    def test_report_fields(self):
        rng = np.random.default_rng(30)
        series, model = self.build(rng)
        report = association_report(
            series, MetricKind.IRMSD, mi_pc1=0.5, mi_pc12=0.52, model=model
        )
        assert report["metric_kind"] == "irmsd"
        assert report["threshold"] == 4.5
        assert report["n_bound"] == 300
        assert report["n_unbound"] == 300
        assert report["mi_pc1"] == 0.5
        top = report["top_contributing_residues"]
        assert len(top) == 5
        assert top[0]["monomer"] == "A" and top[0]["residue"] == 3
        fracs = [entry["fraction"] for entry in top]
        assert fracs == sorted(fracs, reverse=True)

    def test_nan_threshold_serializes_null(self, tmp_path):
        series = AssociationSeries.from_metric(np.arange(10.0), float("nan"))
        report = association_report(series, "cog_distance", 0.0, 0.0)
        path = tmp_path / "report.json"
        write_association_report(report, path)
        back = json.loads(path.read_text())
        assert back["threshold"] is None
        assert back["metric_kind"] == "cog_distance"
        assert back["top_contributing_residues"] == []

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(31)
        series, model = self.build(rng)
        path = tmp_path / "series.csv"
        write_association_csv(series, model.projections, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "frame,metric,label,pc1,pc2"
        assert len(lines) == 601
        row = lines[1].split(",")
        assert int(row[0]) == 0
        assert float(row[1]) == series.metric[0]
        assert int(row[2]) == series.labels[0]
        assert float(row[3]) == model.projections[0, 0]

    def test_csv_shape_validation(self, tmp_path):
        series = AssociationSeries.from_metric(np.arange(10.0), 5.0)
        with pytest.raises(ValueError, match="\\(T, 2\\)"):
            write_association_csv(series, np.zeros((3, 2)), tmp_path / "x.csv")
