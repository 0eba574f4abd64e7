"""Command-line pipeline over the library.

Six subcommands cover the full workflow: ``featurize`` turns trajectories
into MPF1 feature files, ``kinetics`` runs PCA + TICA with an optional lag
search, ``similarity`` emits Gram / RMSD / lDDT matrices and Spearman
concordances, ``cluster`` runs Ward clustering and label curation,
``associate`` builds the binding-state report of a two-chain complex, and
``profile`` times the core kernels over a size grid.

Every flag can instead come from a YAML config file (``--config``); values
given on the command line win.  All outputs land in ``--output-dir``; a
command either writes its complete output set and exits 0, or removes
whatever it had written and exits nonzero.  No command renders images:
figures are the job of external plotting fed by the emitted CSV and JSON.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import association as assoc
from . import bench, clustering, features, kinetics, similarity, trajio
from .errors import OrientmdError

FEATURE_KINDS = ("ca", "torsion", "orientation", "orientation-mean",
                 "pointcloud")

# options whose values are input files that must exist before any work runs
_PATH_OPTIONS = ("trajectory", "reference", "features", "features_a",
                 "features_b", "labels_a", "labels_b")


class UsageError(Exception):
    """Bad invocation or config; reported with exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings of one command invocation."""

    command: str
    seed: int
    output_dir: Path
    options: dict = field(default_factory=dict)

    def validate(self):
        for key in _PATH_OPTIONS:
            value = self.options.get(key)
            if value is None:
                continue
            paths = value if isinstance(value, (list, tuple)) else [value]
            for p in paths:
                if not Path(p).is_file():
                    raise UsageError(f"{self.command}: no such file: {p}")

    def require(self, key, flag):
        value = self.options.get(key)
        if value is None:
            raise UsageError(f"{self.command} requires {flag} "
                             "(flag or config key)")
        return value


class _OutputSession:
    """Tracks promised output files so failures leave no partial set."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.paths = []

    def path(self, name):
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def discard(self):
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


# ---------------------------------------------------------------------------
# shared plumbing


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.ndarray):
        return _json_safe(x.tolist())
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def _write_json(doc, path):
    with open(path, "w") as fh:
        json.dump(_json_safe(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_matrix_csv(values, path):
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in values:
            writer.writerow([repr(float(v)) for v in row])


def _stems(paths):
    """File stems, deduplicated in order by a numeric suffix."""
    out, seen = [], {}
    for p in paths:
        stem = Path(p).stem
        seen[stem] = seen.get(stem, 0) + 1
        out.append(stem if seen[stem] == 1 else f"{stem}_{seen[stem]}")
    return out


def _int_list(value, flag):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        items = value
    else:
        items = str(value).split(",")
    try:
        return [int(v) for v in items]
    except (TypeError, ValueError):
        raise UsageError(f"{flag} expects integers, got {value!r}") from None


def _positive_int(run, key, flag):
    value = int(run.options[key])
    if value < 1:
        raise UsageError(f"{flag} must be >= 1, got {value}")
    return value


def _load_reference_file(path):
    """Reference structure from a PDB file or frame 0 of a trajectory."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head != trajio.MPB_MAGIC:
        try:
            text_head = open(path, "r", errors="strict").read(65536)
        except UnicodeDecodeError:
            text_head = ""
        if any(line.startswith("ATOM") for line in text_head.splitlines()):
            return trajio.parse_reference(path)
    traj = trajio.load_trajectory(path)
    return trajio.ReferenceStructure(traj.coords[0], traj.chain_ids)


def _load_features(path):
    return features.read_features(path)


# ---------------------------------------------------------------------------
# featurize


def _reference_for(run, traj):
    ref_path = run.options.get("reference")
    if ref_path is not None:
        return _load_reference_file(ref_path)
    frame = run.options.get("reference_frame")
    frame = 0 if frame is None else int(frame)
    if not 0 <= frame < traj.n_frames:
        raise UsageError(
            f"--reference-frame {frame} out of range for "
            f"{traj.n_frames} loaded frames"
        )
    return trajio.ReferenceStructure(traj.coords[frame], traj.chain_ids)


def cmd_featurize(run, session):
    run.require("trajectory", "--trajectory")
    stride = _positive_int(run, "stride", "--stride")
    kinds = run.options["kinds"]
    kinds = [kinds] if isinstance(kinds, str) else list(kinds)
    for kind in kinds:
        if kind not in FEATURE_KINDS:
            raise UsageError(
                f"unknown feature kind {kind!r}; choose from "
                f"{', '.join(FEATURE_KINDS)}"
            )
    traj = trajio.load_trajectory(run.options["trajectory"], stride=stride)
    reference = _reference_for(run, traj)
    if run.options["align"] == "reference":
        traj = trajio.align_trajectory(traj, reference, selection="ca")
    lcs = None
    ref_rot = None
    for kind in kinds:
        if kind in ("orientation", "orientation-mean") and lcs is None:
            lcs = features.build_lcs(traj)
        if kind == "orientation" and ref_rot is None:
            ref_traj = trajio.BackboneTrajectory(
                reference.coords[None], reference.chain_ids
            )
            ref_rot = features.build_lcs(ref_traj).rotations[0]
        if kind == "ca":
            fm = features.ca_features(traj)
        elif kind == "torsion":
            fm = features.torsion_features(traj)
        elif kind == "orientation":
            fm = features.orientation_features(lcs, ref_rot)
        elif kind == "orientation-mean":
            fm = features.orientation_features(lcs, None)
        else:
            fm = features.pointcloud_features(traj, reference=reference.ca())
        name = f"features_{kind.replace('-', '_')}.mpf1"
        features.write_features(fm, session.path(name))


# ---------------------------------------------------------------------------
# kinetics


def cmd_kinetics(run, session):
    paths = run.require("features", "--features")
    paths = [paths] if isinstance(paths, str) else list(paths)
    evr = float(run.options["evr_threshold"])
    if not 0.0 < evr <= 1.0:
        raise UsageError(f"--evr-threshold must be in (0, 1], got {evr}")
    lag = run.options.get("lag")
    vamp_k = run.options.get("vamp_k")
    for path, stem in zip(paths, _stems(paths)):
        fm = _load_features(path)
        pca = kinetics.pca_fit(fm, evr_threshold=evr, whiten=True)
        z = pca.transform(fm)
        search_doc = None
        if lag is None:
            search = kinetics.lag_search(z)
            search_doc = {
                "lags": search.lags,
                "slowest_timescales": search.timescale_curve,
                "plateau_lag": search.plateau_lag,
            }
            used_lag = (search.plateau_lag if search.plateau_lag is not None
                        else int(search.lags[-1]))
        else:
            used_lag = int(lag)
            if used_lag < 1:
                raise UsageError(f"--lag must be >= 1, got {used_lag}")
        tica = kinetics.tica_fit(z, used_lag)
        k = int(vamp_k) if vamp_k is not None else z.shape[1]
        vamp = kinetics.vamp2_score(z, used_lag, k=k)
        n_proj = min(2, tica.eigenvectors.shape[1])
        proj = z @ tica.eigenvectors[:, :n_proj]
        doc = {
            "features": str(path),
            "kind": fm.kind.value,
            "n_frames": fm.n_frames,
            "dim": fm.dim,
            "evr_threshold": evr,
            "pca": {
                "n_components": pca.n_components,
                "explained_variance_ratio": pca.explained_variance_ratio,
            },
            "lag": used_lag,
            "tica": {
                "eigenvalues": tica.eigenvalues,
                "timescales": tica.timescales,
            },
            "vamp2": {"k": k, "score": vamp},
            "lag_search": search_doc,
        }
        _write_json(doc, session.path(f"kinetics_{stem}.json"))
        with open(session.path(f"kinetics_{stem}_projections.csv"), "w",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame"] + [f"tic{i + 1}" for i in range(n_proj)])
            for t in range(proj.shape[0]):
                writer.writerow([t] + [repr(float(v)) for v in proj[t]])


# ---------------------------------------------------------------------------
# similarity


def cmd_similarity(run, session):
    paths = run.options.get("features") or []
    paths = [paths] if isinstance(paths, str) else list(paths)
    traj_path = run.options.get("trajectory")
    if not paths and traj_path is None:
        raise UsageError("similarity needs --features and/or --trajectory")
    rank_k = run.options.get("rank1")
    stems = _stems(paths)
    grams = []
    report = {"files": dict(zip(stems, map(str, paths))), "spearman": {}}
    for path, stem in zip(paths, stems):
        g = similarity.gram(_load_features(path))
        _write_matrix_csv(g.values, session.path(f"gram_{stem}.csv"))
        grams.append((stem, g))
    for i, (sa, ga) in enumerate(grams):
        for sb, gb in grams[i:]:
            rho = similarity.spearman_lower_triangle(ga.values, gb.values)
            report["spearman"][f"{sa}:{sb}"] = rho
    if rank_k:
        report["rank1"] = {}
        for stem, g in grams:
            dec = similarity.rank1(g, int(rank_k))
            report["rank1"][stem] = {"eigenvalues": dec.eigenvalues}
    if traj_path is not None:
        stride = _positive_int(run, "stride", "--stride")
        traj = trajio.load_trajectory(traj_path, stride=stride)
        _write_matrix_csv(similarity.pairwise_rmsd(traj).values,
                          session.path("rmsd_matrix.csv"))
        _write_matrix_csv(similarity.lddt_matrix(traj).values,
                          session.path("lddt_matrix.csv"))
    _write_json(report, session.path("similarity_report.json"))


# ---------------------------------------------------------------------------
# cluster


def cmd_cluster(run, session):
    fpath = run.options.get("features")
    la, lb = run.options.get("labels_a"), run.options.get("labels_b")
    drop = _int_list(run.options.get("drop"), "--drop")
    report = {}
    labels = None
    if fpath is not None:
        fm = _load_features(fpath)
        x = fm.data
        n = x.shape[0]
        n_clusters = run.options.get("n_clusters")
        cut = run.options.get("cut")
        if n_clusters is not None:
            k = int(n_clusters)
            if not 1 <= k <= n:
                raise UsageError(f"--n-clusters must be in [1, {n}], got {k}")
            merges = clustering.ward_linkage(x)
            # the first n - k merges leave exactly k clusters (ties at the
            # cut height may merge further)
            cut = -1.0 if k == n else merges[n - k - 1].height
        elif cut is None:
            raise UsageError(
                "cluster with --features needs --cut or --n-clusters"
            )
        labels = clustering.ward_cluster(x, float(cut))
        report["cut"] = float(cut)
        if run.options.get("gmm_expand"):
            labels, fits = clustering.gmm_expand(x, labels)
            report["gmm_outliers"] = int(np.sum(labels.labels ==
                                                clustering.OUTLIER))
        if drop:
            labels = clustering.curate(labels, drop)
            report["dropped"] = sorted(drop)
        if n <= 4096 and labels.n_clusters >= 2:
            diff = x[:, None, :] - x[None, :, :]
            dist = np.sqrt(np.sum(diff * diff, axis=-1))
            report["silhouette"] = clustering.silhouette_precomputed(
                dist, labels
            )
        else:
            report["silhouette"] = None
    elif la is not None and lb is None and drop:
        labels = clustering.curate(clustering.read_labels_csv(la), drop)
        report["dropped"] = sorted(drop)
    if labels is not None:
        clustering.write_labels_csv(labels, session.path("labels.csv"))
        report["n_clusters"] = labels.n_clusters
        report["n_outliers"] = int(np.sum(labels.labels == clustering.OUTLIER))
        report["sizes"] = labels.sizes()
    if la is not None and lb is not None:
        a = clustering.read_labels_csv(la)
        b = clustering.read_labels_csv(lb)
        report["ami"] = clustering.ami(a, b)
        report["ari"] = clustering.ari(a, b)
    if not report:
        raise UsageError(
            "cluster needs --features, or --labels-a with --labels-b or "
            "--drop"
        )
    _write_json(report, session.path("cluster_report.json"))


# ---------------------------------------------------------------------------
# associate


def _per_chain_ca_features(traj):
    chains = traj.chains()
    out = []
    for c in chains:
        idx = np.where(traj.chain_ids == c)[0]
        sub = trajio.BackboneTrajectory(traj.coords[:, idx],
                                        traj.chain_ids[idx])
        out.append(features.ca_features(sub))
    return chains, out


def cmd_associate(run, session):
    crystal = _load_reference_file(run.require("reference", "--reference"))
    cutoff = float(run.options["cutoff"])
    if cutoff <= 0.0:
        raise UsageError(f"--cutoff must be positive, got {cutoff}")
    metric_name = run.options["metric"]
    kind = (assoc.MetricKind.IRMSD if metric_name == "irmsd"
            else assoc.MetricKind.COG_DISTANCE)
    iface = assoc.detect_interface(crystal, cutoff)
    traj_path = run.options.get("trajectory")
    if traj_path is not None:
        stride = _positive_int(run, "stride", "--stride")
        traj = trajio.load_trajectory(traj_path, stride=stride)
        if kind is assoc.MetricKind.IRMSD:
            metric = assoc.irmsd_series(traj, crystal, iface)
        else:
            metric = assoc.cog_series(traj)
    else:
        # crystal-only run: the crystal scored against itself
        traj = None
        frame = crystal.coords
        if kind is assoc.MetricKind.IRMSD:
            metric = np.array([assoc.irmsd(frame, crystal, iface)])
        else:
            metric = np.array(
                [assoc.cog_distance(frame, crystal.chain_ids)]
            )
    if metric.shape[0] >= assoc.KDE_MIN_SAMPLES:
        threshold = assoc.kde_threshold(metric)
    else:
        threshold = float("nan")
    series = assoc.AssociationSeries.from_metric(metric, threshold)
    model = None
    mi_pc1 = mi_pc12 = float("nan")
    if traj is not None and len(traj.chains()) == 2:
        _, (fa, fb) = _per_chain_ca_features(traj)
        model = assoc.two_step_pca(fa, fb)
        try:
            mi_pc1 = assoc.knn_mi(model.projections[:, 0], series.labels)
            mi_pc12 = assoc.knn_mi(model.projections[:, :2], series.labels)
        except ValueError:
            # degenerate labeling (single class or too few frames)
            mi_pc1 = mi_pc12 = float("nan")
    report = assoc.association_report(series, kind, mi_pc1, mi_pc12, model)
    _write_json(report, session.path("association_report.json"))
    if model is not None:
        assoc.write_association_csv(series, model.projections,
                                    session.path("association_series.csv"))


# ---------------------------------------------------------------------------
# profile


def cmd_profile(run, session):
    ops = run.options["ops"]
    ops = [ops] if isinstance(ops, str) else list(ops)
    replicas = _positive_int(run, "replicas", "--replicas")
    samples = _int_list(run.options.get("sample_counts"), "--sample-counts")
    residues = _int_list(run.options.get("residue_counts"),
                         "--residue-counts")
    try:
        if samples is not None or residues is not None:
            if samples is None or residues is None:
                raise UsageError(
                    "--sample-counts and --residue-counts go together"
                )
            grid = bench.ProfileGrid(samples, residues, replicas)
        elif run.options.get("full_grid"):
            grid = bench.full_grid(replicas)
        else:
            grid = bench.desk_grid(replicas)
        report = bench.profile(grid, ops=tuple(ops), seed=run.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report.write_csv(session.path("profile.csv"))
    report.write_json(session.path("profile.json"))


# ---------------------------------------------------------------------------
# parser


_COMMANDS = {
    "featurize": cmd_featurize,
    "kinetics": cmd_kinetics,
    "similarity": cmd_similarity,
    "cluster": cmd_cluster,
    "associate": cmd_associate,
    "profile": cmd_profile,
}


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="YAML file supplying defaults for any flag")
    common.add_argument("--seed", type=int, default=0,
                        help="global random seed (default 0)")
    common.add_argument("--output-dir", default=".",
                        help="directory receiving all outputs (default .)")

    parser = argparse.ArgumentParser(
        prog="orientmd",
        description="Orientation-based trajectory featurization and "
                    "kinetic / structural analysis.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    subparsers = {}

    p = sub.add_parser("featurize", parents=[common],
                       help="trajectory to MPF1 feature files")
    p.add_argument("--trajectory", help="MPB1 or CSV trajectory file")
    p.add_argument("--kinds", nargs="+", choices=FEATURE_KINDS,
                   default=list(FEATURE_KINDS), metavar="KIND",
                   help=f"representations to emit ({', '.join(FEATURE_KINDS)})")
    p.add_argument("--reference",
                   help="PDB (or one-frame trajectory) reference structure")
    p.add_argument("--reference-frame", type=int,
                   help="use this loaded frame as the reference (default 0)")
    p.add_argument("--stride", type=int, default=1,
                   help="keep every n-th frame")
    p.add_argument("--align", choices=("none", "reference"), default="none",
                   help="superpose frames onto the reference first")
    subparsers["featurize"] = p

    p = sub.add_parser("kinetics", parents=[common],
                       help="PCA + TICA reports from feature files")
    p.add_argument("--features", nargs="+", metavar="MPF1",
                   help="feature files, one report each")
    p.add_argument("--lag", type=int,
                   help="TICA lag in frames; omit to run the lag search")
    p.add_argument("--evr-threshold", type=float, default=0.95,
                   help="cumulative explained-variance cutoff (default 0.95)")
    p.add_argument("--vamp-k", type=int,
                   help="components in the VAMP-2 score (default: all kept)")
    subparsers["kinetics"] = p

    p = sub.add_parser("similarity", parents=[common],
                       help="Gram / RMSD / lDDT matrices and concordance")
    p.add_argument("--features", nargs="+", metavar="MPF1",
                   help="feature files; Gram matrix and Spearman per pair")
    p.add_argument("--trajectory",
                   help="also emit pairwise RMSD and lDDT matrices")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--rank1", type=int,
                   help="keep this many rank-1 Gram components in the report")
    subparsers["similarity"] = p

    p = sub.add_parser("cluster", parents=[common],
                       help="Ward clustering, curation and concordance")
    p.add_argument("--features", metavar="MPF1",
                   help="feature file whose frames are clustered")
    p.add_argument("--cut", type=float, help="Ward dendrogram cut height")
    p.add_argument("--n-clusters", type=int,
                   help="cut the dendrogram at this cluster count")
    p.add_argument("--gmm-expand", action="store_true",
                   help="reassign outliers through per-cluster Gaussians")
    p.add_argument("--drop", help="comma-separated cluster ids to discard")
    p.add_argument("--labels-a", metavar="CSV", help="label file to score")
    p.add_argument("--labels-b", metavar="CSV",
                   help="second label file for AMI/ARI")
    subparsers["cluster"] = p

    p = sub.add_parser("associate", parents=[common],
                       help="binding analysis of a two-chain complex")
    p.add_argument("--reference",
                   help="crystal structure (PDB or one-frame trajectory)")
    p.add_argument("--trajectory", help="complex trajectory")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--metric", choices=("irmsd", "cog"), default="irmsd",
                   help="binding metric (default irmsd)")
    p.add_argument("--cutoff", type=float,
                   default=assoc.DEFAULT_INTERFACE_CUTOFF,
                   help="interface CA distance cutoff in Angstrom")
    subparsers["associate"] = p

    p = sub.add_parser("profile", parents=[common],
                       help="time core kernels over a size grid")
    p.add_argument("--ops", nargs="+", choices=bench.PROFILE_OPS,
                   default=list(bench.PROFILE_OPS), metavar="OP",
                   help=f"kernels to time ({', '.join(bench.PROFILE_OPS)})")
    p.add_argument("--replicas", type=int, default=3)
    p.add_argument("--sample-counts", nargs="+", type=int, metavar="T",
                   help="explicit frame counts (powers of two)")
    p.add_argument("--residue-counts", nargs="+", type=int, metavar="R",
                   help="explicit residue counts (powers of two)")
    p.add_argument("--full-grid", action="store_true",
                   help="sweep T to 2^19 and R to 2^9 instead of the desk "
                        "grid")
    subparsers["profile"] = p

    return parser, subparsers


def _scan_config(argv):
    for i, tok in enumerate(argv):
        if tok == "--config":
            return argv[i + 1] if i + 1 < len(argv) else None
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _load_config(path):
    if not Path(path).is_file():
        raise UsageError(f"no such config file: {path}")
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a key-value mapping")
    return doc


def _apply_config(subparser, cfg):
    actions = {a.dest: a for a in subparser._actions if a.dest != "help"}
    unknown = sorted(k for k in cfg if k not in actions)
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    coerced = {}
    for key, value in cfg.items():
        action = actions[key]
        if (action.type is not None and value is not None
                and not isinstance(value, (list, tuple, bool))):
            try:
                value = action.type(value)
            except (TypeError, ValueError):
                raise UsageError(
                    f"config key {key}: cannot read {value!r}"
                ) from None
        if action.choices is not None and value is not None:
            items = value if isinstance(value, (list, tuple)) else [value]
            for item in items:
                if item not in action.choices:
                    raise UsageError(
                        f"config key {key}: invalid choice {item!r}"
                    )
        coerced[key] = value
    subparser.set_defaults(**coerced)


def _dispatch(args):
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    skip = {"command", "config", "seed", "output_dir"}
    options = {k: v for k, v in vars(args).items() if k not in skip}
    run = RunConfig(args.command, int(args.seed), out_dir, options)
    run.validate()
    session = _OutputSession(out_dir)
    try:
        _COMMANDS[args.command](run, session)
    except UsageError:
        session.discard()
        raise
    except (OrientmdError, ValueError, OSError) as exc:
        session.discard()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = _build_parser()
    try:
        cfg_path = _scan_config(argv)
        if cfg_path is not None and argv and argv[0] in subparsers:
            _apply_config(subparsers[argv[0]], _load_config(cfg_path))
        args = parser.parse_args(argv)
        return _dispatch(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
