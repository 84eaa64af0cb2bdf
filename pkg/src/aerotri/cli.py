"""Command-line front end: stage-by-stage subcommands plus a full
pipeline runner. Every stage reads and writes files so stages are
independently testable.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import ba, geo, georef, matching, sfm, synth
from .errors import AerotriError, ConfigError, DataError
from .features import (FeatureSet, Keypoint, detect_builtin, read_feature_file,
                       read_pgm, write_feature_file)
from .geometry import CameraModel, Pose, RansacConfig, estimate_essential_ransac
from .matching import Match, MatchConfig


class TooFewImages(DataError):
    pass


# ---------------------------------------------------------------------------
# pair proposal from POS proximity

def propose_pairs(pos: list[geo.PosRecord], radius: float | None = None,
                  k: int | None = None) -> list[tuple[str, str]]:
    """Image pairs by POS proximity: within radius, or k nearest.

    Default: k=8 nearest. radius=None with k=None estimates a radius of
    1.5x the along-track spacing (median nearest-neighbor distance).
    Output is symmetric, deduplicated, lexicographically ordered.
    """
    if len(pos) < 2:
        raise TooFewImages(f"{len(pos)} POS records, need >= 2")
    ids = [r.image_id for r in pos]
    xyz = np.array([[r.position.easting, r.position.northing,
                     r.position.altitude] for r in pos])
    d = np.linalg.norm(xyz[:, None, :] - xyz[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)

    pairs: set[tuple[str, str]] = set()
    if radius is None and k is None:
        k = 8
    if radius is not None:
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                if d[i, j] <= radius:
                    pairs.add(tuple(sorted((ids[i], ids[j]))))
    else:
        kk = min(k, len(ids) - 1)
        for i in range(len(ids)):
            for j in np.argsort(d[i])[:kk]:
                pairs.add(tuple(sorted((ids[i], ids[int(j)]))))
    return sorted(pairs)


# ---------------------------------------------------------------------------
# file helpers

def load_camera(path: Path) -> CameraModel:
    spec = json.loads(path.read_text())
    return CameraModel(spec["fx"], spec["fy"], spec["cx"], spec["cy"],
                       spec.get("k1", 0.0), spec.get("k2", 0.0),
                       spec.get("width", 0), spec.get("height", 0))


def save_camera(cam: CameraModel, path: Path) -> None:
    path.write_text(json.dumps({
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "k1": cam.k1, "k2": cam.k2, "width": cam.width, "height": cam.height,
    }, indent=2) + "\n")


def load_features_dir(path: Path) -> dict[str, FeatureSet]:
    if not path.is_dir():
        raise ConfigError(f"features directory not found: {path}")
    sets = {}
    dim = None
    for f in sorted(path.glob("*.feat")):
        fs = read_feature_file(f.read_bytes(), image_id=f.stem)
        if dim is None:
            dim = fs.dim
        elif fs.dim != dim:
            raise DataError(
                f"descriptor dimension {fs.dim} in {f} differs from {dim}")
        sets[f.stem] = fs
    if not sets:
        raise DataError(f"no .feat files in {path}")
    return sets


def _matches_csv(matches: list[Match]) -> str:
    lines = ["index_a,index_b,distance"]
    for m in matches:
        lines.append(f"{m.index_a},{m.index_b},{m.distance:.9g}")
    return "\n".join(lines) + "\n"


def _read_matches_csv(text: str) -> list[Match]:
    out = []
    for line in text.splitlines()[1:]:
        if not line.strip():
            continue
        a, b, dist = line.split(",")
        out.append(Match(int(a), int(b), float(dist)))
    return out


def pair_file_name(a: str, b: str) -> str:
    return f"{a}__{b}.csv"


def save_reconstruction(recon: sfm.Reconstruction, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "poses.csv").write_text(recon.poses_csv())
    (out / "points.csv").write_text(recon.points_csv())
    lines = ["track_id,image_id,keypoint_index"]
    for t in sorted(recon.points):
        for im, kp in recon.points[t].track.observations:
            lines.append(f"{t},{im},{kp}")
    (out / "observations.csv").write_text("\n".join(lines) + "\n")


def load_reconstruction(path: Path, features: dict[str, FeatureSet],
                        cam: CameraModel) -> sfm.Reconstruction:
    recon = sfm.Reconstruction(camera=cam, features=features)
    for line in (path / "poses.csv").read_text().splitlines()[1:]:
        im, qw, qx, qy, qz, cx, cy, cz = line.split(",")
        recon.registered[im] = Pose(
            np.array([float(qw), float(qx), float(qy), float(qz)]),
            np.array([float(cx), float(cy), float(cz)]))
    xyz = {}
    for line in (path / "points.csv").read_text().splitlines()[1:]:
        f = line.split(",")
        xyz[int(f[0])] = np.array([float(f[1]), float(f[2]), float(f[3])])
    obs: dict[int, list] = {}
    for line in (path / "observations.csv").read_text().splitlines()[1:]:
        t, im, kp = line.split(",")
        obs.setdefault(int(t), []).append((im, int(kp)))
    for t, o in obs.items():
        recon.points[t] = sfm.ScenePoint(xyz[t], sfm.Track(tuple(o)), t)
    return recon


def load_checkpoint(path: Path) -> tuple[np.ndarray, list[tuple[str, Keypoint]]]:
    spec = json.loads(path.read_text())
    truth = np.array([spec["x"], spec["y"], spec["z"]])
    obs = [(o["image_id"], Keypoint(o["x_px"], o["y_px"]))
           for o in spec["observations"]]
    return truth, obs


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    out = Path(args.out)
    cfg = synth.FlightConfig(
        heading_overlap=args.heading_overlap, side_overlap=args.side_overlap,
        gsd=args.gsd, strips=args.strips,
        images_per_strip=args.images_per_strip)
    plan = synth.generate_flight_plan(cfg)
    noise = synth.NoiseSpec(keypoint_sigma=args.keypoint_sigma,
                            gnss_h_sigma=args.gnss_h_sigma,
                            gnss_v_sigma=args.gnss_v_sigma)
    ds = synth.generate_scene(plan, cfg, n_points=args.n_points, noise=noise,
                              seed=args.seed)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    for im, fs in ds.feature_sets.items():
        (feat_dir / f"{im}.feat").write_bytes(write_feature_file(fs))
    (out / "pos.csv").write_text(geo.write_pos_file(ds.pos_records))
    save_camera(ds.camera, out / "camera.json")
    pts_csv, corr_csv = ds.truth_csv()
    (out / "truth_points.csv").write_text(pts_csv)
    (out / "truth_obs.csv").write_text(corr_csv)
    lines = ["image_id,qw,qx,qy,qz,cx,cy,cz"]
    for im in sorted(ds.true_poses):
        p = ds.true_poses[im]
        lines.append(f"{im},{p.q[0]:.12f},{p.q[1]:.12f},{p.q[2]:.12f},"
                     f"{p.q[3]:.12f},{p.center[0]:.6f},{p.center[1]:.6f},"
                     f"{p.center[2]:.6f}")
    (out / "true_poses.csv").write_text("\n".join(lines) + "\n")
    (out / "checkpoint.json").write_text(json.dumps({
        "x": ds.checkpoint_xyz[0], "y": ds.checkpoint_xyz[1],
        "z": ds.checkpoint_xyz[2],
        "observations": [{"image_id": im, "x_px": kp.x, "y_px": kp.y}
                         for im, kp in ds.checkpoint_obs],
    }, indent=2) + "\n")
    print(f"wrote {len(ds.feature_sets)} feature sets to {out}")
    return 0


def cmd_convert_pos(args) -> int:
    path = Path(args.pos)
    if not path.is_file():
        raise ConfigError(f"POS file not found: {path}")
    ell = geo.Ellipsoid()
    zone = geo.ZoneConfig(central_meridian=args.central_meridian,
                          false_easting=args.false_easting,
                          scale_factor=args.scale_factor)
    if args.inverse:
        records = geo.parse_pos_file(path.read_bytes(), projected=True)
        converted = [geo.PosRecord(
            r.image_id,
            geo.gauss_kruger_to_geodetic(r.position, ell, zone),
            r.horizontal_sigma, r.vertical_sigma) for r in records]
    else:
        records = geo.parse_pos_file(path.read_bytes())
        converted = [geo.PosRecord(
            r.image_id,
            geo.geodetic_to_gauss_kruger(r.position, ell, zone),
            r.horizontal_sigma, r.vertical_sigma) for r in records]
    Path(args.out).write_text(geo.write_pos_file(converted))
    print(f"converted {len(converted)} records")
    return 0


def cmd_detect(args) -> int:
    img_dir = Path(args.images)
    if not img_dir.is_dir():
        raise ConfigError(f"image directory not found: {img_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for f in sorted(img_dir.glob("*.pgm")):
        fs = detect_builtin(read_pgm(f.read_bytes()), args.max_features)
        fs.image_id = f.stem
        (out / f"{f.stem}.feat").write_bytes(write_feature_file(fs))
        n += 1
    print(f"detected features in {n} images")
    return 0


def _resolve_pairs(args, features) -> list[tuple[str, str]]:
    if args.pairs:
        pairs = []
        for line in Path(args.pairs).read_text().splitlines()[1:]:
            if line.strip():
                a, b = line.split(",")
                pairs.append((a.strip(), b.strip()))
        return pairs
    if args.pos:
        records = geo.parse_pos_file(Path(args.pos).read_bytes(),
                                     projected=True)
        records = [r for r in records if r.image_id in features]
        return propose_pairs(records, radius=args.radius, k=args.k)
    ids = sorted(features)
    return [(ids[i], ids[j]) for i in range(len(ids))
            for j in range(i + 1, len(ids))]


def cmd_match(args) -> int:
    features = load_features_dir(Path(args.features))
    pairs = _resolve_pairs(args, features)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = MatchConfig(ratio=args.ratio, cross_check=not args.no_cross_check)
    plines = ["image_a,image_b"]
    n = 0
    for a, b in pairs:
        if a not in features or b not in features:
            raise DataError(f"pair ({a}, {b}) references unknown image")
        try:
            m = matching.match_features(features[a], features[b], cfg)
        except matching.TooFewDescriptors:
            continue
        if len(m) >= args.min_matches:
            (out / pair_file_name(a, b)).write_text(_matches_csv(m))
            plines.append(f"{a},{b}")
            n += 1
    (out / "pairs.csv").write_text("\n".join(plines) + "\n")
    print(f"matched {n} pairs")
    return 0


def cmd_sweep_ratio(args) -> int:
    features = load_features_dir(Path(args.features))
    if args.image_a not in features or args.image_b not in features:
        raise DataError("sweep images not found in features directory")
    truth_rows: dict[str, dict[int, int]] = {}
    for line in Path(args.truth).read_text().splitlines()[1:]:
        im, kp, pid = line.split(",")
        truth_rows.setdefault(im, {})[int(kp)] = int(pid)
    ids_a = truth_rows.get(args.image_a, {})
    ids_b = truth_rows.get(args.image_b, {})
    kb = features[args.image_b].keypoints
    pid_to_b = {pid: j for j, pid in ids_b.items()}
    truth = {}
    for i, pid in ids_a.items():
        j = pid_to_b.get(pid)
        if j is not None:
            truth[i] = (float(kb[j, 0]), float(kb[j, 1]))
    ratios = [round(r, 10) for r in np.arange(args.ratio_min,
                                              args.ratio_max + 1e-9,
                                              args.ratio_step)]
    results = matching.sweep_ratio(features[args.image_a],
                                   features[args.image_b], ratios, truth,
                                   tol=args.tol)
    Path(args.out).write_text(matching.sweep_to_csv(results))
    print(f"swept {len(ratios)} ratios")
    return 0


def cmd_verify(args) -> int:
    features = load_features_dir(Path(args.features))
    cam = load_camera(Path(args.camera))
    match_dir = Path(args.matches)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rcfg = RansacConfig(threshold=args.threshold, seed=args.seed)
    plines = ["image_a,image_b"]
    n = 0
    for line in (match_dir / "pairs.csv").read_text().splitlines()[1:]:
        if not line.strip():
            continue
        a, b = line.split(",")
        m = _read_matches_csv((match_dir / pair_file_name(a, b)).read_text())
        if len(m) < 8:
            continue
        try:
            _, mask = estimate_essential_ransac(m, features[a], features[b],
                                                cam, rcfg)
        except AerotriError:
            continue
        inliers = [mm for mm, keep in zip(m, mask) if keep]
        if len(inliers) >= args.min_inliers:
            (out / pair_file_name(a, b)).write_text(_matches_csv(inliers))
            plines.append(f"{a},{b}")
            n += 1
    (out / "pairs.csv").write_text("\n".join(plines) + "\n")
    print(f"verified {n} pairs")
    return 0


def _load_verified(path: Path) -> dict[tuple[str, str], list[Match]]:
    pairs = {}
    for line in (path / "pairs.csv").read_text().splitlines()[1:]:
        if not line.strip():
            continue
        a, b = line.split(",")
        pairs[(a, b)] = _read_matches_csv(
            (path / pair_file_name(a, b)).read_text())
    return pairs


def cmd_reconstruct(args) -> int:
    features = load_features_dir(Path(args.features))
    cam = load_camera(Path(args.camera))
    verified = _load_verified(Path(args.verified))
    graph, tracks = sfm.build_scene_graph(features, verified)
    cfg = sfm.SfmConfig(seed=args.seed,
                        min_seed_inliers=args.min_seed_inliers)
    recon = sfm.incremental_reconstruct(graph, tracks, cam, cfg)
    save_reconstruction(recon, Path(args.out))
    print(f"registered {len(recon.registered)}/{len(features)} images, "
          f"{len(recon.points)} points, "
          f"rms {recon.reprojection_rms():.3f} px")
    return 0


def cmd_georef(args) -> int:
    features = load_features_dir(Path(args.features))
    cam = load_camera(Path(args.camera))
    recon = load_reconstruction(Path(args.recon), features, cam)
    pos = geo.parse_pos_file(Path(args.pos).read_bytes(), projected=True)
    if args.mode == "align":
        geo_recon, _ = georef.georeference(recon, pos)
    else:
        geo_recon, _ = georef.georeference(recon, pos)
        priors = {r.image_id: (
            np.array([r.position.easting, r.position.northing,
                      r.position.altitude]),
            np.array([r.horizontal_sigma, r.horizontal_sigma,
                      r.vertical_sigma]))
            for r in pos}
        problem, image_ids, track_ids = ba.build_problem(
            geo_recon, ba.BAOptions(use_priors=True), priors=priors)
        ba.solve(problem)
        for im, pose in zip(image_ids, problem.poses):
            geo_recon.registered[im] = pose
        for t, xyz in zip(track_ids, problem.points):
            geo_recon.points[t].xyz = xyz
    save_reconstruction(geo_recon, Path(args.out))
    print(f"georeferenced ({args.mode}) {len(geo_recon.registered)} images")
    return 0


def cmd_evaluate(args) -> int:
    features = load_features_dir(Path(args.features))
    cam = load_camera(Path(args.camera))
    recon = load_reconstruction(Path(args.recon), features, cam)
    pos = geo.parse_pos_file(Path(args.pos).read_bytes(), projected=True)

    errs = [e for t in recon.points
            for _, _, e in recon.observation_errors(t) if math.isfinite(e)]
    e = np.array(errs) if errs else np.zeros(1)
    ba_stats = (float(np.sqrt(np.mean(e * e))), float(e.mean()))
    cam_err = georef.camera_position_errors(recon, pos)

    rel = None
    if args.verified:
        rel = _relative_orientation_from_pair(
            features, cam, Path(args.verified), args.seed)
    ck = None
    if args.checkpoint:
        truth, obs = load_checkpoint(Path(args.checkpoint))
        ck = georef.checkpoint_error(recon, obs, truth)

    Path(args.out).write_text(georef.evaluation_report_csv(
        relative_orientation=rel, bundle_adjustment=ba_stats,
        camera_position=cam_err, checkpoint=ck))
    print(f"report written to {args.out}")
    return 0


def _relative_orientation_from_pair(features, cam, verified_dir: Path,
                                    seed: int) -> tuple[float, float] | None:
    verified = _load_verified(verified_dir)
    if not verified:
        return None
    try:
        graph, _ = sfm.build_scene_graph(features, verified)
        a, b = sfm.select_seed_pair(graph, cam, sfm.SfmConfig(seed=seed))
        g2, t2 = sfm.build_scene_graph(
            {a: features[a], b: features[b]},
            {(a, b): verified[(a, b)]})
        pair_recon = sfm.incremental_reconstruct(g2, t2, cam,
                                                 sfm.SfmConfig(seed=seed))
        return georef.relative_orientation_report(pair_recon)
    except AerotriError:
        return None


def cmd_run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stage = "convert-pos"
    try:
        pos_path = Path(args.pos)
        if not pos_path.is_file():
            raise ConfigError(f"POS file not found: {pos_path}")
        if args.geodetic:
            ns = argparse.Namespace(
                pos=args.pos, central_meridian=args.central_meridian,
                false_easting=500000.0, scale_factor=1.0, inverse=False,
                out=str(out / "pos_projected.csv"))
            cmd_convert_pos(ns)
            pos_path = out / "pos_projected.csv"

        stage = "match"
        cmd_match(argparse.Namespace(
            features=args.features, pairs=None, pos=str(pos_path),
            radius=args.radius, k=args.k, out=str(out / "matches"),
            ratio=args.ratio, no_cross_check=False, min_matches=16))

        stage = "verify"
        cmd_verify(argparse.Namespace(
            features=args.features, camera=args.camera,
            matches=str(out / "matches"), out=str(out / "verified"),
            threshold=args.verify_threshold, min_inliers=15, seed=args.seed))

        stage = "reconstruct"
        cmd_reconstruct(argparse.Namespace(
            features=args.features, camera=args.camera,
            verified=str(out / "verified"), out=str(out / "recon"),
            seed=args.seed, min_seed_inliers=100))

        stage = "georef"
        cmd_georef(argparse.Namespace(
            features=args.features, camera=args.camera,
            recon=str(out / "recon"), pos=str(pos_path), mode=args.mode,
            out=str(out / "georecon")))

        stage = "evaluate"
        cmd_evaluate(argparse.Namespace(
            features=args.features, camera=args.camera,
            recon=str(out / "georecon"), pos=str(pos_path),
            verified=str(out / "verified"), checkpoint=args.checkpoint,
            seed=args.seed, out=str(out / "report.csv")))
    except AerotriError as exc:
        print(f"error in stage {stage}: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"pipeline complete; artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="aerotri",
        description="GCP-free aerial triangulation from POS + image features")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic survey dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--strips", type=int, default=4)
    s.add_argument("--images-per-strip", type=int, default=6)
    s.add_argument("--heading-overlap", type=float, default=0.80)
    s.add_argument("--side-overlap", type=float, default=0.60)
    s.add_argument("--gsd", type=float, default=0.2)
    s.add_argument("--n-points", type=int, default=600)
    s.add_argument("--keypoint-sigma", type=float, default=0.0)
    s.add_argument("--gnss-h-sigma", type=float, default=0.01)
    s.add_argument("--gnss-v-sigma", type=float, default=0.03)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("convert-pos", help="geodetic <-> Gauss-Krueger POS")
    s.add_argument("--pos", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--central-meridian", type=float, required=True)
    s.add_argument("--false-easting", type=float, default=500000.0)
    s.add_argument("--scale-factor", type=float, default=1.0)
    s.add_argument("--inverse", action="store_true")
    s.set_defaults(func=cmd_convert_pos)

    s = sub.add_parser("detect", help="built-in corner detector on PGM images")
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--max-features", type=int, default=2000)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("match", help="ratio-test matching over proposed pairs")
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--pairs", default=None)
    s.add_argument("--pos", default=None)
    s.add_argument("--radius", type=float, default=None)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--ratio", type=float, default=0.7)
    s.add_argument("--no-cross-check", action="store_true")
    s.add_argument("--min-matches", type=int, default=16)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("sweep-ratio", help="match/mismatch rates vs ratio")
    s.add_argument("--features", required=True)
    s.add_argument("--image-a", required=True)
    s.add_argument("--image-b", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ratio-min", type=float, default=0.50)
    s.add_argument("--ratio-max", type=float, default=0.90)
    s.add_argument("--ratio-step", type=float, default=0.05)
    s.add_argument("--tol", type=float, default=3.0)
    s.set_defaults(func=cmd_sweep_ratio)

    s = sub.add_parser("verify", help="epipolar verification of matches")
    s.add_argument("--features", required=True)
    s.add_argument("--matches", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=2.0)
    s.add_argument("--min-inliers", type=int, default=15)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("reconstruct", help="incremental reconstruction")
    s.add_argument("--features", required=True)
    s.add_argument("--verified", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--min-seed-inliers", type=int, default=100)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("georef", help="POS georeferencing of a reconstruction")
    s.add_argument("--recon", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--pos", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=["align", "priors"], default="align")
    s.set_defaults(func=cmd_georef)

    s = sub.add_parser("evaluate", help="evaluation report CSV")
    s.add_argument("--recon", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--pos", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--verified", default=None)
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run", help="full pipeline")
    s.add_argument("--features", required=True)
    s.add_argument("--pos", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--geodetic", action="store_true",
                   help="POS file is geodetic; convert first")
    s.add_argument("--central-meridian", type=float, default=None)
    s.add_argument("--radius", type=float, default=None)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--ratio", type=float, default=0.7)
    s.add_argument("--verify-threshold", type=float, default=2.0)
    s.add_argument("--mode", choices=["align", "priors"], default="align")
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_run)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run" and args.geodetic and args.central_meridian is None:
        print("error: --geodetic requires --central-meridian", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except AerotriError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
