import numpy as np
import pytest

from aerotri import geometry, matching, sfm, synth


def make_two_view(n_points: int = 60, noise: float = 0.0, seed: int = 0,
                  outlier_fraction: float = 0.0):
    """A planted two-view problem with ground truth.

    Returns (matches, fs_a, fs_b, cam, pose_b, inlier_mask). Outliers are
    re-drawn until they sit well off the true epipolar band (> 4 px
    Sampson distance under the true essential matrix), so the planted
    inlier set is exactly recoverable.
    """
    rng = np.random.default_rng(seed)
    cam = geometry.CameraModel(1000.0, 1000.0, 500.0, 400.0,
                               width=1000, height=800)
    pose_a = geometry.Pose.identity()
    rvec = rng.normal(scale=0.05, size=3)
    pose_b = geometry.Pose(geometry.quat_exp(rvec), np.array([4.0, 0.5, 0.3]))

    pts = np.column_stack([rng.uniform(-15, 15, n_points),
                           rng.uniform(-12, 12, n_points),
                           rng.uniform(38, 55, n_points)])
    pa = cam.project(pose_a.world_to_cam(pts))
    pb = cam.project(pose_b.world_to_cam(pts))
    pa += rng.normal(scale=noise, size=pa.shape)
    pb += rng.normal(scale=noise, size=pb.shape)

    n_out = int(round(outlier_fraction * n_points))
    inlier = np.ones(n_points, dtype=bool)
    if n_out:
        e_true = essential_from_poses(pose_a, pose_b)
        idx = rng.choice(n_points, size=n_out, replace=False)
        inlier[idx] = False
        for i in idx:
            while True:
                cand = np.array([rng.uniform(0, 1000), rng.uniform(0, 800)])
                xa = geometry.undistort_points(pa[i:i + 1], cam)
                xb = geometry.undistort_points(cand[None, :], cam)
                d = geometry.sampson_distance(e_true, xa, xb)[0]
                if d * cam.mean_focal > 4.0:
                    pb[i] = cand
                    break

    desc = np.eye(max(n_points, 8), dtype=np.float32)[:n_points]
    from aerotri.features import FeatureSet
    fs_a = FeatureSet("a", 1000, 800,
                      np.column_stack([pa, np.ones(n_points)]), desc)
    fs_b = FeatureSet("b", 1000, 800,
                      np.column_stack([pb, np.ones(n_points)]), desc)
    matches = [matching.Match(i, i, 0.0) for i in range(n_points)]
    return matches, fs_a, fs_b, cam, pose_b, inlier


def essential_from_poses(pose_a: geometry.Pose,
                         pose_b: geometry.Pose) -> np.ndarray:
    """True essential matrix for x_cam = R (X - c) poses, a as reference."""
    ra = geometry.quat_to_rot(pose_a.q)
    rb = geometry.quat_to_rot(pose_b.q)
    r = rb @ ra.T
    t = rb @ (pose_a.center - pose_b.center)
    e = geometry.skew(t) @ r
    return e / np.linalg.norm(e)


def reconstruct_block(strips: int, images_per_strip: int, n_points: int,
                      keypoint_sigma: float, seed: int = 42,
                      gnss_h: float = 0.01, gnss_v: float = 0.03):
    """Synthesize a block and run matching -> verification -> incremental
    reconstruction. Returns (dataset, reconstruction)."""
    cfg = synth.FlightConfig(strips=strips, images_per_strip=images_per_strip)
    ds = synth.generate_scene(
        synth.generate_flight_plan(cfg), cfg, n_points=n_points,
        noise=synth.NoiseSpec(keypoint_sigma=keypoint_sigma,
                              gnss_h_sigma=gnss_h, gnss_v_sigma=gnss_v),
        seed=seed)
    pairs = verified_pairs(ds)
    graph, tracks = sfm.build_scene_graph(ds.feature_sets, pairs)
    priors = {r.image_id: (
        np.array([r.position.easting, r.position.northing,
                  r.position.altitude]),
        np.array([r.horizontal_sigma, r.horizontal_sigma, r.vertical_sigma]))
        for r in ds.pos_records}
    recon = sfm.incremental_reconstruct(graph, tracks, ds.camera,
                                        sfm.SfmConfig(seed=seed),
                                        priors=priors)
    return ds, recon


def verified_pairs(ds: synth.SynthDataset) -> dict:
    ids = sorted(ds.feature_sets)
    pairs = {}
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            a, b = ids[i], ids[j]
            m = matching.match_features(ds.feature_sets[a],
                                        ds.feature_sets[b])
            if len(m) < 16:
                continue
            try:
                _, mask = geometry.estimate_essential_ransac(
                    m, ds.feature_sets[a], ds.feature_sets[b], ds.camera,
                    geometry.RansacConfig(threshold=2.0))
            except (geometry.InsufficientData,
                    geometry.DegenerateConfiguration):
                continue
            inl = [mm for mm, keep in zip(m, mask) if keep]
            if len(inl) >= 15:
                pairs[(a, b)] = inl
    return pairs


@pytest.fixture(scope="session")
def small_block():
    """2x3 noise-free block reconstructed once for cheap assertions."""
    return reconstruct_block(strips=2, images_per_strip=3, n_points=250,
                             keypoint_sigma=0.0, seed=11,
                             gnss_h=0.0, gnss_v=0.0)
