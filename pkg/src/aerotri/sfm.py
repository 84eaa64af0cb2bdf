"""Incremental reconstruction: scene graph and tracks, seed selection,
and the register - triangulate - adjust - filter loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ba
from .errors import DataError, NumericalError
from .features import FeatureSet, Keypoint
from .geometry import (CameraModel, Pose, RansacConfig,
                       decompose_essential, estimate_essential_ransac,
                       reprojection_error, solve_pnp_ransac, triangulate,
                       triangulation_angles, InsufficientData,
                       DegenerateGeometry, BehindCamera,
                       ChiralityAmbiguous, DegenerateConfiguration)
from .matching import Match


class NoAdequatePair(DataError):
    pass


class SeedFailure(NumericalError):
    pass


@dataclass(frozen=True)
class Track:
    observations: tuple[tuple[str, int], ...]  # (image_id, keypoint index)

    def __post_init__(self):
        if len(self.observations) < 2:
            raise ValueError("track needs >= 2 observations")
        images = [im for im, _ in self.observations]
        if len(set(images)) != len(images):
            raise ValueError("track has two keypoints of one image")


@dataclass
class SceneGraph:
    images: dict[str, FeatureSet]
    pairs: dict[tuple[str, str], list[Match]]

    def __post_init__(self):
        for (a, b), m in self.pairs.items():
            if a not in self.images or b not in self.images:
                raise ValueError(f"pair ({a}, {b}) references unknown image")
            if not m:
                raise ValueError(f"pair ({a}, {b}) has no inlier matches")


@dataclass
class ScenePoint:
    xyz: np.ndarray
    track: Track                       # surviving observations
    track_id: int


@dataclass
class Reconstruction:
    camera: CameraModel
    features: dict[str, FeatureSet]
    registered: dict[str, Pose] = field(default_factory=dict)
    points: dict[int, ScenePoint] = field(default_factory=dict)

    def keypoint(self, image_id: str, kp_idx: int) -> Keypoint:
        k = self.features[image_id].keypoints[kp_idx]
        return Keypoint(float(k[0]), float(k[1]), float(k[2]))

    def observation_errors(self, track_id: int) -> list[tuple[str, int, float]]:
        pt = self.points[track_id]
        out = []
        for image_id, kp_idx in pt.track.observations:
            pose = self.registered[image_id]
            try:
                e = reprojection_error(pt.xyz, pose, self.camera,
                                       self.keypoint(image_id, kp_idx))
            except BehindCamera:
                e = math.inf
            out.append((image_id, kp_idx, e))
        return out

    def reprojection_rms(self) -> float:
        errs = [e for t in self.points
                for _, _, e in self.observation_errors(t)]
        errs = [e for e in errs if math.isfinite(e)]
        if not errs:
            return 0.0
        return math.sqrt(float(np.mean(np.square(errs))))

    def points_csv(self) -> str:
        lines = ["track_id,x,y,z,n_obs,rms_px"]
        for t in sorted(self.points):
            p = self.points[t]
            errs = [e for _, _, e in self.observation_errors(t)
                    if math.isfinite(e)]
            rms = math.sqrt(float(np.mean(np.square(errs)))) if errs else 0.0
            lines.append(f"{t},{p.xyz[0]:.6f},{p.xyz[1]:.6f},{p.xyz[2]:.6f},"
                         f"{len(p.track.observations)},{rms:.4f}")
        return "\n".join(lines) + "\n"

    def poses_csv(self) -> str:
        lines = ["image_id,qw,qx,qy,qz,cx,cy,cz"]
        for im in sorted(self.registered):
            p = self.registered[im]
            q, c = p.q, p.center
            lines.append(f"{im},{q[0]:.12f},{q[1]:.12f},{q[2]:.12f},"
                         f"{q[3]:.12f},{c[0]:.6f},{c[1]:.6f},{c[2]:.6f}")
        return "\n".join(lines) + "\n"


@dataclass
class SfmConfig:
    min_seed_inliers: int = 100
    min_seed_angle_deg: float = 2.0
    min_correspondences: int = 15
    pnp_threshold_px: float = 4.0
    local_window: int = 5
    global_ba_cadence: int = 5
    max_reproj_px: float = 4.0
    min_tri_angle_deg: float = 1.5
    ransac: RansacConfig = field(default_factory=RansacConfig)
    refine_intrinsics_final: bool = False
    seed: int = 42


# ---------------------------------------------------------------------------
# scene graph / tracks

class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def build_scene_graph(
    features: dict[str, FeatureSet],
    pair_matches: dict[tuple[str, str], list[Match]],
) -> tuple[SceneGraph, list[Track]]:
    """Form tracks by transitive closure over verified matches.

    Tracks containing two different keypoints of the same image are
    inconsistent and get discarded.
    """
    pairs = {k: v for k, v in pair_matches.items() if v}
    graph = SceneGraph(features, pairs)

    uf = _UnionFind()
    for (a, b), matches in sorted(pairs.items()):
        for m in matches:
            uf.union((a, m.index_a), (b, m.index_b))

    groups: dict = {}
    for key in list(uf.parent):
        groups.setdefault(uf.find(key), []).append(key)

    tracks = []
    for members in groups.values():
        if len(members) < 2:
            continue
        images = [im for im, _ in members]
        if len(set(images)) != len(images):
            continue  # inconsistent
        tracks.append(Track(tuple(sorted(members))))
    tracks.sort(key=lambda t: t.observations)
    return graph, tracks


# ---------------------------------------------------------------------------
# seed selection

def _trial_relative_orientation(matches, fs_a, fs_b, cam, ransac):
    e, mask = estimate_essential_ransac(matches, fs_a, fs_b, cam, ransac)
    pose_b = decompose_essential(e, matches, fs_a, fs_b, cam, mask)
    return pose_b, mask


def _pair_median_angle(matches, mask, fs_a, fs_b, cam, pose_b) -> float:
    pose_a = Pose.identity()
    angles = []
    idx = np.nonzero(mask)[0]
    if len(idx) > 200:  # a subsample is plenty for a median gate
        idx = idx[np.linspace(0, len(idx) - 1, 200).astype(int)]
    for i in idx:
        m = matches[i]
        ka = fs_a.keypoints[m.index_a]
        kb = fs_b.keypoints[m.index_b]
        try:
            x = triangulate([
                (pose_a, cam, Keypoint(float(ka[0]), float(ka[1]))),
                (pose_b, cam, Keypoint(float(kb[0]), float(kb[1]))),
            ], min_angle_deg=0.0)
        except (DegenerateGeometry, BehindCamera, InsufficientData):
            continue
        ang = triangulation_angles(x, [pose_a.center, pose_b.center])
        angles.append(math.degrees(float(ang.max())))
    return float(np.median(angles)) if angles else 0.0


def select_seed_pair(graph: SceneGraph, cam: CameraModel,
                     cfg: SfmConfig = SfmConfig()) -> tuple[str, str]:
    """Pair maximizing inliers subject to adequate triangulation angle."""
    if not graph.pairs:
        raise NoAdequatePair("scene graph has no verified pairs")
    ranked = sorted(graph.pairs.items(),
                    key=lambda kv: (-len(kv[1]), kv[0]))
    max_count = len(ranked[0][1])
    candidates = [kv for kv in ranked
                  if len(kv[1]) >= min(cfg.min_seed_inliers, max_count)]
    for (a, b), matches in candidates:
        try:
            pose_b, mask = _trial_relative_orientation(
                matches, graph.images[a], graph.images[b], cam, cfg.ransac)
        except (InsufficientData, DegenerateConfiguration, ChiralityAmbiguous):
            continue
        angle = _pair_median_angle(matches, mask, graph.images[a],
                                   graph.images[b], cam, pose_b)
        if angle >= cfg.min_seed_angle_deg:
            return a, b
    raise NoAdequatePair("no pair with sufficient parallax")


# ---------------------------------------------------------------------------
# incremental loop

def filter_outliers(recon: Reconstruction, max_reproj: float = 4.0,
                    min_angle: float = 1.5) -> tuple[int, int]:
    """Drop bad observations and undersupported points; idempotent.

    Returns (points removed, observations removed).
    """
    pts_removed = 0
    obs_removed = 0
    for track_id in list(recon.points):
        pt = recon.points[track_id]
        kept = [(im, kp) for (im, kp, e) in recon.observation_errors(track_id)
                if e <= max_reproj]
        obs_removed += len(pt.track.observations) - len(kept)
        drop = len(kept) < 2
        if not drop:
            centers = [recon.registered[im].center for im, _ in kept]
            angles = triangulation_angles(pt.xyz, centers)
            drop = math.degrees(float(angles.max(initial=0.0))) < min_angle
        if drop:
            obs_removed += len(kept)
            del recon.points[track_id]
            pts_removed += 1
        elif len(kept) != len(pt.track.observations):
            pt.track = Track(tuple(kept))
    return pts_removed, obs_removed


def _triangulate_track(recon: Reconstruction, track: Track,
                       cfg: SfmConfig) -> Optional[tuple[np.ndarray, Track]]:
    obs = [(im, kp) for im, kp in track.observations
           if im in recon.registered]
    if len(obs) < 2:
        return None
    try:
        xyz = triangulate(
            [(recon.registered[im], recon.camera, recon.keypoint(im, kp))
             for im, kp in obs],
            min_angle_deg=cfg.min_tri_angle_deg,
        )
    except (DegenerateGeometry, BehindCamera, InsufficientData):
        return None
    kept = []
    for im, kp in obs:
        try:
            e = reprojection_error(xyz, recon.registered[im], recon.camera,
                                   recon.keypoint(im, kp))
        except BehindCamera:
            continue
        if e <= cfg.max_reproj_px:
            kept.append((im, kp))
    if len(kept) < 2:
        return None
    return xyz, Track(tuple(kept))


def _extend_point_observations(recon: Reconstruction, tracks: list[Track],
                               cfg: SfmConfig,
                               only_image: Optional[str] = None) -> int:
    """Attach observations from newly registered images to existing scene
    points (their stored track holds only the observations known when the
    point was created). Gated by the reprojection threshold."""
    added = 0
    for track_id, pt in recon.points.items():
        have = set(pt.track.observations)
        extra = []
        for im, kp in tracks[track_id].observations:
            if (im, kp) in have or im not in recon.registered:
                continue
            if only_image is not None and im != only_image:
                continue
            try:
                e = reprojection_error(pt.xyz, recon.registered[im],
                                       recon.camera, recon.keypoint(im, kp))
            except BehindCamera:
                continue
            if e <= cfg.max_reproj_px:
                extra.append((im, kp))
        if extra:
            pt.track = Track(tuple(sorted(have | set(extra))))
            added += len(extra)
    return added


def _try_triangulate_new(recon: Reconstruction, tracks: list[Track],
                         cfg: SfmConfig, only_image: Optional[str] = None):
    _extend_point_observations(recon, tracks, cfg, only_image=only_image)
    for track_id, track in enumerate(tracks):
        if track_id in recon.points:
            continue
        if only_image is not None and not any(
                im == only_image for im, _ in track.observations):
            continue
        result = _triangulate_track(recon, track, cfg)
        if result is not None:
            xyz, kept = result
            recon.points[track_id] = ScenePoint(xyz, kept, track_id)


def _run_ba(recon: Reconstruction, cfg: SfmConfig,
            free_images: Optional[set[str]] = None,
            priors: Optional[dict] = None,
            refine_intrinsics: bool = False) -> None:
    if len(recon.registered) < 2 or not recon.points:
        return
    fixed = None
    if free_images is not None:
        fixed = [im for im in recon.registered if im not in free_images]
        if not fixed:
            fixed = None
    opts = ba.BAOptions(refine_intrinsics=refine_intrinsics,
                        use_priors=priors is not None,
                        fixed_images=fixed)
    problem, image_ids, track_ids = ba.build_problem(recon, opts, priors=priors)
    try:
        ba.solve(problem)
    except ba.NumericalFailure:
        return  # keep the pre-BA state
    for im, pose in zip(image_ids, problem.poses):
        recon.registered[im] = pose
    for t, xyz in zip(track_ids, problem.points):
        recon.points[t].xyz = xyz
    recon.camera = problem.camera


def _align_to_priors(recon: Reconstruction, priors: Optional[dict]) -> bool:
    """Similarity-align the network onto the prior camera positions so
    position priors can act as residuals instead of a frame change.
    Returns False (and leaves the network alone) when alignment is not
    yet well-posed (< 3 prior'd cameras, or degenerate geometry)."""
    from . import georef as _georef  # local import: georef imports sfm types
    if not priors:
        return False
    ids = sorted(im for im in recon.registered if im in priors)
    if len(ids) < 3:
        return False
    src = np.array([recon.registered[im].center for im in ids])
    dst = np.array([priors[im][0] for im in ids])
    try:
        transform = _georef.estimate_similarity(src, dst)
    except (_georef.InsufficientPoints, _georef.DegenerateConfiguration):
        return False
    aligned = _georef.apply_similarity(recon, transform)
    recon.registered.update(aligned.registered)
    recon.points.update(aligned.points)
    return True


def _correspondences_2d3d(recon: Reconstruction, tracks: list[Track],
                          image_id: str):
    """(3D point, keypoint) pairs between an unregistered image's
    keypoints and existing scene points."""
    out = []
    for track_id, pt in recon.points.items():
        for im, kp in tracks[track_id].observations:
            if im == image_id:
                out.append((pt.xyz, recon.keypoint(im, kp)))
                break
    return out


def incremental_reconstruct(graph: SceneGraph, tracks: list[Track],
                            cam: CameraModel,
                            cfg: SfmConfig = SfmConfig(),
                            priors: Optional[dict] = None) -> Reconstruction:
    """Seed, then register - triangulate - adjust - filter until no image
    can be added. Position priors (image_id -> (xyz, sigma3)) are used in
    the global BA passes when given.
    """
    recon = Reconstruction(camera=cam, features=graph.images)

    try:
        a, b = select_seed_pair(graph, cam, cfg)
        matches = graph.pairs[(a, b)]
        pose_b, mask = _trial_relative_orientation(
            matches, graph.images[a], graph.images[b], cam, cfg.ransac)
    except (NoAdequatePair, InsufficientData, DegenerateConfiguration,
            ChiralityAmbiguous) as exc:
        raise SeedFailure(f"seed initialization failed: {exc}") from exc

    recon.registered[a] = Pose.identity()
    recon.registered[b] = pose_b
    _try_triangulate_new(recon, tracks, cfg)
    if not recon.points:
        raise SeedFailure("seed pair produced no triangulated points")
    _run_ba(recon, cfg)
    filter_outliers(recon, cfg.max_reproj_px, cfg.min_tri_angle_deg)

    registrations = 2
    failed_once: set[str] = set()   # blocked until the next global BA
    retried: set[str] = set()       # already failed once before
    unregistrable: set[str] = set()

    while True:
        candidates = []
        for im in sorted(graph.images):
            if im in recon.registered or im in unregistrable or im in failed_once:
                continue
            corr = _correspondences_2d3d(recon, tracks, im)
            if len(corr) >= cfg.min_correspondences:
                candidates.append((len(corr), im, corr))
        if not candidates:
            if failed_once:
                # unblock failed images for one retry after a fresh
                # global adjustment
                _run_ba(recon, cfg,
                    priors=priors if _align_to_priors(recon, priors)
                    else None)
                filter_outliers(recon, cfg.max_reproj_px, cfg.min_tri_angle_deg)
                _try_triangulate_new(recon, tracks, cfg)
                failed_once.clear()
                continue
            break
        candidates.sort(key=lambda c: (-c[0], c[1]))
        _, image_id, corr = candidates[0]

        rcfg = RansacConfig(
            threshold=cfg.pnp_threshold_px, confidence=cfg.ransac.confidence,
            min_iterations=cfg.ransac.min_iterations,
            max_iterations=cfg.ransac.max_iterations,
            seed=cfg.seed + registrations,
        )
        try:
            pose, inliers = solve_pnp_ransac(corr, recon.camera, rcfg)
            if int(inliers.sum()) < cfg.min_correspondences:
                raise DegenerateConfiguration("too few PnP inliers")
        except (InsufficientData, DegenerateConfiguration):
            if image_id in retried:
                unregistrable.add(image_id)
            else:
                retried.add(image_id)
                failed_once.add(image_id)
            continue

        recon.registered[image_id] = pose
        registrations += 1
        _try_triangulate_new(recon, tracks, cfg, only_image=image_id)

        # local BA: the new image plus its most connected neighbors
        shared: dict[str, int] = {}
        for pt in recon.points.values():
            obs_imgs = {im for im, _ in pt.track.observations}
            if image_id in obs_imgs:
                for im in obs_imgs:
                    if im != image_id:
                        shared[im] = shared.get(im, 0) + 1
        neighbors = sorted(shared, key=lambda im: (-shared[im], im))
        window = {image_id} | set(neighbors[:cfg.local_window])
        _run_ba(recon, cfg, free_images=window)
        filter_outliers(recon, cfg.max_reproj_px, cfg.min_tri_angle_deg)

        if registrations % cfg.global_ba_cadence == 0:
            _run_ba(recon, cfg,
                    priors=priors if _align_to_priors(recon, priors)
                    else None)
            filter_outliers(recon, cfg.max_reproj_px, cfg.min_tri_angle_deg)
            _try_triangulate_new(recon, tracks, cfg)
            failed_once.clear()

    # final global pass, optionally refining shared intrinsics
    _try_triangulate_new(recon, tracks, cfg)
    _run_ba(recon, cfg,
            priors=priors if _align_to_priors(recon, priors) else None,
            refine_intrinsics=cfg.refine_intrinsics_final)
    filter_outliers(recon, cfg.max_reproj_px, cfg.min_tri_angle_deg)
    return recon
