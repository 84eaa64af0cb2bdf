"""Synthetic aerial survey generator: ground truth poses, terrain
points, feature sets, POS records, and a checkpoint, for exercising
every pipeline stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DataError
from .features import FeatureSet, Keypoint
from .geo import PosRecord, ProjectedCoord
from .geometry import CameraModel, Pose


class NoVisibility(DataError):
    pass


# nadir camera: image x along east (flight direction), image y along
# south, optical axis straight down
NADIR_ROTATION = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])


@dataclass(frozen=True)
class FlightConfig:
    heading_overlap: float = 0.80
    side_overlap: float = 0.60
    gsd: float = 0.2                  # meters / pixel
    image_width: int = 1000
    image_height: int = 800
    focal_px: float = 1000.0
    strips: int = 4
    images_per_strip: int = 6

    def __post_init__(self):
        if not (0.0 <= self.heading_overlap <= 0.95
                and 0.0 <= self.side_overlap <= 0.95):
            raise ValueError("overlaps must be in [0, 0.95]")
        if self.gsd <= 0:
            raise ValueError("gsd must be > 0")

    @property
    def flying_height(self) -> float:
        return self.gsd * self.focal_px

    @property
    def footprint_length(self) -> float:
        """Along-track ground footprint (image width x gsd)."""
        return self.image_width * self.gsd

    @property
    def footprint_width(self) -> float:
        """Cross-track ground footprint (image height x gsd)."""
        return self.image_height * self.gsd

    @property
    def along_spacing(self) -> float:
        return (1.0 - self.heading_overlap) * self.footprint_length

    @property
    def cross_spacing(self) -> float:
        return (1.0 - self.side_overlap) * self.footprint_width

    def camera(self) -> CameraModel:
        return CameraModel(self.focal_px, self.focal_px,
                           self.image_width / 2.0, self.image_height / 2.0,
                           width=self.image_width, height=self.image_height)


def image_id_for(strip: int, index: int) -> str:
    return f"IMG_{strip:02d}_{index:02d}"


def generate_flight_plan(cfg: FlightConfig) -> dict[str, Pose]:
    """Nadir poses on the regular survey grid, strip-major order."""
    from .geometry import rot_to_quat

    q = rot_to_quat(NADIR_ROTATION)
    poses = {}
    for s in range(cfg.strips):
        for i in range(cfg.images_per_strip):
            c = np.array([i * cfg.along_spacing, s * cfg.cross_spacing,
                          cfg.flying_height])
            poses[image_id_for(s, i)] = Pose(q, c)
    return poses


@dataclass(frozen=True)
class TerrainSpec:
    amplitude: float = 10.0   # meters
    wavelength: float = 150.0

    def height(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        k = 2 * math.pi / self.wavelength
        return self.amplitude * np.sin(k * x) * np.cos(k * 0.7 * y)


@dataclass(frozen=True)
class NoiseSpec:
    keypoint_sigma: float = 0.0   # pixels
    gnss_h_sigma: float = 0.01    # meters
    gnss_v_sigma: float = 0.03    # meters
    descriptor_sigma: float = 0.0


@dataclass
class SynthDataset:
    config: FlightConfig
    camera: CameraModel
    true_poses: dict[str, Pose]
    true_points: np.ndarray                      # (N, 3)
    feature_sets: dict[str, FeatureSet]
    truth_point_ids: dict[str, np.ndarray]       # image_id -> point id per keypoint
    pos_records: list[PosRecord]
    checkpoint_xyz: np.ndarray
    checkpoint_obs: list[tuple[str, Keypoint]]

    def truth_for_pair(self, a: str, b: str) -> dict[int, tuple[float, float]]:
        """Keypoint index in image a -> true pixel location in image b."""
        ids_a = self.truth_point_ids[a]
        ids_b = self.truth_point_ids[b]
        where_b = {int(pid): j for j, pid in enumerate(ids_b)}
        kb = self.feature_sets[b].keypoints
        out = {}
        for i, pid in enumerate(ids_a):
            j = where_b.get(int(pid))
            if j is not None:
                out[i] = (float(kb[j, 0]), float(kb[j, 1]))
        return out

    def truth_csv(self) -> tuple[str, str]:
        """(points CSV, correspondence CSV)."""
        pts = ["point_id,x,y,z"]
        for i, p in enumerate(self.true_points):
            pts.append(f"{i},{p[0]:.6f},{p[1]:.6f},{p[2]:.6f}")
        corr = ["image_id,keypoint_index,point_id"]
        for im in sorted(self.truth_point_ids):
            for k, pid in enumerate(self.truth_point_ids[im]):
                corr.append(f"{im},{k},{int(pid)}")
        return "\n".join(pts) + "\n", "\n".join(corr) + "\n"


def _separated_unit_vectors(n: int, dim: int, rng: np.random.Generator,
                            max_dot: float = 0.8) -> np.ndarray:
    """Random unit vectors with pairwise dot products bounded away from
    1, so descriptor matching truth is unambiguous."""
    out = np.empty((n, dim))
    count = 0
    attempts = 0
    while count < n:
        attempts += 1
        if attempts > 100 * n:
            raise DataError("could not separate descriptors; raise dim")
        v = rng.normal(size=dim)
        v /= np.linalg.norm(v)
        if count and float(np.max(np.abs(out[:count] @ v))) > max_dot:
            continue
        out[count] = v
        count += 1
    return out


def generate_scene(
    plan: dict[str, Pose],
    cfg: FlightConfig,
    n_points: int = 600,
    noise: NoiseSpec = NoiseSpec(),
    seed: int = 42,
    terrain: TerrainSpec = TerrainSpec(),
    descriptor_dim: int = 32,
) -> SynthDataset:
    """Sample terrain points over the block, project into every camera
    whose frustum contains them, and attach unambiguous descriptors.
    All noise comes from the seeded generator.
    """
    if n_points < 50:
        raise ValueError("n_points must be >= 50")
    rng = np.random.default_rng(seed)
    cam = cfg.camera()
    image_ids = sorted(plan)
    centers = np.array([plan[i].center for i in image_ids])

    half_l = cfg.footprint_length / 2.0
    half_w = cfg.footprint_width / 2.0
    xmin, xmax = centers[:, 0].min() - half_l, centers[:, 0].max() + half_l
    ymin, ymax = centers[:, 1].min() - half_w, centers[:, 1].max() + half_w

    def visibility(pt: np.ndarray) -> list[tuple[str, np.ndarray]]:
        vis = []
        for im in image_ids:
            pc = plan[im].world_to_cam(pt)[0]
            if pc[2] <= 1.0:
                continue
            pix = cam.project(pc)[0]
            if 0 <= pix[0] < cfg.image_width and 0 <= pix[1] < cfg.image_height:
                vis.append((im, pix))
        return vis

    points = np.empty((n_points, 3))
    vis_lists = []
    for i in range(n_points):
        for attempt in range(100):
            x = rng.uniform(xmin, xmax)
            y = rng.uniform(ymin, ymax)
            z = float(terrain.height(np.array(x), np.array(y)))
            pt = np.array([x, y, z])
            vis = visibility(pt)
            if len(vis) >= 2:
                points[i] = pt
                vis_lists.append(vis)
                break
        else:
            raise NoVisibility(f"point {i}: no 2-view placement in 100 tries")

    descriptors = _separated_unit_vectors(n_points, descriptor_dim, rng)

    per_image: dict[str, list] = {im: [] for im in image_ids}
    for pid, vis in enumerate(vis_lists):
        for im, pix in vis:
            per_image[im].append((pid, pix))

    feature_sets = {}
    truth_point_ids = {}
    for im in image_ids:
        rows = per_image[im]
        kps = []
        descs = []
        pids = []
        for pid, pix in rows:
            p = pix.copy()
            if noise.keypoint_sigma > 0:
                p = p + rng.normal(0.0, noise.keypoint_sigma, 2)
            if not (0 <= p[0] < cfg.image_width and 0 <= p[1] < cfg.image_height):
                continue
            d = descriptors[pid]
            if noise.descriptor_sigma > 0:
                d = d + rng.normal(0.0, noise.descriptor_sigma, descriptor_dim)
                d = d / np.linalg.norm(d)
            kps.append([p[0], p[1], 1.0])
            descs.append(d)
            pids.append(pid)
        feature_sets[im] = FeatureSet(
            im, cfg.image_width, cfg.image_height,
            np.array(kps, dtype=np.float32).reshape(-1, 3),
            np.array(descs, dtype=np.float32).reshape(-1, descriptor_dim),
        )
        truth_point_ids[im] = np.array(pids, dtype=np.intp)

    pos_records = []
    for im in image_ids:
        c = plan[im].center.copy()
        c[0] += rng.normal(0.0, noise.gnss_h_sigma)
        c[1] += rng.normal(0.0, noise.gnss_h_sigma)
        c[2] += rng.normal(0.0, noise.gnss_v_sigma)
        pos_records.append(PosRecord(
            im, ProjectedCoord(c[0], c[1], c[2]),
            max(noise.gnss_h_sigma, 1e-6), max(noise.gnss_v_sigma, 1e-6)))

    # checkpoint: a known ground point at the block center, exact
    # observations in every camera that sees it
    cx = 0.5 * (xmin + xmax)
    cy = 0.5 * (ymin + ymax)
    checkpoint = np.array([cx, cy, float(terrain.height(np.array(cx),
                                                        np.array(cy)))])
    checkpoint_obs = [(im, Keypoint(float(p[0]), float(p[1])))
                      for im, p in visibility(checkpoint)]

    return SynthDataset(cfg, cam, dict(plan), points, feature_sets,
                        truth_point_ids, pos_records, checkpoint,
                        checkpoint_obs)
