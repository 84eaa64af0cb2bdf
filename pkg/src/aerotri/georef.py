"""POS-based georeferencing (similarity alignment of the free network,
no ground control points) and the evaluation metrics: relative
orientation error, BA reprojection error, camera position errors, and
checkpoint error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError
from .features import Keypoint
from .geo import PosRecord, ProjectedCoord
from .geometry import (CameraModel, Pose, rot_to_quat, quat_to_rot,
                       triangulate, DegenerateGeometry)
from .sfm import Reconstruction, ScenePoint


class InsufficientPoints(DataError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class MissingPos(DataError):
    pass


class EmptyPair(DataError):
    pass


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray     # unit quaternion, scalar first
    translation: np.ndarray  # meters

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        object.__setattr__(self, "rotation",
                           np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64))

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_rot(self.rotation)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return self.scale * (np.atleast_2d(pts) @ self.matrix.T) + self.translation

    def inverse(self) -> "SimilarityTransform":
        r_inv = self.matrix.T
        return SimilarityTransform(1.0 / self.scale, rot_to_quat(r_inv),
                                   -r_inv @ self.translation / self.scale)

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(1.0, np.array([1.0, 0, 0, 0]), np.zeros(3))


def estimate_similarity(source: np.ndarray,
                        target: np.ndarray) -> SimilarityTransform:
    """Closed-form least-squares similarity (cross-covariance SVD with
    reflection guard) minimizing sum ||s R x + t - y||^2."""
    source = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if len(source) < 3 or len(source) != len(target):
        raise InsufficientPoints(f"{len(source)} source / {len(target)} target")

    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    xs = source - mu_s
    xt = target - mu_t
    cov = xt.T @ xs / len(source)
    u, d, vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1e-300):
        raise DegenerateConfiguration("points are collinear")
    s_mat = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_mat[2, 2] = -1.0
    r = u @ s_mat @ vt
    var_s = float(np.mean(np.sum(xs * xs, axis=1)))
    scale = float(np.trace(np.diag(d) @ s_mat)) / var_s
    t = mu_t - scale * r @ mu_s
    return SimilarityTransform(scale, rot_to_quat(r), t)


def apply_similarity(recon: Reconstruction,
                     transform: SimilarityTransform) -> Reconstruction:
    """Map all points and camera poses; image geometry is preserved."""
    r_sim = transform.matrix
    new = Reconstruction(camera=recon.camera, features=recon.features)
    for im, pose in recon.registered.items():
        new_r = pose.rotation @ r_sim.T
        new_c = transform.apply(pose.center)[0]
        new.registered[im] = Pose(rot_to_quat(new_r), new_c)
    for tid, pt in recon.points.items():
        new.points[tid] = ScenePoint(transform.apply(pt.xyz)[0],
                                     pt.track, pt.track_id)
    return new


def _pos_xyz(rec: PosRecord) -> np.ndarray:
    p = rec.position
    if not isinstance(p, ProjectedCoord):
        raise MissingPos(f"POS for {rec.image_id} is not in projected form")
    return np.array([p.easting, p.northing, p.altitude])


def georeference(recon: Reconstruction,
                 pos: list[PosRecord]) -> tuple[Reconstruction,
                                                SimilarityTransform]:
    """Align the free network to the POS camera positions."""
    by_id = {r.image_id: r for r in pos}
    src, dst = [], []
    for im in sorted(recon.registered):
        if im not in by_id:
            raise MissingPos(f"no POS record for registered image {im}")
        src.append(recon.registered[im].center)
        dst.append(_pos_xyz(by_id[im]))
    transform = estimate_similarity(np.array(src), np.array(dst))
    return apply_similarity(recon, transform), transform


@dataclass(frozen=True)
class AxisErrors:
    x: float
    y: float
    z: float

    @property
    def xy(self) -> float:
        return math.hypot(self.x, self.y)

    @property
    def xyz(self) -> float:
        return math.hypot(self.xy, self.z)


def compose_axis_errors(x: float, y: float, z: float) -> AxisErrors:
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise ValueError("non-finite axis errors")
    return AxisErrors(x, y, z)


def camera_position_errors(recon: Reconstruction,
                           pos: list[PosRecord]) -> AxisErrors:
    """Per-axis RMSE over cameras between reconstructed centers and POS."""
    by_id = {r.image_id: r for r in pos}
    diffs = []
    for im in sorted(recon.registered):
        if im not in by_id:
            raise MissingPos(f"no POS record for registered image {im}")
        diffs.append(recon.registered[im].center - _pos_xyz(by_id[im]))
    d = np.array(diffs)
    rmse = np.sqrt(np.mean(d * d, axis=0))
    return AxisErrors(float(rmse[0]), float(rmse[1]), float(rmse[2]))


def checkpoint_error(recon: Reconstruction,
                     checkpoint_observations: list[tuple[str, Keypoint]],
                     truth: np.ndarray) -> AxisErrors:
    """Triangulate the checkpoint in the georeferenced frame; signed
    per-axis difference (estimate - truth)."""
    obs = [(recon.registered[im], recon.camera, kp)
           for im, kp in checkpoint_observations if im in recon.registered]
    if len(obs) < 2:
        raise DegenerateGeometry(
            f"checkpoint observed in {len(obs)} registered images")
    est = triangulate(obs)
    d = est - np.asarray(truth, dtype=np.float64)
    return AxisErrors(float(d[0]), float(d[1]), float(d[2]))


def relative_orientation_report(recon: Reconstruction) -> tuple[float, float]:
    """(mean, RMS) reprojection error in pixels over a two-view
    reconstruction's triangulated points."""
    if len(recon.registered) != 2 or not recon.points:
        raise EmptyPair("need a two-view reconstruction with points")
    errs = [e for t in recon.points
            for _, _, e in recon.observation_errors(t) if math.isfinite(e)]
    if not errs:
        raise EmptyPair("no finite reprojection errors")
    e = np.array(errs)
    return float(e.mean()), float(np.sqrt(np.mean(e * e)))


def evaluation_report_csv(
    relative_orientation: tuple[float, float] | None = None,
    bundle_adjustment: tuple[float, float] | None = None,   # (rms, mean)
    camera_position: AxisErrors | None = None,
    checkpoint: AxisErrors | None = None,
) -> str:
    """Sectioned metric CSV mirroring the evaluation tables. Camera
    position rows are RMSE magnitudes; checkpoint rows are signed."""
    lines = ["section,metric,value"]
    if relative_orientation is not None:
        mean, rms = relative_orientation
        lines.append(f"relative_orientation,mean_px,{mean:.6f}")
        lines.append(f"relative_orientation,rms_px,{rms:.6f}")
    if bundle_adjustment is not None:
        rms, mean = bundle_adjustment
        lines.append(f"bundle_adjustment,rms_px,{rms:.6f}")
        lines.append(f"bundle_adjustment,mean_px,{mean:.6f}")
    if camera_position is not None:
        for name, v in (("x_m", camera_position.x), ("y_m", camera_position.y),
                        ("z_m", camera_position.z), ("xy_m", camera_position.xy),
                        ("xyz_m", camera_position.xyz)):
            lines.append(f"camera_position,{name},{v:.6f}")
    if checkpoint is not None:
        for name, v in (("x_m", checkpoint.x), ("y_m", checkpoint.y),
                        ("z_m", checkpoint.z), ("xy_m", checkpoint.xy),
                        ("xyz_m", checkpoint.xyz)):
            lines.append(f"checkpoint,{name},{v:.6f}")
    return "\n".join(lines) + "\n"
