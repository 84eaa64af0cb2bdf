"""Camera model, epipolar estimation with RANSAC, relative orientation,
triangulation, PnP registration, reprojection error.

Conventions: Pose stores the world->camera rotation R (unit quaternion,
scalar first) and the camera center c in world coordinates, so a world
point X maps to camera coordinates R @ (X - c).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, NumericalError
from .features import FeatureSet, Keypoint
from .matching import Match


class InsufficientData(DataError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class ChiralityAmbiguous(NumericalError):
    pass


class DegenerateGeometry(NumericalError):
    pass


class BehindCamera(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


# ---------------------------------------------------------------------------
# quaternion helpers (scalar-first, unit)

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(r: np.ndarray) -> np.ndarray:
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1.0 + r[i, i] - r[j, j] - r[k, k], 0.0)) * 2
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    return quat_normalize(q)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_exp(v: np.ndarray) -> np.ndarray:
    """Exponential map: small rotation vector -> unit quaternion."""
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        return quat_normalize(np.array([1.0, v[0] / 2, v[1] / 2, v[2] / 2]))
    s = math.sin(theta / 2) / theta
    return np.array([math.cos(theta / 2), s * v[0], s * v[1], s * v[2]])


def rotation_angle(r: np.ndarray) -> float:
    c = (np.trace(r) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]],
                    dtype=np.float64)


@dataclass(frozen=True)
class Pose:
    q: np.ndarray       # unit quaternion, world->camera, scalar first
    center: np.ndarray  # camera center in world frame, meters

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(self.q))
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=np.float64))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rot(self.q)

    def world_to_cam(self, pts: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(pts) - self.center) @ self.rotation.T

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0, 0, 0]), np.zeros(3))


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be > 0")

    @property
    def mean_focal(self) -> float:
        return 0.5 * (self.fx + self.fy)

    def distort_normalized(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        r2 = np.sum(xy * xy, axis=1, keepdims=True)
        factor = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
        return xy * factor

    def project(self, pts_cam: np.ndarray) -> np.ndarray:
        """Camera-frame points -> distorted pixel coordinates."""
        pts_cam = np.atleast_2d(pts_cam)
        z = pts_cam[:, 2:3]
        xy = pts_cam[:, :2] / z
        xyd = self.distort_normalized(xy)
        return np.column_stack([self.fx * xyd[:, 0] + self.cx,
                                self.fy * xyd[:, 1] + self.cy])


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 1.0        # pixels (Sampson distance)
    confidence: float = 0.9999
    min_iterations: int = 100
    max_iterations: int = 10000
    seed: int = 42

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")
        if self.threshold <= 0:
            raise ValueError("threshold must be > 0")


@dataclass(frozen=True)
class EssentialMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix",
                           np.asarray(self.matrix, dtype=np.float64))


# ---------------------------------------------------------------------------
# distortion / undistortion

def undistort_points(pix: np.ndarray, cam: CameraModel,
                     max_iterations: int = 20) -> np.ndarray:
    """Pixel coordinates -> undistorted normalized coordinates.

    Newton inversion of the radial model x_d = x (1 + k1 r^2 + k2 r^4).
    """
    pix = np.atleast_2d(np.asarray(pix, dtype=np.float64))
    xd = np.column_stack([(pix[:, 0] - cam.cx) / cam.fx,
                          (pix[:, 1] - cam.cy) / cam.fy])
    if cam.k1 == 0.0 and cam.k2 == 0.0:
        return xd
    # solve for r given rd = r (1 + k1 r^2 + k2 r^4), then rescale
    rd = np.linalg.norm(xd, axis=1)
    r = rd.copy()
    for _ in range(max_iterations):
        r2 = r * r
        f = r * (1 + cam.k1 * r2 + cam.k2 * r2 * r2) - rd
        df = 1 + 3 * cam.k1 * r2 + 5 * cam.k2 * r2 * r2
        step = f / df
        r = r - step
        if np.max(np.abs(step)) < 1e-12:
            break
    else:
        raise NoConvergence("undistortion Newton did not converge")
    scale = np.where(rd > 1e-15, r / np.where(rd > 1e-15, rd, 1.0), 1.0)
    return xd * scale[:, None]


def undistort(k: Keypoint, cam: CameraModel) -> np.ndarray:
    return undistort_points(np.array([[k.x, k.y]]), cam)[0]


# ---------------------------------------------------------------------------
# essential matrix

def _eight_point(xa: np.ndarray, xb: np.ndarray) -> np.ndarray | None:
    """Normalized 8-point on normalized image coordinates; returns E with
    the (s, s, 0) spectrum enforced, or None when degenerate."""

    def hartley(x):
        c = x.mean(axis=0)
        d = np.sqrt(2.0) / max(np.mean(np.linalg.norm(x - c, axis=1)), 1e-12)
        t = np.array([[d, 0, -d * c[0]], [0, d, -d * c[1]], [0, 0, 1]])
        return (x - c) * d, t

    na, ta = hartley(xa)
    nb, tb = hartley(xb)
    a = np.column_stack([
        nb[:, 0] * na[:, 0], nb[:, 0] * na[:, 1], nb[:, 0],
        nb[:, 1] * na[:, 0], nb[:, 1] * na[:, 1], nb[:, 1],
        na[:, 0], na[:, 1], np.ones(len(na)),
    ])
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    if s[-2] < 1e-12 * max(s[0], 1e-300):
        return None  # rank-deficient sample
    f = vt[-1].reshape(3, 3)
    e = tb.T @ f @ ta
    u, sv, vt = np.linalg.svd(e)
    s_mean = 0.5 * (sv[0] + sv[1])
    e = u @ np.diag([s_mean, s_mean, 0.0]) @ vt
    n = np.linalg.norm(e)
    if n < 1e-300:
        return None
    return e / n


def _eight_point_batch(xa_s: np.ndarray, xb_s: np.ndarray
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized 8-point over a batch of samples.

    xa_s, xb_s: (B, 8, 2). Returns (E, valid) with E (B, 3, 3); entries
    with valid[i] False are degenerate and must be ignored.
    """
    b = xa_s.shape[0]

    def hartley(x):
        c = x.mean(axis=1, keepdims=True)
        d = np.sqrt(2.0) / np.maximum(
            np.linalg.norm(x - c, axis=2).mean(axis=1), 1e-12)
        return (x - c) * d[:, None, None], c[:, 0, :], d

    na, ca, da = hartley(xa_s)
    nb, cb, db = hartley(xb_s)
    one = np.ones(na.shape[:2])
    a = np.stack([
        nb[..., 0] * na[..., 0], nb[..., 0] * na[..., 1], nb[..., 0],
        nb[..., 1] * na[..., 0], nb[..., 1] * na[..., 1], nb[..., 1],
        na[..., 0], na[..., 1], one,
    ], axis=2)
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    valid = s[:, -2] >= 1e-12 * np.maximum(s[:, 0], 1e-300)
    f = vt[:, -1, :].reshape(b, 3, 3)

    def tmat(c, d):
        t = np.zeros((b, 3, 3))
        t[:, 0, 0] = d
        t[:, 1, 1] = d
        t[:, 2, 2] = 1.0
        t[:, 0, 2] = -d * c[:, 0]
        t[:, 1, 2] = -d * c[:, 1]
        return t

    e = np.transpose(tmat(cb, db), (0, 2, 1)) @ f @ tmat(ca, da)
    u, sv, vt3 = np.linalg.svd(e)
    d3 = np.zeros((b, 3, 3))
    d3[:, 0, 0] = d3[:, 1, 1] = 0.5 * (sv[:, 0] + sv[:, 1])
    e = u @ d3 @ vt3
    nrm = np.linalg.norm(e, axis=(1, 2))
    valid &= nrm > 1e-300
    return e / np.maximum(nrm, 1e-300)[:, None, None], valid


def _sampson_batch(es: np.ndarray, ha: np.ndarray, hb: np.ndarray
                   ) -> np.ndarray:
    """Sampson distances for a batch of models: (B, 3, 3) x (n, 3) -> (B, n)."""
    ex = np.einsum("bij,nj->bni", es, ha)
    etx = np.einsum("bji,nj->bni", es, hb)
    num = np.einsum("ni,bni->bn", hb, ex)
    den = (ex[..., 0] ** 2 + ex[..., 1] ** 2
           + etx[..., 0] ** 2 + etx[..., 1] ** 2)
    return np.abs(num) / np.sqrt(np.maximum(den, 1e-300))


def sampson_distance(e: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """First-order epipolar distance in normalized coordinates."""
    ha = np.column_stack([xa, np.ones(len(xa))])
    hb = np.column_stack([xb, np.ones(len(xb))])
    ex = ha @ e.T      # E @ xa, per row
    etx = hb @ e       # E.T @ xb, per row
    num = np.sum(hb * ex, axis=1)
    den = ex[:, 0] ** 2 + ex[:, 1] ** 2 + etx[:, 0] ** 2 + etx[:, 1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(den, 1e-300))


def estimate_essential_ransac(
    matches: list[Match], fs_a: FeatureSet, fs_b: FeatureSet,
    cam: CameraModel, cfg: RansacConfig = RansacConfig(),
) -> tuple[EssentialMatrix, np.ndarray]:
    """RANSAC over the normalized 8-point algorithm.

    Returns the best model and a boolean inlier mask over matches.
    Sampson threshold is cfg.threshold pixels, converted to normalized
    units via the mean focal length. Deterministic given cfg.seed.
    """
    if len(matches) < 8:
        raise InsufficientData(f"{len(matches)} matches, need >= 8")
    ia = np.array([m.index_a for m in matches])
    ib = np.array([m.index_b for m in matches])
    xa = undistort_points(fs_a.keypoints[ia, :2], cam)
    xb = undistort_points(fs_b.keypoints[ib, :2], cam)
    thresh = cfg.threshold / cam.mean_focal

    rng = np.random.default_rng(cfg.seed)
    n = len(matches)
    ha = np.column_stack([xa, np.ones(n)])
    hb = np.column_stack([xb, np.ones(n)])
    best_e = None
    best_mask = None
    best_count = -1
    max_iter = cfg.max_iterations
    it = 0
    while it < max(cfg.min_iterations, min(max_iter, cfg.max_iterations)):
        target = max(cfg.min_iterations, min(max_iter, cfg.max_iterations))
        chunk = min(128, target - it)
        it += chunk
        samples = np.argsort(rng.random((chunk, n)), axis=1)[:, :8]
        es, valid = _eight_point_batch(xa[samples], xb[samples])
        if not valid.any():
            continue
        d = _sampson_batch(es[valid], ha, hb)
        masks = d <= thresh
        counts = masks.sum(axis=1)
        k = int(np.argmax(counts))
        count = int(counts[k])
        if count > best_count:
            best_count = count
            best_e = es[valid][k]
            best_mask = masks[k]
            w = count / n
            if w > 0:
                denom = math.log(max(1e-12, 1.0 - w ** 8))
                if denom < 0:
                    max_iter = min(cfg.max_iterations,
                                   int(math.log(1 - cfg.confidence) / denom) + 1)
    if best_e is None:
        raise DegenerateConfiguration("every RANSAC sample was degenerate")

    # final re-fit on inliers
    if best_count >= 8:
        e = _eight_point(xa[best_mask], xb[best_mask])
        if e is not None:
            d = sampson_distance(e, xa, xb)
            mask = d <= thresh
            if int(mask.sum()) >= best_count:
                best_e, best_mask = e, mask
    return EssentialMatrix(best_e), best_mask


def _triangulate_linear_pair(xa: np.ndarray, xb: np.ndarray,
                             r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Midpoint-free linear triangulation for chirality checks.
    Camera A at origin, camera B: x_b = r @ x_a + t."""
    out = np.empty((len(xa), 3))
    pa = np.hstack([np.eye(3), np.zeros((3, 1))])
    pb = np.hstack([r, t.reshape(3, 1)])
    for i in range(len(xa)):
        a = np.stack([
            xa[i, 0] * pa[2] - pa[0],
            xa[i, 1] * pa[2] - pa[1],
            xb[i, 0] * pb[2] - pb[0],
            xb[i, 1] * pb[2] - pb[1],
        ])
        _, _, vt = np.linalg.svd(a)
        x = vt[-1]
        out[i] = x[:3] / x[3] if abs(x[3]) > 1e-300 else np.full(3, np.inf)
    return out


def decompose_essential(
    e: EssentialMatrix, matches: list[Match], fs_a: FeatureSet,
    fs_b: FeatureSet, cam: CameraModel,
    inlier_mask: np.ndarray | None = None,
) -> Pose:
    """Pick the chirality-consistent (R, t) among the four decompositions.

    Returns the pose of camera B in camera A's frame (world = camera A),
    translation normalized to unit baseline.
    """
    if inlier_mask is None:
        inlier_mask = np.ones(len(matches), dtype=bool)
    idx = np.nonzero(inlier_mask)[0]
    if len(idx) < 1:
        raise InsufficientData("no inlier matches")
    ia = np.array([matches[i].index_a for i in idx])
    ib = np.array([matches[i].index_b for i in idx])
    xa = undistort_points(fs_a.keypoints[ia, :2], cam)
    xb = undistort_points(fs_b.keypoints[ib, :2], cam)

    u, _, vt = np.linalg.svd(e.matrix)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]

    best = None
    best_count = -1
    tie = False
    for r_cand, t_cand in ((r1, t), (r1, -t), (r2, t), (r2, -t)):
        pts = _triangulate_linear_pair(xa, xb, r_cand, t_cand)
        za = pts[:, 2]
        zb = (pts @ r_cand.T + t_cand)[:, 2]
        count = int(np.sum((za > 0) & (zb > 0) & np.isfinite(za)))
        if count > best_count:
            best, best_count, tie = (r_cand, t_cand), count, False
        elif count == best_count:
            tie = True
    if best is None or best_count <= 0.5 * len(idx) or tie:
        raise ChiralityAmbiguous(
            f"best candidate has {best_count}/{len(idx)} points in front"
        )
    r_ab, t_ab = best
    t_ab = t_ab / np.linalg.norm(t_ab)
    center = -r_ab.T @ t_ab
    return Pose(rot_to_quat(r_ab), center)


# ---------------------------------------------------------------------------
# triangulation

def triangulation_angles(point: np.ndarray,
                         centers: list[np.ndarray]) -> np.ndarray:
    """Pairwise ray angles (radians) from camera centers to the point."""
    rays = [point - c for c in centers]
    rays = [r / max(np.linalg.norm(r), 1e-300) for r in rays]
    angles = []
    for i in range(len(rays)):
        for j in range(i + 1, len(rays)):
            c = min(1.0, max(-1.0, float(np.dot(rays[i], rays[j]))))
            angles.append(math.acos(c))
    return np.array(angles)


def triangulate(
    observations: list[tuple[Pose, CameraModel, Keypoint]],
    min_angle_deg: float = 0.1,
) -> np.ndarray:
    """Multi-view DLT plus one Gauss-Newton refinement step.

    Raises DegenerateGeometry when all rays are nearly parallel and
    BehindCamera when the point has non-positive depth in any view.
    """
    if len(observations) < 2:
        raise InsufficientData("need >= 2 observations")
    rows = []
    for pose, cam, kp in observations:
        x = undistort(kp, cam)
        r = pose.rotation
        p = np.hstack([r, (-r @ pose.center).reshape(3, 1)])
        rows.append(x[0] * p[2] - p[0])
        rows.append(x[1] * p[2] - p[1])
    a = np.stack(rows)
    _, _, vt = np.linalg.svd(a)
    xh = vt[-1]
    if abs(xh[3]) < 1e-12 * np.linalg.norm(xh[:3]):
        raise DegenerateGeometry("point at infinity")
    point = xh[:3] / xh[3]

    centers = [pose.center for pose, _, _ in observations]
    angles = triangulation_angles(point, centers)
    if angles.max(initial=0.0) < math.radians(min_angle_deg):
        raise DegenerateGeometry(
            f"max triangulation angle {math.degrees(angles.max(initial=0.0)):.4f} deg"
        )

    point = _gauss_newton_point(point, observations)

    for pose, _, _ in observations:
        if pose.world_to_cam(point)[0, 2] <= 0:
            raise BehindCamera("triangulated point behind a camera")
    return point


def _gauss_newton_point(point: np.ndarray,
                        observations, steps: int = 1) -> np.ndarray:
    for _ in range(steps):
        jtj = np.zeros((3, 3))
        jtr = np.zeros(3)
        cost0 = 0.0
        for pose, cam, kp in observations:
            r = pose.rotation
            pc = (r @ (point - pose.center))
            if pc[2] <= 0:
                return point
            res, jp = _project_jacobian_point(pc, r, cam)
            res = res - np.array([kp.x, kp.y])
            jtj += jp.T @ jp
            jtr += jp.T @ res
            cost0 += float(res @ res)
        try:
            delta = np.linalg.solve(jtj + 1e-12 * np.eye(3), -jtr)
        except np.linalg.LinAlgError:
            return point
        cand = point + delta
        cost1 = 0.0
        ok = True
        for pose, cam, kp in observations:
            pc = pose.world_to_cam(cand)[0]
            if pc[2] <= 0:
                ok = False
                break
            pr = cam.project(pc)[0]
            cost1 += float(np.sum((pr - np.array([kp.x, kp.y])) ** 2))
        if ok and cost1 < cost0:
            point = cand
    return point


def _project_jacobian_point(pc: np.ndarray, r: np.ndarray,
                            cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Projected pixel and its Jacobian w.r.t. the world point."""
    x, y = pc[0] / pc[2], pc[1] / pc[2]
    r2 = x * x + y * y
    f = 1 + cam.k1 * r2 + cam.k2 * r2 * r2
    df = cam.k1 + 2 * cam.k2 * r2
    pix = np.array([cam.fx * x * f + cam.cx, cam.fy * y * f + cam.cy])
    # d(distorted)/d(normalized)
    dd = np.array([
        [f + 2 * x * x * df, 2 * x * y * df],
        [2 * x * y * df, f + 2 * y * y * df],
    ])
    dk = np.diag([cam.fx, cam.fy]) @ dd
    # d(normalized)/d(camera point)
    dn = np.array([[1 / pc[2], 0, -x / pc[2]],
                   [0, 1 / pc[2], -y / pc[2]]])
    return pix, dk @ dn @ r


def reprojection_error(point: np.ndarray, pose: Pose, cam: CameraModel,
                       obs: Keypoint) -> float:
    """Pixel distance between the distorted projection and the observation."""
    pc = pose.world_to_cam(point)[0]
    if pc[2] <= 0:
        raise BehindCamera(f"depth {pc[2]:.3g}")
    pr = cam.project(pc)[0]
    return float(np.hypot(pr[0] - obs.x, pr[1] - obs.y))


# ---------------------------------------------------------------------------
# PnP

def _pnp_dlt(pts3: np.ndarray, xn: np.ndarray) -> Pose | None:
    """6-point DLT for [R|t] from world points and normalized coords."""
    n = len(pts3)
    c3 = pts3.mean(axis=0)
    s3 = np.mean(np.linalg.norm(pts3 - c3, axis=1))
    if s3 < 1e-12:
        return None
    p3 = (pts3 - c3) / s3
    a = np.zeros((2 * n, 12))
    for i in range(n):
        xh = np.append(p3[i], 1.0)
        a[2 * i, 0:4] = xh
        a[2 * i, 8:12] = -xn[i, 0] * xh
        a[2 * i + 1, 4:8] = xh
        a[2 * i + 1, 8:12] = -xn[i, 1] * xh
    _, s, vt = np.linalg.svd(a)
    if s[-2] < 1e-10 * max(s[0], 1e-300):
        return None  # degenerate (e.g. coplanar ambiguity)
    p = vt[-1].reshape(3, 4)
    m = p[:, :3]
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        return None
    scale = sv.mean()
    p = p / scale
    if np.linalg.det(p[:, :3]) < 0:
        p = -p
    u, _, vt2 = np.linalg.svd(p[:, :3])
    r = u @ vt2
    t = p[:, 3]
    # undo the normalization of the 3D points
    t = t - r @ c3 / s3
    t = t * s3
    # positive depth for the majority, else flip (sign ambiguity)
    depths = (pts3 @ r.T + t)[:, 2]
    if np.median(depths) < 0:
        return None
    center = -r.T @ t
    return Pose(rot_to_quat(r), center)


def _pnp_dlt_batch(pts3_s: np.ndarray, xn_s: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized 6-point DLT over (B, 6, 3) points / (B, 6, 2) normalized
    coords. Returns (R, t, valid) with R (B, 3, 3), t (B, 3)."""
    b, k = pts3_s.shape[:2]
    c3 = pts3_s.mean(axis=1, keepdims=True)
    s3 = np.linalg.norm(pts3_s - c3, axis=2).mean(axis=1)
    valid = s3 > 1e-12
    s3 = np.maximum(s3, 1e-12)
    p3 = (pts3_s - c3) / s3[:, None, None]
    xh = np.concatenate([p3, np.ones((b, k, 1))], axis=2)
    a = np.zeros((b, 2 * k, 12))
    a[:, 0::2, 0:4] = xh
    a[:, 0::2, 8:12] = -xn_s[..., 0:1] * xh
    a[:, 1::2, 4:8] = xh
    a[:, 1::2, 8:12] = -xn_s[..., 1:2] * xh
    _, s, vt = np.linalg.svd(a)
    valid &= s[:, -2] >= 1e-10 * np.maximum(s[:, 0], 1e-300)
    p = vt[:, -1, :].reshape(b, 3, 4)
    m = p[:, :, :3]
    um, sv, vtm = np.linalg.svd(m)
    valid &= sv[:, -1] >= 1e-10 * np.maximum(sv[:, 0], 1e-300)
    scale = np.maximum(sv.mean(axis=1), 1e-300)
    p = p / scale[:, None, None]
    sign = np.where(np.linalg.det(p[:, :, :3]) < 0, -1.0, 1.0)
    # closest rotation to sign-corrected M (scale leaves U, V unchanged)
    r = sign[:, None, None] * (um @ vtm)
    t = sign[:, None] * p[:, :, 3]
    t = (t - np.einsum("bij,bj->bi", r, c3[:, 0, :]) / s3[:, None]) \
        * s3[:, None]
    # positive depth for the sample's own points (sign ambiguity)
    depths = (np.einsum("bij,bkj->bki", r, pts3_s) + t[:, None, :])[..., 2]
    valid &= np.median(depths, axis=1) > 0
    return r, t, valid


def _pnp_residual_batch(rs: np.ndarray, ts: np.ndarray, pts3: np.ndarray,
                        pix: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Pixel reprojection error (B, n) for B poses given as R, t with
    x_cam = R X + t; points behind the camera get inf."""
    pc = np.einsum("bij,nj->bni", rs, pts3) + ts[:, None, :]
    z = pc[..., 2]
    good = z > 1e-9
    xy = pc[..., :2] / np.maximum(z, 1e-9)[..., None]
    b, n = xy.shape[:2]
    xyd = cam.distort_normalized(xy.reshape(-1, 2)).reshape(b, n, 2)
    px = cam.fx * xyd[..., 0] + cam.cx
    py = cam.fy * xyd[..., 1] + cam.cy
    err = np.hypot(px - pix[:, 0], py - pix[:, 1])
    return np.where(good, err, np.inf)


def _pose_residuals(pose: Pose, pts3: np.ndarray, pix: np.ndarray,
                    cam: CameraModel) -> np.ndarray:
    pc = pose.world_to_cam(pts3)
    bad = pc[:, 2] <= 1e-9
    pc = pc.copy()
    pc[bad, 2] = 1e-9
    pr = cam.project(pc)
    res = pr - pix
    res[bad] = 1e6
    return res.ravel()


def refine_pose(pose: Pose, pts3: np.ndarray, pix: np.ndarray,
                cam: CameraModel, max_iterations: int = 50) -> Pose:
    """Levenberg-Marquardt on the 6-dof pose, tangent-space rotation."""
    from scipy.optimize import least_squares

    q0, c0 = pose.q.copy(), pose.center.copy()

    def unpack(p):
        return Pose(quat_mul(quat_exp(p[:3]), q0), c0 + p[3:])

    def fun(p):
        return _pose_residuals(unpack(p), pts3, pix, cam)

    sol = least_squares(fun, np.zeros(6), method="lm",
                        max_nfev=max_iterations * 8)
    return unpack(sol.x)


def solve_pnp_ransac(
    correspondences: list[tuple[np.ndarray, Keypoint]],
    cam: CameraModel, cfg: RansacConfig = RansacConfig(),
) -> tuple[Pose, np.ndarray]:
    """6-point DLT inside RANSAC, then LM refinement on the inliers."""
    if len(correspondences) < 6:
        raise InsufficientData(f"{len(correspondences)} correspondences, need >= 6")
    pts3 = np.array([np.asarray(p, dtype=np.float64) for p, _ in correspondences])
    pix = np.array([[k.x, k.y] for _, k in correspondences])
    xn = undistort_points(pix, cam)

    rng = np.random.default_rng(cfg.seed)
    n = len(correspondences)
    best_pose = None
    best_mask = None
    best_count = -1
    max_iter = cfg.max_iterations
    it = 0
    while it < max(cfg.min_iterations, min(max_iter, cfg.max_iterations)):
        target = max(cfg.min_iterations, min(max_iter, cfg.max_iterations))
        chunk = min(128, target - it)
        it += chunk
        samples = np.argsort(rng.random((chunk, n)), axis=1)[:, :6]
        rs, ts, valid = _pnp_dlt_batch(pts3[samples], xn[samples])
        if not valid.any():
            continue
        err = _pnp_residual_batch(rs[valid], ts[valid], pts3, pix, cam)
        masks = err <= cfg.threshold
        counts = masks.sum(axis=1)
        k = int(np.argmax(counts))
        count = int(counts[k])
        if count > best_count:
            r, t = rs[valid][k], ts[valid][k]
            best_pose = Pose(rot_to_quat(r), -r.T @ t)
            best_count, best_mask = count, masks[k]
            w = count / n
            if w > 0:
                denom = math.log(max(1e-12, 1.0 - w ** 6))
                if denom < 0:
                    max_iter = min(cfg.max_iterations,
                                   int(math.log(1 - cfg.confidence) / denom) + 1)
    if best_pose is None:
        raise DegenerateConfiguration("every PnP sample was degenerate")

    # refine on inliers and re-classify, twice (local optimization)
    for _ in range(2):
        inl = np.nonzero(best_mask)[0]
        refined = refine_pose(best_pose, pts3[inl], pix[inl], cam)
        res = _pose_residuals(refined, pts3, pix, cam).reshape(-1, 2)
        err = np.linalg.norm(res, axis=1)
        mask = err <= cfg.threshold
        if int(mask.sum()) >= int(best_mask.sum()):
            best_pose, best_mask = refined, mask
        else:
            break
    return best_pose, best_mask
