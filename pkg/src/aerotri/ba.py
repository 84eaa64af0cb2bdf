"""Sparse bundle adjustment: Levenberg-Marquardt with a Schur
complement over point blocks, optional GNSS position priors, and a
Huber robust loss on reprojection residuals.

Camera part (pose blocks + optional shared intrinsics) is reduced
densely; point blocks are inverted per point in closed form.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, NumericalError
from .geometry import CameraModel, Pose, quat_exp, quat_mul

N_INTR = 6  # fx, fy, cx, cy, k1, k2


class EmptyReconstruction(DataError):
    pass


class NumericalFailure(NumericalError):
    pass


class NonFiniteResidual(NumericalError):
    pass


class Termination(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    TRUST_REGION_FAILURE = "TrustRegionFailure"


@dataclass(frozen=True)
class HuberLoss:
    scale: float = 2.0  # pixels


@dataclass
class BAProblem:
    camera: CameraModel                 # shared intrinsics
    poses: list[Pose]
    points: np.ndarray                  # (P, 3)
    obs_cam: np.ndarray                 # (M,) camera index per observation
    obs_pt: np.ndarray                  # (M,) point index per observation
    obs_xy: np.ndarray                  # (M, 2) pixel measurements
    pose_fixed: np.ndarray              # (C,) bool
    point_fixed: Optional[np.ndarray] = None   # (P,) bool
    scale_gauge: Optional[tuple[int, int]] = None  # (camera idx, center axis)
    priors: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)
    refine_intrinsics: bool = False
    loss: Optional[HuberLoss] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.obs_cam = np.asarray(self.obs_cam, dtype=np.intp)
        self.obs_pt = np.asarray(self.obs_pt, dtype=np.intp)
        self.obs_xy = np.asarray(self.obs_xy, dtype=np.float64).reshape(-1, 2)
        self.pose_fixed = np.asarray(self.pose_fixed, dtype=bool)
        if self.point_fixed is None:
            self.point_fixed = np.zeros(len(self.points), dtype=bool)
        if len(self.obs_cam) and (self.obs_cam.max() >= len(self.poses)
                                  or self.obs_pt.max() >= len(self.points)):
            raise ValueError("observation references out of range")
        counts = np.bincount(self.obs_pt, minlength=len(self.points))
        if len(self.points) and counts.min(initial=2) < 2:
            raise ValueError("every point must be observed >= 2 times")

    @property
    def n_residual_components(self) -> int:
        return 2 * len(self.obs_cam) + 3 * len(self.priors)

    @property
    def n_parameters(self) -> int:
        n = 6 * int(np.sum(~self.pose_fixed))
        if self.scale_gauge is not None:
            n -= 1
        n += 3 * int(np.sum(~self.point_fixed))
        if self.refine_intrinsics:
            n += N_INTR
        return n


@dataclass(frozen=True)
class BAResult:
    initial_cost: float
    final_cost: float
    iterations: int
    termination: Termination
    rms_reprojection: float


@dataclass
class BAOptions:
    refine_intrinsics: bool = False
    use_priors: bool = True
    loss: Optional[HuberLoss] = field(default_factory=HuberLoss)
    fixed_images: Optional[list[str]] = None


def build_problem(recon, opts: BAOptions = BAOptions(),
                  priors: Optional[dict[str, tuple[np.ndarray, np.ndarray]]] = None,
                  ) -> tuple[BAProblem, list[str], list]:
    """Assemble a BAProblem from a reconstruction.

    priors maps image_id -> (position, per-axis sigma). Gauge: without
    priors the first image's pose is held fixed and the scale is pinned
    through one center component of the most distant camera; active
    priors carry the gauge instead.

    Returns (problem, image ids in camera order, track ids in point order).
    """
    image_ids = sorted(recon.registered.keys())
    if len(image_ids) < 2:
        raise EmptyReconstruction(f"{len(image_ids)} registered images")
    if not recon.points:
        raise EmptyReconstruction("no tracks")
    track_ids = sorted(recon.points.keys())
    cam_index = {im: i for i, im in enumerate(image_ids)}
    pt_index = {t: j for j, t in enumerate(track_ids)}

    poses = [recon.registered[im] for im in image_ids]
    points = np.array([recon.points[t].xyz for t in track_ids])

    obs_cam, obs_pt, obs_xy = [], [], []
    for t in track_ids:
        pt = recon.points[t]
        for image_id, kp_idx in pt.track.observations:
            kp = recon.features[image_id].keypoints[kp_idx]
            obs_cam.append(cam_index[image_id])
            obs_pt.append(pt_index[t])
            obs_xy.append([kp[0], kp[1]])

    prior_list = []
    if opts.use_priors and priors:
        for im, (pos, sigma) in priors.items():
            if im in cam_index:
                prior_list.append((cam_index[im],
                                   np.asarray(pos, dtype=np.float64),
                                   np.asarray(sigma, dtype=np.float64)))

    pose_fixed = np.zeros(len(poses), dtype=bool)
    scale_gauge = None
    if opts.fixed_images:
        for im in opts.fixed_images:
            if im in cam_index:
                pose_fixed[cam_index[im]] = True
    elif not prior_list:
        pose_fixed[0] = True
        # pin the scale: largest center component of the farthest camera
        c0 = poses[0].center
        dists = [np.linalg.norm(p.center - c0) for p in poses]
        far = int(np.argmax(dists))
        axis = int(np.argmax(np.abs(poses[far].center - c0)))
        scale_gauge = (far, axis)

    problem = BAProblem(
        camera=recon.camera, poses=poses, points=points,
        obs_cam=np.array(obs_cam, dtype=np.intp),
        obs_pt=np.array(obs_pt, dtype=np.intp),
        obs_xy=np.array(obs_xy),
        pose_fixed=pose_fixed, scale_gauge=scale_gauge,
        priors=prior_list, refine_intrinsics=opts.refine_intrinsics,
        loss=opts.loss,
    )
    return problem, image_ids, track_ids


# ---------------------------------------------------------------------------
# residual / Jacobian evaluation (batched over observations)

def _rot_mats(poses: list[Pose]) -> np.ndarray:
    return np.stack([p.rotation for p in poses])


def _evaluate(problem: BAProblem, poses, points, cam: CameraModel,
              with_jacobian: bool = True):
    """Batched residuals and Jacobian blocks.

    Returns dict with res (M,2), robust sqrt-weights w (M,), cost, and
    (if requested) jac_rot (M,2,3), jac_center (M,2,3), jac_point
    (M,2,3), jac_intr (M,2,6). Jacobians are unweighted; callers apply
    sqrt(w).
    """
    rm = _rot_mats(poses)
    centers = np.stack([p.center for p in poses])
    diff = points[problem.obs_pt] - centers[problem.obs_cam]
    pc = np.einsum("mij,mj->mi", rm[problem.obs_cam], diff)
    z = pc[:, 2]
    if np.any(z <= 1e-12) or not np.all(np.isfinite(pc)):
        return None  # non-finite / behind camera at this linearization

    x = pc[:, 0] / z
    y = pc[:, 1] / z
    r2 = x * x + y * y
    f = 1 + cam.k1 * r2 + cam.k2 * r2 * r2
    px = cam.fx * x * f + cam.cx
    py = cam.fy * y * f + cam.cy
    res = np.column_stack([px, py]) - problem.obs_xy

    sq = np.sum(res * res, axis=1)
    if problem.loss is not None:
        d2 = problem.loss.scale ** 2
        tail = sq > d2
        rho = np.where(tail, 2 * problem.loss.scale * np.sqrt(np.maximum(sq, 1e-300)) - d2, sq)
        w = np.where(tail, problem.loss.scale / np.sqrt(np.maximum(sq, 1e-300)), 1.0)
    else:
        rho = sq
        w = np.ones(len(sq))
    cost = float(np.sum(rho))

    prior_res = []
    for ci, pos, sigma in problem.priors:
        prior_res.append((poses[ci].center - pos) / sigma)
        cost += float(np.sum(prior_res[-1] ** 2))
    if not math.isfinite(cost):
        return None

    out = {"res": res, "w": w, "cost": cost, "prior_res": prior_res,
           "rms": math.sqrt(float(np.mean(sq))) if len(sq) else 0.0}
    if not with_jacobian:
        return out

    df = cam.k1 + 2 * cam.k2 * r2
    # d(distorted)/d(normalized), scaled by focal lengths: (M,2,2)
    dk = np.empty((len(x), 2, 2))
    dk[:, 0, 0] = cam.fx * (f + 2 * x * x * df)
    dk[:, 0, 1] = cam.fx * (2 * x * y * df)
    dk[:, 1, 0] = cam.fy * (2 * x * y * df)
    dk[:, 1, 1] = cam.fy * (f + 2 * y * y * df)
    # d(normalized)/d(camera point): (M,2,3)
    dn = np.zeros((len(x), 2, 3))
    dn[:, 0, 0] = 1 / z
    dn[:, 0, 2] = -x / z
    dn[:, 1, 1] = 1 / z
    dn[:, 1, 2] = -y / z
    dpc = np.einsum("mab,mbc->mac", dk, dn)  # d(pixel)/d(camera point)

    # rotation tangent (left perturbation): d pc / d delta = -[pc]x
    sk = np.zeros((len(x), 3, 3))
    sk[:, 0, 1] = -pc[:, 2]
    sk[:, 0, 2] = pc[:, 1]
    sk[:, 1, 0] = pc[:, 2]
    sk[:, 1, 2] = -pc[:, 0]
    sk[:, 2, 0] = -pc[:, 1]
    sk[:, 2, 1] = pc[:, 0]
    out["jac_rot"] = -np.einsum("mab,mbc->mac", dpc, sk)
    jac_point = np.einsum("mab,mbc->mac", dpc, rm[problem.obs_cam])
    out["jac_point"] = jac_point
    out["jac_center"] = -jac_point

    if problem.refine_intrinsics:
        ji = np.zeros((len(x), 2, N_INTR))
        xd = x * f
        yd = y * f
        ji[:, 0, 0] = xd
        ji[:, 1, 1] = yd
        ji[:, 0, 2] = 1.0
        ji[:, 1, 3] = 1.0
        ji[:, 0, 4] = cam.fx * x * r2
        ji[:, 1, 4] = cam.fy * y * r2
        ji[:, 0, 5] = cam.fx * x * r2 * r2
        ji[:, 1, 5] = cam.fy * y * r2 * r2
        out["jac_intr"] = ji
    return out


def _apply_step(problem: BAProblem, poses, points, cam, dc, dp,
                cam_free_idx, free_pts):
    """dc: camera-part step (free layout), dp: (n_free_pts, 3)."""
    new_poses = list(poses)
    for slot, ci in enumerate(cam_free_idx):
        d = dc[6 * slot: 6 * slot + 6]
        p = poses[ci]
        new_poses[ci] = Pose(quat_mul(quat_exp(d[:3]), p.q), p.center + d[3:])
    new_points = points.copy()
    new_points[free_pts] += dp
    new_cam = cam
    if problem.refine_intrinsics:
        di = dc[-N_INTR:]
        new_cam = CameraModel(cam.fx + di[0], cam.fy + di[1],
                              cam.cx + di[2], cam.cy + di[3],
                              cam.k1 + di[4], cam.k2 + di[5],
                              cam.width, cam.height)
    return new_poses, new_points, new_cam


def _camera_free_layout(problem: BAProblem):
    cam_free_idx = [i for i in range(len(problem.poses))
                    if not problem.pose_fixed[i]]
    nc = 6 * len(cam_free_idx) + (N_INTR if problem.refine_intrinsics else 0)
    # mask within the free layout for the fixed scale component
    mask = np.ones(nc, dtype=bool)
    if problem.scale_gauge is not None:
        ci, axis = problem.scale_gauge
        if ci in cam_free_idx:
            slot = cam_free_idx.index(ci)
            mask[6 * slot + 3 + axis] = False
    return cam_free_idx, nc, mask


def solve(problem: BAProblem, max_iterations: int = 100,
          gradient_tol: float = 1e-10, cost_rel_tol: float = 1e-9) -> BAResult:
    """Levenberg-Marquardt driver; mutates problem poses/points/camera.

    Damping lambda starts at 1e-4, doubles on reject, shrinks by 1/3 on
    accept. The camera-reduced (Schur) system is solved by Cholesky;
    an indefinite reduced system or non-finite cost after 10 lambda
    increases raises NumericalFailure.
    """
    poses = list(problem.poses)
    points = problem.points.copy()
    cam = problem.camera

    cam_free_idx, nc_full, cmask = _camera_free_layout(problem)
    free_pts = np.nonzero(~problem.point_fixed)[0]
    pt_slot = -np.ones(len(points), dtype=np.intp)
    pt_slot[free_pts] = np.arange(len(free_pts))
    cam_slot = -np.ones(len(poses), dtype=np.intp)
    for s, ci in enumerate(cam_free_idx):
        cam_slot[ci] = s

    ev = _evaluate(problem, poses, points, cam)
    if ev is None:
        raise NumericalFailure("non-finite cost at the initial point")
    initial_cost = ev["cost"]
    cost = initial_cost

    lam = 1e-4
    consecutive_rejects = 0
    small_decreases = 0
    iterations = 0
    termination = Termination.MAX_ITERATIONS

    for iterations in range(1, max_iterations + 1):
        g, bmats, emats, cmats, gp = _assemble(problem, ev, cam_slot, pt_slot,
                                               nc_full)
        gfull = np.concatenate([g[cmask],
                                gp[free_pts].ravel()]) if len(free_pts) else g[cmask]
        if len(gfull) == 0 or float(np.max(np.abs(gfull))) < gradient_tol:
            termination = Termination.CONVERGED
            break

        accepted = False
        while True:
            step = _solve_damped(bmats, emats, cmats, g, gp, lam, cmask,
                                 free_pts)
            if step is None:
                lam *= 2.0
                consecutive_rejects += 1
                if consecutive_rejects >= 10:
                    raise NumericalFailure(
                        "indefinite reduced system after repeated damping")
                if lam > 1e14:
                    termination = Termination.TRUST_REGION_FAILURE
                    break
                continue
            dc, dp = step
            new = _apply_step(problem, poses, points, cam, dc, dp,
                              cam_free_idx, free_pts)
            ev_new = _evaluate(problem, *new)
            if ev_new is not None and ev_new["cost"] < cost:
                rel = (cost - ev_new["cost"]) / max(cost, 1e-300)
                poses, points, cam = new
                cost = ev_new["cost"]
                ev = ev_new
                lam = max(lam / 3.0, 1e-14)
                consecutive_rejects = 0
                accepted = True
                small_decreases = small_decreases + 1 if rel < cost_rel_tol else 0
                break
            if (ev_new is not None
                    and abs(ev_new["cost"] - cost) < cost_rel_tol * max(cost, 1e-300)):
                # no meaningful decrease is available: cost criterion
                small_decreases += 1
                if small_decreases >= 3:
                    termination = Termination.CONVERGED
                    break
            lam *= 2.0
            consecutive_rejects += 1
            if ev_new is None and consecutive_rejects >= 10:
                raise NumericalFailure("non-finite cost after repeated damping")
            if lam > 1e14:
                termination = Termination.TRUST_REGION_FAILURE
                break
        if not accepted:
            break
        if small_decreases >= 3:
            termination = Termination.CONVERGED
            break

    problem.poses[:] = poses
    problem.points[:] = points
    problem.camera = cam
    return BAResult(initial_cost, cost, iterations, termination, ev["rms"])


def _assemble(problem: BAProblem, ev, cam_slot, pt_slot, nc_full):
    """Normal-equation blocks from weighted Jacobians.

    Returns (g camera-part gradient, B dense camera block, E (nc, P, 3)
    dense camera-point coupling over free points, C (P,3,3) point
    blocks, gp (P,3) point gradients).
    """
    sw = np.sqrt(ev["w"])[:, None, None]
    res = ev["res"] * np.sqrt(ev["w"])[:, None]
    jr = ev["jac_rot"] * sw
    jc = ev["jac_center"] * sw
    jp = ev["jac_point"] * sw

    n_free_c = (nc_full - N_INTR) // 6 if problem.refine_intrinsics else nc_full // 6
    n_pts = len(problem.points)

    jcam = np.concatenate([jr, jc], axis=2)  # (M,2,6)
    if problem.refine_intrinsics:
        ji = ev["jac_intr"] * sw

    m_free = cam_slot[problem.obs_cam] >= 0
    slots = cam_slot[problem.obs_cam]

    b = np.zeros((nc_full, nc_full))
    g = np.zeros(nc_full)
    bc = np.zeros((n_free_c, 6, 6))
    gc = np.zeros((n_free_c, 6))
    np.add.at(bc, slots[m_free],
              np.einsum("mka,mkb->mab", jcam[m_free], jcam[m_free]))
    np.add.at(gc, slots[m_free],
              np.einsum("mka,mk->ma", jcam[m_free], res[m_free]))
    for s in range(n_free_c):
        b[6 * s:6 * s + 6, 6 * s:6 * s + 6] = bc[s]
        g[6 * s:6 * s + 6] = gc[s]

    if problem.refine_intrinsics:
        io = nc_full - N_INTR
        b[io:, io:] = np.einsum("mka,mkb->ab", ji, ji)
        g[io:] += np.einsum("mka,mk->a", ji, res)
        bci = np.zeros((n_free_c, 6, N_INTR))
        np.add.at(bci, slots[m_free],
                  np.einsum("mka,mkb->mab", jcam[m_free], ji[m_free]))
        for s in range(n_free_c):
            b[6 * s:6 * s + 6, io:] = bci[s]
            b[io:, 6 * s:6 * s + 6] = bci[s].T

    # priors: residual (c - prior)/sigma, jacobian I/sigma on center
    for k, (ci, pos, sigma) in enumerate(problem.priors):
        s = cam_slot[ci]
        r = ev["prior_res"][k]
        if s >= 0:
            rows = slice(6 * s + 3, 6 * s + 6)
            b[rows, rows] += np.diag(1.0 / sigma ** 2)
            g[6 * s + 3:6 * s + 6] += r / sigma

    # point blocks
    c = np.zeros((n_pts, 3, 3))
    gp = np.zeros((n_pts, 3))
    pfree = pt_slot[problem.obs_pt] >= 0
    np.add.at(c, problem.obs_pt[pfree],
              np.einsum("mka,mkb->mab", jp[pfree], jp[pfree]))
    np.add.at(gp, problem.obs_pt[pfree],
              np.einsum("mka,mk->ma", jp[pfree], res[pfree]))

    # camera-point coupling, dense over (camera part, free points)
    e = np.zeros((nc_full, n_pts, 3))
    both = m_free & pfree
    w = np.einsum("mka,mkb->mab", jcam[both], jp[both])  # (m,6,3)
    rows = slots[both]
    cols = problem.obs_pt[both]
    # each (camera, point) pair appears at most once
    ecam = np.zeros((n_free_c, 6, n_pts, 3))
    ecam[rows, :, cols] = w
    e[:6 * n_free_c] = ecam.reshape(6 * n_free_c, n_pts, 3)
    if problem.refine_intrinsics:
        wi = np.einsum("mka,mkb->mab", ji[pfree], jp[pfree])
        ei = np.zeros((n_pts, N_INTR, 3))
        np.add.at(ei, problem.obs_pt[pfree], wi)
        e[nc_full - N_INTR:] = ei.transpose(1, 0, 2)
    return g, b, e, c, gp


def _solve_damped(b, e, c, g, gp, lam, cmask, free_pts):
    """Solve the damped normal equations by Schur reduction.

    Returns (camera step in the full free layout, point steps) or None
    when the damped system is not positive definite.
    """
    nb = b.copy()
    di = np.arange(len(nb))
    nb[di, di] += lam * np.maximum(np.diag(b), 1e-12)

    cd = c[free_pts].copy()
    dj = np.arange(3)
    cd[:, dj, dj] += lam * np.maximum(cd[:, dj, dj], 1e-12)

    try:
        np.linalg.cholesky(cd) if len(cd) else None
        cinv = np.linalg.inv(cd) if len(cd) else cd
    except np.linalg.LinAlgError:
        return None

    bm = nb[np.ix_(cmask, cmask)]
    em = e[cmask][:, free_pts]          # (ncm, P, 3)
    gm = g[cmask]
    gpf = gp[free_pts]

    if len(free_pts):
        ec = np.einsum("apk,pkl->apl", em, cinv)
        s = bm - np.einsum("apk,bpk->ab", ec, em)
        rhs = -gm + np.einsum("apk,pk->a", ec, gpf)
    else:
        s = bm
        rhs = -gm

    try:
        lchol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        return None
    dc_m = np.linalg.solve(lchol.T, np.linalg.solve(lchol, rhs))

    dc = np.zeros(len(g))
    dc[cmask] = dc_m
    if len(free_pts):
        dp = np.einsum("pkl,pl->pk", cinv,
                       -(gpf + np.einsum("apk,a->pk", em, dc_m)))
    else:
        dp = np.zeros((0, 3))
    return dc, dp


# ---------------------------------------------------------------------------
# derivative verification

def check_jacobian(problem: BAProblem, eps: float = 1e-6) -> float:
    """Max relative discrepancy of the analytic Jacobian against central
    finite differences over all free parameters (raw residuals, no
    robust weighting)."""
    poses = list(problem.poses)
    points = problem.points.copy()
    cam = problem.camera
    cam_free_idx, nc_full, cmask = _camera_free_layout(problem)
    free_pts = np.nonzero(~problem.point_fixed)[0]

    ev = _evaluate(problem, poses, points, cam)
    if ev is None:
        raise NonFiniteResidual("residuals non-finite at linearization point")

    n_free = int(np.sum(cmask)) + 3 * len(free_pts)
    if n_free == 0:
        return 0.0

    def residual_vector(dc, dp):
        p2, x2, c2 = _apply_step(problem, poses, points, cam, dc, dp,
                                 cam_free_idx, free_pts)
        evx = _evaluate(problem, p2, x2, c2, with_jacobian=False)
        if evx is None:
            raise NonFiniteResidual("finite-difference probe left the domain")
        parts = [evx["res"].ravel()]
        parts += [r for r in evx["prior_res"]]
        return np.concatenate(parts) if parts else np.zeros(0)

    # analytic Jacobian, dense, in the full free layout
    m = len(problem.obs_cam)
    cam_slot = -np.ones(len(poses), dtype=np.intp)
    for s, ci in enumerate(cam_free_idx):
        cam_slot[ci] = s
    pt_slot = -np.ones(len(points), dtype=np.intp)
    pt_slot[free_pts] = np.arange(len(free_pts))

    ja = np.zeros((2 * m + 3 * len(problem.priors), nc_full + 3 * len(free_pts)))
    jcam = np.concatenate([ev["jac_rot"], ev["jac_center"]], axis=2)
    for i in range(m):
        s = cam_slot[problem.obs_cam[i]]
        if s >= 0:
            ja[2 * i:2 * i + 2, 6 * s:6 * s + 6] = jcam[i]
        if problem.refine_intrinsics:
            ja[2 * i:2 * i + 2, nc_full - N_INTR:nc_full] = ev["jac_intr"][i]
        ps = pt_slot[problem.obs_pt[i]]
        if ps >= 0:
            ja[2 * i:2 * i + 2,
               nc_full + 3 * ps:nc_full + 3 * ps + 3] = ev["jac_point"][i]
    for k, (ci, pos, sigma) in enumerate(problem.priors):
        s = cam_slot[ci]
        if s >= 0:
            ja[2 * m + 3 * k:2 * m + 3 * k + 3,
               6 * s + 3:6 * s + 6] = np.diag(1.0 / sigma)

    # central differences over the same layout
    worst = 0.0
    cols = ([i for i in range(nc_full) if cmask[i]]
            + list(range(nc_full, nc_full + 3 * len(free_pts))))
    for col in cols:
        dq = np.zeros(nc_full + 3 * len(free_pts))
        dq[col] = eps
        rp = residual_vector(dq[:nc_full], dq[nc_full:].reshape(-1, 3))
        rm_ = residual_vector(-dq[:nc_full], -dq[nc_full:].reshape(-1, 3))
        fd = (rp - rm_) / (2 * eps)
        an = ja[:, col]
        denom = np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1.0)
        worst = max(worst, float(np.max(np.abs(an - fd) / denom)))
    return worst
