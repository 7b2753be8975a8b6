"""Multi-view 3D estimation.

Pairwise ray triangulation, voting-based rejection of cameras whose
detections disagree with the rest, Levenberg-Marquardt refinement of a
single world point against fixed cameras, a general sparse bundle
adjuster that eliminates the camera block of the damped normal
equations through its Schur complement, and reprojection of a 3D
consensus back into every camera to recover missed 2D detections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .detector import Detection, best_detection
from .geometry import (
    Camera,
    CameraPose,
    PointBehindCamera,
    Rig,
    camera_center,
    in_image,
    pixel_ray,
    project,
)
from .prefilter import RoiBox

__all__ = [
    "FusionError",
    "DegenerateRays",
    "NoConsensus",
    "DivergedOrSingular",
    "SingularReducedSystem",
    "InvalidProblem",
    "Observation",
    "Reconstruction3D",
    "LmSettings",
    "SbaProblem",
    "triangulate_pair",
    "vote_consensus",
    "point_residuals",
    "point_jacobian",
    "refine_point_lm",
    "sba_step",
    "sba_solve",
    "jacobian_block_pattern",
    "reproject_and_refine",
]

_SIN_TOL = 1e-9
_LAMBDA_CAP = 1e15


class FusionError(ValueError):
    pass


class DegenerateRays(FusionError):
    """Rays are parallel or the camera centers coincide."""


class NoConsensus(FusionError):
    """Fewer than two cameras agree on a 3D position."""


class DivergedOrSingular(FusionError):
    """The damped normal matrix stayed singular at every retry."""


class SingularReducedSystem(FusionError):
    """The Schur-reduced system could not be solved."""


class InvalidProblem(FusionError):
    pass


@dataclass(frozen=True)
class Observation:
    """One camera's 2D evidence for the current frame (box center)."""

    camera_id: int
    pixel: np.ndarray  # (2,) float
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "pixel", np.asarray(self.pixel, dtype=np.float64).reshape(2))


@dataclass(frozen=True, eq=False)
class Reconstruction3D:
    point: np.ndarray  # (3,)
    inlier_cameras: frozenset
    reproj_error_px: float  # RMS over observations of the 2D residual norm
    per_camera_px: dict  # camera_id -> projected (2,) pixel

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64).reshape(3))
        if len(self.inlier_cameras) < 2:
            raise FusionError("a reconstruction needs at least 2 inlier cameras")
        if self.reproj_error_px < 0:
            raise FusionError("reprojection error cannot be negative")


@dataclass(frozen=True)
class LmSettings:
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    max_iters: int = 50
    tol_step: float = 1e-10
    tol_grad: float = 1e-10

    def __post_init__(self):
        vals = (self.lambda0, self.lambda_up, self.lambda_down, self.max_iters, self.tol_step, self.tol_grad)
        if any(v <= 0 for v in vals):
            raise FusionError("all LM settings must be positive")


# ---------------------------------------------------------------------------
# Triangulation

def _closest_ray_points(o1, d1, o2, d2):
    """Closest points of two rays; returns (p_on_1, p_on_2, |sin angle|)."""
    n = np.cross(d1, d2)
    n_norm = np.linalg.norm(n)  # = |sin| for unit directions
    if n_norm < _SIN_TOL:
        return None, None, n_norm
    n2 = n_norm * n_norm
    do = o2 - o1
    t1 = np.dot(np.cross(do, d2), n) / n2
    t2 = np.dot(np.cross(do, d1), n) / n2
    return o1 + t1 * d1, o2 + t2 * d2, n_norm


def triangulate_pair(cam_a: Camera, px_a, cam_b: Camera, px_b) -> np.ndarray:
    """Midpoint of the mutual-perpendicular segment between two pixel rays."""
    o1, d1 = pixel_ray(cam_a, px_a)
    o2, d2 = pixel_ray(cam_b, px_b)
    if np.linalg.norm(o1 - o2) < 1e-12:
        raise DegenerateRays("camera centers coincide")
    p1, p2, sin = _closest_ray_points(o1, d1, o2, d2)
    if p1 is None:
        raise DegenerateRays(f"rays are parallel (|sin| = {sin:.2e})")
    return 0.5 * (p1 + p2)


def _pairwise_midpoints(origins: np.ndarray, dirs: np.ndarray):
    """All-pairs ray intersection, vectorized.

    Returns (pair index array (P, 2), midpoints (P, 3), gaps (P,), valid (P,));
    invalid entries are parallel-ray or coincident-center pairs.
    """
    k = origins.shape[0]
    ia, ib = np.triu_indices(k, 1)
    o1, o2 = origins[ia], origins[ib]
    d1, d2 = dirs[ia], dirs[ib]
    n = np.cross(d1, d2)
    n2 = np.einsum("ij,ij->i", n, n)
    sep = np.linalg.norm(o1 - o2, axis=1)
    valid = (np.sqrt(n2) >= _SIN_TOL) & (sep >= 1e-12)
    n2_safe = np.where(valid, n2, 1.0)
    do = o2 - o1
    t1 = np.einsum("ij,ij->i", np.cross(do, d2), n) / n2_safe
    t2 = np.einsum("ij,ij->i", np.cross(do, d1), n) / n2_safe
    p1 = o1 + t1[:, None] * d1
    p2 = o2 + t2[:, None] * d2
    mids = 0.5 * (p1 + p2)
    gaps = np.linalg.norm(p1 - p2, axis=1)
    return np.stack([ia, ib], axis=1), mids, gaps, valid


def vote_consensus(
    observations: list[Observation], rig: Rig, dist_thd_m: float = 0.5
) -> tuple[np.ndarray, set, set]:
    """Arbitrate per-camera detections into one 3D point by pairwise voting.

    Every admissible camera pair is triangulated (a pair is admissible
    when its rays come within dist_thd_m of intersecting). The consensus
    seed is the pairwise result with the smallest summed distance to all
    pairwise results; a camera is an inlier iff the median distance
    between its pair results and that seed is at most dist_thd_m. The
    consensus is then recomputed from inlier-only pairs.

    Returns (consensus point, inlier camera ids, outlier camera ids).
    Raises NoConsensus when fewer than two cameras can be reconciled.
    """
    if len(observations) < 2:
        raise NoConsensus(f"need at least 2 observations, got {len(observations)}")
    obs = sorted(observations, key=lambda o: o.camera_id)
    ids = [o.camera_id for o in obs]
    if len(set(ids)) != len(ids):
        raise FusionError("duplicate camera_id in observations")

    origins = np.empty((len(obs), 3))
    dirs = np.empty((len(obs), 3))
    for i, o in enumerate(obs):
        origins[i], dirs[i] = pixel_ray(rig.camera(o.camera_id), o.pixel)

    pairs, mids, gaps, valid = _pairwise_midpoints(origins, dirs)
    admissible = valid & (gaps <= dist_thd_m)
    if not np.any(admissible):
        raise NoConsensus("no admissible camera pair (all rays miss each other)")
    pairs, mids = pairs[admissible], mids[admissible]

    dist = np.linalg.norm(mids[:, None, :] - mids[None, :, :], axis=2)
    seed = mids[int(np.argmin(dist.sum(axis=1)))]

    to_seed = np.linalg.norm(mids - seed, axis=1)
    inlier_idx = []
    outlier_idx = []
    for i in range(len(obs)):
        involved = (pairs[:, 0] == i) | (pairs[:, 1] == i)
        if not np.any(involved):
            outlier_idx.append(i)
        elif np.median(to_seed[involved]) <= dist_thd_m:
            inlier_idx.append(i)
        else:
            outlier_idx.append(i)
    if len(inlier_idx) < 2:
        raise NoConsensus(f"only {len(inlier_idx)} inlier cameras remain")

    in_set = set(inlier_idx)
    keep = np.array([(a in in_set) and (b in in_set) for a, b in pairs])
    if not np.any(keep):
        raise NoConsensus("no admissible pair among inlier cameras")
    mids_in = mids[keep]
    dist_in = np.linalg.norm(mids_in[:, None, :] - mids_in[None, :, :], axis=2)
    consensus = mids_in[int(np.argmin(dist_in.sum(axis=1)))]

    return (
        consensus,
        {ids[i] for i in inlier_idx},
        {ids[i] for i in outlier_idx},
    )


# ---------------------------------------------------------------------------
# Point-only Levenberg-Marquardt

def _proj_jacobian(camera: Camera, pc: np.ndarray) -> np.ndarray:
    """d(pixel)/d(camera-frame point), 2x3, at camera-frame point pc."""
    k = camera.intrinsics
    x, y, z = pc
    return np.array(
        [
            [k.fx / z, 0.0, -k.fx * x / (z * z)],
            [0.0, k.fy / z, -k.fy * y / (z * z)],
        ]
    )


def point_residuals(p, observations: list[Observation], rig: Rig) -> np.ndarray:
    """Stacked reprojection residuals project(cam_j, p) - x_j, shape (2k,)."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    r = np.empty(2 * len(observations))
    for j, o in enumerate(observations):
        px, _ = project(rig.camera(o.camera_id), p)
        r[2 * j : 2 * j + 2] = px - o.pixel
    return r


def point_jacobian(p, observations: list[Observation], rig: Rig) -> np.ndarray:
    """Analytic Jacobian of point_residuals w.r.t. the 3 point coordinates."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    J = np.empty((2 * len(observations), 3))
    for j, o in enumerate(observations):
        cam = rig.camera(o.camera_id)
        pc = cam.pose.rotation @ p + cam.pose.translation
        if pc[2] <= 0:
            raise PointBehindCamera(f"camera {cam.cam_id}")
        J[2 * j : 2 * j + 2] = _proj_jacobian(cam, pc) @ cam.pose.rotation
    return J


def refine_point_lm(
    initial, observations: list[Observation], rig: Rig, settings: LmSettings = LmSettings()
) -> Reconstruction3D:
    """Minimize the total squared reprojection error over the 3 point
    coordinates with Levenberg-Marquardt (cameras fixed).

    The final cost never exceeds the initial cost; iteration stops on the
    step, gradient, or iteration cap.
    """
    if len(observations) < 2:
        raise FusionError("need at least 2 observations")
    if len({o.camera_id for o in observations}) != len(observations):
        raise FusionError("duplicate camera_id in observations")

    p = np.asarray(initial, dtype=np.float64).reshape(3).copy()
    r = point_residuals(p, observations, rig)
    cost = float(r @ r)
    lam = settings.lambda0

    for _ in range(settings.max_iters):
        J = point_jacobian(p, observations, rig)
        g = J.T @ r
        if np.max(np.abs(g)) < settings.tol_grad:
            break
        H = J.T @ J
        accepted = False
        any_solved = False
        while lam <= _LAMBDA_CAP:
            try:
                delta = np.linalg.solve(H + lam * np.eye(3), -g)
            except np.linalg.LinAlgError:
                lam *= settings.lambda_up
                continue
            any_solved = True
            if np.linalg.norm(delta) < settings.tol_step:
                break
            trial = p + delta
            try:
                r_trial = point_residuals(trial, observations, rig)
            except PointBehindCamera:
                lam *= settings.lambda_up
                continue
            trial_cost = float(r_trial @ r_trial)
            if trial_cost < cost:
                p, r, cost = trial, r_trial, trial_cost
                lam = max(lam / settings.lambda_down, 1e-15)
                accepted = True
                break
            lam *= settings.lambda_up
        if not accepted:
            if not any_solved:
                raise DivergedOrSingular("the damped normal matrix is singular at every retry")
            break

    per_px = {}
    for o in observations:
        px, _ = project(rig.camera(o.camera_id), p)
        per_px[o.camera_id] = px
    rms = math.sqrt(cost / len(observations))
    return Reconstruction3D(
        point=p,
        inlier_cameras=frozenset(o.camera_id for o in observations),
        reproj_error_px=rms,
        per_camera_px=per_px,
    )


# ---------------------------------------------------------------------------
# General sparse bundle adjustment

def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=np.float64)


def _rodrigues(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + _skew(w)
    k = w / theta
    K = _skew(k)
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


@dataclass(frozen=True, eq=False)
class SbaProblem:
    """n points observed by m cameras with block-sparse structure.

    Camera pose blocks carry 6 parameters (axis-angle rotation increment
    composed onto R, plus a translation increment); point blocks carry 3.
    Frozen blocks stay constant. Per-observation 2x2 covariances default
    to identity; residuals are weighted by their inverses.
    """

    cameras: tuple  # Camera, ...
    points: np.ndarray  # (n, 3)
    obs_point: np.ndarray  # (K,) int point index per observation
    obs_camera: np.ndarray  # (K,) int camera index per observation
    obs_px: np.ndarray  # (K, 2) observed pixels
    camera_frozen: np.ndarray = None  # (m,) bool
    point_frozen: np.ndarray = None  # (n,) bool
    covariances: np.ndarray = None  # (K, 2, 2)

    def __post_init__(self):
        cams = tuple(self.cameras)
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        op = np.asarray(self.obs_point, dtype=np.int64).ravel()
        oc = np.asarray(self.obs_camera, dtype=np.int64).ravel()
        px = np.asarray(self.obs_px, dtype=np.float64).reshape(-1, 2)
        m, n, K = len(cams), pts.shape[0], op.size
        if not (oc.size == K and px.shape[0] == K):
            raise InvalidProblem("observation arrays disagree in length")
        if K == 0:
            raise InvalidProblem("problem has no observations")
        if op.min() < 0 or op.max() >= n or oc.min() < 0 or oc.max() >= m:
            raise InvalidProblem("observation references an invalid point or camera index")
        cf = np.zeros(m, dtype=bool) if self.camera_frozen is None else np.asarray(self.camera_frozen, dtype=bool)
        pf = np.zeros(n, dtype=bool) if self.point_frozen is None else np.asarray(self.point_frozen, dtype=bool)
        if cf.shape != (m,) or pf.shape != (n,):
            raise InvalidProblem("frozen flags have wrong shape")
        cov = (
            np.broadcast_to(np.eye(2), (K, 2, 2)).copy()
            if self.covariances is None
            else np.asarray(self.covariances, dtype=np.float64).reshape(K, 2, 2)
        )
        for i in range(n):
            if not pf[i] and np.unique(oc[op == i]).size < 2:
                raise InvalidProblem(f"free point {i} is observed by fewer than 2 cameras")
        object.__setattr__(self, "cameras", cams)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "obs_point", op)
        object.__setattr__(self, "obs_camera", oc)
        object.__setattr__(self, "obs_px", px)
        object.__setattr__(self, "camera_frozen", cf)
        object.__setattr__(self, "point_frozen", pf)
        object.__setattr__(self, "covariances", cov)

    @property
    def n_cameras(self) -> int:
        return len(self.cameras)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_observations(self) -> int:
        return self.obs_point.size


def jacobian_block_pattern(problem: SbaProblem) -> np.ndarray:
    """Boolean block pattern of d(observations)/d(parameters).

    One row per observation, sorted point-major (point index, then camera
    index) to match the stacked observation ordering; columns are the m
    camera blocks followed by the n point blocks. Row (i, j) is nonzero
    exactly in camera column j and point column m + i.
    """
    order = np.lexsort((problem.obs_camera, problem.obs_point))
    m, n = problem.n_cameras, problem.n_points
    pattern = np.zeros((problem.n_observations, m + n), dtype=bool)
    for row, k in enumerate(order):
        pattern[row, problem.obs_camera[k]] = True
        pattern[row, m + problem.obs_point[k]] = True
    return pattern


def _problem_residuals(cameras, points, problem: SbaProblem) -> np.ndarray:
    r = np.empty((problem.n_observations, 2))
    for k in range(problem.n_observations):
        cam = cameras[problem.obs_camera[k]]
        px, _ = project(cam, points[problem.obs_point[k]])
        r[k] = px - problem.obs_px[k]
    return r


def _weighted_cost(r: np.ndarray, weights: np.ndarray) -> float:
    return float(np.einsum("ki,kij,kj->", r, weights, r))


def _apply_step(cameras, points, delta_a, delta_b, free_cams, free_pts):
    new_cams = list(cameras)
    for slot, j in enumerate(free_cams):
        d = delta_a[6 * slot : 6 * slot + 6]
        cam = cameras[j]
        R_new = _rodrigues(d[:3]) @ cam.pose.rotation
        # re-orthonormalize to keep the pose invariant under accumulation
        u, _, vt = np.linalg.svd(R_new)
        R_new = u @ vt
        if np.linalg.det(R_new) < 0:
            u[:, -1] *= -1
            R_new = u @ vt
        new_cams[j] = replace(cam, pose=CameraPose(R_new, cam.pose.translation + d[3:6]))
    new_points = points.copy()
    for slot, i in enumerate(free_pts):
        new_points[i] = points[i] + delta_b[3 * slot : 3 * slot + 3]
    return new_cams, new_points


def _schur_step(cameras, points, problem, weights, free_cams, free_pts, lam):
    """One damped Gauss-Newton step solved by eliminating the camera block.

    Builds the block-sparse normal equations

        [N1  N2 ] [da]   [g1]
        [N2' N4 ] [db] = [g2]

    with N1 the block-diagonal camera part, then solves

        db = (N4 - N2' N1^-1 N2)^-1 (g2 - N2' N1^-1 g1)

    and back-substitutes da = N1^-1 (g1 - N2 db). Returns (da, db, residuals).
    """
    m_free, n_free = len(free_cams), len(free_pts)
    cam_slot = {j: s for s, j in enumerate(free_cams)}
    pt_slot = {i: s for s, i in enumerate(free_pts)}

    U = [np.zeros((6, 6)) for _ in range(m_free)]
    V = [np.zeros((3, 3)) for _ in range(n_free)]
    Wc: dict[tuple[int, int], np.ndarray] = {}
    g1 = np.zeros(6 * m_free)
    g2 = np.zeros(3 * n_free)
    residuals = np.empty((problem.n_observations, 2))

    for k in range(problem.n_observations):
        j = int(problem.obs_camera[k])
        i = int(problem.obs_point[k])
        cam = cameras[j]
        p = points[i]
        pc = cam.pose.rotation @ p + cam.pose.translation
        if pc[2] <= 0:
            raise PointBehindCamera(f"observation {k}: point {i} behind camera {j}")
        kin = cam.intrinsics
        px = np.array([kin.fx * pc[0] / pc[2] + kin.cx, kin.fy * pc[1] / pc[2] + kin.cy])
        r = px - problem.obs_px[k]
        residuals[k] = r
        Jp = _proj_jacobian(cam, pc)
        W = weights[k]

        A = None
        if j in cam_slot:
            # d(pc)/d(rotation increment) = -[R p]_x ; d(pc)/d(translation) = I
            A = np.hstack([Jp @ (-_skew(cam.pose.rotation @ p)), Jp])
            s = cam_slot[j]
            U[s] += A.T @ W @ A
            g1[6 * s : 6 * s + 6] -= A.T @ W @ r
        B = None
        if i in pt_slot:
            B = Jp @ cam.pose.rotation
            s = pt_slot[i]
            V[s] += B.T @ W @ B
            g2[3 * s : 3 * s + 3] -= B.T @ W @ r
        if A is not None and B is not None:
            key = (cam_slot[j], pt_slot[i])
            Wc[key] = Wc.get(key, np.zeros((6, 3))) + A.T @ W @ B

    for s in range(m_free):
        U[s] = U[s] + lam * np.eye(6)
    for s in range(n_free):
        V[s] = V[s] + lam * np.eye(3)

    try:
        U_inv = [np.linalg.inv(u) for u in U]
    except np.linalg.LinAlgError as e:
        raise SingularReducedSystem(f"camera block is singular: {e}") from e

    if n_free:
        S = np.zeros((3 * n_free, 3 * n_free))
        for s in range(n_free):
            S[3 * s : 3 * s + 3, 3 * s : 3 * s + 3] = V[s]
        rhs = g2.copy()
        by_cam: dict[int, list[tuple[int, np.ndarray]]] = {}
        for (cs, ps), Wb in Wc.items():
            by_cam.setdefault(cs, []).append((ps, Wb))
        for cs, entries in by_cam.items():
            Ui_g = U_inv[cs] @ g1[6 * cs : 6 * cs + 6]
            for ps1, W1 in entries:
                rhs[3 * ps1 : 3 * ps1 + 3] -= W1.T @ Ui_g
                W1U = W1.T @ U_inv[cs]
                for ps2, W2 in entries:
                    S[3 * ps1 : 3 * ps1 + 3, 3 * ps2 : 3 * ps2 + 3] -= W1U @ W2
        try:
            delta_b = np.linalg.solve(S, rhs)
        except np.linalg.LinAlgError as e:
            raise SingularReducedSystem(f"reduced point system is singular: {e}") from e
    else:
        delta_b = np.zeros(0)

    delta_a = np.zeros(6 * m_free)
    for s in range(m_free):
        acc = g1[6 * s : 6 * s + 6].copy()
        for (cs, ps), Wb in Wc.items():
            if cs == s:
                acc -= Wb @ delta_b[3 * ps : 3 * ps + 3]
        delta_a[6 * s : 6 * s + 6] = U_inv[s] @ acc
    return delta_a, delta_b, residuals


def sba_step(problem: SbaProblem, lam: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """One damped normal-equation step via the Schur elimination.

    Returns (delta_cameras (6 * n_free_cams,), delta_points (3 * n_free_pts,))
    for the problem's current state, without applying it. Exposed so the
    step can be checked against independent solvers.
    """
    weights = np.linalg.inv(problem.covariances)
    free_cams = [j for j in range(problem.n_cameras) if not problem.camera_frozen[j]]
    free_pts = [i for i in range(problem.n_points) if not problem.point_frozen[i]]
    delta_a, delta_b, _ = _schur_step(
        list(problem.cameras), problem.points, problem, weights, free_cams, free_pts, lam
    )
    return delta_a, delta_b


def sba_solve(problem: SbaProblem, settings: LmSettings = LmSettings()) -> tuple[SbaProblem, float]:
    """Levenberg-Marquardt over the whole problem with Schur elimination.

    Frozen blocks receive zero updates; the cost (total weighted squared
    reprojection error) strictly decreases across accepted steps. Returns
    the updated problem and the final cost.
    """
    try:
        weights = np.linalg.inv(problem.covariances)
    except np.linalg.LinAlgError as e:
        raise InvalidProblem(f"singular observation covariance: {e}") from e

    cameras = list(problem.cameras)
    points = problem.points.copy()
    free_cams = [j for j in range(problem.n_cameras) if not problem.camera_frozen[j]]
    free_pts = [i for i in range(problem.n_points) if not problem.point_frozen[i]]

    try:
        r = _problem_residuals(cameras, points, problem)
    except PointBehindCamera as e:
        raise InvalidProblem(f"initial state invalid: {e}") from e
    cost = _weighted_cost(r, weights)

    if not free_cams and not free_pts:
        return replace(problem, cameras=tuple(cameras), points=points), cost

    lam = settings.lambda0
    for _ in range(settings.max_iters):
        accepted = False
        any_solved = False
        while lam <= _LAMBDA_CAP:
            try:
                delta_a, delta_b, _ = _schur_step(
                    cameras, points, problem, weights, free_cams, free_pts, lam
                )
            except SingularReducedSystem:
                lam *= settings.lambda_up
                continue
            any_solved = True
            step_norm = math.sqrt(float(delta_a @ delta_a + delta_b @ delta_b))
            if step_norm < settings.tol_step:
                break
            trial_cams, trial_points = _apply_step(
                cameras, points, delta_a, delta_b, free_cams, free_pts
            )
            try:
                r_trial = _problem_residuals(trial_cams, trial_points, problem)
            except PointBehindCamera:
                lam *= settings.lambda_up
                continue
            trial_cost = _weighted_cost(r_trial, weights)
            if trial_cost < cost:
                cameras, points, cost = trial_cams, trial_points, trial_cost
                lam = max(lam / settings.lambda_down, 1e-15)
                accepted = True
                break
            lam *= settings.lambda_up
        if not accepted:
            if not any_solved:
                raise SingularReducedSystem("reduced system stayed singular at every damping retry")
            break

    return replace(problem, cameras=tuple(cameras), points=points), cost


# ---------------------------------------------------------------------------
# Reprojection recovery

def reproject_and_refine(
    recon: Reconstruction3D,
    rig: Rig,
    detector,
    frames: dict | None,
    roi_radius_px: int,
    det_conf: float = 0.9,
    frame_no: int | None = None,
) -> dict[int, Detection]:
    """Re-detect around the projected consensus point in every camera.

    Cameras where the point projects in front and inside the image — the
    previous outliers and previously ball-less ones included — get a
    square ROI of side 2*roi_radius_px centered on the projection; the
    per-camera best detection (if any) is returned. This is how occluded
    or missed cameras recover a 2D position.
    """
    out: dict[int, Detection] = {}
    for cam in rig:
        try:
            px, _ = project(cam, recon.point)
        except PointBehindCamera:
            continue
        if not in_image(cam, px):
            continue
        w, h = cam.image_size
        roi = RoiBox(
            int(round(px[0])) - roi_radius_px,
            int(round(px[1])) - roi_radius_px,
            2 * roi_radius_px,
            2 * roi_radius_px,
        ).clipped(w, h)
        if roi is None:
            continue
        frame = frames.get(cam.cam_id) if frames else None
        dets = detector.detect(frame, [roi], camera_id=cam.cam_id, frame_no=frame_no)
        best = best_detection(dets, det_conf)
        if best is not None:
            out[cam.cam_id] = best
    return out
