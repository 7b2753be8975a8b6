import numpy as np
import pytest

from mvball.geometry import Camera, CameraIntrinsics, CameraPose, Rig


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_camera(rng: np.random.Generator, cam_id: int = 0, s: float = 1.0) -> Camera:
    intr = CameraIntrinsics(
        fx=rng.uniform(300, 3000),
        fy=rng.uniform(300, 3000),
        cx=rng.uniform(100, 600),
        cy=rng.uniform(100, 400),
        s=s,
    )
    pose = CameraPose(random_rotation(rng), rng.uniform(-50, 50, size=3))
    return Camera(cam_id, intr, pose, (640, 400))


def point_in_front(rng: np.random.Generator, camera: Camera, z_range=(2.0, 80.0)) -> np.ndarray:
    """World point at a random camera-frame position with z in z_range."""
    pc = np.array(
        [rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(*z_range)]
    )
    return camera.pose.rotation.T @ (pc - camera.pose.translation)


def ring_rig(
    n: int = 6,
    target=np.array([0.0, 0.0, 10.0]),
    radius: float = 20.0,
    fx: float = 1200.0,
    image_size=(800, 600),
) -> Rig:
    """Cameras on a horizontal circle, all aimed at the target point."""
    cams = []
    for k in range(n):
        theta = 2 * np.pi * k / n
        pos = np.array([radius * np.cos(theta), radius * np.sin(theta), 12.0])
        forward = target - pos
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        cams.append(
            Camera(
                k,
                CameraIntrinsics(fx, fx, image_size[0] / 2, image_size[1] / 2),
                CameraPose(R, -(R @ pos)),
                image_size,
            )
        )
    return Rig(tuple(cams))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE_RESULTS: list[tuple[str, bool]] = []


def record_acceptance(name: str, ok: bool) -> None:
    ACCEPTANCE_RESULTS.append((name, ok))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}")
