"""Shared fixtures and independent oracles for the test suite."""

import math

import numpy as np
import pytest

from oasweep.config import CalibrationBundle, camera_rotation, default_rig
from oasweep.geometry import (
    CameraIntrinsics,
    PlaneHypothesisSet,
    RigidTransform,
    SonarSpec,
)


@pytest.fixture
def rig() -> CalibrationBundle:
    return default_rig()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20250810)


def random_calibration(rng: np.random.Generator) -> CalibrationBundle:
    """A random but valid desk-scale calibration for randomized geometry checks."""
    width, height = 320, 240
    fx = rng.uniform(200.0, 600.0)
    fy = fx * rng.uniform(0.95, 1.05)
    intrinsics = CameraIntrinsics(
        fx=fx, fy=fy,
        cx=width / 2 + rng.uniform(-10, 10), cy=height / 2 + rng.uniform(-10, 10),
        width=width, height=height,
    )
    base = camera_rotation(rng.uniform(math.radians(-5), math.radians(25)))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, math.radians(10))
    k_mat = np.array([
        [0, -axis[2], axis[1]],
        [axis[2], 0, -axis[0]],
        [-axis[1], axis[0], 0],
    ])
    wiggle = np.eye(3) + math.sin(angle) * k_mat + (1 - math.cos(angle)) * (k_mat @ k_mat)
    rotation = wiggle @ base
    translation = rng.uniform(-0.3, 0.3, size=3)
    extrinsics = RigidTransform(rotation, translation)
    sonar = SonarSpec(
        range_min=0.1, range_max=rng.uniform(4.0, 8.0),
        bearing_fov=rng.uniform(math.radians(40), math.radians(100)),
        elevation_fov=math.radians(12.0),
        range_bins=128, bearing_bins=64,
    )
    planes = PlaneHypothesisSet(
        alpha=rng.uniform(math.radians(15), math.radians(75)),
        d0=rng.uniform(0.3, 0.8), k=rng.uniform(1.02, 1.08), n=int(rng.integers(8, 49)),
    )
    return CalibrationBundle(intrinsics, extrinsics, sonar, planes)


def ray_plane_bisection_oracle(us, vs, intrinsics, extrinsics, planes, indices,
                               span: float = 64.0, iterations: int = 120):
    """Independent ray-plane intersections by marching/bisection, no linear solve.

    Walks the pixel ray P(s) = c + s * dir (sonar frame) and bisects the sign
    change of the plane equation over s in [-span, span]. The plane equation
    is linear along the ray, so the bracket always contains exactly one root
    when the ray is not parallel to the family.

    Returns:
        (points, ok) where ok is False when no sign change exists in the span.
    """
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    indices = np.asarray(indices)

    center = -extrinsics.rotation.T @ extrinsics.translation
    dirs = intrinsics.ray_directions(us, vs) @ extrinsics.rotation  # R^T applied per row
    normal = planes.normal()
    offsets = planes.d0 * planes.k ** (indices - 1) * np.sin(planes.alpha)

    def f(s):
        pts = center + s[..., None] * dirs
        return pts @ normal - offsets

    lo = np.full(us.shape, -span)
    hi = np.full(us.shape, span)
    f_lo = f(lo)
    ok = np.sign(f_lo) != np.sign(f(hi))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        same = np.sign(f(mid)) == np.sign(f_lo)
        lo = np.where(same, mid, lo)
        f_lo = np.where(same, f(lo), f_lo)
        hi = np.where(same, hi, mid)
    s_root = 0.5 * (lo + hi)
    return center + s_root[..., None] * dirs, ok


def consecutive_projection_displacements(grid_pixels, intrinsics, extrinsics, planes, spec):
    """Per-pixel camera-space displacements of sonar content between consecutive planes.

    For each pixel and plane i: take the sweep's sampling point on plane i,
    read off its polar measurement, lift that same measurement onto plane
    i+1, and project the lifted point into the camera. The displacement from
    the original pixel measures the per-step warp flow of the sweep.

    Returns:
        (disp, ok): arrays of shape (P, N-1, 2) and (P, N-1).
    """
    from oasweep.geometry import (
        backproject_sonar_to_plane,
        cartesian_to_sonar_polar,
        solve_ray_plane_many,
    )

    us, vs = grid_pixels
    n = planes.n
    disp = np.zeros(us.shape + (n - 1, 2))
    ok = np.zeros(us.shape + (n - 1,), dtype=bool)
    for i in range(1, n):
        pts, solvable = solve_ray_plane_many(us, vs, intrinsics, extrinsics, planes,
                                             np.full(us.shape, i, dtype=int))
        d, theta, _ = cartesian_to_sonar_polar(pts)
        lifted = backproject_sonar_to_plane(d, theta, planes, i + 1)
        cam = extrinsics.apply(lifted)
        proj = intrinsics.project(cam)
        disp[..., i - 1, :] = proj - np.stack([us, vs], axis=-1)
        ok[..., i - 1] = solvable & (cam[..., 2] > 0)
    return disp, ok
