"""Coordinate frames, projection models, and the ray/plane machinery of the sweep.

Frame conventions used throughout the package:

Sonar frame (frame S, right-handed):
  - X: lateral, positive to starboard
  - Y: forward, along the acoustic axis
  - Z: up (elevation)

Camera frame (frame C, standard computer vision):
  - X: right in the image, Y: down, Z: forward (optical axis)
  - pixels (u, v) with u right and v down, origin at the top-left corner

A :class:`RigidTransform` (R, t) maps sonar-frame points into the camera
frame as ``P_c = R @ P_s + t``.

All angles are radians; degrees appear only at config/CLI boundaries.
Every operation here is pure and safe to vectorize or share across threads.
"""

from dataclasses import dataclass, field

import numpy as np

# |det A| below DET_RTOL times the max-abs entry of A marks the 3x3 ray-plane
# system as singular (grazing ray); handled as a per-entry soft failure.
DET_RTOL = 1e-12

ORTHONORMALITY_TOL = 1e-9


class SingularSystemError(ArithmeticError):
    """Ray-plane linear system is singular (ray parallel to the plane)."""


class DegenerateRayError(ArithmeticError):
    """Viewing ray is parallel to the hypothesis plane family."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera model with no distortion.

    Attributes:
        fx, fy: Focal lengths in pixels.
        cx, cy: Principal point in pixels.
        width, height: Image size in pixels.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image "
                f"{self.width}x{self.height}"
            )

    def matrix(self) -> np.ndarray:
        """3x3 projection matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def ray_directions(self, u, v) -> np.ndarray:
        """Unnormalized camera-frame ray K^-1 [u, v, 1]^T for pixel(s) (u, v).

        Broadcasts; returns shape (..., 3).
        """
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        x = (u - self.cx) / self.fx
        y = (v - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Project camera-frame points (..., 3) to pixels (..., 2).

        Caller is responsible for checking Z > 0; points at Z = 0 yield inf.
        """
        points_cam = np.asarray(points_cam, dtype=float)
        z = points_cam[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * points_cam[..., 0] / z + self.cx
            v = self.fy * points_cam[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)


@dataclass(frozen=True)
class RigidTransform:
    """Rigid motion P_out = R @ P_in + t; rotation checked at construction."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMALITY_TOL:
            raise ValueError("rotation matrix is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError("rotation matrix determinant is not +1 within 1e-9")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)


@dataclass(frozen=True)
class SonarSpec:
    """Forward-looking sonar imaging geometry.

    Attributes:
        range_min, range_max: Sensing range bounds in meters.
        bearing_fov: Total horizontal aperture in radians.
        elevation_fov: Total vertical aperture in radians.
        range_bins, bearing_bins: Polar image dimensions.
    """

    range_min: float
    range_max: float
    bearing_fov: float
    elevation_fov: float
    range_bins: int
    bearing_bins: int

    def __post_init__(self):
        if not (0 < self.range_min < self.range_max):
            raise ValueError(f"need 0 < range_min < range_max, got [{self.range_min}, {self.range_max}]")
        if not (0 < self.bearing_fov < np.pi):
            raise ValueError(f"bearing_fov must be in (0, pi), got {self.bearing_fov}")
        if not (0 < self.elevation_fov < np.pi):
            raise ValueError(f"elevation_fov must be in (0, pi), got {self.elevation_fov}")
        if self.range_bins < 2 or self.bearing_bins < 2:
            raise ValueError("bin counts must be >= 2")

    @property
    def range_bin_size(self) -> float:
        return (self.range_max - self.range_min) / self.range_bins

    @property
    def bearing_bin_size(self) -> float:
        return self.bearing_fov / self.bearing_bins

    def range_bin_centers(self) -> np.ndarray:
        return self.range_min + (np.arange(self.range_bins) + 0.5) * self.range_bin_size

    def bearing_bin_centers(self) -> np.ndarray:
        return -self.bearing_fov / 2 + (np.arange(self.bearing_bins) + 0.5) * self.bearing_bin_size

    def polar_to_bin(self, ranges, bearings):
        """Continuous (range-bin, bearing-bin) coordinates of polar points.

        Bin centers sit at integer coordinates (bin-center convention), so a
        lookup exactly at a center returns that bin's value under bilinear
        sampling.
        """
        rb = (np.asarray(ranges, dtype=float) - self.range_min) / self.range_bin_size - 0.5
        bb = (np.asarray(bearings, dtype=float) + self.bearing_fov / 2) / self.bearing_bin_size - 0.5
        return rb, bb

    def in_fov(self, ranges, bearings) -> np.ndarray:
        """True where (range, bearing) falls inside the sensing sector."""
        ranges = np.asarray(ranges, dtype=float)
        bearings = np.asarray(bearings, dtype=float)
        return (
            (ranges >= self.range_min)
            & (ranges <= self.range_max)
            & (np.abs(bearings) <= self.bearing_fov / 2)
        )


@dataclass(frozen=True)
class PlaneHypothesisSet:
    """The N inclined candidate planes sweeping the sonar volume.

    Plane i (1-based) has unit normal [0, cos(alpha), sin(alpha)] in the
    sonar frame and satisfies

        cos(alpha) * Y + sin(alpha) * Z = d_i * sin(alpha)

    with d_i = d0 * k**(i-1), a geometric progression chosen so that
    consecutive hypotheses induce uniform pixel-space steps.

    Attributes:
        alpha: Plane inclination in radians, in (0, pi/2).
        d0: Distance parameter of the first plane, meters.
        k: Progression ratio, > 1.
        n: Number of planes, >= 2.
    """

    alpha: float
    d0: float
    k: float
    n: int

    def __post_init__(self):
        if not (0 < self.alpha < np.pi / 2):
            raise ValueError(f"alpha must be in (0, pi/2), got {self.alpha}")
        if self.d0 <= 0:
            raise ValueError(f"d0 must be positive, got {self.d0}")
        if self.k <= 1:
            raise ValueError(f"k must be > 1, got {self.k}")
        if self.n < 2:
            raise ValueError(f"need at least 2 planes, got {self.n}")

    def distance(self, i: int) -> float:
        """Distance parameter d_i = d0 * k**(i-1) of plane i (1-based)."""
        if not 1 <= i <= self.n:
            raise IndexError(f"plane index {i} out of range 1..{self.n}")
        return self.d0 * self.k ** (i - 1)

    def distances(self) -> np.ndarray:
        """All N distance parameters, strictly increasing."""
        return self.d0 * self.k ** np.arange(self.n)

    def normal(self) -> np.ndarray:
        """Unit normal shared by every plane in the set (sonar frame)."""
        return np.array([0.0, np.cos(self.alpha), np.sin(self.alpha)])

    def plane_offset(self, i: int) -> float:
        """Right-hand side d_i * sin(alpha) of plane i's equation."""
        return self.distance(i) * np.sin(self.alpha)


def spherical_to_cartesian(d, theta, phi) -> np.ndarray:
    """Sonar spherical coordinates to sonar-frame Cartesian.

    Args:
        d: Range in meters, >= 0.
        theta: Bearing in radians (positive to starboard).
        phi: Elevation in radians (positive up).

    Returns:
        Array of shape (..., 3): lateral = d cos(phi) sin(theta),
        forward = d cos(phi) cos(theta), up = d sin(phi).
    """
    d = np.asarray(d, dtype=float)
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    x = d * np.cos(phi) * np.sin(theta)
    y = d * np.cos(phi) * np.cos(theta)
    z = d * np.sin(phi)
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def cartesian_to_sonar_polar(points, spec: SonarSpec | None = None):
    """Orthographic sonar projection: range and bearing from horizontal components.

    The vertical beam is narrow, so cos(phi) is treated as 1 and the
    elevation component is ignored; any point on a vertical arc maps to the
    same polar cell.

    Args:
        points: Sonar-frame points, shape (..., 3).
        spec: Optional sonar geometry for the in-FOV flag. Without it the
            flag is True everywhere.

    Returns:
        (ranges, bearings, in_fov) arrays of shape (...,). The flag checks
        range bounds and the bearing aperture only; elevation is not gated
        (the orthographic model cannot observe it).
    """
    points = np.asarray(points, dtype=float)
    ranges = np.hypot(points[..., 0], points[..., 1])
    bearings = np.arctan2(points[..., 0], points[..., 1])
    if spec is None:
        ok = np.ones_like(ranges, dtype=bool)
    else:
        ok = spec.in_fov(ranges, bearings)
    return ranges, bearings, ok


def backproject_sonar_to_plane(d, theta, planes: PlaneHypothesisSet, i: int) -> np.ndarray:
    """Lift a polar sonar measurement onto candidate sheet i.

    The horizontal position comes directly from the measurement; the
    unobserved elevation is fixed by the sheet geometry:

        lateral  = d sin(theta)
        forward  = d cos(theta)
        up       = (d_i - d cos(theta)) * tan(alpha)

    The lifted sheet crosses the acoustic axis at range d_i and coincides
    with hypothesis plane i of the sweep at alpha = 45 degrees (the default
    configuration).

    Args:
        d: Range(s) in meters.
        theta: Bearing(s) in radians.
        planes: Hypothesis set supplying alpha and d_i.
        i: Plane index, 1-based.

    Returns:
        Sonar-frame point(s), shape (..., 3).
    """
    d_i = planes.distance(i)
    d = np.asarray(d, dtype=float)
    theta = np.asarray(theta, dtype=float)
    x = d * np.sin(theta)
    y = d * np.cos(theta)
    z = (d_i - y) * np.tan(planes.alpha)
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def plane_residual(points, planes: PlaneHypothesisSet, i: int) -> np.ndarray:
    """Signed distance (meters) of sonar-frame points from hypothesis plane i."""
    points = np.asarray(points, dtype=float)
    return points @ planes.normal() - planes.plane_offset(i)


def _inverse_3x3(a: np.ndarray):
    """Closed-form inverses of a stack of 3x3 matrices.

    Args:
        a: Array of shape (..., 3, 3).

    Returns:
        (inv, ok): inverses (garbage where not ok) and a validity mask
        flagging determinants below DET_RTOL relative to the max-abs entry.
    """
    a = np.asarray(a, dtype=float)
    c00 = a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1]
    c01 = a[..., 1, 2] * a[..., 2, 0] - a[..., 1, 0] * a[..., 2, 2]
    c02 = a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]
    det = a[..., 0, 0] * c00 + a[..., 0, 1] * c01 + a[..., 0, 2] * c02

    scale = np.max(np.abs(a), axis=(-2, -1))
    ok = (scale > 0) & (np.abs(det) >= DET_RTOL * scale)

    inv = np.empty_like(a)
    inv[..., 0, 0] = c00
    inv[..., 1, 0] = c01
    inv[..., 2, 0] = c02
    inv[..., 0, 1] = a[..., 0, 2] * a[..., 2, 1] - a[..., 0, 1] * a[..., 2, 2]
    inv[..., 1, 1] = a[..., 0, 0] * a[..., 2, 2] - a[..., 0, 2] * a[..., 2, 0]
    inv[..., 2, 1] = a[..., 0, 1] * a[..., 2, 0] - a[..., 0, 0] * a[..., 2, 1]
    inv[..., 0, 2] = a[..., 0, 1] * a[..., 1, 2] - a[..., 0, 2] * a[..., 1, 1]
    inv[..., 1, 2] = a[..., 0, 2] * a[..., 1, 0] - a[..., 0, 0] * a[..., 1, 2]
    inv[..., 2, 2] = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    safe_det = np.where(ok, det, 1.0)
    inv /= safe_det[..., None, None]
    return inv, ok


def _ray_plane_system(us, vs, intrinsics: CameraIntrinsics, extrinsics: RigidTransform,
                      planes: PlaneHypothesisSet):
    """Assemble the per-pixel 3x3 system shared by all N planes.

    Row 1 is the plane constraint; rows 2 and 3 eliminate the camera
    projection scale using M = K R and C = K t. Only the first entry of the
    right-hand side depends on the plane index, so the solution is affine in
    d_i: P(i) = base + d_i sin(alpha) * col0.

    Returns:
        (base, col0, ok) with shapes (..., 3), (..., 3), (...,).
    """
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    m = intrinsics.matrix() @ extrinsics.rotation
    c = intrinsics.matrix() @ extrinsics.translation
    normal = planes.normal()

    shape = np.broadcast_shapes(us.shape, vs.shape)
    a = np.empty(shape + (3, 3))
    a[..., 0, :] = normal
    a[..., 1, :] = us[..., None] * m[2] - m[0]
    a[..., 2, :] = vs[..., None] * m[2] - m[1]
    inv, ok = _inverse_3x3(a)

    b_rest = np.empty(shape + (3,))
    b_rest[..., 0] = 0.0
    b_rest[..., 1] = c[0] - us * c[2]
    b_rest[..., 2] = c[1] - vs * c[2]
    base = np.einsum("...ij,...j->...i", inv, b_rest)
    col0 = inv[..., :, 0]
    return base, col0, ok


def solve_ray_plane(pixel, intrinsics: CameraIntrinsics, extrinsics: RigidTransform,
                    planes: PlaneHypothesisSet, i: int) -> np.ndarray:
    """Intersect the viewing ray of a pixel with hypothesis plane i.

    Solves the 3x3 linear system combining the plane constraint with the two
    scale-eliminated projection constraints, so the returned sonar-frame
    point lies on plane i and projects back to the pixel.

    Args:
        pixel: (u, v) pixel coordinates.
        intrinsics: Camera model.
        extrinsics: Sonar-to-camera transform.
        planes: Hypothesis set.
        i: Plane index, 1-based.

    Returns:
        Sonar-frame intersection point, shape (3,).

    Raises:
        SingularSystemError: Ray parallel to the plane (relative determinant
            below 1e-12).
    """
    u, v = pixel
    base, col0, ok = _ray_plane_system(np.float64(u), np.float64(v), intrinsics, extrinsics, planes)
    if not ok:
        raise SingularSystemError(f"ray through pixel ({u}, {v}) is parallel to plane {i}")
    return base + planes.plane_offset(i) * col0


def solve_ray_plane_many(us, vs, intrinsics: CameraIntrinsics, extrinsics: RigidTransform,
                         planes: PlaneHypothesisSet, indices):
    """Vectorized ray-plane intersection for scattered (pixel, plane) pairs.

    Args:
        us, vs: Pixel coordinate arrays of a common shape.
        indices: 1-based plane indices, same shape.

    Returns:
        (points, ok): sonar-frame intersections (..., 3) and a mask that is
        False where the per-pixel system was singular.
    """
    indices = np.asarray(indices)
    if np.any((indices < 1) | (indices > planes.n)):
        raise IndexError(f"plane indices out of range 1..{planes.n}")
    base, col0, ok = _ray_plane_system(np.asarray(us, dtype=float), np.asarray(vs, dtype=float),
                                       intrinsics, extrinsics, planes)
    d = planes.d0 * planes.k ** (indices - 1)
    points = base + (d * np.sin(planes.alpha))[..., None] * col0
    return points, ok


def closed_form_camera_depth(pixel, d_hat, intrinsics: CameraIntrinsics,
                             extrinsics: RigidTransform, alpha: float) -> float:
    """Camera-frame depth of the point on the viewing ray at plane distance d_hat.

    Substituting the ray P_c = Z_c K^-1 [u, v, 1]^T into the plane constraint
    gives the closed form

        Z_c = (d_hat sin(alpha) + (R n)^T t) / ((R n)^T K^-1 [u, v, 1]^T)

    with n = [0, cos(alpha), sin(alpha)] the plane-family normal.

    Raises:
        DegenerateRayError: |denominator| < 1e-12 (ray parallel to the family).
    """
    u, v = pixel
    z, ok = camera_depth_field(u, v, d_hat, intrinsics, extrinsics, alpha)
    if not np.all(ok):
        raise DegenerateRayError(f"viewing ray at pixel ({u}, {v}) is parallel to the plane family")
    return float(z) if np.ndim(z) == 0 else z


def camera_depth_field(us, vs, d_hat, intrinsics: CameraIntrinsics,
                       extrinsics: RigidTransform, alpha: float):
    """Vectorized closed-form camera depth; degenerate rays masked, not raised.

    Returns:
        (z_c, ok) broadcast to the common shape of us, vs, d_hat.
    """
    normal = np.array([0.0, np.cos(alpha), np.sin(alpha)])
    n_cam = extrinsics.rotation @ normal
    rays = intrinsics.ray_directions(us, vs)
    denom = rays @ n_cam
    numer = np.asarray(d_hat, dtype=float) * np.sin(alpha) + n_cam @ extrinsics.translation
    ok = np.abs(denom) >= 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ok, numer / np.where(ok, denom, 1.0), np.nan)
    return z, ok


def ray_depth_to_euclidean(us, vs, z_c, intrinsics: CameraIntrinsics):
    """Convert axis-aligned depth Z_c to Euclidean distance along the pixel ray.

    D = |Z_c| * ||K^-1 [u, v, 1]^T||_2; equals |Z_c| at the principal point
    and grows with the ray obliquity.
    """
    rays = intrinsics.ray_directions(us, vs)
    return np.abs(np.asarray(z_c, dtype=float)) * np.linalg.norm(rays, axis=-1)


@dataclass(frozen=True)
class WarpGrid:
    """Per-pixel, per-plane sampling coordinates of the sweep.

    Attributes:
        points: Sonar-frame intersection points, shape (H, W, N, 3).
        ranges, bearings: Polar lookup coordinates, shape (H, W, N).
        valid: False where the system was singular, the intersection fell
            behind the camera, or the lookup left the sonar sector.
        origin: (u0, v0) absolute pixel coordinate of grid element [0, 0]
            (nonzero when the grid covers a crop window).
    """

    points: np.ndarray
    ranges: np.ndarray
    bearings: np.ndarray
    valid: np.ndarray
    origin: tuple = field(default=(0, 0))

    @property
    def shape(self):
        return self.valid.shape


def build_warp_grid(intrinsics: CameraIntrinsics, extrinsics: RigidTransform,
                    planes: PlaneHypothesisSet, spec: SonarSpec,
                    shape: tuple | None = None, origin: tuple = (0, 0),
                    gate_elevation: bool = False) -> WarpGrid:
    """Ray-plane intersections and sonar lookups for every (pixel, plane) pair.

    Args:
        intrinsics: Camera model; also supplies the default grid shape.
        extrinsics: Sonar-to-camera transform.
        planes: Hypothesis set (N planes).
        spec: Sonar geometry used for FOV gating of the lookups.
        shape: (H, W) grid size; defaults to the full image.
        origin: (u0, v0) pixel of grid element [0, 0], for crop windows.
        gate_elevation: Additionally require the candidate 3-D point to sit
            inside the sonar's vertical aperture. Off by default: a polar
            lookup only needs range and bearing, but candidates outside the
            beam can never have produced an echo, so the matching pipeline
            enables this admissibility gate.

    Returns:
        WarpGrid of shape (H, W, N). Singular systems and behind-camera
        intersections are flagged invalid per entry, never raised.
    """
    if shape is None:
        shape = (intrinsics.height, intrinsics.width)
    h, w = shape
    u0, v0 = origin
    if h == 0 or w == 0:
        empty = np.zeros((h, w, planes.n))
        return WarpGrid(np.zeros((h, w, planes.n, 3)), empty, empty.copy(),
                        np.zeros((h, w, planes.n), dtype=bool), origin=tuple(origin))

    vs, us = np.meshgrid(np.arange(h, dtype=float) + v0, np.arange(w, dtype=float) + u0,
                         indexing="ij")
    base, col0, ok = _ray_plane_system(us, vs, intrinsics, extrinsics, planes)

    offsets = planes.distances() * np.sin(planes.alpha)  # (N,)
    points = base[:, :, None, :] + offsets[None, None, :, None] * col0[:, :, None, :]

    cam_pts = extrinsics.apply(points)
    in_front = cam_pts[..., 2] > 0.0

    ranges, bearings, in_fov = cartesian_to_sonar_polar(points, spec)
    valid = ok[:, :, None] & in_front & in_fov
    if gate_elevation:
        elevation = np.arctan2(points[..., 2], ranges)
        valid &= np.abs(elevation) <= spec.elevation_fov / 2
    return WarpGrid(points, ranges, bearings, valid, origin=(int(u0), int(v0)))
