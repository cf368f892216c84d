"""Calibration bundles, default rig, and JSON (de)serialization.

Angle fields in files carry a ``_deg`` suffix and are converted to radians
once at load; everything downstream works in radians and meters.

Calibration file schema (JSON)::

    {
      "intrinsics": {"fx", "fy", "cx", "cy", "width", "height"},
      "extrinsics": {"rotation": [[...3x3 row-major...]], "translation": [x, y, z]},
      "sonar": {"range_min", "range_max", "bearing_fov_deg", "elevation_fov_deg",
                "range_bins", "bearing_bins"},
      "planes": {"alpha_deg", "d0", "k", "n"}
    }
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, PlaneHypothesisSet, RigidTransform, SonarSpec


class ConfigError(ValueError):
    """Malformed or inconsistent configuration/calibration data."""


@dataclass(frozen=True)
class CalibrationBundle:
    """Everything the sweep needs to relate the two sensors."""

    intrinsics: CameraIntrinsics
    extrinsics: RigidTransform
    sonar: SonarSpec
    planes: PlaneHypothesisSet

    def to_dict(self) -> dict:
        return {
            "intrinsics": {
                "fx": self.intrinsics.fx,
                "fy": self.intrinsics.fy,
                "cx": self.intrinsics.cx,
                "cy": self.intrinsics.cy,
                "width": self.intrinsics.width,
                "height": self.intrinsics.height,
            },
            "extrinsics": {
                "rotation": self.extrinsics.rotation.tolist(),
                "translation": self.extrinsics.translation.tolist(),
            },
            "sonar": {
                "range_min": self.sonar.range_min,
                "range_max": self.sonar.range_max,
                "bearing_fov_deg": math.degrees(self.sonar.bearing_fov),
                "elevation_fov_deg": math.degrees(self.sonar.elevation_fov),
                "range_bins": self.sonar.range_bins,
                "bearing_bins": self.sonar.bearing_bins,
            },
            "planes": {
                "alpha_deg": math.degrees(self.planes.alpha),
                "d0": self.planes.d0,
                "k": self.planes.k,
                "n": self.planes.n,
            },
        }

    @staticmethod
    def from_dict(data: dict) -> "CalibrationBundle":
        try:
            intr = data["intrinsics"]
            extr = data["extrinsics"]
            sonr = data["sonar"]
            plns = data["planes"]
            intrinsics = CameraIntrinsics(
                fx=float(intr["fx"]), fy=float(intr["fy"]),
                cx=float(intr["cx"]), cy=float(intr["cy"]),
                width=int(intr["width"]), height=int(intr["height"]),
            )
            extrinsics = RigidTransform(
                rotation=np.asarray(extr["rotation"], dtype=float),
                translation=np.asarray(extr["translation"], dtype=float),
            )
            sonar = SonarSpec(
                range_min=float(sonr["range_min"]), range_max=float(sonr["range_max"]),
                bearing_fov=math.radians(float(sonr["bearing_fov_deg"])),
                elevation_fov=math.radians(float(sonr["elevation_fov_deg"])),
                range_bins=int(sonr["range_bins"]), bearing_bins=int(sonr["bearing_bins"]),
            )
            planes = PlaneHypothesisSet(
                alpha=math.radians(float(plns["alpha_deg"])),
                d0=float(plns["d0"]), k=float(plns["k"]), n=int(plns["n"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid calibration data: {exc}") from exc
        return CalibrationBundle(intrinsics, extrinsics, sonar, planes)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "CalibrationBundle":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"calibration file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"calibration file {path} is not valid JSON: {exc}") from exc
        return CalibrationBundle.from_dict(data)


def camera_rotation(pitch_down: float) -> np.ndarray:
    """Sonar-to-camera rotation for a camera pitched down by ``pitch_down`` radians.

    At zero pitch the camera looks along the acoustic axis: camera X = sonar
    lateral, camera Y = sonar -up, camera Z = sonar forward.
    """
    cp, sp = math.cos(pitch_down), math.sin(pitch_down)
    right = np.array([1.0, 0.0, 0.0])
    forward = np.array([0.0, cp, -sp])
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def default_rig(width: int = 320, height: int = 240) -> CalibrationBundle:
    """The stock desk-scale rig used by the CLI and the test suite.

    Sonar: 60 x 12 degree FOV, 0.1..5 m range. Camera: 55 degree horizontal
    FOV (inside the sonar's bearing coverage), pitched 15 degrees down,
    mounted 15 cm above the sonar origin. Plane set: alpha 45 degrees (so
    tan(alpha) = 1), d0 = 0.5 m, k = 1.05, N = 48, spanning roughly 0.5 m
    to 5 m.
    """
    fx = (width / 2) / math.tan(math.radians(27.5))
    intrinsics = CameraIntrinsics(
        fx=fx, fy=fx, cx=(width - 1) / 2, cy=(height - 1) / 2,
        width=width, height=height,
    )
    rotation = camera_rotation(math.radians(15.0))
    camera_center = np.array([0.0, 0.0, 0.15])  # 15 cm above the sonar, sonar frame
    extrinsics = RigidTransform(rotation, -rotation @ camera_center)
    sonar = SonarSpec(
        range_min=0.1, range_max=5.0,
        bearing_fov=math.radians(60.0), elevation_fov=math.radians(12.0),
        range_bins=384, bearing_bins=224,
    )
    planes = PlaneHypothesisSet(alpha=math.radians(45.0), d0=0.5, k=1.05, n=48)
    return CalibrationBundle(intrinsics, extrinsics, sonar, planes)
