"""Pipeline configuration read from an INI-style file.

Every section maps onto one settings dataclass below, and every field of
those classes is addressable as ``key = value``. Unknown sections or keys
are rejected so typos fail loudly.

Example::

    [camera]
    fx = 458.654
    fy = 457.296
    cx = 367.215
    cy = 248.375
    k1 = -0.28340811

    [ba]
    window_size = 10

    [run]
    mesh_interval = 15
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from ..ba.subspace import SweepSchedule
from ..ba.window import WindowConfig
from ..errors import ConfigError, InvalidInputError
from ..geometry.camera import PinholeCamera
from ..geometry.twoview import RansacConfig
from ..tracking.robust import RobustKernel
from ..tracking.tracker import TrackerConfig


@dataclass
class CameraSettings:
    fx: float = 0.0
    fy: float = 0.0
    cx: float = 0.0
    cy: float = 0.0
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    width: int = 0
    height: int = 0

    @property
    def given(self) -> bool:
        return self.fx > 0 and self.fy > 0

    def to_camera(self) -> PinholeCamera:
        return PinholeCamera(self.fx, self.fy, self.cx, self.cy, (self.k1, self.k2, self.p1, self.p2),
                             self.width or None, self.height or None)


@dataclass
class TrackerSettings:
    lam: float = -1.0  # negative: per-frame automatic value
    lam_scale: float = 0.1
    kernel_sigma: float = 5.0
    flow_sigma_lowres: float = 2.0
    subsample_factor: int = 6
    max_hill_climb_steps: int = 10
    gn_max_iters: int = 30
    blur_sigma: float = 1.0
    kappa_quantile: float = 0.5
    lost_floor_ratio: float = 0.25
    spawn_radius: int = 2
    border: int = 2
    fast_threshold: float = 0.02
    max_corners: int = 300
    max_match_distance: int = 80

    def to_tracker(self) -> TrackerConfig:
        return TrackerConfig(
            lam=None if self.lam < 0 else self.lam, lam_scale=self.lam_scale,
            kernel=RobustKernel(self.kernel_sigma), flow_sigma_lowres=self.flow_sigma_lowres,
            subsample_factor=self.subsample_factor, max_hill_climb_steps=self.max_hill_climb_steps,
            gn_max_iters=self.gn_max_iters, blur_sigma=self.blur_sigma, kappa_quantile=self.kappa_quantile,
            lost_floor_ratio=self.lost_floor_ratio, spawn_radius=self.spawn_radius, border=self.border,
            fast_threshold=self.fast_threshold, max_corners=self.max_corners,
            max_match_distance=self.max_match_distance,
        )


@dataclass
class InitSettings:
    ransac_iterations: int = 200
    ransac_threshold: float = 1.5
    min_parallax_deg: float = 1.0
    min_inlier_ratio: float = 0.5
    min_correspondences: int = 50
    reference_survival: float = 0.3  # restart from a new reference below this track fraction


@dataclass
class LocalizationSettings:
    ransac_iterations: int = 100
    ransac_threshold: float = 3.0
    min_inlier_ratio: float = 0.3
    min_points: int = 12
    triangulation_parallax_deg: float = 1.0
    triangulation_max_error: float = 2.0


@dataclass
class BASettings:
    window_size: int = 10
    kernel_sigma: float = 2.0
    anchor_frames: int = 10
    cull_threshold: float = 6.0
    mu_init: float = 1e-4
    mu_up: float = 10.0
    mu_down: float = 2.0
    inner_tol: float = 1e-8
    max_sweeps: int = 50
    max_outer: int = 10
    linear_solver: str = "subspace"
    eliminate_points: bool = True

    def to_window(self) -> WindowConfig:
        return WindowConfig(
            window_size=self.window_size, kernel_sigma=self.kernel_sigma, anchor_frames=self.anchor_frames,
            cull_threshold=self.cull_threshold,
            schedule=SweepSchedule(inner_tol=self.inner_tol, max_sweeps=self.max_sweeps, max_outer=self.max_outer,
                                   mu_init=self.mu_init, mu_up=self.mu_up, mu_down=self.mu_down,
                                   linear_solver=self.linear_solver, eliminate_points=self.eliminate_points),
        )


@dataclass
class ReconSettings:
    enabled: bool = True
    voxel_size: float = 0.05
    truncation_voxels: float = 4.0
    max_weight: float = 100.0
    smoothing_iterations: int = 10
    smoothing_strength: float = 1.0
    max_edge_voxels: float = 30.0
    max_depth_ratio: float = 1.5


@dataclass
class RunSettings:
    dataset: str = ""
    output: str = "output"
    seed: int = 0
    mesh_interval: int = 15
    max_frames: int = 0  # 0: whole sequence
    sync_backend: bool = False
    ground_truth: str = ""


_SECTIONS = {
    "camera": CameraSettings,
    "tracker": TrackerSettings,
    "init": InitSettings,
    "localization": LocalizationSettings,
    "ba": BASettings,
    "recon": ReconSettings,
    "run": RunSettings,
}

_RANGES = {
    ("tracker", "kernel_sigma"): (0.0, None, False),
    ("tracker", "subsample_factor"): (1, None, True),
    ("tracker", "kappa_quantile"): (0.0, 1.0, True),
    ("init", "ransac_iterations"): (1, None, True),
    ("init", "ransac_threshold"): (0.0, None, False),
    ("init", "min_parallax_deg"): (0.0, None, True),
    ("init", "min_inlier_ratio"): (0.0, 1.0, True),
    ("init", "min_correspondences"): (8, None, True),
    ("localization", "ransac_iterations"): (1, None, True),
    ("localization", "min_inlier_ratio"): (0.0, 1.0, True),
    ("localization", "min_points"): (4, None, True),
    ("ba", "window_size"): (2, None, True),
    ("ba", "kernel_sigma"): (0.0, None, False),
    ("ba", "mu_init"): (0.0, None, False),
    ("ba", "mu_up"): (1.0, None, False),
    ("ba", "mu_down"): (1.0, None, False),
    ("ba", "max_sweeps"): (1, None, True),
    ("ba", "max_outer"): (1, None, True),
    ("recon", "voxel_size"): (0.0, None, False),
    ("recon", "truncation_voxels"): (0.0, None, False),
    ("recon", "max_weight"): (0.0, None, False),
    ("recon", "max_depth_ratio"): (1.0, None, True),
    ("run", "mesh_interval"): (1, None, True),
    ("run", "max_frames"): (0, None, True),
}


@dataclass
class PipelineConfig:
    camera: CameraSettings = field(default_factory=CameraSettings)
    tracker: TrackerSettings = field(default_factory=TrackerSettings)
    init: InitSettings = field(default_factory=InitSettings)
    localization: LocalizationSettings = field(default_factory=LocalizationSettings)
    ba: BASettings = field(default_factory=BASettings)
    recon: ReconSettings = field(default_factory=ReconSettings)
    run: RunSettings = field(default_factory=RunSettings)

    def validate(self) -> "PipelineConfig":
        for (section, key), (lo, hi, closed) in _RANGES.items():
            v = getattr(getattr(self, section), key)
            bad_lo = lo is not None and (v < lo if closed else v <= lo)
            bad_hi = hi is not None and v > hi
            if bad_lo or bad_hi:
                raise ConfigError(f"[{section}] {key} = {v} is out of range")
        if self.ba.linear_solver not in ("subspace", "schur"):
            raise ConfigError("[ba] linear_solver must be 'subspace' or 'schur'")
        try:
            self.tracker.to_tracker()
            self.ba.to_window()
            if self.camera.given:
                self.camera.to_camera()
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def ransac(self) -> RansacConfig:
        return RansacConfig(self.init.ransac_iterations, self.init.ransac_threshold, self.run.seed)


def _convert(raw: str, kind, where: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config(text: str, source: str = "<string>") -> PipelineConfig:
    """Build a validated :class:`PipelineConfig` from INI text."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep keys case-sensitive so typos are not silently folded
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    config = PipelineConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        target = getattr(config, section)
        kinds = {f.name: type(f.default) for f in dataclasses.fields(target)}
        for key, raw in parser.items(section):
            if key not in kinds:
                raise ConfigError(f"{source}: unknown key '{key}' in [{section}]")
            setattr(target, key, _convert(raw, kinds[key], f"{source} [{section}] {key}"))
    return config.validate()


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def dump_config(config: PipelineConfig) -> str:
    """INI text that :func:`parse_config` reads back to an equal config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in _SECTIONS:
        parser[name] = {k: str(v) for k, v in dataclasses.asdict(getattr(config, name)).items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
