"""
Scenario configuration files.

A scenario is a YAML mapping; every section is optional and falls back to
the reference figure-eight setup. Units: seconds, hertz, meters per second,
radians.

.. code-block:: yaml

    duration: 60.0          # s
    imu_rate: 400.0         # Hz
    trajectory:
      name: figure_eight    # or constant_rate (with omega, velocity)
    world:
      g: [0.0, 0.0, -9.81]              # m/s^2, inertial
      inertial_vectors: [[0.36, 0.64, 0.0]]
    noise:                  # per-axis variances
      gyro_var: 0.0         # (rad/s)^2
      mag_var: 0.0
      accel_var: 0.0        # (m/s^2)^2
      dvl_var: 0.0          # (m/s)^2
      seed: 0
    sampling:
      T_m: 0.09             # s
      T_M: 0.11             # s
      mode: jittered        # or periodic
      seed: 0
    initial:
      angle: 3.110176727053895   # rad
      axis: [1.0, 1.0, 1.0]
    observers: [hybrid, continuous_zoh]
    gains:
      continuous: {k_o: 15.0, k_v: 2.5, k_g: 8.0, rho: [1.0, 1.0]}
      reduced: {k_o: 15.0, k_v: 2.5, rho: [1.0, 1.0]}
      hybrid: {k_o: 15.0, k_v: 0.7, k_g: 4.0, k_r: 0.1, rho: [1.0, 1.0]}
    analysis:
      threshold: 1.0e-3
      tail_fraction: 0.25
      record_stride: 1
    iss:
      amplitudes: [0.0, 0.01, 0.1, 1.0]
      horizon: 10.0
      seeds: 8
      dt: 5.0e-4
    output: runs/default    # used when --out is not given
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ConfigError
from .observers import GainSet
from .world import (
    NoiseSpec,
    SamplingSchedule,
    TrajectoryDefinition,
    WorldConstants,
    constant_rate,
    figure_eight,
)

OBSERVER_KINDS = {
    "continuous": ("continuous", "continuous"),
    "continuous_zoh": ("continuous", "zoh"),
    "reduced": ("reduced", "continuous"),
    "reduced_zoh": ("reduced", "zoh"),
    "hybrid": ("hybrid", "zoh"),
}

DEFAULTS = {
    "duration": 60.0,
    "imu_rate": 400.0,
    "trajectory": {"name": "figure_eight"},
    "world": {"g": [0.0, 0.0, -9.81], "inertial_vectors": [[0.36, 0.64, 0.0]]},
    "noise": {"gyro_var": 0.0, "mag_var": 0.0, "accel_var": 0.0, "dvl_var": 0.0, "seed": 0},
    "sampling": {"T_m": 0.09, "T_M": 0.11, "mode": "jittered", "seed": 0},
    "initial": {"angle": 0.99 * np.pi, "axis": [1.0, 1.0, 1.0]},
    "observers": ["hybrid", "continuous_zoh"],
    "gains": {
        "continuous": {"k_o": 15.0, "k_v": 2.5, "k_g": 8.0, "rho": [1.0, 1.0]},
        "reduced": {"k_o": 15.0, "k_v": 2.5, "rho": [1.0, 1.0]},
        "hybrid": {"k_o": 15.0, "k_v": 0.7, "k_g": 4.0, "k_r": 0.1, "rho": [1.0, 1.0]},
    },
    "analysis": {"threshold": 1e-3, "tail_fraction": 0.25, "record_stride": 1},
    "iss": {"amplitudes": [0.0, 0.01, 0.1, 1.0], "horizon": 10.0, "seeds": 8, "dt": 5e-4},
    "output": "runs/default",
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base and path == "":
            raise ConfigError("unknown section", where)
        if isinstance(base.get(key), dict) and key != "trajectory":
            if not isinstance(value, dict):
                raise ConfigError("expected a mapping", where)
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _number(raw, field: str, positive=False, nonneg=False) -> float:
    try:
        x = float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {raw!r}", field) from None
    if not np.isfinite(x):
        raise ConfigError("must be finite", field)
    if positive and x <= 0:
        raise ConfigError(f"must be > 0, got {x}", field)
    if nonneg and x < 0:
        raise ConfigError(f"must be >= 0, got {x}", field)
    return x


def _vector(raw, field: str) -> np.ndarray:
    try:
        v = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("expected a list of 3 numbers", field) from None
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ConfigError("expected a list of 3 finite numbers", field)
    return v


def _int(raw, field: str, minimum: int | None = None) -> int:
    if isinstance(raw, bool) or not isinstance(raw, (int, np.integer)):
        raise ConfigError(f"expected an integer, got {raw!r}", field)
    if minimum is not None and raw < minimum:
        raise ConfigError(f"must be >= {minimum}", field)
    return int(raw)


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario; build world objects with the helper methods."""

    raw: dict
    duration: float
    imu_rate: float
    trajectory_name: str
    trajectory_params: dict
    consts: WorldConstants
    noise: NoiseSpec
    schedule: SamplingSchedule
    init_angle: float
    init_axis: np.ndarray
    observers: tuple
    gains: dict
    threshold: float
    tail_fraction: float
    record_stride: int
    iss: dict
    output: str

    @property
    def dt(self) -> float:
        return 1.0 / self.imu_rate

    def trajectory(self) -> TrajectoryDefinition:
        if self.trajectory_name == "figure_eight":
            return figure_eight()
        p = self.trajectory_params
        return constant_rate(p["omega"], p.get("velocity", (0.0, 0.0, 0.0)))

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the merged configuration."""
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=float)
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed: int) -> "ScenarioConfig":
        raw = copy.deepcopy(self.raw)
        raw["noise"]["seed"] = int(seed)
        raw["sampling"]["seed"] = int(seed)
        return parse_config(raw)

    def with_observers(self, names) -> "ScenarioConfig":
        raw = copy.deepcopy(self.raw)
        raw["observers"] = list(names)
        return parse_config(raw)


def parse_config(data: dict | None) -> ScenarioConfig:
    """
    Merge `data` over the defaults and validate it.

    Raises
    ------
    ConfigError
        Naming the offending field.
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    raw = _merge(DEFAULTS, data)

    duration = _number(raw["duration"], "duration", positive=True)
    imu_rate = _number(raw["imu_rate"], "imu_rate", positive=True)

    traj = raw["trajectory"]
    if not isinstance(traj, dict) or "name" not in traj:
        raise ConfigError("expected a mapping with a name", "trajectory")
    name = traj["name"]
    params = {}
    if name == "constant_rate":
        if "omega" not in traj:
            raise ConfigError("constant_rate needs omega", "trajectory.omega")
        params["omega"] = _vector(traj["omega"], "trajectory.omega")
        params["velocity"] = _vector(traj.get("velocity", [0, 0, 0]), "trajectory.velocity")
    elif name != "figure_eight":
        raise ConfigError(f"unknown trajectory {name!r}", "trajectory.name")

    w = raw["world"]
    g = _vector(w["g"], "world.g")
    if not np.any(g):
        raise ConfigError("gravity must be nonzero", "world.g")
    rs = np.atleast_2d(np.asarray(w["inertial_vectors"], dtype=float))
    if rs.ndim != 2 or rs.shape[1] != 3 or rs.shape[0] < 1:
        raise ConfigError("expected a list of 3-vectors", "world.inertial_vectors")
    consts = WorldConstants(g, rs)

    n = raw["noise"]
    noise = NoiseSpec(
        *(_number(n[k], f"noise.{k}", nonneg=True) for k in ("gyro_var", "mag_var", "accel_var", "dvl_var")),
        seed=_int(n["seed"], "noise.seed", 0),
    )

    s = raw["sampling"]
    T_m = _number(s["T_m"], "sampling.T_m", positive=True)
    T_M = _number(s["T_M"], "sampling.T_M", positive=True)
    if T_m > T_M:
        raise ConfigError(f"T_m={T_m} exceeds T_M={T_M}", "sampling.T_m")
    if s["mode"] not in ("periodic", "jittered"):
        raise ConfigError(f"unknown mode {s['mode']!r}", "sampling.mode")
    schedule = SamplingSchedule(T_m, T_M, s["mode"], _int(s["seed"], "sampling.seed", 0))

    ini = raw["initial"]
    angle = _number(ini["angle"], "initial.angle")
    axis = _vector(ini["axis"], "initial.axis")
    if np.linalg.norm(axis) == 0:
        raise ConfigError("axis must be nonzero", "initial.axis")

    obs = raw["observers"]
    if isinstance(obs, str):
        obs = [o.strip() for o in obs.split(",") if o.strip()]
    if not isinstance(obs, list) or not obs:
        raise ConfigError("expected a nonempty list", "observers")
    for o in obs:
        if o not in OBSERVER_KINDS:
            raise ConfigError(f"unknown observer {o!r}", "observers")

    gains = {}
    for family, block in raw["gains"].items():
        if family not in ("continuous", "reduced", "hybrid"):
            raise ConfigError("unknown gain family", f"gains.{family}")
        if not isinstance(block, dict):
            raise ConfigError("expected a mapping", f"gains.{family}")
        vals = {}
        for key in ("k_o", "k_v", "k_g", "k_r"):
            if key in block:
                vals[key] = _number(block[key], f"gains.{family}.{key}", nonneg=True)
        rho = block.get("rho", [1.0] * (consts.N + 1))
        rho = [_number(r, f"gains.{family}.rho", nonneg=True) for r in np.atleast_1d(rho)]
        if len(rho) != consts.N + 1:
            raise ConfigError(f"needs {consts.N + 1} weights", f"gains.{family}.rho")
        try:
            gains[family] = GainSet(
                vals.get("k_o", 0.0), vals.get("k_v", 0.0), vals.get("k_g", 0.0), vals.get("k_r", 0.0), tuple(rho)
            )
        except ValueError as exc:
            raise ConfigError(str(exc), f"gains.{family}") from None
    required = {"continuous": ("k_v", "k_g"), "reduced": ("k_v",), "hybrid": ("k_v", "k_g", "k_r")}
    for o in obs:
        family = OBSERVER_KINDS[o][0]
        if family not in gains:
            raise ConfigError(f"observer {o!r} needs gains", f"gains.{family}")
        for key in required[family]:
            if not getattr(gains[family], key) > 0:
                raise ConfigError("must be > 0 for the selected observer", f"gains.{family}.{key}")

    a = raw["analysis"]
    threshold = _number(a["threshold"], "analysis.threshold", positive=True)
    tail = _number(a["tail_fraction"], "analysis.tail_fraction", positive=True)
    if tail >= 1:
        raise ConfigError("must be < 1", "analysis.tail_fraction")
    stride = _int(a["record_stride"], "analysis.record_stride", 1)

    iss = raw["iss"]
    amps = iss["amplitudes"]
    if not isinstance(amps, list) or not amps:
        raise ConfigError("expected a nonempty list", "iss.amplitudes")
    amps = [_number(x, "iss.amplitudes", nonneg=True) for x in amps]
    if any(b < a_ for a_, b in zip(amps, amps[1:])):
        raise ConfigError("must be ascending", "iss.amplitudes")
    iss_cfg = {
        "amplitudes": amps,
        "horizon": _number(iss["horizon"], "iss.horizon", positive=True),
        "seeds": _int(iss["seeds"], "iss.seeds", 1),
        "dt": _number(iss["dt"], "iss.dt", positive=True),
    }
    if not isinstance(raw["output"], str) or not raw["output"]:
        raise ConfigError("expected a directory path", "output")

    return ScenarioConfig(
        raw, duration, imu_rate, name, params, consts, noise, schedule, angle, axis,
        tuple(obs), gains, threshold, tail, stride, iss_cfg, raw["output"],
    )


def load_config(path) -> ScenarioConfig:
    """Read and validate a YAML scenario file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return parse_config(data)


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``default`` or ``noisy``)."""
    ref = resources.files("hybrid_attitude") / "configs" / f"{name}.yaml"
    if not ref.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(ref))
