"""Run configuration: one YAML file with camera/medium/lights/... sections.

Every model parameter is a named key; defaults reproduce the synthetic
sphere experiment (pure-scattering medium b = c = 5e-3 per mm, eight
near lights on a ring, kernel support 81).
"""

from __future__ import annotations

import copy

import numpy as np
import yaml

from .errors import ConfigError
from .pipeline import PipelineParams
from .scene import Camera, LightSource, Medium


def default_config() -> dict:
    ring = []
    for k in range(8):
        phi = 2 * np.pi * k / 8
        ring.append({"position": [round(100.0 * np.cos(phi), 10),
                                  round(100.0 * np.sin(phi), 10), 0.0],
                     "intensity": 1.0e6})
    return {
        "camera": {"width": 128, "height": 128, "fx": 320.0, "fy": 320.0,
                   "cx": 63.5, "cy": 63.5, "pixel_area": 1.5625},
        "medium": {"absorption": 0.0, "scattering": 5.0e-3},
        "lights": ring,
        "scene": {"kind": "sphere", "center": [0.0, 0.0, 400.0],
                  "radius": 60.0, "albedo": 0.8, "d_max": 1200.0},
        "kernel": {"support": 81},
        "solver": {"tol": 1.0e-8, "max_iter": 2000},
        "pipeline": {"max_iterations": 10, "convergence_deg": 0.1,
                     "init_depth": None, "working_distance": 400.0,
                     "condition_threshold": 1.0e6},
        "tables": {"f_u_samples": 1024, "f_v_samples": 2048, "f_u_max": 10.0,
                   "g_t_samples": 256, "g_mu_samples": 256},
        "io": {"noise_std": 0.0, "seed": 0},
    }


_REQUIRED = ("camera", "medium", "lights", "scene", "kernel", "solver",
             "pipeline", "tables", "io")


def load_config(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    merged = copy.deepcopy(default_config())
    for section, content in data.items():
        if section not in _REQUIRED:
            raise ConfigError(f"{path}: unknown section '{section}'")
        if section == "lights":
            merged["lights"] = content
        else:
            if not isinstance(content, dict):
                raise ConfigError(f"{path}: section '{section}' must be a mapping")
            for key, value in content.items():
                if key not in merged[section]:
                    raise ConfigError(f"{path}: unknown key '{section}.{key}'")
                merged[section][key] = value
    return merged


def save_config(config: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config, fh, sort_keys=True, default_flow_style=None)


def camera_from_config(config: dict) -> Camera:
    c = config["camera"]
    return Camera(width=int(c["width"]), height=int(c["height"]),
                  fx=float(c["fx"]), fy=float(c["fy"]),
                  cx=float(c["cx"]), cy=float(c["cy"]),
                  pixel_area=float(c["pixel_area"]))


def medium_from_config(config: dict) -> Medium:
    m = config["medium"]
    return Medium.from_coefficients(float(m["absorption"]),
                                    float(m["scattering"]))


def lights_from_config(config: dict) -> list[LightSource]:
    lights = [LightSource(position=np.asarray(li["position"], dtype=float),
                          intensity=float(li["intensity"]))
              for li in config["lights"]]
    if not lights:
        raise ConfigError("at least one light is required")
    return lights


def pipeline_params_from_config(config: dict) -> PipelineParams:
    p, k, s = config["pipeline"], config["kernel"], config["solver"]
    init_depth = p["init_depth"]
    return PipelineParams(
        kernel_support=int(k["support"]),
        solver_tol=float(s["tol"]), solver_max_iter=int(s["max_iter"]),
        max_iterations=int(p["max_iterations"]),
        convergence_deg=float(p["convergence_deg"]),
        init_depth=None if init_depth is None else float(init_depth),
        working_distance=float(p["working_distance"]),
        condition_threshold=float(p["condition_threshold"]))
