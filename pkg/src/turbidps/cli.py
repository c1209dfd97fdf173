"""Command-line front end.

Subcommands: ``make-tables`` (build and save the lookup tables),
``render`` (synthesize image stacks from a scene recipe), ``reconstruct``
(run the inverse pipeline on rendered stacks via their manifest),
``evaluate`` (angular error between two normal maps), and ``demo-sphere``
(end-to-end synthetic run emitting the per-iteration error table and
report figures).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

log = logging.getLogger("turbidps")

EXIT_MISSING_FILE = 3
EXIT_BAD_CONFIG = 4
EXIT_STAGE_FAILURE = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turbidps",
        description="Photometric stereo in scattering media")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS thread count (best effort)")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML run config")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--tables", default=None,
                        help="table file to load, or to create if absent")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config RNG seed")
    common.add_argument("--dump-stages", action="store_true",
                        help="write intermediate stacks as PFM")

    sub.add_parser("make-tables", parents=[common],
                   help="build and save the F/G lookup tables")
    sub.add_parser("render", parents=[common],
                   help="synthesize stacks from the scene recipe")
    p_rec = sub.add_parser("reconstruct", parents=[common],
                           help="run the inverse pipeline on a manifest")
    p_rec.add_argument("manifest", help="manifest written by 'render'")
    p_eval = sub.add_parser("evaluate", parents=[common],
                            help="angular error between two normal maps")
    p_eval.add_argument("estimated", help="estimated normals (PFM)")
    p_eval.add_argument("reference", help="reference normals (PFM)")
    p_eval.add_argument("--mask", default=None, help="mask image (PFM)")
    sub.add_parser("demo-sphere", parents=[common],
                   help="end-to-end synthetic sphere run with metrics")
    return parser


def _load_or_build_tables(config, tables_path, out_dir):
    from . import tables as T
    path = tables_path or os.path.join(out_dir, "tables.bin")
    if os.path.exists(path):
        log.info("loading tables from %s", path)
        return T.load_tables(path)
    tc = config["tables"]
    log.info("building tables (F %dx%d, G %dx%d) -> %s",
             tc["f_u_samples"], tc["f_v_samples"],
             tc["g_t_samples"], tc["g_mu_samples"], path)
    table_f = T.build_table_f(int(tc["f_u_samples"]), int(tc["f_v_samples"]),
                              float(tc["f_u_max"]))
    table_g = T.build_table_g(int(tc["g_t_samples"]), int(tc["g_mu_samples"]),
                              table_f)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    T.save_tables(path, table_f, table_g)
    return table_f, table_g


def _scene_from_recipe(config, camera):
    from .errors import ConfigError
    from .scene import make_sphere_scene
    recipe = config["scene"]
    if recipe["kind"] != "sphere":
        raise ConfigError(f"unknown scene kind '{recipe['kind']}'")
    return make_sphere_scene(camera, recipe["center"],
                             float(recipe["radius"]),
                             float(recipe["albedo"]))


def _write_metrics(path, metrics, final_error=None, oracle_error=None):
    def fmt(x):
        import numpy as np
        return "" if x is None or not np.isfinite(x) else format(x, ".9e")

    lines = ["iteration,angular_change_deg,error_vs_gt_deg,"
             "solver_iterations,clamped_negative"]
    for m in metrics:
        lines.append(f"{m.iteration},{fmt(m.angular_change_deg)},"
                     f"{fmt(m.error_vs_gt_deg)},{m.solver_iterations},"
                     f"{m.clamped_negative}")
    if final_error is not None:
        lines.append(f"final,,{fmt(final_error)},,")
    if oracle_error is not None:
        lines.append(f"gt_oracle,,{fmt(oracle_error)},,")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_make_tables(args, config):
    out = args.out
    os.makedirs(out, exist_ok=True)
    _load_or_build_tables(config, args.tables, out)
    return 0


def _render_stacks(config, camera, medium, lights, table_f, table_g):
    from .render import render_stack
    scene = _scene_from_recipe(config, camera)
    d_max = float(config["scene"]["d_max"])
    observed, no_object = render_stack(
        scene, lights, medium, camera, table_f, table_g, d_max,
        noise_std=float(config["io"]["noise_std"]),
        seed=int(config["io"]["seed"]))
    return scene, observed, no_object, d_max


def _cmd_render(args, config):
    import yaml
    from .config import (camera_from_config, lights_from_config,
                         medium_from_config)
    from .pfm import write_pfm
    out = args.out
    os.makedirs(out, exist_ok=True)
    camera = camera_from_config(config)
    medium = medium_from_config(config)
    lights = lights_from_config(config)
    table_f, table_g = _load_or_build_tables(config, args.tables, out)
    scene, observed, no_object, d_max = _render_stacks(
        config, camera, medium, lights, table_f, table_g)

    image_names, noobj_names = [], []
    for i in range(observed.n_lights):
        image_names.append(f"light_{i:02d}.pfm")
        noobj_names.append(f"no_object_{i:02d}.pfm")
        write_pfm(os.path.join(out, image_names[-1]), observed.images[i])
        write_pfm(os.path.join(out, noobj_names[-1]), no_object.images[i])
    write_pfm(os.path.join(out, "mask.pfm"),
              scene.mask.astype("f4"))
    write_pfm(os.path.join(out, "gt_normals.pfm"), scene.normals)
    write_pfm(os.path.join(out, "gt_depth.pfm"), scene.depth)
    manifest = {
        "images": image_names, "no_object_images": noobj_names,
        "mask": "mask.pfm", "gt_normals": "gt_normals.pfm",
        "gt_depth": "gt_depth.pfm",
        "lights": [{"position": [float(v) for v in li.position],
                    "intensity": float(li.intensity)}
                   for li in lights],
        "medium": {"absorption": medium.absorption,
                   "scattering": medium.scattering},
        "camera": dict(config["camera"]), "d_max": d_max,
    }
    with open(os.path.join(out, "manifest.yaml"), "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)
    log.info("rendered %d lights to %s", observed.n_lights, out)
    return 0


def _load_manifest(path):
    import numpy as np
    import yaml
    from .pfm import read_pfm
    from .scene import ImageStack, LightSource, Medium, Camera
    with open(path) as fh:
        manifest = yaml.safe_load(fh)
    base = os.path.dirname(os.path.abspath(path))
    rel = lambda name: os.path.join(base, name)
    lights = [LightSource(position=np.asarray(li["position"], dtype=float),
                          intensity=float(li["intensity"]))
              for li in manifest["lights"]]
    mask = read_pfm(rel(manifest["mask"])) > 0.5
    observed = ImageStack(
        images=np.stack([read_pfm(rel(p)) for p in manifest["images"]]),
        lights=lights, mask=mask)
    no_object = ImageStack(
        images=np.stack([read_pfm(rel(p))
                         for p in manifest["no_object_images"]]),
        lights=lights, mask=mask)
    cam = manifest["camera"]
    camera = Camera(width=int(cam["width"]), height=int(cam["height"]),
                    fx=float(cam["fx"]), fy=float(cam["fy"]),
                    cx=float(cam["cx"]), cy=float(cam["cy"]),
                    pixel_area=float(cam["pixel_area"]))
    medium = Medium.from_coefficients(float(manifest["medium"]["absorption"]),
                                      float(manifest["medium"]["scattering"]))
    gt = None
    if "gt_normals" in manifest and os.path.exists(rel(manifest["gt_normals"])):
        from .scene import Scene
        normals = read_pfm(rel(manifest["gt_normals"])).astype(float)
        depth = read_pfm(rel(manifest["gt_depth"])).astype(float)
        # renormalize against float32 storage rounding
        nrm = np.linalg.norm(normals, axis=-1)
        normals[mask] /= nrm[mask][..., None]
        gt = Scene(depth=depth, normals=normals,
                   albedo=np.where(mask, 1.0, 0.0), mask=mask)
    return observed, no_object, mask, camera, medium, lights, gt


def _run_reconstruction(args, config, observed, no_object, mask, camera,
                        medium, lights, gt_scene, out):
    from . import figures
    from .config import pipeline_params_from_config
    from .pfm import write_pfm
    from .pipeline import gt_oracle_error, run_pipeline, angular_error_map
    table_f, table_g = _load_or_build_tables(config, args.tables, out)
    params = pipeline_params_from_config(config)
    result = run_pipeline(observed, no_object, mask, camera, medium, lights,
                          table_f, table_g, params, gt_scene=gt_scene)
    final_error = oracle = None
    if gt_scene is not None:
        final_error = result.metrics[-1].error_vs_gt_deg
        oracle = gt_oracle_error(observed, no_object, gt_scene, camera,
                                 medium, lights, table_f, table_g, params)
        log.info("final error %.4f deg, GT-oracle %.4f deg",
                 final_error, oracle)
    _write_metrics(os.path.join(out, "metrics.csv"), result.metrics,
                   final_error, oracle)
    with open(os.path.join(out, "run.log"), "w") as fh:
        for m in result.metrics:
            fh.write(f"iteration {m.iteration}: {m.wall_time_s:.2f}s, "
                     f"{m.solver_iterations} solver iterations\n")
        fh.write(f"converged: {result.converged}\n")
    write_pfm(os.path.join(out, "normals.pfm"), result.normals)
    write_pfm(os.path.join(out, "depth.pfm"), result.depth)
    write_pfm(os.path.join(out, "albedo.pfm"), result.albedo)
    if args.dump_stages and result.ls_stack is not None:
        for i in range(result.ls_stack.n_lights):
            write_pfm(os.path.join(out, f"stage_ls_{i:02d}.pfm"),
                      result.ls_stack.images[i])
    figures.save_normal_map(result.normals, os.path.join(out, "normals.png"),
                            "recovered normals", mask)
    figures.save_heatmap(result.depth, os.path.join(out, "depth.png"),
                         "recovered depth", mask, unit="mm")
    if gt_scene is not None:
        figures.save_error_curve(result.metrics,
                                 os.path.join(out, "error_curve.png"), oracle)
        figures.save_normal_map(gt_scene.normals,
                                os.path.join(out, "gt_normals.png"),
                                "ground-truth normals", mask)
        err_map = angular_error_map(result.normals, gt_scene.normals, mask)
        figures.save_heatmap(err_map, os.path.join(out, "error_map.png"),
                             "angular error", mask, cmap="inferno",
                             unit="deg")
    return result, final_error, oracle


def _cmd_reconstruct(args, config):
    out = args.out
    os.makedirs(out, exist_ok=True)
    loaded = _load_manifest(args.manifest)
    observed, no_object, mask, camera, medium, lights, gt = loaded
    _run_reconstruction(args, config, observed, no_object, mask, camera,
                        medium, lights, gt, out)
    return 0


def _cmd_evaluate(args, config):
    import numpy as np
    from .pfm import read_pfm
    from .pipeline import mean_angular_error
    est = read_pfm(args.estimated).astype(float)
    ref = read_pfm(args.reference).astype(float)
    if args.mask:
        mask = read_pfm(args.mask) > 0.5
    else:
        mask = np.linalg.norm(ref, axis=-1) > 0.5
    for arr in (est, ref):
        nrm = np.linalg.norm(arr, axis=-1)
        arr[mask] /= nrm[mask][..., None]
    err = mean_angular_error(est, ref, mask)
    print(f"Mean angular error: {err:.2f}°")
    return 0


def _cmd_demo_sphere(args, config):
    import numpy as np
    from . import figures
    from .config import (camera_from_config, lights_from_config,
                         medium_from_config)
    out = args.out
    os.makedirs(out, exist_ok=True)
    camera = camera_from_config(config)
    medium = medium_from_config(config)
    lights = lights_from_config(config)
    table_f, table_g = _load_or_build_tables(config, args.tables, out)
    scene, observed, no_object, _ = _render_stacks(
        config, camera, medium, lights, table_f, table_g)
    figures.save_image_grid(
        list(observed.images), [f"light {i}" for i in range(observed.n_lights)],
        os.path.join(out, "observed_stack.png"), "observed images")
    result, final_error, oracle = _run_reconstruction(
        args, config, observed, no_object, scene.mask, camera, medium,
        lights, scene, out)
    print(f"iterations: {len(result.metrics)}, converged: {result.converged}")
    for m in result.metrics:
        change = "" if not np.isfinite(m.angular_change_deg) \
            else f", change {m.angular_change_deg:.3f}°"
        print(f"  iteration {m.iteration}: error {m.error_vs_gt_deg:.3f}°"
              f"{change}")
    print(f"final error: {final_error:.3f}°  (GT oracle {oracle:.3f}°)")
    return 0


def cli_main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    from .config import default_config, load_config
    from .errors import ConfigError, PipelineError, SolverError
    from .pfm import PfmError
    from .tables import TableFormatError
    try:
        config = load_config(args.config) if getattr(args, "config", None) \
            else default_config()
        if getattr(args, "seed", None) is not None:
            config["io"]["seed"] = args.seed
        handler = {
            "make-tables": _cmd_make_tables,
            "render": _cmd_render,
            "reconstruct": _cmd_reconstruct,
            "evaluate": _cmd_evaluate,
            "demo-sphere": _cmd_demo_sphere,
        }[args.command]
        return handler(args, config)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ConfigError, TableFormatError, PfmError) as exc:
        print(f"error: bad input: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (PipelineError, SolverError) as exc:
        print(f"error: stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
