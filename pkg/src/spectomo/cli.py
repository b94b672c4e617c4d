"""Command-line driver for the simulate / reconstruct / evaluate pipeline.

Commands operate on a run directory: `simulate` fills it with measurement
artifacts, `reconstruct` adds per-method outputs, `evaluate` scores them
against the ground truth, `sweep-rho` compares solver acceleration
settings on the same data, and `pipeline` chains all four.  Every command
is reproducible: the same config and seed produce byte-identical numeric
outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data_io, evaluation, phantoms, solvers, spectral
from .data_io import RunConfig, load_config, parse_config
from .spectral import (ChannelBinning, NoiseConfig, SourceSpectrum,
                       SpectralDictionary)
from .tomo import Grid2D, ParallelGeometry, TomoOperator

PRESETS = ("full", "sparse-angle", "limited-view", "sparse-channel")
DEFAULT_RHO_SWEEP = (0.0, 0.01, 0.1)


def apply_preset(raw: dict, name: str) -> dict:
    """Rewrite a raw config dict to one of the named measurement setups."""
    raw = json.loads(json.dumps(raw))            # deep copy, JSON-safe
    noise = raw.setdefault("noise", {})
    noise.setdefault("poisson", True)
    raw.pop("channel_selection", None)
    if name == "full":
        raw["geometry"]["angles"] = {"count": 180, "start": 0.0, "stop": np.pi}
    elif name == "sparse-angle":
        raw["geometry"]["angles"] = {"count": 10, "start": 0.0, "stop": np.pi}
    elif name == "limited-view":
        raw["geometry"]["angles"] = {"count": 60, "start": 0.0,
                                     "stop": 2.0 * np.pi / 3.0}
    elif name == "sparse-channel":
        raw["geometry"]["angles"] = {"count": 60, "start": 0.0, "stop": np.pi}
        raw["channel_selection"] = {"count": "dictionary"}
    elif name.startswith("noisy-"):
        try:
            percent = float(name.split("-", 1)[1])
        except ValueError:
            raise ValueError(f"bad noise preset {name!r}; use noisy-<percent>")
        raw["geometry"]["angles"] = {"count": 180, "start": 0.0, "stop": np.pi}
        noise["gaussian_percent"] = percent
    else:
        raise ValueError(f"unknown preset {name!r}; choose from "
                         f"{PRESETS + ('noisy-<p>',)}")
    return raw


# ---------------------------------------------------------------------------
# building blocks shared by the commands
# ---------------------------------------------------------------------------

def build_phantom(cfg: RunConfig, grid: Grid2D) -> phantoms.MaterialMap:
    kind = cfg.phantom["kind"]
    n = grid.nx
    if kind == "shepp_logan":
        return phantoms.shepp_logan(n, int(cfg.phantom["materials"]), grid=grid)
    if kind == "disks":
        return phantoms.disks(n, int(cfg.phantom["count"]), grid=grid)
    if kind == "mixed_disks":
        return phantoms.mixed_disks(n, int(cfg.phantom["materials"]), grid=grid)
    raise ValueError(f"unknown phantom kind {kind!r}")


def build_dictionary(cfg: RunConfig, binning: ChannelBinning) -> SpectralDictionary:
    spec = cfg.dictionary
    if spec["type"] == "synthetic":
        return spectral.kedge_dictionary(
            int(spec["materials"]), binning,
            peak=float(spec.get("peak", 0.1)),
            edge_jump=float(spec.get("edge_jump", 6.0)))
    if spec["type"] == "csv":
        table = data_io.load_attenuation_csv(spec["path"])
        return spectral.bin_attenuation(table, binning)
    raise ValueError(f"unknown dictionary type {spec['type']!r}")


def build_source(cfg: RunConfig, binning: ChannelBinning) -> SourceSpectrum:
    spec = cfg.source
    if spec["type"] == "flat":
        return SourceSpectrum.flat(binning.n_channels,
                                   float(spec.get("photons", 1e4)))
    if spec["type"] == "csv":
        return data_io.source_from_csv(spec["path"], binning,
                                       scale=float(spec.get("scale", 1.0)))
    raise ValueError(f"unknown source type {spec['type']!r}")


def material_rows(cfg: RunConfig, n_dict: int) -> np.ndarray:
    m = cfg.n_phantom_materials()
    if m > n_dict:
        raise ValueError(f"phantom has {m} materials but the dictionary "
                         f"only {n_dict} entries")
    if cfg.material_rows is not None:
        rows = np.asarray(cfg.material_rows, dtype=int)
        if rows.size != m or len(set(rows.tolist())) != m:
            raise ValueError("material_rows must list one distinct dictionary "
                             "row per phantom material")
        if rows.min() < 0 or rows.max() >= n_dict:
            raise ValueError("material_rows out of range")
        return rows
    return np.round(np.linspace(0, n_dict - 1, m)).astype(int)


def _operator_from_manifest(manifest: dict) -> TomoOperator:
    g = manifest["grid"]
    grid = Grid2D(g["nx"], g["ny"], g["pixel_size"])
    geom = ParallelGeometry(angles=np.asarray(manifest["angles"]),
                            n_det=manifest["n_det"],
                            det_spacing=manifest["det_spacing"])
    return TomoOperator(grid, geom)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out_dir: Path) -> dict:
    """Render the phantom at twice the target resolution, simulate counts,
    log-correct, and write all artifacts the later stages need."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid()
    geom = cfg.parallel_geometry()
    binning = cfg.channel_binning()
    dictionary = build_dictionary(cfg, binning)
    source = build_source(cfg, binning)
    rows = material_rows(cfg, dictionary.n_materials)
    T = dictionary.T
    F_true = T[rows]

    phantom_lo = build_phantom(cfg, grid)
    phantom_hi = build_phantom(cfg, grid.refine(2))
    noise = NoiseConfig(poisson=bool(cfg.noise.get("poisson", False)),
                        gaussian_percent=float(cfg.noise.get("gaussian_percent", 0.0)))
    counts = spectral.simulate_counts(phantom_hi, grid, geom, F_true, source,
                                      noise=noise, seed=cfg.seed)
    Y = spectral.log_correct(counts, source).Y
    if noise.gaussian_percent > 0:
        Y = spectral.add_gaussian_noise(Y, noise.gaussian_percent,
                                        seed=cfg.seed + 1)

    selection = cfg.raw.get("channel_selection")
    selected = None
    centers = binning.centers
    intensity = source.intensity
    if selection is not None:
        count = selection.get("count")
        k = dictionary.n_materials if count == "dictionary" else int(count)
        selected = spectral.select_channels(dictionary, k)
        Y = Y[:, selected]
        T = T[:, selected]
        F_true = F_true[:, selected]
        centers = centers[selected]
        intensity = intensity[selected]

    files = {"sinogram": "sinogram.adjm", "ground_truth": "ground_truth.adjm",
             "spectra_true": "spectra_true.adjm", "dictionary": "dictionary.adjm"}
    data_io.save_matrix(out_dir / files["sinogram"], Y)
    data_io.save_matrix(out_dir / files["ground_truth"], phantom_lo.A)
    data_io.save_matrix(out_dir / files["spectra_true"], F_true)
    data_io.save_matrix(out_dir / files["dictionary"], T)

    manifest = {
        "config_version": data_io.CONFIG_VERSION,
        "config": cfg.raw,
        "seed": cfg.seed,
        "grid": {"nx": grid.nx, "ny": grid.ny, "pixel_size": grid.pixel_size},
        "angles": geom.angles.tolist(),
        "n_det": geom.n_det,
        "det_spacing": geom.det_spacing,
        "channel_centers": centers.tolist(),
        "source_intensity": intensity.tolist(),
        "selected_channels": None if selected is None else selected.tolist(),
        "n_materials": int(cfg.n_phantom_materials()),
        "material_rows": rows.tolist(),
        "material_labels": list(phantom_lo.labels),
        "dictionary_names": list(dictionary.names),
        "files": files,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def cmd_reconstruct(out_dir: Path, method: str | None = None,
                    method_params: dict | None = None,
                    seed: int | None = None) -> Path:
    """Run one solver on a simulated run directory; writes maps, spectra,
    (for adjust) coefficients, and an iteration history CSV."""
    out_dir = Path(out_dir)
    manifest = _load_manifest(out_dir)
    cfg = parse_config(manifest["config"])
    method = method or cfg.method
    if method not in data_io.METHODS:
        raise ValueError(f"unknown method {method!r}")
    # configured parameters only apply to the configured method
    params = dict(cfg.method_params) if method == cfg.method else {}
    if method_params:
        params.update(method_params)
    if seed is None:
        seed = manifest["seed"]

    op = _operator_from_manifest(manifest)
    Y = data_io.load_matrix(out_dir / manifest["files"]["sinogram"])
    T = data_io.load_matrix(out_dir / manifest["files"]["dictionary"])
    M = manifest["n_materials"]

    method_dir = out_dir / method
    method_dir.mkdir(exist_ok=True)
    history_path = method_dir / "history.csv"
    t0 = time.perf_counter()
    with open(history_path, "w", encoding="utf-8", newline="\n") as hist:
        hist.write("iter,objective,eps_abs,eps_rel,alpha,beta\n")

        fmt = data_io._fmt

        def log_record(_k, _A, _X, record):
            hist.write(f"{record.iteration},{fmt(record.objective)},"
                       f"{fmt(record.eps_abs)},{fmt(record.eps_rel)},"
                       f"{fmt(record.alpha)},{fmt(record.beta)}\n")
            hist.flush()

        if method == "adjust":
            config = solvers.AapmConfig(seed=seed, callback=log_record,
                                        **_known(params, ("rho", "max_iter",
                                                          "eps_abs_tol",
                                                          "eps_rel_tol",
                                                          "random_init", "step0")))
            result = solvers.aapm(op, T, Y, M, config)
            data_io.save_matrix(method_dir / "coeffs.adjm", result.R)
            A, F = result.A, result.F
        elif method == "cjoint":
            config = solvers.CjointConfig(callback=log_record,
                                          **_known(params, ("max_iter", "tol",
                                                            "step0")))
            result = solvers.cjoint(op, Y, M, config)
            A, F = result.A, result.F
        else:
            config = solvers.TwoStepConfig(seed=seed,
                                           **_known(params,
                                                    ("tikhonov_lambda",
                                                     "cg_max_iter", "cg_tol",
                                                     "nmf_iters",
                                                     "nmf_restarts")))
            runner = solvers.ru if method == "ru" else solvers.ur
            result = runner(op, Y, M, config)
            A, F = result.A, result.F
    elapsed = time.perf_counter() - t0

    data_io.save_matrix(method_dir / "maps.adjm", A)
    data_io.save_matrix(method_dir / "spectra.adjm", F)
    with open(method_dir / "reconstruct_meta.json", "w", encoding="utf-8") as fh:
        json.dump({"method": method, "seconds": elapsed, "params": params,
                   "seed": seed}, fh, indent=2)
    return method_dir


def cmd_evaluate(out_dir: Path, method: str | None = None) -> dict:
    """Match reconstructed maps to the ground truth and score them; writes
    the results CSV, per-material images, recovered spectra, and a report."""
    out_dir = Path(out_dir)
    manifest = _load_manifest(out_dir)
    cfg = parse_config(manifest["config"])
    method = method or cfg.method
    method_dir = out_dir / method
    if not (method_dir / "maps.adjm").exists():
        raise FileNotFoundError(f"no reconstruction for {method!r} in {out_dir}")

    t0 = time.perf_counter()
    A_rec = data_io.load_matrix(method_dir / "maps.adjm")
    F_rec = data_io.load_matrix(method_dir / "spectra.adjm")
    A_gt = data_io.load_matrix(out_dir / manifest["files"]["ground_truth"])
    match = evaluation.greedy_match(A_rec, A_gt)

    results_path = method_dir / "results.csv"
    data_io.write_results_csv(results_path, method, match)

    g = manifest["grid"]
    image_paths = []
    for m in range(A_rec.shape[1]):
        img = A_rec[:, m].reshape(g["ny"], g["nx"])
        vmax = max(1.0, float(img.max()))
        path = method_dir / f"map_{m:02d}.pgm"
        data_io.export_pgm16(path, img, 0.0, vmax)
        image_paths.append(str(path))

    centers = manifest["channel_centers"]
    spectra_path = method_dir / "spectra_recovered.csv"
    with open(spectra_path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ",".join(f"material_{m}" for m in range(F_rec.shape[0]))
        fh.write(f"channel,energy_keV,{cols}\n")
        for c in range(F_rec.shape[1]):
            vals = ",".join(format(v, ".17g") for v in F_rec[:, c])
            fh.write(f"{c},{format(centers[c], '.17g')},{vals}\n")

    meta_path = method_dir / "reconstruct_meta.json"
    solve_seconds = None
    if meta_path.exists():
        solve_seconds = json.loads(meta_path.read_text())["seconds"]

    def cap(v):
        return evaluation.PSNR_SATURATION_DB if np.isinf(v) else v

    report = {
        "config": manifest["config"],
        "method": method,
        "pairs": [list(p) for p in match.pairs],
        "mse": match.mse_values,
        "psnr": [cap(v) for v in match.psnr_values],
        "ssim": match.ssim_values,
        "mse_avg": match.mse_avg,
        "psnr_avg": cap(match.psnr_avg),
        "ssim_avg": match.ssim_avg,
        "solve_seconds": solve_seconds,
        "evaluate_seconds": time.perf_counter() - t0,
        "artifacts": {
            "results_csv": str(results_path),
            "spectra_csv": str(spectra_path),
            "images": image_paths,
            "history_csv": str(method_dir / "history.csv"),
        },
    }
    with open(method_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    return report


def cmd_sweep_rho(out_dir: Path, rho_list=DEFAULT_RHO_SWEEP,
                  max_iter: int | None = None) -> list[Path]:
    """Run the dictionary solver once per feedback weight on the same data;
    one history CSV per value, directly comparable across the sweep."""
    out_dir = Path(out_dir)
    manifest = _load_manifest(out_dir)
    cfg = parse_config(manifest["config"])
    op = _operator_from_manifest(manifest)
    Y = data_io.load_matrix(out_dir / manifest["files"]["sinogram"])
    T = data_io.load_matrix(out_dir / manifest["files"]["dictionary"])
    M = manifest["n_materials"]
    params = {k: v for k, v in cfg.method_params.items()
              if k in ("max_iter", "eps_abs_tol", "eps_rel_tol", "step0",
                       "random_init")} if cfg.method == "adjust" else {}
    if max_iter is not None:
        params["max_iter"] = max_iter

    sweep_dir = out_dir / "sweep"
    sweep_dir.mkdir(exist_ok=True)
    paths = []
    for rho in rho_list:
        config = solvers.AapmConfig(rho=rho, seed=manifest["seed"], **params)
        result = solvers.aapm(op, T, Y, M, config)
        path = sweep_dir / f"history_rho_{rho:g}.csv"
        data_io.write_history_csv(path, result.history)
        paths.append(path)
    return paths


def cmd_pipeline(cfg: RunConfig, out_dir: Path,
                 rho_list=DEFAULT_RHO_SWEEP) -> dict:
    """simulate -> reconstruct -> evaluate -> sweep-rho, in sequence."""
    cmd_simulate(cfg, out_dir)
    cmd_reconstruct(out_dir, method=cfg.method)
    report = cmd_evaluate(out_dir, method=cfg.method)
    cmd_sweep_rho(out_dir, rho_list=rho_list)
    return report


def _known(params: dict, keys) -> dict:
    unknown = set(params) - set(keys)
    if unknown:
        raise ValueError(f"unknown method parameters: {sorted(unknown)}; "
                         f"supported: {sorted(keys)}")
    return {k: params[k] for k in keys if k in params}


def _load_manifest(out_dir: Path) -> dict:
    path = Path(out_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(
            f"{path} not found; run `spectomo simulate` first")
    return json.loads(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a JSON run configuration")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", help="run directory (overrides config output_dir)")
    parser.add_argument("--method", default=None,
                        help="solver: adjust, cjoint, ru, or ur")
    parser.add_argument("--preset", default=None,
                        help="measurement preset: full, sparse-angle, "
                             "limited-view, sparse-channel, or noisy-<percent>")


def _resolve_config(args) -> tuple[RunConfig, Path]:
    if not args.config:
        raise SystemExit("error: --config is required for this command")
    cfg_path = Path(args.config)
    raw = json.loads(cfg_path.read_text(encoding="utf-8"))
    if args.preset:
        raw = apply_preset(raw, args.preset)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.method:
        raw["method"] = args.method
    cfg = parse_config(raw, base_dir=cfg_path.parent)
    out_dir = Path(args.out) if args.out else Path(cfg.output_dir)
    return cfg, out_dir


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spectomo",
        description="Simulate multi-energy tomographic measurements and "
                    "reconstruct per-material maps and spectra.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate measurement artifacts")
    _add_common(p)

    p = sub.add_parser("reconstruct", help="run a solver on a simulated run")
    _add_common(p)

    p = sub.add_parser("evaluate", help="score a reconstruction against truth")
    _add_common(p)

    p = sub.add_parser("sweep-rho", help="compare acceleration settings")
    _add_common(p)
    p.add_argument("--rhos", default=",".join(str(r) for r in DEFAULT_RHO_SWEEP),
                   help="comma-separated feedback weights")
    p.add_argument("--max-iter", type=int, default=None,
                   help="iteration budget for each sweep run")

    p = sub.add_parser("pipeline", help="simulate, reconstruct, evaluate, "
                                        "and sweep-rho in sequence")
    _add_common(p)
    p.add_argument("--rhos", default=",".join(str(r) for r in DEFAULT_RHO_SWEEP))

    args = parser.parse_args(argv)

    if args.command == "simulate":
        cfg, out_dir = _resolve_config(args)
        manifest = cmd_simulate(cfg, out_dir)
        print(f"simulated {manifest['files']['sinogram']} and ground truth "
              f"in {out_dir}")
    elif args.command == "reconstruct":
        out_dir = _required_out(args)
        method_dir = cmd_reconstruct(out_dir, method=args.method,
                                     seed=args.seed)
        print(f"reconstruction written to {method_dir}")
    elif args.command == "evaluate":
        out_dir = _required_out(args)
        report = cmd_evaluate(out_dir, method=args.method)
        print(f"{report['method']}: mse_avg={report['mse_avg']:.6g} "
              f"psnr_avg={report['psnr_avg']:.4g} "
              f"ssim_avg={report['ssim_avg']:.6g}")
    elif args.command == "sweep-rho":
        out_dir = _required_out(args)
        rhos = [float(r) for r in args.rhos.split(",") if r != ""]
        paths = cmd_sweep_rho(out_dir, rho_list=rhos, max_iter=args.max_iter)
        for path in paths:
            print(f"wrote {path}")
    elif args.command == "pipeline":
        cfg, out_dir = _resolve_config(args)
        rhos = [float(r) for r in args.rhos.split(",") if r != ""]
        report = cmd_pipeline(cfg, out_dir, rho_list=rhos)
        print(f"pipeline finished: ssim_avg={report['ssim_avg']:.6g} "
              f"({out_dir})")
    return 0


def _required_out(args) -> Path:
    if args.out:
        return Path(args.out)
    if args.config:
        cfg = load_config(args.config)
        return Path(cfg.output_dir)
    raise SystemExit("error: --out (or --config with output_dir) is required")


if __name__ == "__main__":
    sys.exit(main())
