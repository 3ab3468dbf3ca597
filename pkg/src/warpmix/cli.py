"""Batch command-line interface.

Subcommands: fit, simulate, benchmark, predict. Configuration is a plain
key=value text file (unknown keys are rejected); --seed and --output
override their config counterparts. Exit codes: 0 success, 1 usage
error, 2 IO/format error, 3 numerical failure.
"""

import argparse
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    EstimationError,
    ImageFormatError,
    NotPositiveDefiniteError,
    WarpmixError,
)
from .gmrf import WarpPrior
from .grid import Image
from .imgio import read_image, write_field_f32, write_image
from .inference import (
    FitConfig,
    fit,
    predict_intensity,
    predict_warp,
    reconstruct,
)
from .likelihood import VarianceParams, intensity_factor
from .simbench import METHODS, SimSpec, benchmark, simulate_dataset, write_benchmark_csv
from .warp import AnchorGrid, DisplacementGrid, resample, save_displacements_csv

_CONFIG_KEYS = {
    "warp_grid",
    "outer_iters",
    "inner_iters",
    "init_tau2",
    "init_gamma2",
    "seed",
    "mask_path",
    "output_dir",
    # simulation / benchmark keys
    "n",
    "sigma2",
    "sigma2_tau2",
    "sigma2_gamma2",
    "repetitions",
    "methods",
}

_DEFAULTS = {
    "warp_grid": "4x4",
    "outer_iters": "5",
    "inner_iters": "3",
    "init_tau2": "1.0",
    "init_gamma2": "0.1",
    "seed": "0",
    "mask_path": "",
    "output_dir": "out",
    "n": "10",
    "sigma2": "0.001",
    "sigma2_tau2": "0.1",
    "sigma2_gamma2": "0.01",
    "repetitions": "1",
    "methods": ",".join(METHODS),
}


def _parse_kv_file(path, allowed: set[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in allowed:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


@dataclass
class RunConfig:
    raw: dict[str, str]

    def get(self, key: str) -> str:
        return self.raw.get(key, _DEFAULTS[key])

    def get_int(self, key: str) -> int:
        try:
            return int(self.get(key))
        except ValueError:
            raise ConfigError(f"config key {key} must be an integer") from None

    def get_float(self, key: str) -> float:
        try:
            v = float(self.get(key))
        except ValueError:
            raise ConfigError(f"config key {key} must be a number") from None
        if not math.isfinite(v):
            raise ConfigError(f"config key {key} must be finite")
        return v

    def warp_grid(self) -> tuple[int, int]:
        text = self.get("warp_grid")
        parts = text.lower().split("x")
        if len(parts) != 2:
            raise ConfigError(f"warp_grid must look like '5x5', got {text!r}")
        try:
            mw1, mw2 = int(parts[0]), int(parts[1])
        except ValueError:
            raise ConfigError(f"warp_grid must look like '5x5', got {text!r}") from None
        return mw1, mw2


def _load_run_config(args) -> RunConfig:
    raw = _parse_kv_file(args.config, _CONFIG_KEYS) if args.config else {}
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    return RunConfig(raw)


def _fit_config(cfg: RunConfig, threads: int) -> FitConfig:
    return FitConfig(
        anchor_grid=cfg.warp_grid(),
        outer_iters=cfg.get_int("outer_iters"),
        inner_iters=cfg.get_int("inner_iters"),
        init_tau2=cfg.get_float("init_tau2"),
        init_gamma2=cfg.get_float("init_gamma2"),
        threads=threads,
    )


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.output) if args.output else Path(cfg.get("output_dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _collect_inputs(paths: list[str]) -> list[Path]:
    files: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            found = sorted(
                f
                for f in path.iterdir()
                if f.suffix.lower() in (".pgm", ".png") and f.is_file()
            )
            if not found:
                raise ImageFormatError(f"{path}: no .pgm/.png images found")
            files.extend(found)
        elif path.is_file():
            files.append(path)
        else:
            raise ImageFormatError(f"{path}: no such file or directory")
    return files


def _load_mask(cfg: RunConfig) -> Image | None:
    mask_path = cfg.get("mask_path")
    if not mask_path:
        return None
    mask = read_image(mask_path)
    return Image(mask.lattice, (mask.values >= 0.5).astype(np.float64))


def _write_params(path: Path, params: VarianceParams, nll_final: float) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"sigma2={params.sigma2!r}\n")
        fh.write(f"sigma2_tau2={params.sigma2_tau2!r}\n")
        fh.write(f"sigma2_gamma2={params.sigma2_gamma2!r}\n")
        fh.write(f"nll_final={nll_final!r}\n")


def cmd_fit(args) -> int:
    cfg = _load_run_config(args)
    files = _collect_inputs(args.input)
    if len(files) < 2:
        raise ImageFormatError("fit requires at least 2 input images")
    images = [read_image(f) for f in files]
    lat = images[0].lattice
    if any(y.lattice != lat for y in images):
        raise ImageFormatError("input images must all have the same size")
    config = _fit_config(cfg, args.threads)
    result = fit(images, config)
    out = _out_dir(args, cfg)

    write_image(result.template, out / "template.pgm")
    _write_params(out / "params.txt", result.params, result.nll_trace[-1])
    (out / "warps").mkdir(exist_ok=True)
    (out / "intensity").mkdir(exist_ok=True)
    (out / "reconstructions").mkdir(exist_ok=True)
    for i, f in enumerate(files):
        stem = f.stem
        save_displacements_csv(result.warps[i], out / "warps" / f"{stem}.csv")
        write_field_f32(result.intensities[i], out / "intensity" / f"{stem}.f32")
        write_image(reconstruct(result, i), out / "reconstructions" / f"{stem}.pgm")
    with open(out / "trace.csv", "w", newline="") as fh:
        fh.write("iter,nll\n")
        for i, v in enumerate(result.nll_trace, 1):
            fh.write(f"{i},{v!r}\n")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    template = read_image(args.input[0])
    n = cfg.get_int("n")
    if n < 0:
        raise ConfigError("n must be >= 0")
    sigma2 = cfg.get_float("sigma2")
    s2t2 = cfg.get_float("sigma2_tau2")
    s2g2 = cfg.get_float("sigma2_gamma2")
    params = _variances_from_scales(sigma2, s2t2, s2g2)
    mask = _load_mask(cfg)
    seed = cfg.get_int("seed")
    spec = SimSpec(
        template=template,
        n=n,
        params=params,
        anchor_grid=AnchorGrid(*cfg.warp_grid()),
        mask=mask,
        seed=seed,
    )
    images, warps, fields = simulate_dataset(spec)
    out = _out_dir(args, cfg)
    (out / "true_warps").mkdir(exist_ok=True)
    (out / "true_intensity").mkdir(exist_ok=True)
    for i in range(n):
        write_image(images[i], out / f"img_{i:03d}.pgm")
        save_displacements_csv(warps[i], out / "true_warps" / f"img_{i:03d}.csv")
        write_field_f32(fields[i], out / "true_intensity" / f"img_{i:03d}.f32")
    with open(out / "manifest.txt", "w", newline="") as fh:
        fh.write(f"template={args.input[0]}\n")
        fh.write(f"n={n}\n")
        fh.write(f"seed={seed}\n")
        fh.write(f"sigma2={sigma2!r}\n")
        fh.write(f"sigma2_tau2={s2t2!r}\n")
        fh.write(f"sigma2_gamma2={s2g2!r}\n")
        fh.write(f"warp_grid={cfg.get('warp_grid')}\n")
        fh.write(f"mask={cfg.get('mask_path')}\n")
    return 0


def _variances_from_scales(sigma2: float, s2t2: float, s2g2: float) -> VarianceParams:
    """Convert the reported scales (sigma2, sigma2*tau2, sigma2*gamma2)."""
    if sigma2 < 0 or s2t2 < 0 or s2g2 < 0:
        raise ConfigError("variance scales must be >= 0")
    if sigma2 == 0:
        return VarianceParams(0.0, 0.0, 0.0)
    return VarianceParams(sigma2, s2t2 / sigma2, s2g2 / sigma2)


def cmd_benchmark(args) -> int:
    cfg = _load_run_config(args)
    template = read_image(args.input[0])
    params = _variances_from_scales(
        cfg.get_float("sigma2"),
        cfg.get_float("sigma2_tau2"),
        cfg.get_float("sigma2_gamma2"),
    )
    methods = tuple(m.strip() for m in cfg.get("methods").split(",") if m.strip())
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"unknown benchmark methods: {sorted(unknown)}")
    spec = SimSpec(
        template=template,
        n=cfg.get_int("n"),
        params=params,
        anchor_grid=AnchorGrid(*cfg.warp_grid()),
        mask=_load_mask(cfg),
        seed=cfg.get_int("seed"),
    )
    rows = benchmark(
        spec, cfg.get_int("repetitions"), methods, _fit_config(cfg, args.threads)
    )
    out = _out_dir(args, cfg)
    write_benchmark_csv(rows, out / "bench.csv")
    reps = {r.rep for r in rows}
    failed_reps = {
        rep for rep in reps if all(r.error is not None for r in rows if r.rep == rep)
    }
    if reps and failed_reps == reps:
        print("benchmark: every repetition failed", file=sys.stderr)
        return 3
    return 0


def cmd_predict(args) -> int:
    cfg = _load_run_config(args)
    template = read_image(args.template)
    raw = _parse_kv_file(
        args.params, {"sigma2", "sigma2_tau2", "sigma2_gamma2", "nll_final"}
    )
    try:
        sigma2 = float(raw["sigma2"])
        s2t2 = float(raw["sigma2_tau2"])
        s2g2 = float(raw["sigma2_gamma2"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{args.params}: missing or malformed variance keys") from exc
    if sigma2 <= 0 or s2t2 <= 0 or s2g2 <= 0:
        raise ConfigError(f"{args.params}: variance scales must be positive")
    params = VarianceParams(sigma2, s2t2 / sigma2, s2g2 / sigma2)

    y = read_image(args.input[0])
    if y.lattice != template.lattice:
        raise ImageFormatError("image size does not match the template")
    grid = AnchorGrid(*cfg.warp_grid())
    f = intensity_factor(params.tau2, template.lattice)
    prior = WarpPrior(params.gamma2, grid)
    w_hat, _ = predict_warp(
        y, template, params, f, DisplacementGrid.zeros(grid), prior=prior
    )
    x_hat = predict_intensity(y, template, w_hat, f)
    recon = Image(
        template.lattice, resample(template, w_hat).values + x_hat.values
    )
    out = _out_dir(args, cfg)
    stem = Path(args.input[0]).stem
    save_displacements_csv(w_hat, out / f"{stem}_warp.csv")
    write_field_f32(x_hat, out / f"{stem}_intensity.f32")
    write_image(recon, out / f"{stem}_reconstruction.pgm")
    residual = float(np.abs(y.values - recon.values).max())
    print(f"residual_max_abs={residual!r}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warpmix",
        description="Joint modeling of warp and intensity variation in image stacks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, inputs="+"):
        p.add_argument("--input", nargs=inputs, required=True,
                       help="input image(s) or directory")
        p.add_argument("--config", help="key=value run configuration file")
        p.add_argument("--output", help="output directory (overrides config)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads (does not change results)")
        p.add_argument("--seed", type=int, help="seed (overrides config)")

    p_fit = sub.add_parser("fit", help="fit the model to an image stack")
    common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="simulate a dataset from a template")
    common(p_sim, inputs=1)
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("benchmark", help="simulate-and-fit comparison study")
    common(p_bench, inputs=1)
    p_bench.set_defaults(func=cmd_benchmark)

    p_pred = sub.add_parser("predict", help="predict effects for a new image")
    common(p_pred, inputs=1)
    p_pred.add_argument("--template", required=True, help="fitted template image")
    p_pred.add_argument("--params", required=True, help="fitted params.txt")
    p_pred.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; remap to the documented code 1
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ImageFormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except (NotPositiveDefiniteError, EstimationError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (WarpmixError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
