"""Command-line front end: ``ssnlos simulate | reconstruct | render | evaluate | sweep | selftest``.

Every command accepts ``--config FILE`` with ``key=value`` lines named after
its long flags (``bin-width=0.0025``).  Values given on the command line win
over the file, the file wins over built-in defaults, and each command that
writes an output directory stores the resolved settings as ``run.cfg``.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import images, metrics, scenes, solvers
from .lct import DEFAULT_POWER, LCTOperator
from .regularizers import WindowSpec
from .volume import (
    DirectionalAlbedoVolume,
    ScanGrid,
    TransientVolume,
    VolumeError,
    VolumeMeta,
    downsample_transient,
    read_volume,
    write_volume,
)

RUN_CONFIG = "run.cfg"
NOISE_PRESETS = {
    "exposure-high": "poisson:eta=300,gauss:sigma=1",
    "exposure-low": "poisson:eta=10,gauss:sigma=1",
}
# flags that do not influence any output byte
_UNRECORDED = {"config", "threads", "command", "func"}


class CliError(Exception):
    """Runtime failure reported as ``error: ...`` with exit status 1."""


# -- RunConfig -------------------------------------------------------------
class RunConfig(dict):
    """Flat ``key=value`` settings keyed by long flag names."""

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno} is not key=value: {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in cfg:
                raise ValueError(f"duplicate config key {key!r}")
            cfg[key] = value
        return cfg

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())


def _flag_name(action) -> str:
    longs = [s for s in action.option_strings if s.startswith("--")]
    return longs[0][2:] if longs else action.dest


def _config_defaults(parser: argparse.ArgumentParser, cfg: RunConfig) -> dict:
    actions = {_flag_name(a): a for a in parser._actions if a.option_strings}
    out = {}
    for key, text in cfg.items():
        action = actions.get(key)
        if action is None or action.dest in _UNRECORDED:
            parser.error(f"unknown config key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                parser.error(f"config key {key!r} expects true or false, got {text!r}")
            out[action.dest] = text.lower() in ("true", "1", "yes")
            continue
        try:
            value = action.type(text) if action.type else text
        except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
            parser.error(f"bad value for config key {key!r}: {exc}")
        if action.choices is not None and value not in action.choices:
            parser.error(f"config key {key!r} must be one of {', '.join(map(str, action.choices))}")
        out[action.dest] = value
    return out


def resolved_config(parser: argparse.ArgumentParser, args) -> RunConfig:
    cfg = RunConfig(command=args.command)
    for action in parser._actions:
        if not action.option_strings or action.dest in _UNRECORDED or action.dest == "help":
            continue
        value = getattr(args, action.dest)
        cfg[_flag_name(action)] = _format(value)
    return cfg


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    return "" if value is None else str(value)


def _write_config(outdir: Path, cfg: RunConfig) -> None:
    (outdir / RUN_CONFIG).write_text(cfg.to_text(), encoding="utf-8", newline="\n")


# -- argument types --------------------------------------------------------
def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def nonneg_float(text: str) -> float:
    value = float(text)
    if not (np.isfinite(value) and value >= 0):
        raise argparse.ArgumentTypeError(f"expected a finite value >= 0, got {text!r}")
    return value


def positive_float(text: str) -> float:
    value = float(text)
    if not (np.isfinite(value) and value > 0):
        raise argparse.ArgumentTypeError(f"expected a finite value > 0, got {text!r}")
    return value


def factor_pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected SPATIAL,TEMPORAL, got {text!r}")
    return positive_int(parts[0]), positive_int(parts[1])


def log_grid(text: str) -> list[float]:
    """``LO:HI:COUNT`` log-spaced grid, or a comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"expected LO:HI:COUNT, got {text!r}")
        lo, hi, count = positive_float(parts[0]), positive_float(parts[1]), positive_int(parts[2])
        return [float(v) for v in np.geomspace(lo, hi, count)]
    return [positive_float(p) for p in text.split(",")]


def parse_noise(text: str) -> scenes.NoiseSpec | None:
    """``none``, a preset name, or ``poisson:eta=E[,gauss:sigma=S]`` (seed set later)."""
    text = NOISE_PRESETS.get(text, text)
    if text == "none":
        return None
    eta, sigma = None, 0.0
    for part in text.split(","):
        kind, _, param = part.partition(":")
        key, _, value = param.partition("=")
        try:
            number = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad noise component {part!r}") from None
        if kind == "poisson" and key == "eta":
            eta = number
        elif kind == "gauss" and key == "sigma":
            sigma = number
        else:
            raise argparse.ArgumentTypeError(f"bad noise component {part!r}")
    if eta is None:
        raise argparse.ArgumentTypeError("noise needs a poisson:eta=... component")
    try:
        return scenes.NoiseSpec(eta, sigma, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _noise_params(text: str) -> str:
    if text in NOISE_PRESETS:
        return f"{NOISE_PRESETS[text]} (toolkit default)"
    return text


def noise_arg(text: str) -> str:
    parse_noise(text)
    return text


# -- parser ----------------------------------------------------------------
def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=nonneg_float, default=1e-2,
                   help="penalty weight (default: %(default)s)")
    p.add_argument("--lambda-mode", choices=solvers.LAMBDA_MODES, default="relative",
                   help="relative scales lambda by max|H^T tau| (default: %(default)s)")
    p.add_argument("--iters", type=positive_int, default=100, help="iteration budget (default: %(default)s)")
    p.add_argument("--tol", type=nonneg_float, default=1e-4,
                   help="relative iterate change that stops the solver (default: %(default)s)")
    p.add_argument("--window", type=positive_int, default=27,
                   help="voxels L in the cubic window, an odd cube (default: %(default)s)")
    p.add_argument("--sigma", type=positive_float, default=0.5,
                   help="Gaussian window width in voxels (default: %(default)s)")
    p.add_argument("--alpha", type=positive_float, default=0.1,
                   help="Wiener signal-to-noise parameter (default: %(default)s)")
    p.add_argument("--lipschitz-iters", type=positive_int, default=30,
                   help="power iterations for the step size (default: %(default)s)")
    p.add_argument("--no-restart", action="store_true",
                   help="disable monotone momentum restart (default: %(default)s)")
    p.add_argument("--nonneg-z", action="store_true",
                   help="clamp the wall-facing component to >= 0 (default: %(default)s)")
    p.add_argument("--warm-start", action="store_true",
                   help="start from the Wiener solution (default: %(default)s)")
    p.add_argument("--domain", choices=solvers.DOMAINS, default="light-cone",
                   help="space of the data term (default: %(default)s)")
    p.add_argument("--power", type=float, default=float(DEFAULT_POWER),
                   help="attenuation power p (default: %(default)s)")
    p.add_argument("--transform-res", type=int, default=0,
                   help="samples on the squared-depth axis, 0 = depth voxels (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="ssnlos", description=__doc__.splitlines()[0],
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, default=None,
                       help="key=value file of flag values (default: %(default)s)")
        p.add_argument("--threads", type=positive_int, default=1,
                       help="FFT worker threads; outputs do not depend on it (default: %(default)s)")
        return p

    p = add("simulate", "Render a synthetic scene and write measurement and ground truth.")
    p.add_argument("--scene", choices=list(scenes.BUILDERS), default="t-plane",
                   help="scene builder (default: %(default)s)")
    p.add_argument("--depth", type=positive_float, default=0.5, help="scene depth in m (default: %(default)s)")
    p.add_argument("--angle", type=float, default=30.0,
                   help="inclined-plane tilt in degrees (default: %(default)s)")
    p.add_argument("--radius", type=positive_float, default=0.3,
                   help="sphere-cap radius in m (default: %(default)s)")
    p.add_argument("--albedo", type=nonneg_float, default=1.0, help="surfel albedo (default: %(default)s)")
    p.add_argument("--wall", type=positive_float, default=0.6, help="wall width in m (default: %(default)s)")
    p.add_argument("--res", type=positive_int, default=32, help="scan points per side (default: %(default)s)")
    p.add_argument("--bins", type=positive_int, default=64, help="time bins (default: %(default)s)")
    p.add_argument("--bin-width", type=positive_float, default=0.02,
                   help="bin width as path length in m (default: %(default)s)")
    p.add_argument("--depth-res", type=int, default=0,
                   help="depth voxels, 0 = number of bins (default: %(default)s)")
    p.add_argument("--light-speed", type=positive_float, default=1.0,
                   help="speed of light in m/s (default: %(default)s)")
    p.add_argument("--noise", type=noise_arg, default="none",
                   help="none, exposure-high, exposure-low or poisson:eta=E,gauss:sigma=S; the "
                        "presets are toolkit defaults of 300 and 10 peak photons with sigma 1 "
                        "(default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="noise seed (default: %(default)s)")
    p.add_argument("--downsample", type=factor_pair, default=(1, 1),
                   help="SPATIAL,TEMPORAL averaging factors (default: 1,1)")
    p.add_argument("--downsample-order", choices=("after-noise", "before-noise"), default="after-noise",
                   help="average noisy samples or add noise to averaged ones (default: %(default)s)")
    p.add_argument("--out", type=Path, default=Path("sim"), help="output directory (default: %(default)s)")
    p.set_defaults(func=cmd_simulate)

    p = add("reconstruct", "Reconstruct a directional albedo volume from a measurement.")
    p.add_argument("--input", type=Path, default=Path("sim/meas.nlv"),
                   help="measurement volume (default: %(default)s)")
    p.add_argument("--method", choices=solvers.METHODS, default="ss", help="solver (default: %(default)s)")
    _add_solver_flags(p)
    p.add_argument("--record-time", action="store_true",
                   help="store the solve time in the volume metadata (default: %(default)s)")
    p.add_argument("--out", type=Path, default=Path("recon"), help="output directory (default: %(default)s)")
    p.set_defaults(func=cmd_reconstruct)

    p = add("render", "Write albedo/depth PGM, normal PPM and a per-pixel CSV of a reconstruction.")
    p.add_argument("--input", type=Path, default=Path("recon/recon.nlv"),
                   help="directional volume (default: %(default)s)")
    p.add_argument("--mask-threshold", type=nonneg_float, default=0.1,
                   help="foreground threshold relative to the brightest pixel (default: %(default)s)")
    p.add_argument("--figure", action="store_true",
                   help="also save a matplotlib preview maps.png (default: %(default)s)")
    p.add_argument("--out", type=Path, default=Path("render"), help="output directory (default: %(default)s)")
    p.set_defaults(func=cmd_render)

    p = add("evaluate", "Compare reconstructions with ground truth and write a metric CSV.")
    p.add_argument("--recon", type=Path, nargs="+", default=[Path("recon/recon.nlv")],
                   help="one or more reconstructions (default: recon/recon.nlv)")
    p.add_argument("--truth", type=Path, default=Path("sim/truth.nlv"),
                   help="ground-truth volume (default: %(default)s)")
    p.add_argument("--scene", default="", help="scene label for the report (default: from truth metadata)")
    p.add_argument("--mask-threshold", type=nonneg_float, default=0.1,
                   help="foreground threshold (default: %(default)s)")
    p.add_argument("--volume-psnr", action="store_true",
                   help="add a PSNR column computed on whole albedo volumes (default: %(default)s)")
    p.add_argument("--out", type=Path, default=Path("report.csv"), help="CSV report path (default: %(default)s)")
    p.set_defaults(func=cmd_evaluate)

    p = add("sweep", "Reconstruct over a log-spaced lambda grid and tabulate the metrics.")
    p.add_argument("--input", type=Path, default=Path("sim/meas.nlv"),
                   help="measurement volume (default: %(default)s)")
    p.add_argument("--truth", type=Path, default=Path("sim/truth.nlv"),
                   help="ground-truth volume (default: %(default)s)")
    p.add_argument("--methods", default="ss,local-ss,l1,wiener",
                   help="comma-separated solvers (default: %(default)s)")
    p.add_argument("--lambdas", type=log_grid, default=log_grid("0.003:0.3:5"),
                   help="LO:HI:COUNT or a list (default: 0.003:0.3:5)")
    p.add_argument("--alphas", type=log_grid, default=log_grid("0.1:1000:5"),
                   help="Wiener parameter grid (default: 0.1:1000:5)")
    _add_solver_flags(p)
    p.add_argument("--mask-threshold", type=nonneg_float, default=0.1,
                   help="foreground threshold (default: %(default)s)")
    p.add_argument("--figure", action="store_true",
                   help="also save a matplotlib preview sweep.png (default: %(default)s)")
    p.add_argument("--out", type=Path, default=Path("sweep"), help="output directory (default: %(default)s)")
    p.set_defaults(func=cmd_sweep)

    p = add("selftest", "Run the operator, prox and solver oracle checks.")
    p.set_defaults(func=cmd_selftest)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    if args.config is not None:
        try:
            cfg = RunConfig.parse(args.config.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            sub.error(f"cannot read config {args.config}: {exc}")
        cfg.pop("command", None)
        sub.set_defaults(**_config_defaults(sub, cfg))
        args = parser.parse_args(argv)
    return sub, args


# -- helpers ---------------------------------------------------------------
def _read(path: Path, kind):
    if not path.exists():
        raise CliError(f"input not found: {path}")
    try:
        vol, meta = read_volume(path)
    except VolumeError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    if not isinstance(vol, kind):
        raise CliError(f"{path} holds a {type(vol).__name__}, expected {kind.__name__}")
    return vol, meta


def _solver_config(args, method: str, lam: float | None = None, alpha: float | None = None):
    return solvers.SolverConfig(
        method=method,
        lam=args.lam if lam is None else lam,
        max_iters=args.iters,
        rel_tol=args.tol,
        window=WindowSpec(args.window, args.sigma),
        wiener_alpha=args.alpha if alpha is None else alpha,
        lipschitz_iters=args.lipschitz_iters,
        monotone_restart=not args.no_restart,
        nonneg_z=args.nonneg_z,
        warm_start=args.warm_start,
        domain=args.domain,
        lambda_mode=args.lambda_mode,
    )


def _operator(grid: ScanGrid, args) -> LCTOperator:
    return LCTOperator(grid, power=args.power, transform_res=args.transform_res or None,
                       workers=args.threads)


# -- commands --------------------------------------------------------------
def cmd_simulate(args, cfg: RunConfig) -> int:
    s, t = args.downsample
    grid = ScanGrid(args.wall, args.res, args.bin_width, args.bins,
                    args.depth_res, args.light_speed)
    try:
        scene = scenes.build_scene(args.scene, grid, args.depth, args.angle, args.radius, args.albedo)
        tau = scenes.render_transients(scene, grid)
        noise = parse_noise(args.noise)
        if noise is not None:
            noise = scenes.NoiseSpec(noise.peak_photons, noise.gaussian_sigma, args.seed)
        if noise is not None and args.downsample_order == "after-noise":
            tau = scenes.apply_noise(tau, noise)
        tau = downsample_transient(tau, s, t)
        if noise is not None and args.downsample_order == "before-noise":
            tau = scenes.apply_noise(tau, noise)
        truth = scenes.rasterize_scene(scene, tau.grid)
    except (VolumeError, scenes.SceneError) as exc:
        raise CliError(str(exc)) from exc
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_volume(out / "meas.nlv", tau, VolumeMeta(scene=args.scene, noise=args.noise, seed=args.seed,
                                                      noise_params=_noise_params(args.noise)))
    write_volume(out / "truth.nlv", truth, VolumeMeta(scene=args.scene))
    scene.to_csv(out / "scene.csv")
    _write_config(out, cfg)
    print(f"wrote {out / 'meas.nlv'} and {out / 'truth.nlv'} (grid {tau.grid.transient_shape})")
    return 0


def cmd_reconstruct(args, cfg: RunConfig) -> int:
    tau, meta = _read(args.input, TransientVolume)
    try:
        config = _solver_config(args, args.method)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    op = _operator(tau.grid, args)
    try:
        rho, report = solvers.reconstruct(tau, config, op)
    except solvers.SolverError as exc:
        raise CliError(str(exc)) from exc
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    extra = VolumeMeta(scene=meta.get("scene", ""), method=args.method,
                       **{"lambda": _format(args.alpha if args.method == "wiener" else args.lam)})
    if args.record_time:
        extra["runtime_s"] = repr(report.wall_time)
    write_volume(out / "recon.nlv", rho, extra)
    report.to_csv(out / "report.csv")
    _write_config(out, cfg)
    print(f"{args.method}: {report.iterations} iterations ({report.stop_reason}); wrote {out / 'recon.nlv'}")
    return 0


def write_maps_csv(path: Path, maps: metrics.ReconMaps, grid: ScanGrid) -> None:
    lat = grid.lateral_positions()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "x", "y", "albedo", "depth_m", "nx", "ny", "nz", "mask"])
        n = grid.scan_res
        for j in range(n):
            for i in range(n):
                nrm = maps.normal_map[i, j]
                writer.writerow([i, j, repr(float(lat[i])), repr(float(lat[j])),
                                 repr(float(maps.albedo_map[i, j])), repr(float(maps.depth_map[i, j])),
                                 repr(float(nrm[0])), repr(float(nrm[1])), repr(float(nrm[2])),
                                 int(maps.mask[i, j])])


def cmd_render(args, cfg: RunConfig) -> int:
    rho, _ = _read(args.input, DirectionalAlbedoVolume)
    maps = metrics.extract_maps(rho, args.mask_threshold)
    out = args.out
    images.write_map_images(maps, rho.grid.max_depth, out)
    write_maps_csv(out / "maps.csv", maps, rho.grid)
    if args.figure:
        from . import plotting
        plotting.plot_maps(maps, rho.grid.wall_width_m, out / "maps.png", title=args.input.name)
    _write_config(out, cfg)
    print(f"wrote albedo.pgm, normal.ppm, depth.pgm and maps.csv to {out}")
    return 0


def _metric_row(recon, truth, scene, method, lam, runtime, threshold, volume_flag):
    try:
        row = metrics.evaluate_maps(recon, truth, threshold)
    except metrics.MetricError as exc:
        raise CliError(str(exc)) from exc
    row.update(scene=scene, method=method, **{"lambda": lam}, runtime_s=runtime)
    if volume_flag:
        row["volume_psnr"] = metrics.volume_psnr(recon, truth)
    return row


def _write_rows(path: Path, rows, volume_flag: bool) -> None:
    fields = list(metrics.REPORT_FIELDS) + (["volume_psnr"] if volume_flag else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([metrics.format_value(row[k]) for k in fields])


def cmd_evaluate(args, cfg: RunConfig) -> int:
    truth, tmeta = _read(args.truth, DirectionalAlbedoVolume)
    scene = args.scene or tmeta.get("scene", "")
    rows = []
    for path in args.recon:
        recon, meta = _read(path, DirectionalAlbedoVolume)
        if recon.grid.volume_shape != truth.grid.volume_shape:
            raise CliError(f"shape mismatch: {path} has {recon.grid.volume_shape}, "
                           f"truth has {truth.grid.volume_shape}")
        rows.append(_metric_row(recon, truth, scene, meta.get("method", ""), meta.get("lambda", ""),
                                meta.get("runtime_s", ""), args.mask_threshold, args.volume_psnr))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(args.out, rows, args.volume_psnr)
    for row in rows:
        print(f"{row['method'] or '?'} lambda={row['lambda']}: psnr={metrics.format_value(row['psnr'])} "
              f"ssim={row['ssim']:.4f}")
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    tau, meta = _read(args.input, TransientVolume)
    truth, tmeta = _read(args.truth, DirectionalAlbedoVolume)
    if tau.grid.volume_shape != truth.grid.volume_shape:
        raise CliError(f"shape mismatch: measurement grid {tau.grid.volume_shape} vs truth "
                       f"{truth.grid.volume_shape}")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in solvers.METHODS]
    if bad:
        raise CliError(f"unknown method(s): {', '.join(bad)}")
    scene = tmeta.get("scene", meta.get("scene", ""))
    op = _operator(tau.grid, args)
    rows = []
    for method in methods:
        grid_values = args.alphas if method == "wiener" else args.lambdas
        for value in grid_values:
            if method == "wiener":
                config = _solver_config(args, method, alpha=value)
            else:
                config = _solver_config(args, method, lam=value)
            rho, report = solvers.reconstruct(tau, config, op)
            rows.append(_metric_row(rho, truth, scene, method, value, "",
                                    args.mask_threshold, False))
            print(f"{method} {value:.4g}: psnr={metrics.format_value(rows[-1]['psnr'])}", flush=True)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "sweep.csv", rows, False)
    best = []
    for method in methods:
        mine = [r for r in rows if r["method"] == method]
        best.append(max(mine, key=lambda r: r["psnr"]))
    _write_rows(out / "best.csv", best, False)
    if args.figure:
        from . import plotting
        plotting.plot_sweep(rows, out / "sweep.png")
    _write_config(out, cfg)
    return 0


def cmd_selftest(args, cfg: RunConfig) -> int:
    from .selftest import run_checks

    results = run_checks(workers=args.threads)
    failed = 0
    for name, err, tol, ok in results:
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: error={err:.3e} tolerance={tol:.1e}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    sub, args = parse_args(argv)
    cfg = resolved_config(sub, args)
    try:
        return args.func(args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
