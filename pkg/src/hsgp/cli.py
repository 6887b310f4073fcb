"""Command-line entry point: ``hsgp <command> ...``.

Exit codes: 0 success, 1 usage error, 2 I/O or format error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import cubeio, metrics, synth
from .core import FormatError, NumericalError
from .gpmodel import ModelConfig
from .pipeline import RunConfig, estimate_transform, load_model, reconstruct, save_model, \
    simulate_rgb, train

logger = logging.getLogger("hsgp")

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 1, 2, 3

# run-level options that get their own dedicated flags below
_SPECIAL = {"seed", "dl_variant", "model"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


def _field_types() -> dict:
    """Parser for every configurable name, keyed by field name."""
    probe_run, probe_model = RunConfig(), ModelConfig()
    out = {}
    for obj in (probe_model, probe_run):
        for f in fields(obj):
            if f.name in ("model",):
                continue
            default = getattr(obj, f.name)
            if f.name == "Q":
                out[f.name] = _optional_int
            elif isinstance(default, bool):
                out[f.name] = _bool
            elif isinstance(default, int):
                out[f.name] = int
            elif isinstance(default, float):
                out[f.name] = float
            else:
                out[f.name] = str
    return out


FIELD_TYPES = _field_types()


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines (``#`` comments, blank lines ignored)."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
        if key not in FIELD_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown configuration key {key!r}")
        try:
            values[key] = FIELD_TYPES[key](raw.strip())
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("model and run settings (override --config)")
    for name, conv in FIELD_TYPES.items():
        if name in _SPECIAL:
            continue
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        group.add_argument(*flags, dest=f"cfg_{name}", type=conv, default=None, metavar="V")
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--dl-variant", action="store_true", default=None,
                   help="use the prior dictionary atoms instead of posterior GP means")


def build_run_config(args) -> RunConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for name in FIELD_TYPES:
        flag = getattr(args, f"cfg_{name}", None)
        if flag is not None:
            values[name] = flag
    if getattr(args, "dl_variant", None):
        values["dl_variant"] = True
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    try:
        return RunConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _threads(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return n


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    config = build_run_config(args)
    transform, resp_wl = cubeio.read_response(args.response, normalize=args.normalize_response)
    cubes = [cubeio.read_cube(p) for p in args.cubes]
    for path, cube in zip(args.cubes, cubes):
        if cube.bands != transform.bands:
            raise FormatError(f"{path}: {cube.bands} bands but the response has {transform.bands}")
        if not np.allclose(cube.wavelengths, resp_wl):
            logger.warning("%s: cube wavelengths differ from the response table", path)
    t0 = time.perf_counter()
    model = train(cubes, transform, config, threads=args.threads)
    elapsed = time.perf_counter() - t0
    save_model(model, args.out)
    for c, cm in enumerate(model.clusters):
        print(f"cluster {c}: K_c={cm.n_atoms} patches={cm.n_patches} "
              f"train_spectra={cm.n_train} lambda_eps={cm.lambda_eps:.6g}")
    print(f"trained {len(model.clusters)} clusters, "
          f"{sum(cm.n_atoms for cm in model.clusters)} atoms in {elapsed:.2f}s")
    return 0


def cmd_reconstruct(args) -> int:
    model = load_model(args.model)
    rgb = cubeio.read_cube(args.rgb)
    if rgb.bands != model.transform.channels:
        raise FormatError(f"{args.rgb}: {rgb.bands} channels, model expects "
                          f"{model.transform.channels}")
    if not 1 <= args.stride <= model.patch:
        raise UsageError(f"--stride must lie in 1..{model.patch} (the patch side)")
    t0 = time.perf_counter()
    rec = reconstruct(model, rgb, stride=args.stride, threads=args.threads)
    cubeio.write_cube(rec.cube, args.out)
    print(f"infeasible_pixels={rec.infeasible_pixels}")
    print(f"negative_fraction={rec.negative_fraction:.6g}")
    print(f"reconstructed {rgb.rows}x{rgb.cols}x{model.bands} in "
          f"{time.perf_counter() - t0:.2f}s")
    return 0


def cmd_rgbsim(args) -> int:
    transform, _ = cubeio.read_response(args.response, normalize=args.normalize_response)
    cube = cubeio.read_cube(args.cube)
    if cube.bands != transform.bands:
        raise FormatError(f"{args.cube}: {cube.bands} bands but the response has "
                          f"{transform.bands}")
    cubeio.write_cube(simulate_rgb(cube, transform), args.out)
    return 0


def cmd_evaluate(args) -> int:
    est, gt = cubeio.read_cube(args.est), cubeio.read_cube(args.gt)
    if est.data.shape != gt.data.shape:
        raise FormatError(f"estimate {est.data.shape} and ground truth {gt.data.shape} differ")
    report = metrics.evaluate(est, gt, infeasible_pixels=args.infeasible,
                              eightbit=not args.raw_rmse)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_estimate_transform(args) -> int:
    rgb, cube = cubeio.read_cube(args.rgb), cubeio.read_cube(args.cube)
    if (rgb.rows, rgb.cols) != (cube.rows, cube.cols):
        raise FormatError("RGB and hyperspectral cubes must share rows and columns")
    T = estimate_transform(rgb.pixels().T, cube.pixels().T)
    if args.out:
        cubeio.write_response(T, cube.wavelengths, args.out)
    if args.compare:
        ref, _ = cubeio.read_response(args.compare)
        if ref.matrix.shape != T.matrix.shape:
            raise FormatError(f"reference response is {ref.matrix.shape}, estimate is "
                              f"{T.matrix.shape}")
        print(f"max_abs_error={float(np.abs(ref.matrix - T.matrix).max())!r}")
    print(f"rank={int(np.linalg.matrix_rank(cube.pixels()))}")
    return 0


def cmd_synth(args) -> int:
    lo, hi = args.smoothness
    try:
        spec = synth.SynthSpec(L=args.bands, M=args.rows, N=args.cols, K_true=args.k_true,
                               smoothness=(lo, hi), sparsity=args.sparsity,
                               noise_precision=args.noise_precision, seed=args.seed,
                               scene_seed=args.scene_seed, block=args.block)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    scene = synth.generate(spec)
    cubeio.write_cube(scene.cube, args.out)
    if args.truth:
        meta = {"kind": "synth-truth", "L": spec.L, "M": spec.M, "N": spec.N,
                "K_true": spec.K_true, "sparsity": spec.sparsity, "seed": spec.seed,
                "scene_seed": spec.scene_seed, "noise_precision": repr(spec.noise_precision),
                "smoothness": list(spec.smoothness), "block": spec.block}
        Path(args.truth).write_bytes(cubeio.encode_model(
            meta, {"atoms": scene.atoms, "codes": scene.codes}))
    if args.response_out:
        cubeio.write_response(synth.random_response(spec.L, spec.seed), spec.wavelengths,
                              args.response_out)
    return 0


def cmd_export(args) -> int:
    cube = cubeio.read_cube(args.cube)
    value_range = tuple(args.range) if args.range else None
    if args.band is None:
        if cube.bands != 3:
            raise UsageError("give --band for cubes that do not have exactly 3 channels")
        cubeio.export_rgb_pnm(cube, args.out, value_range)
    else:
        if not 0 <= args.band < cube.bands:
            raise UsageError(f"--band must lie in 0..{cube.bands - 1}")
        cubeio.export_band_pnm(cube, args.band, args.out, value_range)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = _Parser(prog="hsgp", description="Hyperspectral recovery from RGB images")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _sub = sub.add_parser

    def add(name, **kw):
        return _sub(name, parents=[common], **kw)

    p = add("train", help="learn per-cluster atom sets from hyperspectral cubes")
    p.add_argument("--cubes", nargs="+", required=True)
    p.add_argument("--response", required=True, help="wavelength,r,g,b table")
    p.add_argument("--normalize-response", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=_threads, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = add("reconstruct", help="recover a hyperspectral cube from an RGB cube")
    p.add_argument("--model", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--threads", type=_threads, default=1)
    p.add_argument("--seed", type=int, default=None, help="accepted for uniformity; unused")
    p.set_defaults(func=cmd_reconstruct)

    p = add("rgbsim", help="project a hyperspectral cube through a response")
    p.add_argument("--cube", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--normalize-response", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="accepted for uniformity; unused")
    p.set_defaults(func=cmd_rgbsim)

    p = add("evaluate", help="compare an estimate with the ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="also write the report here")
    p.add_argument("--infeasible", type=int, default=0,
                   help="infeasible pixel count to echo into the report")
    p.add_argument("--raw-rmse", action="store_true", help="skip the 8-bit rescaling")
    p.add_argument("--seed", type=int, default=None, help="accepted for uniformity; unused")
    p.set_defaults(func=cmd_evaluate)

    p = add("estimate-transform", help="least-squares response from an image pair")
    p.add_argument("--rgb", required=True)
    p.add_argument("--cube", required=True)
    p.add_argument("--out")
    p.add_argument("--compare", help="reference response table to report the error against")
    p.add_argument("--seed", type=int, default=None, help="accepted for uniformity; unused")
    p.set_defaults(func=cmd_estimate_transform)

    p = add("synth", help="generate a synthetic scene")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="write atoms and codes to this sidecar")
    p.add_argument("--response-out", help="also write a random smooth response table")
    p.add_argument("--bands", type=int, default=31)
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--k-true", type=int, default=8)
    p.add_argument("--sparsity", type=int, default=2)
    p.add_argument("--smoothness", type=float, nargs=2, default=(3.0, 6.0), metavar=("LO", "HI"))
    p.add_argument("--noise-precision", type=float, default=1e4)
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scene-seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = add("export", help="write an 8-bit PNM preview")
    p.add_argument("--cube", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--band", type=int, help="band index (omit for a 3-channel colour image)")
    p.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hsgp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"hsgp {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"hsgp {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"hsgp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
