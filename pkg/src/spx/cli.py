"""``spx`` batch command line.

Every command writes its outputs plus a ``<primary>.manifest`` key=value file
recording the command, package version, resolved parameters, and SHA-256
digests of all inputs and outputs (by basename). With ``--check`` the command
is re-run into a scratch directory and the fresh manifest is compared with the
existing one; nothing on disk is modified.

Exit codes: 0 success, 1 ``--check`` mismatch or other failure, 2 usage
error, 3 numerical failure (solver non-convergence under ``--strict``,
singular systems, invalid noise covariances).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import tempfile
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from spx import __version__
from spx.calibration import calibrate, estimate_profile, whiten
from spx.diagnostics import isometry_constants, spectrum
from spx.errors import InvalidArgument, InvalidNoiseModel, SingularSystem, SpxError
from spx.io import manifest_path, meta_path, read_kv, read_spmx, sha256_file, write_kv, write_spmx
from spx.patterns import PatternLibrary, SensingOperator, gen_hadamard, gen_speckle, select
from spx.reconstruction import ReconConfig, reconstruct
from spx.recognisability import LOWER_BOUND_CAVEAT, read_curve, safe_interval, write_curve
from spx.rng import check_seed, derive_seed, generator
from spx.sensing import AcquisitionChain, FrameBatch, MeasurementBatch, NoiseModel, apply_chain, measure_batch
from spx.sweep import TrainSettings, sweep
from spx.synthdata import BehaviorBank, SynthSpec, instance_table, render_instances

logger = logging.getLogger("spx")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class Run:
    """Inputs, outputs and parameters collected while a command executes."""

    def __init__(self, command: str, args: argparse.Namespace, output_keys: Sequence[str]):
        self.command = command
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.params = {
            k: v for k, v in sorted(vars(args).items())
            if k not in ("func", "check", "verbose", "outputs", "command") and k not in output_keys
        }
        self.exit_code = EXIT_OK

    def read(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise InvalidArgument(f"input file not found: {path}")
        self.inputs.append(path)
        return path

    def wrote(self, *paths) -> None:
        self.outputs.extend(Path(p) for p in paths)

    def manifest(self) -> dict[str, object]:
        items: dict[str, object] = {"command": self.command, "version": __version__}
        for key, value in self.params.items():
            if isinstance(value, str) and ("/" in value or Path(value).suffix):
                value = Path(value).name
            items[f"param.{key}"] = value
        for p in self.inputs:
            items[f"input.{p.name}"] = sha256_file(p)
        for p in self.outputs:
            items[f"output.{p.name}"] = sha256_file(p)
        return items


# ---------------------------------------------------------------- helpers


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _seed(text: str) -> int:
    try:
        return check_seed(int(text))
    except (ValueError, InvalidArgument):
        raise argparse.ArgumentTypeError(f"seed must be an integer in [0, 2^64), got {text!r}")


def _add_noise_args(p: argparse.ArgumentParser, default_kind: str = "none", default_sigma: float = 0.0) -> None:
    p.add_argument("--noise", choices=("none", "iid_gaussian", "ar1"), default=default_kind)
    p.add_argument("--sigma", type=float, default=default_sigma, help="noise standard deviation")
    p.add_argument("--phi-corr", type=float, default=0.0, help="AR(1) lag-one correlation")


def _noise(args) -> NoiseModel:
    return NoiseModel(args.noise, sigma=args.sigma, phi_corr=args.phi_corr)


def _noise_from_kv(kv: dict[str, str]) -> NoiseModel:
    return NoiseModel(
        kv.get("noise_kind", "none"),
        sigma=float(kv.get("noise_sigma", 0.0)),
        phi_corr=float(kv.get("noise_phi_corr", 0.0)),
    )


def _add_spec_args(p: argparse.ArgumentParser) -> None:
    d = SynthSpec()
    p.add_argument("--height", type=int, default=d.height)
    p.add_argument("--width", type=int, default=d.width)
    p.add_argument("--identities", type=int, default=d.num_identities)
    p.add_argument("--behaviors", type=int, default=d.num_behaviors)
    p.add_argument("--samples-per-class", type=int, default=d.samples_per_class)
    p.add_argument("--frames", type=int, default=d.t_frames, help="frames per behavior sequence")
    _add_noise_args(p, d.noise.kind, d.noise.sigma)


def _spec(args, seed: int) -> SynthSpec:
    return SynthSpec(
        height=args.height,
        width=args.width,
        num_identities=args.identities,
        num_behaviors=args.behaviors,
        samples_per_class=args.samples_per_class,
        t_frames=args.frames,
        noise=_noise(args),
        master_seed=seed,
    )


def _spec_to_kv(spec: SynthSpec) -> dict[str, object]:
    out: dict[str, object] = {
        "height": spec.height,
        "width": spec.width,
        "num_identities": spec.num_identities,
        "num_behaviors": spec.num_behaviors,
        "samples_per_class": spec.samples_per_class,
        "t_frames": spec.t_frames,
        "master_seed": spec.master_seed,
    }
    out.update(spec.noise.as_dict())
    return out


def _spec_from_kv(kv: dict[str, str]) -> SynthSpec:
    return SynthSpec(
        height=int(kv["height"]),
        width=int(kv["width"]),
        num_identities=int(kv["num_identities"]),
        num_behaviors=int(kv["num_behaviors"]),
        samples_per_class=int(kv["samples_per_class"]),
        t_frames=int(kv["t_frames"]),
        noise=_noise_from_kv(kv),
        master_seed=int(kv["master_seed"]),
    )


def _load_library(run: Run, path) -> PatternLibrary:
    path = run.read(path)
    kv = read_kv(run.read(meta_path(path)))
    raw = read_spmx(path)
    if not np.all((raw == 0) | (raw == 1)):
        raise InvalidArgument(f"{path}: pattern library entries must be 0 or 1")
    patterns = raw.astype(np.uint8)
    patterns.setflags(write=False)
    h, w = int(kv["height"]), int(kv["width"])
    if patterns.shape[1] != h * w:
        raise InvalidArgument(f"{path}: {patterns.shape[1]} columns but metadata says {h}x{w}")
    return PatternLibrary(kv["kind"], h, w, patterns.shape[0], int(kv["seed"]), patterns)


def _write_operator(run: Run, path, op: SensingOperator) -> None:
    path = Path(path)
    write_spmx(path, op.effective)
    write_kv(meta_path(path), {"source": op.source, "height": op.height, "width": op.width,
                               "m": op.m, "rho": op.rho, "whitened": op.whitened})
    run.wrote(path, meta_path(path))


def _load_operator(run: Run, path) -> SensingOperator:
    path = run.read(path)
    kv = read_kv(run.read(meta_path(path)))
    return SensingOperator.from_matrix(
        read_spmx(path), int(kv["height"]), int(kv["width"]), kv.get("source", "explicit"),
        kv.get("whitened", "false") == "true",
    )


def _write_measurements(run: Run, path, batch: MeasurementBatch, extra: Optional[dict] = None) -> None:
    path = Path(path)
    write_spmx(path, batch.values)
    meta = batch.provenance()
    meta.update(extra or {})
    write_kv(meta_path(path), meta)
    run.wrote(path, meta_path(path))


def _load_measurements(run: Run, path) -> MeasurementBatch:
    path = run.read(path)
    kv = read_kv(run.read(meta_path(path)))
    return MeasurementBatch(
        read_spmx(path), kv.get("operator", "unknown"), _noise_from_kv(kv), int(kv.get("seed", 0)),
        kv.get("calibrated", "false") == "true", kv.get("whitened", "false") == "true",
    )


# ---------------------------------------------------------------- commands


def cmd_gen_patterns(args, run: Run) -> Path:
    if args.kind == "speckle":
        lib = gen_speckle(args.n, args.h, args.w, args.seed)
    else:
        lib = gen_hadamard(args.n, args.h, args.w)
    write_spmx(args.out, lib.patterns)
    write_kv(meta_path(args.out), {"kind": lib.kind, "height": lib.height, "width": lib.width,
                                   "count": lib.count, "seed": lib.seed})
    run.wrote(args.out, meta_path(args.out))
    return Path(args.out)


def cmd_synth(args, run: Run) -> Path:
    spec = _spec(args, args.seed)
    table = instance_table(spec, args.task)
    frames = render_instances(spec, table)
    out = Path(args.out)
    write_spmx(out, frames)
    labels = out.with_name(out.stem + ".labels.csv")
    with open(labels, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["instance", "identity", "behavior", "split", "seed"])
        for i in range(len(table)):
            writer.writerow([i, table.identity[i], table.behavior[i], table.split[i], table.seed[i]])
    meta = _spec_to_kv(spec)
    meta.update(task=args.task, frames_per_instance=1 if args.task == "privacy" else spec.t_frames,
                behavior_names=list(BehaviorBank.build(spec).names))
    write_kv(meta_path(out), meta)
    run.wrote(out, labels, meta_path(out))
    return out


def cmd_measure(args, run: Run) -> Path:
    lib = _load_library(run, args.library)
    op = select(lib, args.m)
    n = op.n_pixels
    if args.target == "scenes":
        if args.input is None:
            raise InvalidArgument("--target scenes requires --input")
        frames = read_spmx(run.read(args.input))
    elif args.target == "dark":
        frames = np.zeros((n, args.frames))
    else:
        frames = np.full((n, args.frames), args.reference_level)
    batch = measure_batch(op, FrameBatch(op.height, op.width, frames), _noise(args), args.seed)
    extra = {"target": args.target}
    if args.chain_seed is not None:
        rng = generator(args.chain_seed)
        chain = AcquisitionChain(rng.uniform(1 - args.gain_spread, 1 + args.gain_spread, op.m),
                                 rng.normal(0.0, args.offset_scale, op.m))
        batch = batch.replace(values=apply_chain(batch.values, chain))
        extra["chain_seed"] = args.chain_seed
    _write_measurements(run, args.out, batch, extra)
    if args.operator_out:
        _write_operator(run, args.operator_out, op)
    return Path(args.out)


def cmd_calibrate(args, run: Run) -> Path:
    op = _load_operator(run, args.operator)
    dark = _load_measurements(run, args.dark)
    ref = _load_measurements(run, args.reference)
    ideal = op.effective @ np.full(op.n_pixels, args.reference_level)
    profile = estimate_profile(dark, ref, ideal)
    profile.save(args.profile_out)
    run.wrote(*profile.files(args.profile_out))
    if args.input is not None:
        if args.out is None:
            raise InvalidArgument("--input requires --out")
        batch = calibrate(_load_measurements(run, args.input), profile)
        if args.whiten:
            batch, op = whiten(batch, op, _noise(args))
            if args.operator_out is None:
                raise InvalidArgument("--whiten requires --operator-out for the whitened operator")
            _write_operator(run, args.operator_out, op)
        _write_measurements(run, args.out, batch)
    return Path(args.profile_out)


def cmd_reconstruct(args, run: Run) -> Path:
    op = _load_operator(run, args.operator)
    batch = _load_measurements(run, args.measurements)
    if not 0 <= args.column < batch.t:
        raise InvalidArgument(f"--column {args.column} outside [0, {batch.t})")
    cfg = ReconConfig(method=args.method, lam=args.lam, regularizer=args.regularizer,
                      max_iters=args.max_iters, tol=args.tol)
    result = reconstruct(op, batch.values[:, args.column], cfg)
    out = Path(args.out)
    write_spmx(out, result.image(op.height, op.width))
    trace = out.with_name(out.stem + ".trace.csv")
    with open(trace, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "objective", "residual"])
        for i, (obj, res) in enumerate(zip(result.objective_trace, result.residual_trace)):
            writer.writerow([i, repr(obj), repr(res)])
    write_kv(meta_path(out), {"iterations": result.iterations, "converged": result.converged,
                              "final_objective": result.final_objective})
    run.wrote(out, trace, meta_path(out))
    if not result.converged:
        logger.warning("solver stopped after %d iterations without converging", result.iterations)
        if args.strict:
            run.exit_code = EXIT_NUMERIC
    return out


DIAG_COLUMNS = ("M", "rho", "sigma_max", "sigma_min", "threshold_rank", "entropy_rank", "spectral_mass", "c1", "c2")


def cmd_diagnose(args, run: Run) -> Path:
    if (args.operator is None) == (args.library is None):
        raise InvalidArgument("give exactly one of --operator or --library")
    if args.library is not None:
        lib = _load_library(run, args.library)
        ops = [select(lib, m) for m in (args.m or [lib.count])]
    else:
        ops = [_load_operator(run, args.operator)]
    n = ops[0].n_pixels
    basis = generator(derive_seed(args.seed, 1)).standard_normal((n, args.subspace_dim))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DIAG_COLUMNS)
        for op in ops:
            rep = spectrum(op, args.eps_rank)
            iso = isometry_constants(op, basis, args.probes, args.seed)
            writer.writerow([op.m, repr(op.rho), repr(float(rep.singular_values[0])),
                             repr(float(rep.singular_values[-1])), rep.threshold_rank,
                             repr(rep.entropy_rank), repr(rep.spectral_mass), repr(iso.c1_hat), repr(iso.c2_hat)])
    run.wrote(args.out)
    return Path(args.out)


def cmd_sweep(args, run: Run) -> Path:
    if args.synth is not None:
        spec = _spec_from_kv(read_kv(run.read(meta_path(run.read(args.synth)))))
        # record the dataset settings actually used, not the unused flag defaults
        run.params.update(height=spec.height, width=spec.width, identities=spec.num_identities,
                          behaviors=spec.num_behaviors, samples_per_class=spec.samples_per_class,
                          frames=spec.t_frames, noise=spec.noise.kind, sigma=spec.noise.sigma,
                          phi_corr=spec.noise.phi_corr)
    else:
        spec = _spec(args, args.seed)
    library = _load_library(run, args.library) if args.library else None
    settings = TrainSettings(args.epochs, args.lr, args.l2)
    curve = sweep(args.task, args.rates, spec, args.trials, args.seed, library=library,
                  settings=settings, permute_labels=args.permute_labels, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / f"curve_{args.task}.csv"
    write_curve(out, curve)
    meta = {"task": args.task, "k": curve.k, "trials": args.trials, "seed": args.seed,
            "estimator": LOWER_BOUND_CAVEAT}
    meta.update(_spec_to_kv(spec))
    write_kv(meta_path(out), meta)
    run.wrote(out, meta_path(out))
    return out


def cmd_safe_interval(args, run: Run) -> Path:
    beh = read_curve(run.read(args.beh), "behavior")
    priv = read_curve(run.read(args.priv), "privacy")
    si = safe_interval(beh, priv, args.alpha, args.beta)
    write_kv(args.out, si.as_dict())
    run.wrote(args.out)
    print(f"interval={'EMPTY' if si.empty else '%r,%r' % si.interval}")
    return Path(args.out)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spx", description="Single-pixel sensing simulation pipeline.")
    parser.add_argument("--version", action="version", version=f"spx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, func: Callable, outputs: Sequence[str], help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        p.set_defaults(func=func, outputs=tuple(outputs))
        p.add_argument("--check", action="store_true",
                       help="re-run into a scratch directory and compare with the existing manifest")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = add("gen-patterns", cmd_gen_patterns, ["out"], "generate a binary pattern library")
    p.add_argument("--kind", choices=("speckle", "hadamard"), required=True)
    p.add_argument("--n", type=int, required=True, help="number of patterns")
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--seed", type=_seed, default=0, help="speckle seed (ignored for hadamard)")
    p.add_argument("--out", required=True)

    p = add("synth", cmd_synth, ["out"], "render synthetic scenes or sequences with labels")
    _add_spec_args(p)
    p.add_argument("--task", choices=("privacy", "behavior"), default="behavior")
    p.add_argument("--seed", type=_seed, default=0, help="master seed")
    p.add_argument("--out", required=True)

    p = add("measure", cmd_measure, ["out", "operator_out"], "simulate bucket-detector readings")
    p.add_argument("--library", required=True)
    p.add_argument("--m", type=int, required=True, help="number of patterns to use (prefix)")
    p.add_argument("--target", choices=("scenes", "dark", "reference"), default="scenes")
    p.add_argument("--input", help="N x T frame matrix (SPMX) for --target scenes")
    p.add_argument("--frames", type=int, default=256, help="frame count for dark/reference targets")
    p.add_argument("--reference-level", type=float, default=1.0)
    _add_noise_args(p)
    p.add_argument("--chain-seed", type=_seed, default=None,
                   help="apply a random gain/offset chain drawn from this seed")
    p.add_argument("--gain-spread", type=float, default=0.2)
    p.add_argument("--offset-scale", type=float, default=1.0)
    p.add_argument("--seed", type=_seed, default=0, help="noise seed")
    p.add_argument("--out", required=True)
    p.add_argument("--operator-out", help="also write the effective operator")

    p = add("calibrate", cmd_calibrate, ["profile_out", "out", "operator_out"],
            "estimate offsets/gains and optionally correct and whiten readings")
    p.add_argument("--operator", required=True)
    p.add_argument("--dark", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--reference-level", type=float, default=1.0)
    p.add_argument("--profile-out", required=True)
    p.add_argument("--input", help="raw readings to correct")
    p.add_argument("--out", help="corrected readings")
    p.add_argument("--whiten", action="store_true")
    _add_noise_args(p)
    p.add_argument("--operator-out", help="whitened operator (with --whiten)")

    p = add("reconstruct", cmd_reconstruct, ["out"], "solve the regularized inverse problem")
    p.add_argument("--operator", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument("--column", type=int, default=0)
    p.add_argument("--method", choices=("ridge", "tv"), default="ridge")
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--regularizer", choices=("identity", "laplacian"), default="laplacian")
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--strict", action="store_true", help="exit 3 when the solver does not converge")
    p.add_argument("--out", required=True)

    p = add("diagnose", cmd_diagnose, ["out"], "spectral and isometry diagnostics")
    p.add_argument("--operator")
    p.add_argument("--library")
    p.add_argument("--m", type=_ints, default=None, help="comma-separated prefix sizes (with --library)")
    p.add_argument("--eps-rank", type=float, default=1e-10)
    p.add_argument("--subspace-dim", type=int, default=4)
    p.add_argument("--probes", type=int, default=1000)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)

    p = add("sweep", cmd_sweep, ["out_dir"], "accuracy-versus-rate curve for one task")
    p.add_argument("--task", choices=("privacy", "behavior"), required=True)
    p.add_argument("--rates", type=_ints, required=True, help="comma-separated M values")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--library", help="speckle library (default: derived from --seed)")
    p.add_argument("--synth", help="synth output whose metadata fixes the dataset spec")
    _add_spec_args(p)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--permute-labels", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default=".")

    p = add("safe-interval", cmd_safe_interval, ["out"], "critical rates and the safe interval")
    p.add_argument("--beh", required=True)
    p.add_argument("--priv", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--out", default="safe_interval.txt")
    return parser


def _execute(args) -> tuple[Run, Path]:
    run = Run(args.command, args, args.outputs)
    primary = args.func(args, run)
    return run, primary


def _check(args) -> int:
    # Redirect every output path into a scratch directory, keeping basenames.
    original = {k: getattr(args, k) for k in args.outputs if getattr(args, k) is not None}
    with tempfile.TemporaryDirectory() as scratch:
        for key, value in original.items():
            target = Path(scratch) / key if key == "out_dir" else Path(scratch) / Path(value).name
            setattr(args, key, str(target))
        run, primary = _execute(args)
        write_kv(Path(scratch) / "fresh.manifest", run.manifest())
        fresh = read_kv(Path(scratch) / "fresh.manifest")
    if "out_dir" in original:
        home = Path(original["out_dir"])
    else:
        home = next(Path(v).parent for v in original.values() if Path(v).name == primary.name)
    existing_path = manifest_path(home / primary.name)
    if not existing_path.exists():
        logger.error("no manifest at %s", existing_path)
        return EXIT_FAIL
    existing = read_kv(existing_path)
    mismatched = sorted(k for k in set(existing) | set(fresh) if existing.get(k) != fresh.get(k))
    locations = {Path(v).name: Path(v) for v in original.values()}
    for key, digest in existing.items():
        if key.startswith("output."):
            name = key[len("output."):]
            path = locations.get(name, home / name)
            if not path.exists() or sha256_file(path) != digest:
                mismatched.append(key)
    for key in mismatched:
        logger.error("check mismatch: %s", key)
    if mismatched:
        return EXIT_FAIL
    print(f"check ok: {existing_path}")
    return run.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.check:
            return _check(args)
        run, primary = _execute(args)
        write_kv(manifest_path(primary), run.manifest())
        return run.exit_code
    except (SingularSystem, InvalidNoiseModel) as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    except InvalidArgument as exc:
        parser.print_usage(sys.stderr)
        logger.error("%s", exc)
        return EXIT_USAGE
    except (SpxError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
