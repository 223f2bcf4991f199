"""Command line: data generation, training, evaluation and the experiment protocols.

Every command writes a ``*.run.json`` manifest next to its outputs with the
resolved configuration, seeds, input/output digests and wall-clock timings.
Exit status is 0 on success, 2 for configuration errors and 3 for numerical
failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import bridge, rfm
from .burgers import BurgersConfig, BurgersPrior, SolverError, default_dt, gen_burgers_dataset
from .darcy import DarcyConfig, LevelSetPrior, gen_darcy_dataset
from .features import FourierFamily, PredictorCorrectorFamily
from .fvrf_io import Dataset, FormatError, dump_json, file_digest, manifest_digest
from .grid import Grid1D, Grid2D

log = logging.getLogger("fvrf")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

DEFAULT_LAMBDA = {"fourier": 0.0, "pc": 1e-8}


class ConfigError(ValueError):
    pass


# -- helpers ------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _resolution_grid(data: Dataset, resolution: int | None):
    if resolution is None:
        return data
    grid = Grid1D.from_K(resolution) if isinstance(data.grid, Grid1D) else Grid2D(resolution)
    return data.restrict_to(grid)


def _load(path, resolution=None) -> Dataset:
    return _resolution_grid(Dataset.load(path), resolution)


def write_csv(path, header, rows) -> str:
    """CSV with full round-trip float precision; returns the file digest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return file_digest(path)


def _run_manifest(path, args, seeds: dict, inputs: dict, outputs: dict, timings: dict) -> None:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "argv")}
    dump_json(path, {
        "command": args.command,
        "argv": args.argv,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
        "timings": timings,
    })


def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".run.json")


def _data_inputs(**dirs) -> dict:
    return {name: {"path": str(d), "manifest_digest": manifest_digest(d)} for name, d in dirs.items()}


# -- commands -----------------------------------------------------------------------


def cmd_gen(args) -> None:
    t0 = time.perf_counter()
    if args.pde == "burgers":
        if args.r is not None:
            raise ConfigError("--r applies to darcy; use --k for burgers")
        K = args.k or 1025
        grid = Grid1D.from_K(K)
        cfg = BurgersConfig(grid, viscosity=args.viscosity, t_final=args.t,
                            dt=args.dt or default_dt(grid.n_unique), dealias=not args.no_dealias)
        prior = BurgersPrior(7.0 if args.tau is None else args.tau,
                             2.5 if args.alpha is None else args.alpha)
        data = gen_burgers_dataset(args.n, cfg, prior, args.seed)
    else:
        if args.k is not None:
            raise ConfigError("--k applies to burgers; use --r for darcy")
        grid = Grid2D(args.r or 257)
        cfg = DarcyConfig(grid, forcing=args.f, cg_tolerance=args.cg_tol, max_iter=args.cg_maxiter,
                          face_average=args.face_average)
        prior = LevelSetPrior(args.aplus, args.aminus, 3.0 if args.tau is None else args.tau,
                              2.0 if args.alpha is None else args.alpha)
        data = gen_darcy_dataset(args.n, cfg, prior, args.seed)
    t_gen = time.perf_counter() - t0
    if args.save_resolution is not None:
        data = _resolution_grid(data, args.save_resolution)
    digests = data.save(args.out)
    _run_manifest(Path(args.out) / "run.json", args, {"data": args.seed}, {},
                  {str(Path(args.out) / k): v for k, v in digests.items()},
                  {"generate_s": t_gen, "total_s": time.perf_counter() - t0})
    print(f"wrote {data.n} samples on {data.grid} to {args.out}")


def _family(args, pde: str):
    if args.features == "fourier":
        if pde != "burgers":
            raise ConfigError("fourier features need a burgers dataset")
        return FourierFamily(
            tau=5.0 if args.tau_prime is None else args.tau_prime,
            alpha_reg=2.0 if args.alpha_prime is None else args.alpha_prime,
            delta=0.0025 if args.delta is None else args.delta,
            beta=args.beta, n_ref=args.n_ref,
        )
    if pde != "darcy":
        raise ConfigError("pc features need a darcy dataset")
    return PredictorCorrectorFamily(
        tau=7.5 if args.tau_prime is None else args.tau_prime,
        alpha_reg=2.0 if args.alpha_prime is None else args.alpha_prime,
        s_plus=args.s_plus, s_minus=args.s_minus,
        delta=0.15 if args.delta is None else args.delta,
    )


def _context(data: Dataset) -> dict:
    if data.manifest.get("pde") != "darcy":
        return {}
    f = data.manifest.get("f", {"kind": "constant", "value": 1.0})
    if f.get("kind") != "constant":
        raise ConfigError("training on a non-constant forcing needs the library API")
    return {"forcing": f["value"]}


def _lambda(args) -> float:
    lam = DEFAULT_LAMBDA[args.features] if args.lam is None else args.lam
    if lam < 0:
        raise ConfigError("--lambda must be nonnegative")
    return lam


def _train(args, data: Dataset):
    family = _family(args, data.manifest.get("pde"))
    return rfm.train(data, family, args.m, _lambda(args), args.seed,
                     J=args.J, batch_size=args.batch_size, context=_context(data))


def cmd_train(args) -> None:
    t0 = time.perf_counter()
    data = _load(args.data, args.resolution)
    if args.n is not None:
        data = data.subset(slice(0, args.n))
    model = _train(args, data)
    t_train = time.perf_counter() - t0
    digests = rfm.save_model(model, args.model_out, {"training_manifest_digest": manifest_digest(args.data)})
    out = Path(args.model_out)
    _run_manifest(out / "run.json", args, {"features": args.seed}, _data_inputs(data=args.data),
                  {str(out / k): v for k, v in digests.items()},
                  {"train_s": t_train, "total_s": time.perf_counter() - t0})
    print(f"trained m={model.m} J={model.J} lambda={model.lam:g} on n={data.n}, {data.grid}")


def _check_model_grid(model, data: Dataset) -> None:
    try:
        model.features(data.inputs[:1], data.grid)
    except ValueError as exc:
        raise ConfigError(f"model and dataset are incompatible: {exc}") from None


def cmd_eval(args) -> None:
    t0 = time.perf_counter()
    model = rfm.load_model(args.model)
    data = _load(args.data, args.resolution)
    _check_model_grid(model, data)
    errs = rfm.relative_test_errors(model, data)
    elapsed = time.perf_counter() - t0
    report = {
        "error": float(np.mean(errs)),
        "per_sample": [float(e) for e in errs],
        "n_prime": data.n,
        "m": model.m,
        "K": data.grid.K,
        "timing_s": elapsed,
    }
    if isinstance(data.grid, Grid2D):
        report["r"] = data.grid.r
    digest = dump_json(args.out, report)
    _run_manifest(_sidecar(args.out), args, {"features": model.seed},
                  _data_inputs(data=args.data) | {"model": {"path": args.model, "model_digest": file_digest(Path(args.model) / "model.json")}},
                  {args.out: digest}, {"total_s": elapsed})
    print(f"e = {report['error']:.6g} over n'={data.n}")


def cmd_transfer(args) -> None:
    t0 = time.perf_counter()
    resolutions = sorted(args.resolutions)
    if args.mode == "error":
        if args.model is None:
            raise ConfigError("error mode needs --model")
        model = rfm.load_model(args.model)
        full = Dataset.load(args.data)
        rows = []
        for res in resolutions:
            data = _resolution_grid(full, res)
            _check_model_grid(model, data)
            rows.append((res, rfm.expected_relative_test_error(model, data)))
        digest = write_csv(args.out, ["resolution", "error"], rows)
        seeds = {"features": model.seed}
    else:
        if args.features is None or args.m is None:
            raise ConfigError("coefficients mode needs --features and --m")
        full = Dataset.load(args.data)
        if args.n is not None:
            full = full.subset(slice(0, args.n))
        # one set of KL coefficients shared across resolutions, sized for the J-resolution grid
        base = _resolution_grid(full, args.j_resolution or resolutions[0])
        family = _family(args, full.manifest.get("pde"))
        J = args.J or family.default_J(base.grid)
        xi = rfm.draw_feature_params(family, args.m, J, args.seed)
        alphas = {}
        for res in resolutions:
            data = _resolution_grid(full, res)
            model = rfm.train(data, family, args.m, _lambda(args), args.seed, xi=xi,
                              batch_size=args.batch_size, context=_context(data))
            alphas[res] = model.alpha
        ref = alphas[resolutions[-1]]
        rows = [(res, float(np.linalg.norm(alphas[res] - ref) / np.linalg.norm(ref))) for res in resolutions]
        digest = write_csv(args.out, ["resolution", "alpha_distance"], rows)
        seeds = {"features": args.seed}
    _run_manifest(_sidecar(args.out), args, seeds, _data_inputs(data=args.data), {args.out: digest},
                  {"total_s": time.perf_counter() - t0})
    for row in rows:
        print(*row, sep=",")


def cmd_semigroup(args) -> None:
    t0 = time.perf_counter()
    model = rfm.load_model(args.model)
    rows = []
    for j, path in enumerate(args.data, start=1):
        data = _load(path, args.resolution)
        _check_model_grid(model, data)
        errs = rfm.relative_test_errors(model, data, compose=j)
        rows.append((j, float(np.mean(errs))))
    digest = write_csv(args.out, ["j", "error"], rows)
    _run_manifest(_sidecar(args.out), args, {"features": model.seed},
                  _data_inputs(**{f"data_j{j}": p for j, p in enumerate(args.data, start=1)}),
                  {args.out: digest}, {"total_s": time.perf_counter() - t0})
    for row in rows:
        print(*row, sep=",")


def cmd_bb_demo(args) -> None:
    t0 = time.perf_counter()
    if args.n < 1 or any(m < 1 for m in args.m):
        raise ConfigError("--n and every --m must be positive")
    table = bridge.demo(args.n, args.m, args.seed, args.J, args.n_eval)
    header = list(table)
    digest = write_csv(args.out, header, zip(*(table[k] for k in header)))
    _run_manifest(_sidecar(args.out), args, {"data": args.seed, "features": args.seed}, {},
                  {args.out: digest}, {"total_s": time.perf_counter() - t0})
    for m, gap in bridge.sup_gaps(table).items():
        print(f"m={m}: sup|pred - oracle| = {gap:.4g}")


# -- parser -------------------------------------------------------------------------


def _add_feature_flags(p, required: bool = True) -> None:
    p.add_argument("--features", choices=["fourier", "pc"], required=required)
    p.add_argument("--m", type=int, required=required)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="ridge parameter (default 0 for fourier, 1e-8 for pc)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--J", type=int, default=None, help="KL modes per feature field (default: grid Nyquist count)")
    p.add_argument("--n", type=int, default=None, help="use only the first n samples")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--tau-prime", type=float, default=None)
    p.add_argument("--alpha-prime", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--beta", type=float, default=4.0)
    p.add_argument("--n-ref", type=int, default=512, help="reference mesh size of the Fourier transforms")
    p.add_argument("--s-plus", type=float, default=1 / 12)
    p.add_argument("--s-minus", type=float, default=-1 / 3)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fvrf", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/FFT worker threads (env FVRF_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset")
    g.add_argument("pde", choices=["burgers", "darcy"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, default=None, help="burgers: nodes including the repeated endpoint (default 1025)")
    g.add_argument("--r", type=int, default=None, help="darcy: nodes per side (default 257)")
    g.add_argument("--t", type=float, default=1.0)
    g.add_argument("--viscosity", type=float, default=1e-2)
    g.add_argument("--dt", type=float, default=None)
    g.add_argument("--no-dealias", action="store_true")
    g.add_argument("--tau", type=float, default=None, help="prior length scale (7 burgers, 3 darcy)")
    g.add_argument("--alpha", type=float, default=None, help="prior regularity (2.5 burgers, 2 darcy)")
    g.add_argument("--aplus", type=float, default=12.0)
    g.add_argument("--aminus", type=float, default=3.0)
    g.add_argument("--f", type=float, default=1.0, help="darcy: constant forcing")
    g.add_argument("--cg-tol", type=float, default=1e-10)
    g.add_argument("--cg-maxiter", type=int, default=1000)
    g.add_argument("--face-average", choices=["arithmetic", "harmonic"], default="arithmetic")
    g.add_argument("--save-resolution", type=int, default=None, help="restrict to this K (burgers) or r (darcy) before saving")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="fit a random feature model")
    t.add_argument("--data", required=True)
    t.add_argument("--resolution", type=int, default=None)
    t.add_argument("--model-out", required=True)
    _add_feature_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="expected relative test error")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--resolution", type=int, default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    tr = sub.add_parser("transfer", help="test error or learned coefficients across resolutions")
    tr.add_argument("--mode", choices=["error", "coefficients"], default="error")
    tr.add_argument("--model", default=None)
    tr.add_argument("--data", required=True)
    tr.add_argument("--resolutions", type=_int_list, required=True)
    tr.add_argument("--j-resolution", type=int, default=None,
                    help="coefficients mode: grid whose Nyquist count sets J (default: coarsest)")
    tr.add_argument("--out", required=True)
    _add_feature_flags(tr, required=False)
    tr.set_defaults(func=cmd_transfer)

    s = sub.add_parser("semigroup", help="error of the j-fold composed model against data at j*T")
    s.add_argument("--model", required=True)
    s.add_argument("--data", nargs="+", required=True)
    s.add_argument("--resolution", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_semigroup)

    b = sub.add_parser("bb-demo", help="Brownian bridge features against the kernel interpolant")
    b.add_argument("--n", type=int, default=32)
    b.add_argument("--m", type=_int_list, default=[50, 500, 5000])
    b.add_argument("--J", type=int, default=512)
    b.add_argument("--n-eval", type=int, default=257)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bb_demo)
    return p


def _thread_limit(n: int | None):
    if n is None:
        env = os.environ.get("FVRF_THREADS")
        n = int(env) if env else None
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigError("--threads must be positive")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            args.func(args)
    except (SolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError, FormatError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
