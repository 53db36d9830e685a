"""Command-line front end.

Exit codes: 0 success, 1 runtime or convergence failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import bell, experiment, optics, qmath, tomography

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2

G2_RANGE = (0.0, 0.2)
OVERLAP_RANGE = (0.0, 1.0)
RATIO_RANGE = (0.5, 2.0)


class InputError(Exception):
    pass


def bundled_reference_table() -> str:
    return resources.files("qdbell").joinpath("data/reference_counts.csv").read_text(encoding="utf-8")


def _ranged(name: str, lo: float, hi: float):
    def parse(text: str) -> float:
        try:
            x = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not lo <= x <= hi:
            raise argparse.ArgumentTypeError(f"{name}={x:g} outside the permitted interval [{lo:g}, {hi:g}]")
        return x

    return parse


def _angles(text: str) -> tuple[float, float, float, float]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"angles must be four comma-separated numbers, got {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("expected four angles: alpha,alpha',beta,beta'")
    return vals


def _nonneg_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}") from None
    if n < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {n}")
    return n


def _add_source_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--g2", type=_ranged("g2", *G2_RANGE), default=0.0, help="source g2(0), in [0, 0.2]")
    p.add_argument("--overlap", type=_ranged("overlap", *OVERLAP_RANGE), default=1.0,
                   help="wavepacket overlap V, in [0, 1]")
    p.add_argument("--ratio", type=_ranged("ratio", *RATIO_RANGE), default=1.0,
                   help="beamsplitter R/T, in [0.5, 2]")


def _add_run_flags(p: argparse.ArgumentParser, shots: int) -> None:
    p.add_argument("--shots", type=_nonneg_int, default=shots)
    p.add_argument("--seed", type=_nonneg_int, default=0, help="RNG seed (default 0)")
    p.add_argument("--threads", type=_nonneg_int, default=1)


def _params(args) -> optics.SourceParams:
    return optics.SourceParams.from_ratio(args.g2, args.overlap, args.ratio)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _summary(**fields) -> None:
    def clean(v):
        if isinstance(v, float):
            return qmath.fmt_num(v)
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v

    print(json.dumps({k: clean(v) for k, v in fields.items()}))


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _chsh_report(table: bell.CountTable, args) -> bell.ChshResult:
    if args.best:
        return bell.chsh_best(table, *bell.grid_for(*args.angles))
    alphas, betas = bell.grid_for(*args.angles)
    missing = table.missing(alphas, betas)
    if missing:
        a, b = missing[0]
        raise InputError(f"count table is missing setting alpha={a:g}, beta={b:g}")
    return bell.chsh_S(table, *args.angles)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_analyze_bell(args) -> int:
    text = _read(args.input) if args.input else bundled_reference_table()
    table = bell.CountTable.from_csv(text)
    res = _chsh_report(table, args)
    if args.json:
        _summary(S=res.S, sigma_S=res.sigma_S, E=list(res.E_values), sigma_E=list(res.sigma_E),
                 angles=list(res.angles), violation_sigmas=res.violation_sigmas, violates=res.violates)
        return EXIT_OK
    a, a2, b, b2 = res.angles
    labels = [(a, b), (a2, b), (a2, b2), (a, b2)]
    for (x, y), e, s in zip(labels, res.E_values, res.sigma_E):
        print(f"E({x:g}, {y:g}) = {e:+.4f} +- {s:.4f}")
    print(f"S = {res.S:.4f} +- {res.sigma_S:.4f}")
    if res.violates:
        print(f"violation: S exceeds 2 by {res.violation_sigmas:.2f} standard deviations")
    else:
        print("no violation")
    return EXIT_OK


def cmd_simulate_bell(args) -> int:
    cfg = experiment.ExperimentConfig(shots=args.shots, seed=args.seed)
    p = _params(args)
    alphas, betas = bell.grid_for(*args.angles)
    table = experiment.run_bell_experiment(cfg, p, alphas, betas, threads=args.threads)
    if args.out:
        Path(args.out).write_text(table.to_csv(), encoding="utf-8")
    res = bell.chsh_best(table, alphas, betas) if args.best else bell.chsh_S(table, *args.angles)
    rho = optics.rho_model(p)
    _summary(S=res.S, sigma_S=res.sigma_S, E=list(res.E_values), angles=list(res.angles),
             negativity=qmath.negativity(rho), shots=args.shots, seed=args.seed)
    return EXIT_OK


def cmd_model_rho(args) -> int:
    rho = optics.rho_model(_params(args))
    _emit(rho.to_json(), args.out)
    if args.out:
        _summary(negativity=qmath.negativity(rho), out=args.out)
    return EXIT_OK


def cmd_oracle_compare(args) -> int:
    p = _params(args)
    oracle, success = optics.oracle_rho(p)
    model = optics.rho_model(p)
    _summary(
        fidelity=qmath.fidelity(oracle, model),
        max_abs_diff=float(np.max(np.abs(oracle.matrix - model.matrix))),
        success_prob=success,
        negativity=qmath.negativity(model),
    )
    return EXIT_OK


def cmd_tomo_simulate(args) -> int:
    cfg = experiment.ExperimentConfig(shots=args.shots, seed=args.seed)
    counts = experiment.run_tomo_experiment(cfg, _params(args), pairs_per_setting=args.pairs, exact=args.exact)
    _emit(counts.to_csv(), args.out)
    return EXIT_OK


def cmd_tomo_reconstruct(args) -> int:
    counts = tomography.TomoCounts.from_csv(_read(args.input))
    status = EXIT_OK
    if args.method == "linear":
        rho_raw = tomography.linear_inversion(counts)
        try:
            rho = qmath.validate_density(rho_raw)
        except qmath.InvalidDensityMatrix as exc:
            print(f"linear inversion gave an unphysical matrix: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        extra = {}
    else:
        res = tomography.mle_reconstruct(counts, tol=args.tol, max_iter=args.max_iter)
        rho = res.rho
        extra = {"converged": res.converged, "iterations": res.n_iter, "log_likelihood": res.log_likelihood}
        if not res.converged:
            print(f"MLE did not converge: {res.message}", file=sys.stderr)
            status = EXIT_RUNTIME
    if args.out:
        Path(args.out).write_text(rho.to_json(), encoding="utf-8")
    fields = {"negativity": qmath.negativity(rho), **extra}
    if args.g2 is not None:
        model = optics.rho_model(optics.SourceParams.from_ratio(args.g2, args.overlap, args.ratio))
        fields["fidelity_to_model"] = qmath.fidelity(rho, model)
    _summary(**fields)
    return status


def cmd_histogram(args) -> int:
    cfg = experiment.ExperimentConfig(shots=args.shots, seed=args.seed,
                                      wavepacket_width_ps=args.width_ps)
    h = experiment.simulate_histogram(cfg, _params(args), (args.alpha, args.beta), threads=args.threads)
    if args.out:
        Path(args.out).write_text(h.to_csv(), encoding="utf-8")
    try:
        norm = experiment.normalized_C(h, cfg)
    except experiment.ZeroNormalization:
        norm = None
    _summary(central=experiment.central_window_count(h, cfg.window_ns), total=h.total, normalized_C=norm)
    return EXIT_OK


def cmd_qber(args) -> int:
    if args.input:
        rho = qmath.density_from_json(_read(args.input))
    else:
        rho = optics.rho_model(_params(args))
    _summary(qber=bell.qber_estimate(rho, args.basis), basis_deg=args.basis)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdbell",
        description="Polarization entanglement from two single photons: simulation and analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-bell", help="CHSH analysis of a count table CSV")
    p.add_argument("input", nargs="?", help="alpha_deg,beta_deg,count CSV (default: bundled reference table)")
    p.add_argument("--angles", type=_angles, default=bell.REFERENCE_ANGLES, help="alpha,alpha',beta,beta'")
    p.add_argument("--best", action="store_true", help="maximize S over assignments from the angle grid")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_analyze_bell)

    p = sub.add_parser("simulate-bell", help="Monte Carlo Bell run; table CSV to --out, summary JSON to stdout")
    _add_source_flags(p)
    _add_run_flags(p, shots=100_000)
    p.add_argument("--angles", type=_angles, default=bell.SINGLET_ANGLES)
    p.add_argument("--best", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate_bell)

    p = sub.add_parser("model-rho", help="closed-form post-selected density matrix (JSON)")
    _add_source_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_model_rho)

    p = sub.add_parser("oracle-compare", help="brute-force mode expansion vs closed form")
    _add_source_flags(p)
    p.set_defaults(func=cmd_oracle_compare)

    p = sub.add_parser("tomo-simulate", help="simulated 16-setting tomography counts (CSV)")
    _add_source_flags(p)
    _add_run_flags(p, shots=100_000)
    p.add_argument("--pairs", type=float, default=None, help="post-selected pairs per setting")
    p.add_argument("--exact", action="store_true", help="expected counts instead of samples")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tomo_simulate)

    p = sub.add_parser("tomo-reconstruct", help="reconstruct a density matrix from tomography CSV")
    p.add_argument("input")
    p.add_argument("--method", choices=("mle", "linear"), default="mle")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=_nonneg_int, default=10_000)
    p.add_argument("--g2", type=_ranged("g2", *G2_RANGE), default=None,
                   help="if given, report fidelity to the model with these parameters")
    p.add_argument("--overlap", type=_ranged("overlap", *OVERLAP_RANGE), default=1.0)
    p.add_argument("--ratio", type=_ranged("ratio", *RATIO_RANGE), default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tomo_reconstruct)

    p = sub.add_parser("histogram", help="simulated coincidence histogram (tau_ns,count CSV)")
    _add_source_flags(p)
    _add_run_flags(p, shots=100_000)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=90.0)
    p.add_argument("--width-ps", type=float, default=150.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("qber", help="bit error estimate from a density matrix or the source model")
    _add_source_flags(p)
    p.add_argument("--input", help="density-matrix JSON (default: model from source flags)")
    p.add_argument("--basis", type=float, default=0.0)
    p.set_defaults(func=cmd_qber)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (optics.DegeneratePostselection, np.linalg.LinAlgError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (InputError, LookupError, ValueError) as exc:
        # parse errors, missing settings, invalid matrices, out-of-range config
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

if __name__ == "__main__":
    sys.exit(main())
