"""Command line entry point: ``labelshift estimate|certify|simulate|distances|study``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from labelshift.core import (
    InvalidInputError,
    LabelShiftError,
    NumericalError,
    PreconditionError,
    SimplexVector,
    SingularMatrixError,
    parse_vector,
    read_distribution_json,
    read_matrix_csv,
    stack_on_universe,
    to_jsonable,
    validate_eval_matrix,
    write_matrix_csv,
)
from labelshift.distances import delta_star, hellinger_vectors
from labelshift.harness import SCHEMA_VERSION, StudySpec, run_study
from labelshift.likelihood import EmConfig, estimate_mle, predictor_to_evals
from labelshift.rho import CERTIFICATE_THRESHOLD, certify
from labelshift.scenarios import ScenarioSpec, bayes_predictor, eval_matrix, sample_target_labeled

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("labelshift")


def _emit(report: dict, out_dir=None, name: str = "report.json") -> None:
    report = {"schema_version": SCHEMA_VERSION, **to_jsonable(report)}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc


def cmd_estimate(args) -> None:
    data = read_matrix_csv(args.input)
    if args.mode == "predictor":
        if args.alpha is None:
            raise InvalidInputError("--alpha is required with --mode predictor")
        L = predictor_to_evals(data, parse_vector(args.alpha))
    else:
        L = data
    L = validate_eval_matrix(L)
    res = estimate_mle(L, EmConfig(max_iterations=args.max_iter, tolerance=args.tol))
    report = res.to_dict()
    report["mode"] = args.mode
    if args.certify:
        cert = certify(L, res.beta_hat, threshold=args.threshold)
        report["certificate"] = cert.upsilon
        report["certified"] = cert.is_certified
        report["certificate_status"] = cert.status
    _emit(report, args.out)


def cmd_certify(args) -> None:
    L = read_matrix_csv(args.evals)
    beta = SimplexVector(parse_vector(args.beta))
    _emit(certify(L, beta, threshold=args.threshold).to_dict(), args.out)


def cmd_simulate(args) -> None:
    spec = ScenarioSpec.from_dict(_load_json(args.spec))
    if args.seed is not None:
        spec = spec.with_(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atoms, origin = sample_target_labeled(spec)
    (out / "samples.csv").write_text("".join(f"{a},{o}\n" for a, o in zip(atoms, origin)), encoding="utf-8")
    comps = spec.eval_components
    write_matrix_csv(out / "evals.csv", eval_matrix(atoms, comps))
    if spec.alpha is not None:
        write_matrix_csv(out / "predictor.csv", bayes_predictor(comps, spec.alpha).rows_for(atoms))
    truth = {
        "beta_star": spec.beta_star.tolist(),
        "alpha": None if spec.alpha is None else spec.alpha.tolist(),
        "n": spec.n,
        "seed": spec.seed,
        "well_posed": spec.is_well_posed,
        "realized_misspecification": spec.realized_misspecification(),
        "contaminated_samples": int((origin == -1).sum()),
        "outlier_samples": int((origin == -2).sum()),
        "spec": spec.to_dict(),
    }
    _emit(truth, out, name="truth.json")


def cmd_distances(args) -> None:
    comps = []
    for p in args.files:
        d = read_distribution_json(p)
        comps.extend(d if isinstance(d, list) else [d])
    if len(comps) < 2:
        raise InvalidInputError("distances needs at least two distributions")
    _, F = stack_on_universe(comps)
    k = len(comps)
    H = np.array([[hellinger_vectors(F[:, i], F[:, j]) for j in range(k)] for i in range(k)])
    T = np.array([[0.5 * np.abs(F[:, i] - F[:, j]).sum() for j in range(k)] for i in range(k)])
    exact = delta_star(comps)
    report = {
        "hellinger": float(H[0, 1]) if k == 2 else H.tolist(),
        "tv": float(T[0, 1]) if k == 2 else T.tolist(),
        "delta_star": exact.delta_star,
        "qp_lower_bound": exact.lower_bound_l2,
        "separation": exact.to_dict(),
    }
    _emit(report, args.out)


def cmd_study(args) -> None:
    raw = _load_json(args.spec)
    if args.seed is not None:
        raw.setdefault("base_scenario", {})["seed"] = args.seed
    study = StudySpec.from_dict(raw)
    report = run_study(study, threads=args.threads)
    if args.out is not None:
        report.write(args.out)
        if not args.no_plot:
            from labelshift.plotting import plot_study
            plot_study(report, args.out)
    sys.stdout.write(report.to_json())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelshift", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="maximum likelihood label distribution")
    p.add_argument("--mode", choices=("evals", "predictor"), default="evals")
    p.add_argument("--input", required=True, help="headerless CSV: density evaluations or predictor outputs")
    p.add_argument("--alpha", help="source prior, comma separated (predictor mode)")
    p.add_argument("--certify", action="store_true", help="also compute the rho certificate")
    p.add_argument("--threshold", type=float, default=CERTIFICATE_THRESHOLD)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("certify", help="rho-estimator certificate for candidate weights")
    p.add_argument("--evals", required=True)
    p.add_argument("--beta", required=True)
    p.add_argument("--threshold", type=float, default=CERTIFICATE_THRESHOLD)
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("simulate", help="draw a target sample from a scenario")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("distances", help="Hellinger/TV distances and the separation constant")
    p.add_argument("files", nargs="*")
    p.add_argument("--spec", help="JSON file with a list of distributions or a 'components' key")
    p.add_argument("--out")
    p.set_defaults(func=cmd_distances)

    p = sub.add_parser("study", help="Monte Carlo rate/robustness study")
    p.add_argument("--spec", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "distances" and args.spec:
        args.files = [args.spec, *args.files]
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    try:
        args.func(args)
    except (NumericalError, SingularMatrixError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL
    except (InvalidInputError, PreconditionError, LabelShiftError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
