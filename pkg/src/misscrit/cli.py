"""Command-line interface: ``misscrit {fit,criteria,simulate,lemma-check}``.

Exit codes: 0 success, 1 error, 2 degenerate fit, 3 too many degenerate
replicates in a study.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .criteria import CRITERIA, compute_criteria, reports_to_csv, select
from .em import INIT_METHODS, EmConfig, fit_em
from .exceptions import AllRestartsDegenerate, DegenerateFit, MisscritError, TooManyDegenerate
from .fisher import bundle
from .model import MixtureSpec, read_csv, read_spec_file
from .simulate import BUILTIN_SPECS, BUILTIN_STUDIES, StudyConfig, lemma1_suite, run_study, with_overrides

EXIT_OK, EXIT_ERROR, EXIT_DEGENERATE, EXIT_TOO_MANY_DEGENERATE = 0, 1, 2, 3

log = logging.getLogger("misscrit")


def resolve_spec(selector: str) -> MixtureSpec:
    """A built-in name like ``sim1:model2`` or a path to a JSON spec file."""
    if selector in BUILTIN_SPECS:
        return BUILTIN_SPECS[selector]
    path = Path(selector)
    if not path.exists():
        raise FileNotFoundError(f"spec {selector!r} is neither a built-in ({', '.join(BUILTIN_SPECS)}) nor a file")
    return read_spec_file(path)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MISSCRIT_SEED")
    return int(env) if env else 0


def _em_config(args, default_init: str = "quantile") -> EmConfig:
    base = EmConfig(init=default_init)
    return EmConfig(
        max_iters=args.max_iters or base.max_iters,
        tol_loglik=args.tol or base.tol_loglik,
        tol_param=base.tol_param,
        n_restarts=args.restarts or base.n_restarts,
        init=args.init or default_init,
        seed=_seed(args),
    )


def _load_data(path):
    if not path:
        raise ValueError("--data is required")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"data file not found: {p}")
    return read_csv(p)


def _emit(text: str, out: str | None, filename: str) -> None:
    if out:
        target = Path(out)
        target.mkdir(parents=True, exist_ok=True)
        (target / filename).write_text(text, encoding="utf-8")
        log.info("wrote %s", target / filename)
    else:
        sys.stdout.write(text)


def _meta(args, extra=None) -> dict:
    meta = {"tool": "misscrit", "tool_version": __version__, "seed": _seed(args), "command": args.command}
    meta.update(extra or {})
    return meta


def cmd_fit(args) -> int:
    data = _load_data(args.data)
    if args.init == "true-anchored":
        raise ValueError("true-anchored init needs a generating point; use it through simulate")
    spec = resolve_spec(args.spec[0] if args.spec else "sim1:model2")
    cfg = _em_config(args)
    try:
        fit = fit_em(data.y, spec, cfg)
    except AllRestartsDegenerate as exc:
        print(f"degenerate fit: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    payload = {"meta": _meta(args, {"em": cfg.to_dict(), "spec": spec.to_dict(), "data": str(args.data)}),
               **fit.to_dict()}
    _emit(json.dumps(payload, indent=2) + "\n", args.out, "fit.json")
    if not fit.converged:
        print(f"EM did not converge in {fit.iters} iterations", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def criteria_reports(data, specs, cfg: EmConfig, route: str):
    """Fit every spec and score it; the library path the CLI reproduces."""
    reports = []
    for spec in specs:
        fit = fit_em(data.y, spec, cfg)
        reports.append(compute_criteria(fit, bundle(fit.theta_hat, data.y, route), data.y, spec.label))
    return reports


def _markdown_table(reports, selected) -> str:
    cols = ["model", "d", "loglik", "q", "penalty_trace", "aic", "tic", "pdio", "aic_cd", "aic_xy"]
    lines = ["| " + " | ".join(cols) + " |", "|---" * len(cols) + "|"]
    for r in reports:
        cells = [r.model_label, str(r.d)] + [f"{v:.6g}" for v in r.csv_row()[2:]]
        lines.append("| " + " | ".join(cells) + " |")
    lines += ["", "| criterion | selected |", "|---|---|"]
    lines += [f"| {c} | {m} |" for c, m in selected.items()]
    return "\n".join(lines) + "\n"


def cmd_criteria(args) -> int:
    data = _load_data(args.data)
    if not args.spec:
        raise ValueError("at least one --spec is required")
    specs = [resolve_spec(s) for s in args.spec]
    cfg = _em_config(args)
    try:
        reports = criteria_reports(data, specs, cfg, args.penalty_route)
    except (AllRestartsDegenerate, DegenerateFit) as exc:
        print(f"degenerate fit: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    selected = {c: select(reports, c) for c in CRITERIA}
    fmt = args.format or "json"
    if fmt == "csv":
        _emit(reports_to_csv(reports), args.out, "criteria.csv")
    elif fmt == "md":
        _emit(_markdown_table(reports, selected), args.out, "criteria.md")
    else:
        payload = {
            "meta": _meta(args, {"em": cfg.to_dict(), "penalty_route": args.penalty_route, "data": str(args.data)}),
            "reports": [r.to_dict() for r in reports],
            "selected": selected,
        }
        _emit(json.dumps(payload, indent=2) + "\n", args.out, "criteria.json")
    return EXIT_OK


def study_config(args) -> StudyConfig:
    if bool(args.builtin) == bool(args.config):
        raise ValueError("give exactly one of --builtin or --config")
    if args.builtin:
        if args.builtin not in BUILTIN_STUDIES:
            raise ValueError(f"unknown builtin {args.builtin!r}; choose from {sorted(BUILTIN_STUDIES)}")
        cfg = BUILTIN_STUDIES[args.builtin](full_scale=args.full_scale)
    else:
        with open(args.config, encoding="utf-8") as fh:
            cfg = StudyConfig.from_dict(json.load(fh))
    em = cfg.em
    em = EmConfig(
        max_iters=args.max_iters or em.max_iters,
        tol_loglik=args.tol or em.tol_loglik,
        tol_param=em.tol_param,
        n_restarts=args.restarts or em.n_restarts,
        init=args.init or em.init,
        seed=em.seed,
    )
    seed = args.seed if args.seed is not None else (int(os.environ["MISSCRIT_SEED"]) if os.environ.get("MISSCRIT_SEED") else None)
    n_tilde = args.n_tilde
    if n_tilde is None and args.n is not None and args.n > cfg.n_tilde:
        n_tilde = args.n
    return with_overrides(cfg, n=args.n, b=args.b, n_tilde=n_tilde, master_seed=seed,
                          penalty_route=args.penalty_route, em=em)


def cmd_simulate(args) -> int:
    cfg = study_config(args)
    out = Path(args.out or f"study-{cfg.name}")

    def progress(done, total):
        if done % max(1, total // 20) == 0 or done == total:
            log.info("replicate %d/%d", done, total)

    code = EXIT_OK
    try:
        result = run_study(cfg, threads=args.threads, progress=progress)
    except TooManyDegenerate as exc:
        print(f"error: {exc}", file=sys.stderr)
        result = exc.result
        code = EXIT_TOO_MANY_DEGENERATE
    fmt = args.format or "md"
    result.write(out, markdown=True)
    if fmt == "json":
        print(json.dumps(result.tables, indent=2, default=float))
    elif fmt == "csv":
        print(result.records_csv(), end="")
    else:
        print(result.to_markdown())
    return code


def cmd_lemma_check(args) -> int:
    residuals = lemma1_suite(n_pairs=args.b or 100, seed=_seed(args))
    keys = ("residual_decomp1", "residual_decomp2", "residual_marginal")
    worst = {k: max(r[k] for r in residuals) for k in keys}
    payload = {"meta": _meta(args), "pairs": len(residuals), "max_residuals": worst,
               "passed": all(v <= 1e-12 for v in worst.values())}
    print(json.dumps(payload, indent=2))
    return EXIT_OK if payload["passed"] else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="misscrit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (fallback: $MISSCRIT_SEED, then 0)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--format", choices=("json", "csv", "md"), default=None)
    common.add_argument("--tol", type=float, default=None, help="EM tolerance on per-observation log-likelihood change")
    common.add_argument("--max-iters", type=int, default=None)
    common.add_argument("--restarts", type=int, default=None)
    common.add_argument("--init", choices=INIT_METHODS, default=None)
    common.add_argument("--penalty-route", choices=("expected", "empirical"), default="expected")
    common.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("fit", parents=[common], help="fit one mixture spec to a y CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", action="append", help="built-in selector (e.g. sim1:model2) or JSON spec file")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("criteria", parents=[common], help="compute criteria for one or more specs")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", action="append", help="repeat for each candidate")
    p.set_defaults(func=cmd_criteria)

    p = sub.add_parser("simulate", parents=[common], help="run a Monte Carlo study")
    p.add_argument("--builtin", choices=sorted(BUILTIN_STUDIES))
    p.add_argument("--config", help="JSON study configuration")
    p.add_argument("--n", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--n-tilde", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--full-scale", action="store_true", help="paper-scale B and holdout size")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("lemma-check", parents=[common], help="check the divergence decomposition on random tables")
    p.add_argument("--b", type=int, default=100, help="number of random pairs")
    p.set_defaults(func=cmd_lemma_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError, MisscritError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
