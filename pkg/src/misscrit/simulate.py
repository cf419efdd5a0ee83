"""Monte Carlo studies comparing criteria against holdout risk.

A study draws ``b`` training sets of size ``n`` and holdout sets of size
``n_tilde`` from a known mixture, fits every candidate by EM on the
unlabeled training data, and records criteria next to the holdout losses

    loss_yy = -mean log p_y(holdout y)
    loss_xy = -mean log p_x(holdout y, holdout z)

Differences are reported relative to a reference candidate as
``candidate - reference``; risk differences are scaled by ``2 n`` so they
are on the same scale as the criteria.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .criteria import CRITERIA, compute_criteria
from .em import EmConfig, em_map, fit_em
from .exceptions import (
    AllRestartsDegenerate,
    DegenerateFit,
    MisscritError,
    TooManyDegenerate,
)
from .fisher import bundle
from .model import CompleteDataset, MixtureParams, MixtureSpec, log_px, log_py, sample

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_DEGENERATE_FRACTION = 0.10
TABLE_CRITERIA = ("aic", "pdio", "aic_cd", "aic_xy")

# ---------------------------------------------------------------------------
# built-in configurations

SIM1_SPECS = {
    "sim1:model1": MixtureSpec(2, [[0, 1]], "sim1:model1", correctly_specified=True),
    "sim1:model2": MixtureSpec(2, None, "sim1:model2", correctly_specified=True),
}
SIM2_SPECS = {
    "sim2:model1": MixtureSpec(3, [[0, 1, 2]], "sim2:model1", correctly_specified=False),
    "sim2:model2": MixtureSpec(3, [[0], [1, 2]], "sim2:model2", correctly_specified=False),
    "sim2:model3": MixtureSpec(3, [[0, 2], [1]], "sim2:model3", correctly_specified=False),
    "sim2:model4": MixtureSpec(3, [[0, 1], [2]], "sim2:model4", correctly_specified=True),
    "sim2:model5": MixtureSpec(3, None, "sim2:model5", correctly_specified=True),
}
BUILTIN_SPECS = {**SIM1_SPECS, **SIM2_SPECS}

SIM1_TRUTH = MixtureParams(SIM1_SPECS["sim1:model2"], [0.6, 0.4], [-1.0, 1.0], [0.49, 0.49])
SIM2_TRUTH = MixtureParams(SIM2_SPECS["sim2:model5"], [0.5, 0.3, 0.2], [-2.0, 0.0, 3.0], [0.49, 0.49, 1.0])

DEFAULT_EM = EmConfig(init="true-anchored")


@dataclass(frozen=True, eq=False)
class StudyConfig:
    truth: MixtureParams
    candidates: tuple
    n: int
    n_tilde: int
    b: int
    master_seed: int = 0
    em: EmConfig = DEFAULT_EM
    penalty_route: str = "expected"
    reference: str = ""
    name: str = "study"

    def __post_init__(self):
        candidates = tuple(self.candidates)
        object.__setattr__(self, "candidates", candidates)
        if not candidates:
            raise ValueError("at least one candidate is required")
        labels = [c.label for c in candidates]
        if len(set(labels)) != len(labels):
            raise ValueError("candidate labels must be unique")
        if self.n < max(c.d for c in candidates):
            raise ValueError("n must be at least the largest candidate dimension")
        if self.n_tilde < self.n:
            raise ValueError("n_tilde must be >= n")
        if self.b < 2:
            raise ValueError("b must be >= 2")
        if self.penalty_route not in ("expected", "empirical"):
            raise ValueError("penalty_route must be 'expected' or 'empirical'")
        if not self.reference:
            object.__setattr__(self, "reference", labels[0])
        if self.reference not in labels:
            raise ValueError(f"reference {self.reference!r} is not a candidate")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "truth": self.truth.to_dict(),
            "candidates": [c.to_dict() for c in self.candidates],
            "n": self.n,
            "n_tilde": self.n_tilde,
            "b": self.b,
            "master_seed": self.master_seed,
            "em": self.em.to_dict(),
            "penalty_route": self.penalty_route,
            "reference": self.reference,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "StudyConfig":
        candidates = []
        for c in obj["candidates"]:
            candidates.append(BUILTIN_SPECS[c] if isinstance(c, str) else MixtureSpec.from_dict(c))
        truth = obj["truth"]
        if "spec" not in truth:
            k = len(truth["weights"])
            truth = {**truth, "spec": {"k": k, "label": "truth"},
                     "class_variances": truth.get("class_variances", truth.get("variances"))}
        return cls(
            truth=MixtureParams.from_dict(truth),
            candidates=tuple(candidates),
            n=int(obj["n"]),
            n_tilde=int(obj["n_tilde"]),
            b=int(obj["b"]),
            master_seed=int(obj.get("master_seed", 0)),
            em=EmConfig(**obj["em"]) if "em" in obj else DEFAULT_EM,
            penalty_route=obj.get("penalty_route", "expected"),
            reference=obj.get("reference", ""),
            name=obj.get("name", "study"),
        )


def builtin_sim1(n: int = 1000, b: int = 500, n_tilde: int = 5000, master_seed: int = 0,
                 full_scale: bool = False, **kwargs) -> StudyConfig:
    """Two-component study: tied (d=4) vs free (d=5) variances, both correct.

    Differences are Model 2 minus Model 1. ``full_scale`` switches to
    B=4000 and n_tilde=15000.
    """
    if full_scale:
        b, n_tilde = 4000, max(15000, n)
    return StudyConfig(SIM1_TRUTH, tuple(SIM1_SPECS.values()), n, n_tilde, b, master_seed,
                       reference="sim1:model1", name="sim1", **kwargs)


def builtin_sim2(n: int = 500, b: int = 1000, n_tilde: int = 2000, master_seed: int = 0,
                 full_scale: bool = False, **kwargs) -> StudyConfig:
    """Three-component study with five variance-tying patterns, relative to Model 4."""
    if full_scale:
        b = 10000
    return StudyConfig(SIM2_TRUTH, tuple(SIM2_SPECS.values()), n, n_tilde, b, master_seed,
                       reference="sim2:model4", name="sim2", **kwargs)


BUILTIN_STUDIES = {"sim1": builtin_sim1, "sim2": builtin_sim2}


# ---------------------------------------------------------------------------
# losses and seeds


def derive_seed(master_seed: int, replicate: int, role: str) -> int:
    """Stable 64-bit seed for one (replicate, role) stream."""
    digest = hashlib.blake2b(f"{master_seed}:{replicate}:{role}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def loss_yy(theta: MixtureParams, holdout) -> float:
    """Holdout cross-entropy of the observed-data density."""
    y = holdout.y if hasattr(holdout, "y") else np.asarray(holdout, dtype=float)
    return -float(np.mean(log_py(y, theta)))


def loss_xy(theta: MixtureParams, holdout: CompleteDataset) -> float:
    """Holdout cross-entropy of the complete-data density."""
    return -float(np.mean(log_px(holdout.y, holdout.z, theta)))


# ---------------------------------------------------------------------------
# study execution

RECORD_FIELDS = (
    "replicate", "model", "d", "degenerate", "converged", "iters", "loglik", "q",
    "penalty_trace", "aic", "tic", "pdio", "aic_cd", "aic_xy", "riskhat_xy",
    "loss_yy", "loss_xy", "max_loglik_drop", "fixed_point_residual",
)


def _fit_record(cfg: StudyConfig, spec: MixtureSpec, replicate: int, train, holdout) -> dict:
    rec = {"replicate": replicate, "model": spec.label, "d": spec.d}
    nan = float("nan")
    try:
        fit = fit_em(train, spec, cfg.em, anchor=cfg.truth)
        fisher = bundle(fit.theta_hat, train, cfg.penalty_route)
        report = compute_criteria(fit, fisher, train, spec.label)
    except (AllRestartsDegenerate, DegenerateFit, MisscritError) as exc:
        logger.debug("replicate %d, %s: degenerate (%s)", replicate, spec.label, exc)
        rec.update({k: nan for k in RECORD_FIELDS if k not in rec})
        rec.update(degenerate=True, converged=False, iters=0)
        return rec
    trace = np.asarray(fit.loglik_trace)
    drop = float(np.max(trace[:-1] - trace[1:])) if trace.size > 1 else 0.0
    residual = float(np.max(np.abs(em_map(fit.theta_hat, train).pack() - fit.theta_hat.pack())))
    rec.update(
        degenerate=False,
        converged=fit.converged,
        iters=fit.iters,
        loglik=report.loglik,
        q=report.q_at_hat,
        penalty_trace=report.penalty_trace,
        aic=report.aic,
        tic=report.tic,
        pdio=report.pdio,
        aic_cd=report.aic_cd,
        aic_xy=report.aic_xy,
        riskhat_xy=report.riskhat_xy_minus_entropy,
        loss_yy=loss_yy(fit.theta_hat, holdout),
        loss_xy=loss_xy(fit.theta_hat, holdout),
        max_loglik_drop=drop,
        fixed_point_residual=residual,
    )
    return rec


def run_replicate(cfg: StudyConfig, replicate: int) -> list:
    """Records for every candidate on one (train, holdout) draw."""
    train = sample(cfg.truth, cfg.n, derive_seed(cfg.master_seed, replicate, "train"))
    holdout = sample(cfg.truth, cfg.n_tilde, derive_seed(cfg.master_seed, replicate, "holdout"))
    y = train.incomplete()
    return [_fit_record(cfg, spec, replicate, y, holdout) for spec in cfg.candidates]


def _mean_se(values) -> dict:
    values = np.asarray(values, dtype=float)
    m = values.size
    if m == 0:
        return {"mean": float("nan"), "se": float("nan")}
    mean = float(math.fsum(values) / m)
    se = float(np.std(values, ddof=1) / math.sqrt(m)) if m > 1 else float("nan")
    return {"mean": mean, "se": se}


@dataclass(eq=False)
class StudyResult:
    config: StudyConfig
    records: list
    tables: dict = field(default_factory=dict)

    # -- per-replicate views -------------------------------------------------

    def valid_replicates(self) -> list:
        bad = {r["replicate"] for r in self.records if r["degenerate"]}
        return sorted({r["replicate"] for r in self.records} - bad)

    def matrix(self, column: str, replicates=None) -> np.ndarray:
        """Array ``(replicates, candidates)`` of one record column."""
        labels = [c.label for c in self.config.candidates]
        index = {(r["replicate"], r["model"]): r for r in self.records}
        reps = self.valid_replicates() if replicates is None else replicates
        return np.array([[index[(b, lab)][column] for lab in labels] for b in reps], dtype=float)

    def selections(self, criterion: str, replicates=None) -> np.ndarray:
        """Index of the selected candidate per valid replicate; ties to smaller d."""
        vals = self.matrix(criterion, replicates)
        d = np.array([c.d for c in self.config.candidates])
        out = []
        for row in vals:
            out.append(min(range(len(row)), key=lambda i: (row[i], d[i], i)))
        return np.array(out, dtype=int)

    def delta(self, column: str) -> np.ndarray:
        """Per-replicate ``candidate - reference`` differences."""
        labels = [c.label for c in self.config.candidates]
        vals = self.matrix(column)
        return vals - vals[:, [labels.index(self.config.reference)]]

    def selected_delta(self, criterion: str, column: str) -> np.ndarray:
        """Per-replicate loss of the selected model minus the reference's."""
        delta = self.delta(column)
        sel = self.selections(criterion)
        return delta[np.arange(sel.size), sel]

    # -- aggregation ---------------------------------------------------------

    def aggregate(self) -> dict:
        cfg = self.config
        labels = [c.label for c in cfg.candidates]
        valid = self.valid_replicates()
        degenerate = {lab: sum(1 for r in self.records if r["model"] == lab and r["degenerate"]) for lab in labels}
        nonconverged = {
            lab: sum(1 for r in self.records if r["model"] == lab and not r["degenerate"] and not r["converged"])
            for lab in labels
        }
        two_n = 2.0 * cfg.n
        per_model = {}
        if valid:
            deltas = {col: self.delta(col) for col in CRITERIA}
            loss_d = {"risk_yy": self.delta("loss_yy") * two_n, "risk_xy": self.delta("loss_xy") * two_n}
            for j, lab in enumerate(labels):
                per_model[lab] = {
                    "d": cfg.candidates[j].d,
                    "correctly_specified": cfg.candidates[j].correctly_specified,
                    **{f"delta_{col}": _mean_se(deltas[col][:, j]) for col in CRITERIA},
                    "two_n_delta_risk_yy": _mean_se(loss_d["risk_yy"][:, j]),
                    "two_n_delta_risk_xy": _mean_se(loss_d["risk_xy"][:, j]),
                }
        selection = {}
        selected_risk = {}
        for crit in CRITERIA:
            if not valid:
                break
            sel = self.selections(crit)
            selection[crit] = {lab: int(np.sum(sel == j)) for j, lab in enumerate(labels)}
            selected_risk[crit] = {
                "two_n_delta_risk_yy": _mean_se(self.selected_delta(crit, "loss_yy") * two_n),
                "two_n_delta_risk_xy": _mean_se(self.selected_delta(crit, "loss_xy") * two_n),
            }
        self.tables = {
            "schema_version": SCHEMA_VERSION,
            "tool_version": __version__,
            "config": cfg.to_dict(),
            "reference": cfg.reference,
            "effective_b": len(valid),
            "excluded_replicates": cfg.b - len(valid),
            "degenerate_fits": degenerate,
            "nonconverged_fits": nonconverged,
            "criteria_and_risk": per_model,
            "selection_frequency": selection,
            "selected_model_risk": selected_risk,
        }
        return self.tables

    # -- output ----------------------------------------------------------------

    def records_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema_version={SCHEMA_VERSION} tool_version={__version__} "
                  f"config={json.dumps(self.config.to_dict(), sort_keys=True)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for rec in self.records:
            writer.writerow([_fmt(rec[k]) for k in RECORD_FIELDS])
        return buf.getvalue()

    def to_markdown(self) -> str:
        t = self.tables or self.aggregate()
        cfg = self.config
        lines = [
            f"# {cfg.name}: n={cfg.n}, B={cfg.b} (effective {t['effective_b']}), "
            f"n_tilde={cfg.n_tilde}, seed={cfg.master_seed}, route={cfg.penalty_route}",
            "",
            f"Differences are candidate minus `{cfg.reference}`; standard errors in parentheses.",
            "",
        ]
        cols = [f"delta_{c}" for c in CRITERIA] + ["two_n_delta_risk_yy", "two_n_delta_risk_xy"]
        lines.append("| model | d | " + " | ".join(cols) + " |")
        lines.append("|---" * (len(cols) + 2) + "|")
        for lab, row in t["criteria_and_risk"].items():
            cells = [f"{row[c]['mean']:.4g} ({row[c]['se']:.3g})" for c in cols]
            lines.append(f"| {lab} | {row['d']} | " + " | ".join(cells) + " |")
        lines += ["", "## Selection frequency", ""]
        labels = [c.label for c in cfg.candidates]
        lines.append("| criterion | " + " | ".join(labels) + " |")
        lines.append("|---" * (len(labels) + 1) + "|")
        for crit, freq in t["selection_frequency"].items():
            lines.append(f"| {crit} | " + " | ".join(str(freq[lab]) for lab in labels) + " |")
        lines += ["", "## Risk of the selected model", ""]
        lines.append("| criterion | 2n delta risk_yy | 2n delta risk_xy |")
        lines.append("|---|---|---|")
        for crit, row in t["selected_model_risk"].items():
            yy, xy = row["two_n_delta_risk_yy"], row["two_n_delta_risk_xy"]
            lines.append(f"| {crit} | {yy['mean']:.4g} ({yy['se']:.3g}) | {xy['mean']:.4g} ({xy['se']:.3g}) |")
        lines += ["", f"Degenerate fits: {t['degenerate_fits']}; excluded replicates: {t['excluded_replicates']}", ""]
        return "\n".join(lines)

    def write(self, out_dir, markdown: bool = True) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tables = self.tables or self.aggregate()
        paths = [out / "records.csv", out / "tables.json"]
        paths[0].write_text(self.records_csv(), encoding="utf-8")
        paths[1].write_text(json.dumps(tables, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
        if markdown:
            paths.append(out / "tables.md")
            paths[2].write_text(self.to_markdown(), encoding="utf-8")
        return paths


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def run_study(cfg: StudyConfig, threads: int = 1, strict: bool = True, progress=None) -> StudyResult:
    """Run every replicate and aggregate.

    Replicates are independent and may run in ``threads`` worker processes;
    results are collected in replicate order, so the output does not depend
    on the worker count.

    Raises
    ------
    TooManyDegenerate
        If ``strict`` and more than 10% of replicates are degenerate for any
        candidate. The exception's ``result`` attribute holds the study.
    """
    work = partial(run_replicate, cfg)
    records = []
    if threads <= 1:
        for b in range(cfg.b):
            records.extend(work(b))
            if progress:
                progress(b + 1, cfg.b)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for i, recs in enumerate(pool.map(work, range(cfg.b), chunksize=max(1, cfg.b // (8 * threads)))):
                records.extend(recs)
                if progress:
                    progress(i + 1, cfg.b)
    result = StudyResult(cfg, records)
    tables = result.aggregate()
    worst = max(tables["degenerate_fits"].values())
    if strict and worst > MAX_DEGENERATE_FRACTION * cfg.b:
        exc = TooManyDegenerate(f"{worst} of {cfg.b} replicates degenerate for some candidate")
        exc.result = result
        raise exc
    return result


def with_overrides(cfg: StudyConfig, **overrides) -> StudyConfig:
    """Copy of ``cfg`` with the non-None keyword overrides applied."""
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


# ---------------------------------------------------------------------------
# divergence decomposition on finite supports


def kl(p, q) -> float:
    """Kullback-Leibler divergence of two positive arrays of equal shape."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(np.sum(p * (np.log(p) - np.log(q))))


def lemma1_check(g, f, h=None) -> dict:
    """Residuals of the complete-data divergence decompositions.

    ``g`` and ``f`` are strictly positive joint tables indexed ``[y, z]``
    summing to one. The two identities checked are::

        D_x(g; f) = D_x(g; f_{z|y} g_y) + D_y(g_y; f_y)
        D_x(g; f) = D_x(g; f_{z|y} g_y) + D_x(f_{z|y} g_y; f)

    plus ``D_y(g_y; f_y) = D_x(h_{z|y} g_y; h_{z|y} f_y)`` for the
    conditional of ``h`` (defaults to a uniform conditional). All
    divergences are computed by exhaustive summation.
    """
    g = np.asarray(g, dtype=float)
    f = np.asarray(f, dtype=float)
    if g.shape != f.shape or g.ndim != 2:
        raise ValueError("g and f must be 2-D tables of equal shape")
    if np.any(g <= 0) or np.any(f <= 0):
        raise ValueError("probabilities must be strictly positive")
    g = g / g.sum()
    f = f / f.sum()
    g_y, f_y = g.sum(axis=1), f.sum(axis=1)
    f_zy = f / f_y[:, None]
    d_x = kl(g, f)
    d_y = kl(g_y, f_y)
    h_zy = np.full_like(g, 1.0 / g.shape[1]) if h is None else np.asarray(h, float) / np.sum(h, axis=1, keepdims=True)
    mixed = f_zy * g_y[:, None]
    cond = kl(g, mixed)
    return {
        "d_x": d_x,
        "d_y": d_y,
        "conditional_term": cond,
        "residual_decomp1": abs(d_x - (cond + d_y)),
        "residual_decomp2": abs(d_x - (cond + kl(mixed, f))),
        "residual_marginal": abs(d_y - kl(h_zy * g_y[:, None], h_zy * f_y[:, None])),
    }


def random_joint(rng: np.random.Generator, shape=(3, 3)) -> np.ndarray:
    p = rng.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
    p = np.maximum(p, 1e-12)
    return p / p.sum()


def lemma1_suite(n_pairs: int = 100, seed: int = 0, shape=(3, 3)) -> list:
    """Residuals on random pairs plus pairs sharing the conditional of z given y."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_pairs):
        g = random_joint(rng, shape)
        f = random_joint(rng, shape)
        if i % 4 == 3:
            # share g's conditional with a different y-marginal
            f_y = rng.dirichlet(np.ones(shape[0]))
            f = (g / g.sum(axis=1, keepdims=True)) * f_y[:, None]
        out.append(lemma1_check(g, f, random_joint(rng, shape)))
    return out
