"""Experiment runners behind the command line: Gaussian benchmark, empirical
bounds from option chains, and the LP verification suite.

Each runner takes an :class:`ExperimentConfig`, writes CSV artifacts plus a
``manifest.yaml`` into ``cfg.out`` and returns a result whose ``passed``
flag drives the process exit code.
"""

from __future__ import annotations

import logging
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .closed_form import GaussianInstance, exact_value, random_instance
from .coupling import PortfolioVariance, ot_bounds
from .distributions import DomainError, convex_order, default_grid, potential, save_tabulated_csv
from .lp_oracle import counterexample_d3, random_monotone_instance, verify_monotone_d2
from .market_data import implied_density, load_chain, save_chain, synthetic_chain, to_return_marginal
from .neural_dual import FULL, REDUCED, TrainConfig, VmotInstance, primal_density, train

__all__ = [
    "ExperimentConfig",
    "load_config",
    "train_config",
    "run_gaussian_benchmark",
    "run_empirical_bounds",
    "run_lp_checks",
    "ExperimentResult",
]

log = logging.getLogger(__name__)

KINDS = ("gaussian", "empirical", "lp")

GAUSSIAN_DEFAULTS = {"d": 2, "n_instances": 5, "sigma_range": [1.0, 2.0], "rho_range": [2.0, 3.0],
                     "tolerance": 0.05, "min_reduced_wins": 0.8, "gamma": 1000.0, "heatmap": True,
                     "assume_monotone": False}
EMPIRICAL_DEFAULTS = {"weights": [0.5, 0.5], "gamma": 1000.0, "ot_atoms": 100_000, "chains": None,
                      "synthetic": {"spot": 100.0, "t1": 35 / 365, "t2": 63 / 365, "n_strikes": 100,
                                    "vols": [[0.15, 0.45], [0.45, 0.15]]}}
LP_DEFAULTS = {"n_instances": 20, "eps": 0.1, "max_atoms": 8, "tv_tol": 1e-7}


@dataclass
class ExperimentConfig:
    """Structured experiment description, normally read from YAML.

    ``train`` holds overrides of :class:`TrainConfig` fields; the section for
    the chosen ``kind`` (``gaussian``, ``empirical`` or ``lp``) is merged onto
    its defaults.
    """

    kind: str
    name: str = ""
    seed: int = 0
    budget: str = "desk"
    formulation: str = "both"
    out: str = "runs"
    train: dict = field(default_factory=dict)
    gaussian: dict = field(default_factory=dict)
    empirical: dict = field(default_factory=dict)
    lp: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"experiment kind must be one of {KINDS}")
        if self.budget not in ("desk", "paper"):
            raise DomainError("budget must be 'desk' or 'paper'")
        if self.formulation not in ("full", "reduced", "both"):
            raise DomainError("formulation must be 'full', 'reduced' or 'both'")
        self.gaussian = {**GAUSSIAN_DEFAULTS, **(self.gaussian or {})}
        emp = {**EMPIRICAL_DEFAULTS, **(self.empirical or {})}
        emp["synthetic"] = {**EMPIRICAL_DEFAULTS["synthetic"], **(emp.get("synthetic") or {})}
        self.empirical = emp
        self.lp = {**LP_DEFAULTS, **(self.lp or {})}
        self.name = self.name or self.kind

    @property
    def formulations(self) -> list[str]:
        return [FULL, REDUCED] if self.formulation == "both" else [self.formulation]


def load_config(path, **overrides) -> ExperimentConfig:
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise DomainError("config file must hold a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(data) - set(ExperimentConfig.__dataclass_fields__)
    if unknown:
        raise DomainError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**data)


def train_config(cfg: ExperimentConfig, gamma: float, seed: int, **extra) -> TrainConfig:
    base = TrainConfig.paper if cfg.budget == "paper" else TrainConfig.desk
    kw = {"gamma": gamma, "seed": seed, "output_scale": "auto", **extra, **cfg.train}
    if "hidden" in kw:
        kw["hidden"] = tuple(kw["hidden"])
    return base(**kw)


@dataclass
class ExperimentResult:
    kind: str
    passed: bool
    checks: dict[str, bool]
    rows: list[dict]
    out: Path

    def summary_lines(self) -> list[str]:
        return [f"{'PASS' if ok else 'FAIL'}  {name}" for name, ok in self.checks.items()]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    keys = list(rows[0])
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[k]) for k in keys) + "\n")


def _manifest(cfg: ExperimentConfig, out: Path, result: ExperimentResult, seconds: float) -> None:
    conf = asdict(cfg)
    for other in KINDS:
        if other != cfg.kind:
            conf.pop(other)
    if cfg.kind == "lp":
        conf.pop("train")
    doc = {
        "config": conf,
        "versions": {"vmot": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "seconds": round(seconds, 3),
        "checks": {k: bool(v) for k, v in result.checks.items()},
        "passed": bool(result.passed),
    }
    (out / "manifest.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))


def _prepare(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# Gaussian benchmark


def _gaussian_instances(cfg: ExperimentConfig) -> list[GaussianInstance]:
    g = cfg.gaussian
    if "sigmas" in g:
        w = np.asarray(g["weights"], dtype=float)
        return [GaussianInstance(g["sigmas"], g["rhos"], np.zeros((w.size, w.size)), np.outer(w, w))]
    rng = np.random.default_rng(cfg.seed)
    return [random_instance(int(g["d"]), rng, tuple(g["sigma_range"]), tuple(g["rho_range"]))[0]
            for _ in range(int(g["n_instances"]))]


def run_gaussian_benchmark(cfg: ExperimentConfig) -> ExperimentResult:
    """Neural bounds against the closed form on random centred Gaussian instances."""
    t0 = time.perf_counter()
    out = _prepare(cfg)
    g = cfg.gaussian
    instances = _gaussian_instances(cfg)
    if REDUCED in cfg.formulations and instances[0].d > 2 and not g["assume_monotone"]:
        raise DomainError("the reduced formulation fixes a comonotone first period; for more than two assets "
                          "set gaussian.assume_monotone: true to acknowledge this")
    rows = []
    for k, inst in enumerate(instances):
        exact = exact_value(inst)
        mus, nus = inst.marginals()
        for form in cfg.formulations:
            vi = VmotInstance(mus, nus, inst.cost, "max", form)
            log.info("instance %d, %s formulation: sample dimension %d", k, form, vi.sample_dim)
            state, rep = train(vi, train_config(cfg, float(g["gamma"]), cfg.seed + k))
            rep.to_csv(out / f"convergence_{k}_{form}.csv")
            if g["heatmap"] and inst.d == 2 and k == 0:
                primal_density(state, vi, n_grid=30, n_inner=1024).to_csv(out / f"heatmap_{k}_{form}.csv")
            rows.append({"instance": k, "d": inst.d, "formulation": form, "sample_dim": vi.sample_dim,
                         "exact": exact, "mean": rep.final_mean, "std": rep.final_std,
                         "rel_error": abs(rep.final_mean - exact) / abs(exact), "seconds": round(rep.seconds, 2),
                         "sigmas": " ".join(f"{s:.6g}" for s in inst.sigmas),
                         "rhos": " ".join(f"{r:.6g}" for r in inst.rhos)})
    checks = {}
    red = [r for r in rows if r["formulation"] == REDUCED]
    if red:
        checks[f"reduced within {g['tolerance']:.0%} of exact"] = all(r["rel_error"] <= g["tolerance"] for r in red)
    if len(cfg.formulations) == 2:
        wins = sum(r["rel_error"] <= f["rel_error"] for r, f in
                   zip(red, [r for r in rows if r["formulation"] == FULL]))
        checks[f"reduced gap <= full gap on >= {g['min_reduced_wins']:.0%} of instances"] = (
            wins >= g["min_reduced_wins"] * len(red))
    _write_rows(out / "summary.csv", rows)
    res = ExperimentResult("gaussian", all(checks.values()), checks, rows, out)
    _manifest(cfg, out, res, time.perf_counter() - t0)
    return res


# --------------------------------------------------------------------------
# empirical bounds


def _empirical_marginals(cfg: ExperimentConfig, out: Path):
    emp = cfg.empirical
    chains = emp["chains"]
    if chains is None:
        syn = emp["synthetic"]
        chains = []
        for a, (v1, v2) in enumerate(syn["vols"], 1):
            t1, t2 = syn["t1"], syn["t2"]
            iv2 = float(np.sqrt((v1 * v1 * t1 + v2 * v2 * (t2 - t1)) / t2))
            files = {}
            for tag, T, vol in (("x", t1, v1), ("y", t2, iv2)):
                ch = synthetic_chain(syn["spot"], T, vol, int(syn["n_strikes"]), asset=f"A{a}")
                path = out / f"chain_A{a}_{tag}.csv"
                save_chain(ch, path)
                files[tag] = str(path)
            chains.append({"x": files["x"], "y": files["y"], "ref": syn["spot"]})
    mus, nus = [], []
    for a, spec in enumerate(chains, 1):
        pair = []
        for tag in ("x", "y"):
            dens = implied_density(load_chain(spec[tag], spot=spec.get(f"spot_{tag}")))
            dens.to_csv(out / f"density_A{a}_{tag}.csv")
            m = to_return_marginal(dens, float(spec["ref"]))
            save_tabulated_csv(m, out / f"marginal_A{a}_{tag}.csv")
            pair.append(m)
        if not convex_order(*pair):
            grid = default_grid(*pair)
            gap = potential(pair[0], grid).values - potential(pair[1], grid).values
            raise DomainError(f"asset {a}: return marginals are not in convex order "
                              f"(largest potential excess {gap.max():.3e} at x={grid[gap.argmax()]:.4g})")
        mus.append(pair[0])
        nus.append(pair[1])
    return mus, nus


def run_empirical_bounds(cfg: ExperimentConfig) -> ExperimentResult:
    """VMOT and OT bounds for a weighted portfolio variance from option chains."""
    t0 = time.perf_counter()
    out = _prepare(cfg)
    emp = cfg.empirical
    mus, nus = _empirical_marginals(cfg, out)
    w = np.asarray(emp["weights"], dtype=float)
    cost = PortfolioVariance(w)
    ot_upper, ot_lower = ot_bounds(nus, cost, int(emp["ot_atoms"]))
    m1, m2 = [n.mean() for n in nus], [n.second_moment() for n in nus]
    sample_mean = float(sum(w[i] ** 2 * m2[i] for i in range(len(w)))
                        + 2 * sum(w[i] * w[j] * m1[i] * m1[j] for i in range(len(w)) for j in range(i + 1, len(w))))
    rows = [{"quantity": "OT upper", "formulation": "", "value": ot_upper, "std": 0.0},
            {"quantity": "OT lower", "formulation": "", "value": ot_lower, "std": 0.0},
            {"quantity": "sample mean", "formulation": "", "value": sample_mean, "std": 0.0}]
    checks = {}
    for form in cfg.formulations:
        got = {}
        for direction, label in (("max", "upper"), ("min", "lower")):
            vi = VmotInstance(mus, nus, cost, direction, form)
            tc = train_config(cfg, float(emp["gamma"]), cfg.seed)
            _, rep = train(vi, tc)
            rep.to_csv(out / f"convergence_{label}_{form}.csv")
            got[label] = (rep.final_mean, rep.final_std)
            rows.append({"quantity": f"VMOT {label}", "formulation": form, "value": rep.final_mean, "std": rep.final_std})
        (lo, slo), (hi, shi) = got["lower"], got["upper"]
        checks[f"{form}: OT lower <= VMOT lower"] = ot_lower <= lo + slo
        checks[f"{form}: VMOT lower <= sample mean"] = lo <= sample_mean + slo
        checks[f"{form}: sample mean <= VMOT upper"] = sample_mean <= hi + shi
        checks[f"{form}: VMOT upper <= OT upper"] = hi <= ot_upper + shi
    _write_rows(out / "summary.csv", rows)
    res = ExperimentResult("empirical", all(checks.values()), checks, rows, out)
    _manifest(cfg, out, res, time.perf_counter() - t0)
    return res


# --------------------------------------------------------------------------
# LP checks


def run_lp_checks(cfg: ExperimentConfig) -> ExperimentResult:
    """Monotone first-period optimizers for two assets and the three-asset counterexample."""
    t0 = time.perf_counter()
    out = _prepare(cfg)
    p = cfg.lp
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for k in range(int(p["n_instances"])):
        inst = random_monotone_instance(rng, float(p["eps"]), int(p["max_atoms"]))
        rep = verify_monotone_d2(inst, tol=float(p["tv_tol"]))
        rows.append({"check": f"monotone_{k}", "value": rep.value, "reference": rep.value_fixed, "tv": rep.tv,
                     "irreducible": all(rep.irreducible), "passed": rep.passed and all(rep.irreducible)})
    ce = counterexample_d3()
    rows.append({"check": "counterexample_free", "value": ce.free_value, "reference": 27 / 20,
                 "tv": float("nan"), "irreducible": True, "passed": abs(ce.free_value - 1.35) <= 1e-8})
    rows.append({"check": "counterexample_fixed_monotone", "value": ce.fixed_value, "reference": ce.free_value,
                 "tv": float("nan"), "irreducible": True, "passed": ce.free_value - ce.fixed_value > 1e-6})
    rows.append({"check": "counterexample_dual", "value": ce.dual_value, "reference": ce.min_slack,
                 "tv": float("nan"), "irreducible": True, "passed": ce.passed})
    mono = [r for r in rows if r["check"].startswith("monotone")]
    checks = {f"monotone first period on {len(mono)} instances": all(r["passed"] for r in mono),
              "counterexample optimum 27/20": rows[-3]["passed"],
              "monotone first period strictly worse": rows[-2]["passed"],
              "counterexample dual certificate": rows[-1]["passed"]}
    _write_rows(out / "summary.csv", rows)
    res = ExperimentResult("lp", all(checks.values()), checks, rows, out)
    _manifest(cfg, out, res, time.perf_counter() - t0)
    return res


RUNNERS = {"gaussian": run_gaussian_benchmark, "empirical": run_empirical_bounds, "lp": run_lp_checks}


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
