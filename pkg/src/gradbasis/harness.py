"""Scenario runner: data -> train -> classify -> verify -> persisted reports.

A scenario is described by a JSON config (see ``ScenarioConfig``).  Every
random draw comes from the config's explicit seeds, so two runs of the same
config write byte-identical summary CSVs.  Wall-clock time is recorded in
the JSON report only.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import constructions as cons
from .errors import GradBasisError, InvalidInput, PreconditionFailed
from .geometry import projection_optimality, rank_semicontinuity_probe
from .gradient_basis import build_gradient_basis, probe_value, solve_induced, verify_theorem1
from .linalg import numerical_rank
from .losses import LossKind
from .models import (
    BasisFunction,
    Dataset,
    Feedforward,
    ModelSpec,
    ParamVector,
    ResNetForm,
    SkipConnected,
    forward_batch,
    hidden_activations,
    init_params,
    spec_from_dict,
)
from .perturbation import (
    DEFAULT_EPSILONS,
    linear_chain_S,
    nullspace_perturbations,
    resnet_S_prime,
    verify_theorem2,
    verify_theorem3,
    verify_theorem4,
)
from .report import VerificationReport
from .training import LOCAL_MIN, NOT_CONVERGED, OptimizerConfig, classify_stationary, find_stationary

log = logging.getLogger(__name__)

SCENARIOS = (
    "example1_basis",
    "example2_overparam",
    "example3_skip",
    "resnet_thm3",
    "deep_linear_thm4",
    "structured_relu_thm4",
    "custom",
)

class ScenarioFailed(GradBasisError):
    """A scenario aborted; the message names the scenario and seed."""


CSV_FIELDS = ("scenario", "seed", "check", "epsilon", "passed", "L", "value", "gap", "tol")


@dataclass
class ScenarioConfig:
    """One scenario.

    ``data`` is either a generator spec ``{"generator": name, ...}`` or
    ``{"csv": path, "d_y": k}``.  ``options`` carries scenario-specific knobs
    (widths, ``t``, overparameterization constants, ...).
    """

    scenario: str
    model: dict | None = None
    loss: str | dict = "squared"
    data: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    epsilons: list = field(default_factory=lambda: list(DEFAULT_EPSILONS))
    seeds: list = field(default_factory=lambda: [0])
    options: dict = field(default_factory=dict)
    out_dir: str = "reports"
    id: str = ""

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidInput(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise InvalidInput("seeds must be a nonempty list of integers")
        if not self.id:
            self.id = self.scenario
        if "csv" in self.data and not Path(self.data["csv"]).is_file():
            raise InvalidInput(f"data file {self.data['csv']} does not exist")
        if self.scenario == "custom" and self.model is None:
            raise InvalidInput("custom scenario needs a model spec")
        LossKind.parse(self.loss)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> ScenarioConfig:
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidInput(f"unknown config keys: {', '.join(sorted(unknown))}")
        if base_dir is not None and "csv" in d.get("data", {}):
            data = dict(d["data"])
            p = Path(data["csv"])
            data["csv"] = str(p if p.is_absolute() else base_dir / p)
            d["data"] = data
        return cls(**d)

    @classmethod
    def load(cls, path) -> ScenarioConfig:
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidInput(f"{path}: {e}") from None
        return cls.from_dict(d, path.parent)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# data


def sphere_points(m: int, d: int, delta: float, rng: np.random.Generator, max_tries: int = 10_000) -> np.ndarray:
    """``m`` unit vectors with pairwise inner products ``< 1 - delta`` (rejection sampling)."""
    pts = []
    tries = 0
    while len(pts) < m:
        tries += 1
        if tries > max_tries:
            raise InvalidInput(f"could not place {m} points in dimension {d} with separation delta={delta}")
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        if all(v @ p < 1.0 - delta for p in pts):
            pts.append(v)
    return np.array(pts)


def _targets(kind: str, F: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if kind == "gaussian":
        return F
    if kind == "onehot":
        return np.eye(F.shape[1])[np.argmax(F, axis=1)]
    if kind == "sign":
        return np.where(F[:, :1] >= 0, 1.0, -1.0)
    raise InvalidInput(f"unknown target kind {kind!r}")


def synth_data(gen: dict, seed: int, spec: ModelSpec | None = None, theta=None) -> Dataset:
    """Deterministic synthetic dataset.

    Generators
    ----------
    gaussian
        ``X ~ N(0, I)``; targets Gaussian (or ``"onehot"`` / ``"sign"`` labels).
    planted_linear_teacher
        ``Y = A x`` (or ``A x + B z(x)`` for a ResNet with a fixed inner net).
    planted_probe_teacher
        ``Y = alpha h^(H)(x; theta)`` for a feedforward ``spec`` at ``theta``.
        ``rank`` limits the rank of ``alpha``.
    normalized_sphere
        Unit-norm inputs with pairwise inner products ``< 1 - delta``.
    """
    gen = dict(gen)
    name = gen.pop("generator", "gaussian")
    rng = np.random.default_rng(seed)
    m = int(gen.get("m", 16))
    d_y = int(gen.get("d_y", spec.d_y if spec is not None else 1))
    augment = bool(gen.get("augment", False))
    d_x = int(gen.get("d_x", (spec.d_x - augment) if spec is not None else 2))
    lam = gen.get("lam")

    if name == "normalized_sphere":
        X = sphere_points(m, d_x, float(gen.get("delta", 0.2)), rng)
    else:
        X = rng.standard_normal((m, d_x))
    if augment:
        X = cons.augment(X)

    if name in ("gaussian", "normalized_sphere"):
        Y = _targets(gen.get("targets", "gaussian"), rng.standard_normal((m, d_y)), rng)
    elif name == "planted_linear_teacher":
        F = X
        if isinstance(spec, ResNetForm):
            if spec.trainable_inner:
                raise InvalidInput("planted_linear_teacher on a ResNet needs fixed inner_params")
            F = np.hstack([X, spec.z({}, X)])
        Y = F @ rng.standard_normal((F.shape[1], d_y))
    elif name == "planted_probe_teacher":
        if not isinstance(spec, (Feedforward, SkipConnected)) or theta is None:
            raise InvalidInput("planted_probe_teacher needs a feedforward spec and theta")
        h = hidden_activations(spec, theta, X)[-1].T
        alpha = rng.standard_normal((d_y, h.shape[1]))
        rank = int(gen.get("rank", d_y))
        if rank < d_y:
            U, s, Vt = np.linalg.svd(alpha, full_matrices=False)
            s[rank:] = 0.0
            alpha = (U * s) @ Vt
        Y = h @ alpha.T
    else:
        raise InvalidInput(f"unknown data generator {name!r}")
    return Dataset(X, Y, None if lam is None else np.asarray(lam, dtype=float))


def load_data_csv(path, d_y: int, lam=None) -> Dataset:
    """Header row, one sample per row, the last ``d_y`` columns are targets."""
    try:
        A = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as e:
        raise InvalidInput(f"{path}: {e}") from None
    if A.shape[1] <= d_y:
        raise InvalidInput(f"{path}: need more than d_y={d_y} columns")
    return Dataset(A[:, :-d_y], A[:, -d_y:], lam)


# --------------------------------------------------------------------------
# scenario pipeline


@dataclass
class SeedResult:
    seed: int
    theta_summary: dict
    reports: list
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def _optimizer(cfg: ScenarioConfig, seed: int, **overrides) -> OptimizerConfig:
    d = {k: v for k, v in {**cfg.optimizer, **overrides}.items() if k != "verify_grad_tol"}
    d["seed"] = seed
    if d.get("free_blocks") is not None:
        d["free_blocks"] = tuple(d["free_blocks"])
    return OptimizerConfig(**d)


def _fail(check: str, msg: str) -> VerificationReport:
    return VerificationReport(check=check, loss=math.nan, verdicts={"ran": False}, diagnostics={"error": msg})


def _flag(check: str, L: float, ok: bool, value: float, tol: float, **extra) -> VerificationReport:
    return VerificationReport(check=check, loss=L, quantities={"value": value, **extra},
                              tolerances={"tol": tol}, verdicts={check: bool(ok)})


def _guard(check: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except GradBasisError as e:
        log.warning("%s failed: %s", check, e)
        return _fail(check, f"{type(e).__name__}: {e}")


def _build(cfg: ScenarioConfig, seed: int):
    """Model spec, initial theta and data for one seed."""
    opts = cfg.options
    ss = np.random.SeedSequence(seed)
    data_seed, init_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    rng = np.random.default_rng(init_seed)
    sc = cfg.scenario

    if sc == "example2_overparam":
        gen = {"generator": "normalized_sphere", "m": 8, "d_x": 4, "delta": 0.2, **cfg.data}
        raw = synth_data({**gen, "augment": False}, data_seed)
        delta = float(gen["delta"])
        spec, theta = cons.overparam_model(raw.X, raw.d_y, delta, float(opts.get("eps", delta)),
                                           int(opts.get("depth", 2)), int(opts.get("width", raw.m)))
        mats = theta.blocks()
        out = f"W{spec.H + 1}"
        mats[out] = rng.standard_normal(mats[out].shape) / math.sqrt(mats[out].shape[1])
        return spec, ParamVector.from_blocks(spec.layout(), mats), Dataset(cons.augment(raw.X), raw.Y, raw.lam)

    if sc == "structured_relu_thm4":
        widths = tuple(opts.get("widths", (4, 6, 6, 6, 2)))
        t = int(opts.get("t", 1))
        gen = {"m": 16, **cfg.data}
        X = cons.augment(np.random.default_rng(data_seed).standard_normal((int(gen["m"]), widths[0] - 1)))
        spec, theta0 = cons.structured_relu_instance(widths, t, X, rng, float(opts.get("margin", 1.0)))
        # the instance is its own teacher: its rank-deficient readout is a probe on h^(H)
        data = Dataset(X, forward_batch(spec, theta0, X), cfg.data.get("lam"))
        if opts.get("readout_init", "teacher") == "teacher":
            return spec, theta0, data
        mats = theta0.blocks()
        out = f"W{spec.H + 1}"
        mats[out] = rng.standard_normal(mats[out].shape) / math.sqrt(mats[out].shape[1])
        return spec, ParamVector.from_blocks(spec.layout(), mats), data

    spec = spec_from_dict(cfg.model) if cfg.model is not None else _default_model(sc, opts, seed)
    if "csv" in cfg.data:
        data = load_data_csv(cfg.data["csv"], int(cfg.data.get("d_y", spec.d_y)), cfg.data.get("lam"))
    else:
        default_gen = "planted_linear_teacher" if sc == "resnet_thm3" else "gaussian"
        data = synth_data({"generator": default_gen, **cfg.data}, data_seed, spec)
    theta0 = init_params(spec, rng, float(opts.get("init_scale", 1.0)))
    return spec, theta0, data


def _default_model(sc: str, opts: dict, seed: int) -> ModelSpec:
    if sc == "example1_basis":
        return BasisFunction(int(opts.get("d_x", 3)), int(opts.get("d_y", 1)), opts.get("feature", "rff"),
                             int(opts.get("n_features", 8)), seed)
    if sc == "example3_skip":
        return SkipConnected(tuple(opts.get("widths", (3, 6, 6, 2))), opts.get("activation", "tanh"),
                             tuple(opts.get("skip", (1, 2))))
    if sc == "resnet_thm3":
        inner = tuple(opts.get("inner_widths", (5, 4, 4)))
        d_y = int(opts.get("d_y", 3))
        probe = ResNetForm(d_y, inner, opts.get("inner_activation", "relu"))
        rng = np.random.default_rng([seed, 7])
        u = np.concatenate([rng.standard_normal(b.size) / math.sqrt(b.cols)
                            for b in probe.layout().blocks if b.name.startswith("u.")])
        return ResNetForm(d_y, inner, probe.inner_activations, tuple(u))
    if sc == "deep_linear_thm4":
        widths = tuple(opts.get("widths", (4, 6, 6, 3)))
        return Feedforward(widths, "identity")
    raise InvalidInput(f"scenario {sc!r} needs an explicit model spec")


def _families(spec, theta, data, eps, sc, structure=None):
    fams = []
    if sc in ("deep_linear_thm4", "structured_relu_thm4") and structure is not None:
        for l in range(structure.t, spec.H + 1):
            fams.append(linear_chain_S(spec, theta, data, eps, l, structure.t, structure))
    if isinstance(spec, ResNetForm):
        fams.append(resnet_S_prime(spec, theta, data, eps))
    for name in spec.layout().names:
        s = nullspace_perturbations(spec, theta, data, name, eps)
        if len(s):
            fams.append(s)
    return fams


def _run_seed(cfg: ScenarioConfig, seed: int) -> SeedResult:
    sc, opts = cfg.scenario, cfg.options
    loss = LossKind.parse(cfg.loss)
    spec, theta0, data = _build(cfg, seed)
    reports: list[VerificationReport] = []
    notes: list[str] = []
    overrides = {}
    if sc in ("example2_overparam", "structured_relu_thm4"):
        overrides = {"free_blocks": (f"W{spec.H + 1}",), "grad_tol": min(1e-11, cfg.optimizer.get("grad_tol", 1e-11))}
    if sc == "example2_overparam":
        h = hidden_activations(spec, theta0, data.X)[-1]
        r = numerical_rank(h)
        reports.append(_flag("feature_rank", math.nan, r == data.m, r, data.m))
        ind = solve_induced(build_gradient_basis(spec, theta0, data), loss)
        reports.append(_flag("interpolation", math.nan, ind.optimal_value <= 1e-9, ind.optimal_value, 1e-9))
    st = find_stationary(spec, data, loss, theta0, _optimizer(cfg, seed, **overrides))
    theta = st.theta
    summary = st.summary()
    if st.classification == NOT_CONVERGED:
        reports.append(_fail("stationarity", f"training stopped at ||grad||_inf = {st.grad_inf_norm:.3e}"))
        return SeedResult(seed, summary, reports, notes)
    cls = classify_stationary(spec, theta, data, loss, grad_tol=_grad_tol(cfg, overrides), seed=seed)
    summary.update({"classification": cls.classification, "hessian_min_eig_estimate": cls.hessian_min_eig_estimate,
                    "grad_inf_norm": cls.grad_inf_norm, "loss": cls.loss})
    local = cls.classification == LOCAL_MIN
    L = cls.loss
    gtol = _grad_tol(cfg, overrides)

    reports.append(_guard("theorem1", verify_theorem1, spec, theta, data, loss, gtol))
    basis = build_gradient_basis(spec, theta, data)
    reports.append(_guard("projection_optimality", projection_optimality, spec, theta, data, loss, basis, gtol))
    probe = rank_semicontinuity_probe(spec, theta, data, radius=float(opts.get("probe_radius", 1e-3)),
                                      n_samples=int(opts.get("probe_samples", 10)), seed=seed)
    pd = probe.to_dict()
    reports.append(_flag("rank_semicontinuity", L, probe.violations == 0, pd["min_rank"], pd["base_rank"],
                         constant_rank=pd["constant_rank"], skipped=pd["skipped"]))

    if sc == "example2_overparam":
        reports.append(_flag("trained_loss", L, L <= 1e-6, L, 1e-6))
    if sc == "example3_skip":
        ind = solve_induced(basis, loss)
        hs = hidden_activations(spec, theta, data.X)
        for l in spec.skip:
            pv = probe_value([hs[l].T], data, loss).optimal_value
            reports.append(_flag(f"skip_coverage_h{l}", L, ind.optimal_value <= pv + 1e-9, ind.optimal_value, pv + 1e-9))

    structure = None
    if sc in ("deep_linear_thm4", "structured_relu_thm4"):
        t = int(opts.get("t", 0 if sc == "deep_linear_thm4" else 1))
        radius = max([1e-3, *cfg.epsilons])
        structure = cons.detect_induced_structure(spec, theta, data.X, t, spec.d_y, probe_radius=radius, seed=seed)
        if not structure.certified:
            reports.append(_fail("structure", "; ".join(structure.violations)))
            structure = None
    if sc == "deep_linear_thm4":
        ls = probe_value([data.X], data, LossKind.squared()).optimal_value
        if local:
            reports.append(_flag("least_squares_oracle", L, abs(L - ls) <= 1e-4 * max(ls, 1e-12), ls,
                                 1e-4 * max(ls, 1e-12), rel_gap=abs(L - ls) / max(ls, 1e-12)))

    if not local:
        notes.append(f"classified {cls.classification}: local-minimum checks skipped, chain checked only")
    for eps in cfg.epsilons:
        fams = _guard("families", _families, spec, theta, data, eps, sc, structure)
        if isinstance(fams, VerificationReport):
            fams.quantities["epsilon"] = eps
            reports.append(fams)
            continue
        reports.append(_guard("theorem2", verify_theorem2, spec, theta, data, loss, eps, fams,
                              classification=cls.classification, require_local_min=False, grad_tol=gtol))
        if not local:
            continue
        if sc == "resnet_thm3":
            reports.append(_guard("theorem3", verify_theorem3, spec, theta, data, loss, eps,
                                  classification=cls.classification, grad_tol=gtol))
        if structure is not None:
            reports.append(_guard("theorem4", verify_theorem4, spec, theta, data, loss, eps, structure.t, structure,
                                  classification=cls.classification, grad_tol=gtol))
    return SeedResult(seed, summary, reports, notes)


def _grad_tol(cfg, overrides) -> float:
    """Stationarity threshold for the verifiers (full gradient, all blocks)."""
    return float(cfg.optimizer.get("verify_grad_tol", 1e-8))


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None, write: bool = True) -> dict:
    """Run every seed of a scenario; return (and optionally write) the report dict."""
    t0 = time.perf_counter()
    results = []
    for seed in cfg.seeds:
        try:
            results.append(_run_seed(cfg, seed))
        except GradBasisError as e:
            raise ScenarioFailed(f"[{cfg.id} seed={seed}] {type(e).__name__}: {e}") from e
    report = {
        "scenario": cfg.scenario,
        "id": cfg.id,
        "config": cfg.to_dict(),
        "passed": all(r.passed for r in results),
        "seeds": [
            {"seed": r.seed, "theta_summary": r.theta_summary, "passed": r.passed, "notes": r.notes,
             "reports": [x.to_dict() for x in r.reports]}
            for r in results
        ],
        "wall_clock_s": time.perf_counter() - t0,
    }
    report = _finite_safe(report)
    if write:
        out = Path(out_dir if out_dir is not None else cfg.out_dir) / cfg.id
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write(out / "report.json", json.dumps(report, indent=2, sort_keys=True))
        _atomic_write(out / "summary.csv", summary_csv([report]))
    return report


def _finite_safe(obj):
    if isinstance(obj, dict):
        return {k: _finite_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.10e}" if math.isfinite(v) else str(v)
    return str(v)


def _rows(report: dict):
    for s in report["seeds"]:
        for r in s["reports"]:
            q, tol = r.get("quantities", {}), r.get("tolerances", {})
            value = next((q[k] for k in ("value", "inf_L_theta", "min_v", "min_output_space") if k in q), "")
            gap = q.get("gap", "")
            if r["check"] == "theorem2":
                L = q.get("L")
                gap = L - q["min_v"] if isinstance(L, float) and isinstance(q.get("min_v"), float) else ""
            yield {
                "scenario": report["id"],
                "seed": s["seed"],
                "check": r["check"],
                "epsilon": q.get("epsilon", ""),
                "passed": r["passed"],
                "L": r.get("loss", ""),
                "value": value,
                "gap": gap,
                "tol": tol.get("tol_thm", tol.get("tol", "")),
            }


def summary_csv(reports: list[dict]) -> str:
    """Flat deterministic CSV: one row per (scenario, seed, check)."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for rep in reports:
        for row in _rows(rep):
            w.writerow({k: _fmt(row[k]) for k in CSV_FIELDS})
    return buf.getvalue()


def thread_cap() -> int:
    raw = os.environ.get("GRADBASIS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InvalidInput(f"GRADBASIS_THREADS must be an integer, got {raw!r}") from None


def run_suite(config_dir, out_dir: str | Path | None = None) -> list[dict]:
    """Run every ``*.json`` config in a directory; reports are ordered by file name."""
    paths = sorted(Path(config_dir).glob("*.json"))
    if not paths:
        raise InvalidInput(f"no *.json configs in {config_dir}")
    cfgs = [ScenarioConfig.load(p) for p in paths]
    with ThreadPoolExecutor(max_workers=min(thread_cap(), len(cfgs))) as ex:
        reports = list(ex.map(lambda c: run_scenario(c, out_dir), cfgs))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _atomic_write(Path(out_dir) / "summary.csv", summary_csv(reports))
    return reports


def collect_reports(in_dir) -> list[dict]:
    paths = sorted(Path(in_dir).rglob("report.json"))
    if not paths:
        raise InvalidInput(f"no report.json files under {in_dir}")
    return [json.loads(p.read_text()) for p in paths]


def default_config(scenario: str, seeds=(0,), **kw) -> ScenarioConfig:
    """Desk-scale configuration for a named scenario."""
    base = {
        "example1_basis": {"data": {"m": 16, "d_x": 3}, "epsilons": []},
        "example2_overparam": {"data": {"m": 8, "d_x": 4, "delta": 0.2}, "epsilons": []},
        "example3_skip": {"data": {"m": 16, "d_x": 3}, "epsilons": []},
        "resnet_thm3": {"data": {"m": 24}, "optimizer": {"max_iters": 60000}},
        "deep_linear_thm4": {"data": {"m": 32}},
        "structured_relu_thm4": {"data": {"m": 16}, "epsilons": [1e-3, 1e-2]},
    }.get(scenario, {})
    return ScenarioConfig(scenario=scenario, seeds=list(seeds), **{**base, **kw})
