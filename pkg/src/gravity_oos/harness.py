"""Repeated train/test evaluation of gravity specifications and ML learners."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import scipy
import yaml

from . import __version__
from .dgp import DgpParams, Truth, generate_panel
from .gravity import GravityModel, GravitySpec, Kind
from .metrics import MetricsReport, RepetitionResult, imputation_estimator, summarize
from .ml.features import FeatureSet, build_features
from .ml.mlp import MlpParams, PoissonMLP, fit_mlp_poisson
from .ml.stack import Learner, fit_stack
from .ml.trees import BoostingParams, ForestParams, fit_gradient_boosting, fit_random_forest
from .panel import Schema, TradePanel, balance_panel, load_panel
from .ppml import PpmlOptions
from .sampling import SCENARIOS, SelectionParams, make_split, repetition_rng, standardize_pair_fe

log = logging.getLogger(__name__)

METHODS = ["trad", "twoway", "oneway", "threeway", "ens", "rf", "gb", "nn", "e-fe", "rf-fe", "gb-fe", "nn-fe", "threeway-ml"]
LABELS = {
    "trad": "Trad",
    "twoway": "2-way",
    "oneway": "1-way",
    "threeway": "3-way",
    "ens": "Ens",
    "rf": "RF",
    "gb": "GB",
    "nn": "NN",
    "e-fe": "E-FE",
    "rf-fe": "RF-FE",
    "gb-fe": "GB-FE",
    "nn-fe": "NN-FE",
    "threeway-ml": "3-way-ML",
}
# fixed RNG stream per learner so a method's draws do not depend on the roster
_STREAMS = {"split": 0, "rf": 1, "gb": 2, "nn": 3, "ens": 4, "rf-fe": 5, "gb-fe": 6, "nn-fe": 7, "e-fe": 8}


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    data: str | None = None
    synth: DgpParams | None = None
    levels: list[str] = field(default_factory=list)
    window: tuple[int, int] | None = None
    required_count: int | None = None
    scenario: str = "endogenous"
    a: float | None = None
    b: float | None = None
    reps: int = 1000
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    seed: int = 0
    out: str | None = None
    format: str = "markdown"
    jobs: int = 1
    r2_mode: str = "per-rep"
    se_ddof: int = 0
    year_rule: str = "position"
    stack_folds: int = 5
    max_failure_rate: float = 0.10
    rf: ForestParams = field(default_factory=ForestParams)
    gb: BoostingParams = field(default_factory=BoostingParams)
    nn: MlpParams = field(default_factory=MlpParams)
    ppml: PpmlOptions = field(default_factory=PpmlOptions)

    def __post_init__(self):
        if (self.data is None) == (self.synth is None):
            raise ValueError("give exactly one of a data file or synthetic DGP parameters")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.methods:
            raise ValueError("no methods configured")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
        if self.scenario != "custom" and self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "custom" and (self.a is None or self.b is None):
            raise ValueError("custom scenario needs a and b")
        if self.format not in ("markdown", "csv"):
            raise ValueError("format must be markdown or csv")
        if self.r2_mode not in ("per-rep", "pooled"):
            raise ValueError("r2_mode must be per-rep or pooled")

    def selection(self) -> SelectionParams:
        if self.scenario == "custom":
            return SelectionParams(float(self.a), float(self.b), self.seed, self.year_rule)
        a, b = SCENARIOS[self.scenario]
        return SelectionParams(
            a if self.a is None else float(self.a), b if self.b is None else float(self.b), self.seed, self.year_rule
        )

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "ExperimentConfig":
        kw = dict(data)
        sections = {"rf": ForestParams, "gb": BoostingParams, "nn": MlpParams, "ppml": PpmlOptions}
        for key, klass in sections.items():
            if key in kw:
                kw[key] = klass(**kw[key])
        if "stack" in kw:
            kw["stack_folds"] = int(kw.pop("stack")["folds"])
        if isinstance(kw.get("synth"), (str, Path)):
            p = Path(kw["synth"])
            if base_dir and not p.is_absolute():
                p = base_dir / p
            kw["synth"] = yaml.safe_load(p.read_text()) or {}
        if isinstance(kw.get("synth"), Mapping):
            kw["synth"] = DgpParams.from_mapping(kw["synth"])
        if isinstance(kw.get("methods"), str):
            kw["methods"] = [m.strip() for m in kw["methods"].split(",") if m.strip()]
        if kw.get("window") is not None:
            kw["window"] = tuple(kw["window"])
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(kw) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**kw)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self), default=str))


@dataclass
class Context:
    config: ExperimentConfig
    panel: TradePanel
    eta_std: dict[str, float]
    selection: SelectionParams
    truth: Truth | None = None
    excluded_pairs: int = 0


def _gravity(kind: Kind, opts: PpmlOptions, augmentation=None) -> GravityModel:
    return GravityModel(GravitySpec(kind, augmentation), opts, on_separated="zero")


def prepare(config: ExperimentConfig) -> Context:
    """Load or generate the panel, balance it, and standardize full-sample 3-way pair effects."""
    truth = None
    if config.data is not None:
        panel = load_panel(config.data, Schema.default(config.levels))
        window = config.window or (1994, 2023)
        count = config.required_count or (window[1] - window[0] + 1)
    else:
        panel, truth = generate_panel(config.synth)
        window = config.window or panel.year_range
        count = config.required_count or (window[1] - window[0] + 1)
    panel = balance_panel(panel, window, count)
    log.info("balanced panel:\n%s", panel.summary())
    full = _gravity(Kind.THREE_WAY, config.ppml).fit(panel)
    eta = full.fit_.fe_values["pair"]
    eta_std = standardize_pair_fe(eta)
    excluded = len(panel.pairs) - len(eta)
    if excluded:
        log.warning("%d pairs with only zero flows are never selected for prediction", excluded)
    return Context(config, panel, eta_std, config.selection(), truth, excluded)


class _Repetition:
    """Lazily fitted, shared pieces of one repetition."""

    def __init__(self, ctx: Context, k: int, train: TradePanel, test: TradePanel):
        self.ctx = ctx
        self.cfg = ctx.config
        self.k = k
        self.train = train
        self.test = test
        self.y = train.trade
        self._cache: dict[str, Any] = {}

    def _get(self, key: str, make: Callable[[], Any]):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    def rng(self, stream: str) -> np.random.Generator:
        return repetition_rng(self.cfg.seed, self.k, _STREAMS[stream])

    def threeway(self) -> GravityModel:
        return self._get("threeway", lambda: _gravity(Kind.THREE_WAY, self.cfg.ppml).fit(self.train))

    def features(self, with_fe: bool) -> tuple[FeatureSet, FeatureSet]:
        def make():
            fe_fit = self.threeway().fit_ if with_fe else None
            tr = build_features(self.train, fe_fit, standardize=True, fill="min")
            te = build_features(self.test, fe_fit, scaler=tr.scaler, fill="min")
            return tr, te

        return self._get(f"features{with_fe}", make)

    def learner(self, name: str, with_fe: bool):
        key = name + ("-fe" if with_fe else "")

        def make():
            F, _ = self.features(with_fe)
            rng = self.rng(key)
            if name == "rf":
                return fit_random_forest(F, self.y, self.cfg.rf, rng)
            if name == "gb":
                return fit_gradient_boosting(F, self.y, self.cfg.gb, rng)
            return fit_mlp_poisson(F, self.y, self.cfg.nn, rng)

        return self._get(key, make)

    def stack(self, with_fe: bool):
        key = "e-fe" if with_fe else "ens"

        def make():
            F, _ = self.features(with_fe)
            cfg = self.cfg
            learners = [
                Learner("rf", lambda F, y, r: fit_random_forest(F, y, cfg.rf, r)),
                Learner("gb", lambda F, y, r: fit_gradient_boosting(F, y, cfg.gb, r)),
                Learner("nn", lambda F, y, r: fit_mlp_poisson(F, y, cfg.nn, r)),
            ]
            finals = [self.learner(n, with_fe) for n in ("rf", "gb", "nn")]
            return fit_stack(
                learners, F, self.y, cfg.stack_folds, self.rng(key), groups=self.train.pair_codes, final_models=finals
            )

        return self._get(key, make)

    def predict(self, method: str) -> np.ndarray:
        cfg = self.cfg
        simple = {"trad": Kind.TRADITIONAL, "twoway": Kind.TWO_WAY, "oneway": Kind.ONE_WAY}
        if method in simple:
            return _gravity(simple[method], cfg.ppml).fit(self.train).predict(self.test)
        if method == "threeway":
            return self.threeway().predict(self.test)
        if method == "threeway-ml":
            nn = self.learner("nn", False)
            F_tr, _ = self.features(False)
            provider = _NetworkProvider(nn, F_tr)
            return _gravity(Kind.THREE_WAY_ML, cfg.ppml, provider).fit(self.train).predict(self.test)
        with_fe = method.endswith("-fe")
        base = method[:-3] if with_fe else method
        _, F_te = self.features(with_fe)
        if base in ("ens", "e"):
            return self.stack(with_fe).predict(F_te)
        return self.learner(base, with_fe).predict(F_te)


class _NetworkProvider:
    """Fitted values of the no-FE network for arbitrary panel rows."""

    def __init__(self, model: PoissonMLP, train_features: FeatureSet):
        self.model = model
        self.scaler = train_features.scaler

    def predict(self, panel: TradePanel) -> np.ndarray:
        return self.model.predict(build_features(panel, scaler=self.scaler))


def run_repetition(ctx: Context, k: int) -> RepetitionResult:
    plan = make_split(ctx.panel, ctx.selection, ctx.eta_std, ctx_rng(ctx, k), allow_missing=True)
    train = ctx.panel.subset(plan.train_rows)
    test = ctx.panel.subset(plan.test_rows).without_outcomes()
    observed = ctx.panel.trade[plan.test_rows].copy()
    rep = _Repetition(ctx, k, train, test)
    predicted: dict[str, np.ndarray | None] = {}
    failures: dict[str, str] = {}
    for m in ctx.config.methods:
        try:
            pred = np.asarray(rep.predict(m), dtype=np.float64)
            if not np.all(np.isfinite(pred)):
                raise ValueError("non-finite predictions")
            predicted[m] = pred
        except Exception as err:  # one method failing must not stop the others
            log.warning("repetition %d, method %s failed: %s", k, m, err)
            predicted[m] = None
            failures[m] = f"{type(err).__name__}: {err}"
    return RepetitionResult(k, observed, predicted, failures)


def ctx_rng(ctx: Context, k: int) -> np.random.Generator:
    return repetition_rng(ctx.config.seed, k, _STREAMS["split"])


_WORKER_CTX: Context | None = None


def _init_worker(ctx: Context) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _run_in_worker(k: int) -> RepetitionResult:
    return run_repetition(_WORKER_CTX, k)


@dataclass
class ExperimentResult:
    report: MetricsReport
    results: list[RepetitionResult]
    context: Context


def run_experiment(config: ExperimentConfig, ctx: Context | None = None) -> ExperimentResult:
    ctx = ctx or prepare(config)
    ks = list(range(1, config.reps + 1))
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs, initializer=_init_worker, initargs=(ctx,)) as pool:
            results = list(pool.map(_run_in_worker, ks, chunksize=max(1, len(ks) // (4 * config.jobs))))
    else:
        results = [run_repetition(ctx, k) for k in ks]
    results.sort(key=lambda r: r.k)
    report = summarize(results, config.methods, config.r2_mode, config.se_ddof)
    bad = {m: n for m, n in report.failures.items() if n > config.max_failure_rate * len(results)}
    if bad:
        raise ExperimentError(f"too many failed repetitions: {bad}")
    if config.out:
        write_outputs(config, ExperimentResult(report, results, ctx))
    return ExperimentResult(report, results, ctx)


# -- output --------------------------------------------------------------------

ROWS = [
    ("Estimation", "Mean IE", lambda m: m.mean_ie),
    ("Estimation", "SE_IE", lambda m: m.se_ie),
    ("Estimation", "MSE_IE×10", lambda m: 10 * m.mse_ie),
    ("Prediction", "RMAE", lambda m: m.rmae),
    ("Prediction", "RRMSE", lambda m: m.rrmse),
    ("Prediction", "R²", lambda m: m.r2),
]


def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    return f"{x:.6g}"


def emit_report(report: MetricsReport, format: str = "markdown") -> str:
    """Results table: estimation rows, then prediction rows, one column per method."""
    methods = report.methods
    heads = [LABELS[m] for m in methods]
    cells = {
        label: [_fmt(get(report.metrics[m]) if report.metrics[m] else None) for m in methods]
        for _, label, get in ROWS
    }
    nk = f"K = {report.K}; n_k min {report.n_k_min}, max {report.n_k_max}, mean {_fmt(report.n_k_mean)}"
    fails = [f"{LABELS[m]}: {n}" for m, n in report.failures.items() if n]
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["section", "measure"] + heads)
        for section, label, _ in ROWS:
            w.writerow([section, label] + cells[label])
        return buf.getvalue()
    if format != "markdown":
        raise ValueError(f"unknown format {format!r}")
    lines = ["| | " + " | ".join(heads) + " |", "|---" * (len(heads) + 1) + "|"]
    current = None
    for section, label, _ in ROWS:
        if section != current:
            lines.append(f"| **{section}** |" + " |" * len(heads))
            current = section
        lines.append(f"| {label} | " + " | ".join(cells[label]) + " |")
    lines.append("")
    lines.append(nk)
    if fails:
        lines.append("failed repetitions: " + ", ".join(fails))
    return "\n".join(lines) + "\n"


def repetition_log(results: list[RepetitionResult], methods: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "n_k"] + [f"IE_{m}" for m in methods])
    for r in sorted(results, key=lambda r: r.k):
        row = [r.k, r.n_k]
        for m in methods:
            p = r.predicted.get(m)
            try:
                row.append(repr(imputation_estimator(r.observed, p)) if p is not None else "NA")
            except ValueError:
                row.append("NA")
        w.writerow(row)
    return buf.getvalue()


def manifest(config: ExperimentConfig) -> dict:
    return {
        "config": config.to_dict(),
        "seed": config.seed,
        "versions": {
            "gravity_oos": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def write_outputs(config: ExperimentConfig, result: ExperimentResult) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "md" if config.format == "markdown" else "csv"
    (out / f"report.{ext}").write_text(emit_report(result.report, config.format))
    (out / "repetitions.csv").write_text(repetition_log(result.results, config.methods))
    (out / "manifest.json").write_text(json.dumps(manifest(config), indent=2) + "\n")
    return out
