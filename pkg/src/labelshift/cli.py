"""Command-line front end: data ingestion, one-shot estimation, posterior
adaptation, the Monte-Carlo benchmark harness, and report emission.

Subcommands: ``simulate`` (emit synthetic CSV datasets), ``estimate``
(one-shot weights from files), ``adapt`` (apply a weights JSON to a
prediction file), ``benchmark`` (full replication harness), ``report``
(re-aggregate and re-emit an existing JSON report).

Exit codes: 0 success, 1 configuration error, 2 data error,
3 all replications failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .adapt import adapt_and_predict, adjust_matrix, delta_accuracy, weight_mse
from .calibrate import METHODS as CALIBRATIONS
from .calibrate import CalibrationMap, apply_calibration, fit_calibration
from .core import (
    LabelDist,
    LogitMatrix,
    SourceSet,
    TargetSet,
    Weights,
    class_proportions,
    validate_prob_matrix,
)
from .errors import ConfigError, LabelRange, LabelShiftError, MixedSchema, ParseError
from .estimators import (
    ElsaConfig,
    confusion_matrix,
    elsa_solve,
    mlls_em,
    solve_bbse,
    solve_rlls,
    target_mean,
)
from .inference import sandwich_covariance
from .simulate import (
    MixtureSpec,
    generate_mixture,
    posterior_matrix,
    replication_seeds,
    resample_indices,
    rng_from_seed,
    sample_dirichlet_dist,
    tweak_one_dist,
)

ESTIMATORS = ("bbse_hard", "bbse_soft", "rlls", "mlls", "elsa")
MSE_CONVENTION = "mean over classes: mse = (1/k) * sum_i (omega_hat_i - omega_true_i)^2"
_LOG_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark run: data source, shift mechanism, method grid, seeds."""

    mode: str = "synthetic"            # or "files"
    # synthetic mixture
    k: int = 3
    dim: int = 2
    radius: float = 3.0
    var: float = 1.0
    means: tuple | None = None         # explicit (k, dim) override of the ring layout
    variances: tuple | None = None
    source_prior: tuple | None = None  # default uniform
    epsilon: float = 0.0               # posterior misspecification (mean shift)
    planted_temperature: float = 1.0   # synthetic logit miscalibration
    # files mode
    source_path: str | None = None
    target_path: str | None = None
    # shift mechanism
    mechanism: str = "dirichlet"
    alpha: float = 1.0
    rho: float = 0.9
    tweak_index: int = 4
    # sample sizes and run shape
    n: int = 5000
    m: int = 5000
    estimators: tuple = ("bbse_soft", "elsa")
    calibrations: tuple = ("none",)
    replications: int = 20
    seed: int = 0
    jobs: int | None = None
    # solver knobs
    elsa_solver: str = "fixed_point"
    elsa_tol: float = 1e-8
    elsa_max_iter: int = 500
    rlls_lambda: float | None = None   # None -> 0.05 / sqrt(n_estimation)
    em_tol: float = 1e-8
    em_max_iter: int = 1000
    plugin_ci: bool = False
    ci_level: float = 0.95
    # output
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "calibrations", tuple(self.calibrations))
        if self.means is not None:
            object.__setattr__(self, "means", tuple(tuple(float(x) for x in row) for row in self.means))
        if self.variances is not None:
            object.__setattr__(self, "variances",
                               tuple(tuple(float(x) for x in row) for row in self.variances))
        if self.source_prior is not None:
            object.__setattr__(self, "source_prior", tuple(float(x) for x in self.source_prior))

    def validate(self) -> None:
        if self.mode not in ("synthetic", "files"):
            raise ConfigError(f"mode must be 'synthetic' or 'files', got {self.mode!r}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.mode == "synthetic" and (self.n < self.k or self.m < self.k):
            raise ConfigError("need n, m >= k")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {e!r}; choose from {ESTIMATORS}")
        if not self.estimators:
            raise ConfigError("need at least one estimator")
        for c in self.calibrations:
            if c not in CALIBRATIONS:
                raise ConfigError(f"unknown calibration {c!r}; choose from {CALIBRATIONS}")
        if not self.calibrations:
            raise ConfigError("need at least one calibration (use 'none')")
        if self.mechanism not in ("dirichlet", "tweak_one"):
            raise ConfigError(f"unknown shift mechanism {self.mechanism!r}")
        if self.mechanism == "dirichlet" and self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.mechanism == "tweak_one" and not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")
        if self.mode == "files":
            if not self.source_path or not self.target_path:
                raise ConfigError("files mode needs source_path and target_path")
            if self.planted_temperature != 1.0:
                raise ConfigError("planted_temperature only applies to synthetic data")
        if self.format not in ("json", "csv"):
            raise ConfigError(f"format must be json or csv, got {self.format!r}")
        if not 0.0 <= self.ci_level < 1.0:
            raise ConfigError("ci_level must lie in [0, 1)")
        if self.mode == "synthetic":
            self.mixture_spec()  # shape/positivity validation

    def mixture_spec(self) -> MixtureSpec:
        prior = None if self.source_prior is None else LabelDist(np.asarray(self.source_prior))
        if self.means is not None:
            means = np.asarray(self.means, dtype=float)
            if self.variances is not None:
                variances = np.asarray(self.variances, dtype=float)
            else:
                variances = np.full(means.shape, self.var)
            if prior is None:
                prior = LabelDist(np.full(means.shape[0], 1.0 / means.shape[0]))
            return MixtureSpec(means=means, variances=variances, source_prior=prior)
        return MixtureSpec.ring(self.k, dim=self.dim, radius=self.radius, var=self.var,
                                source_prior=prior)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("estimators", "calibrations", "source_prior"):
            if d[key] is not None:
                d[key] = list(d[key])
        for key in ("means", "variances"):
            if d[key] is not None:
                d[key] = [list(r) for r in d[key]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _shift_dist(cfg: ExperimentConfig, k: int, seed: int) -> LabelDist:
    if cfg.mechanism == "tweak_one":
        return tweak_one_dist(k, cfg.rho, cfg.tweak_index)
    return sample_dirichlet_dist(k, cfg.alpha, seed)


# ---------------------------------------------------------------------------
# table IO

def _classify_header(header: list[str]) -> tuple[str, int, dict]:
    names = [h.strip() for h in header]
    p_cols = {name: i for i, name in enumerate(names) if name.startswith("p_")}
    z_cols = {name: i for i, name in enumerate(names) if name.startswith("z_")}
    label_col = names.index("label") if "label" in names else None
    if p_cols and z_cols:
        raise MixedSchema("table mixes p_ and z_ columns", line=1)
    cols = p_cols or z_cols
    if not cols:
        raise ParseError("no p_1..p_k or z_1..z_k columns found", line=1)
    kind = "probs" if p_cols else "logits"
    prefix = "p_" if p_cols else "z_"
    k = len(cols)
    order = []
    for i in range(1, k + 1):
        name = f"{prefix}{i}"
        if name not in cols:
            raise ParseError(f"missing column {name} (found {sorted(cols)})", line=1)
        order.append(cols[name])
    extra = set(range(len(names))) - set(order) - ({label_col} if label_col is not None else set())
    if extra:
        raise ParseError(f"unrecognized columns: {[names[i] for i in sorted(extra)]}", line=1)
    return kind, label_col, {"order": order, "k": k}


def load_table(path: str):
    """Read a prediction CSV into (ProbMatrix | LogitMatrix, labels | None).

    Schema: header with columns p_1..p_k (probabilities, validated at tol
    1e-6) or z_1..z_k (logits), plus an optional 1-based integer ``label``
    column.  Parse failures report the offending 1-based line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        kind, label_col, info = _classify_header(header)
        order, k = info["order"], info["k"]
        values, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                values.append([float(row[i]) for i in order])
            except ValueError as exc:
                raise ParseError(f"bad numeric value ({exc})", line=lineno) from None
            if label_col is not None:
                try:
                    lab = int(row[label_col])
                except ValueError:
                    raise ParseError(f"bad label {row[label_col]!r}", line=lineno) from None
                if not 1 <= lab <= k:
                    raise LabelRange(f"line {lineno}: label {lab} outside 1..{k}")
                labels.append(lab)
    if not values:
        raise ParseError("no data rows", line=2)
    table = np.asarray(values, dtype=float)
    out_labels = np.asarray(labels, dtype=np.int64) if label_col is not None else None
    if kind == "logits":
        return LogitMatrix(table), out_labels
    sums = table.sum(axis=1)
    bad = np.abs(sums - 1.0) >= 1e-6
    neg = table < -1e-6
    if np.any(neg):
        i = int(np.argwhere(neg)[0][0])
        raise ParseError(f"negative probability in data row {i + 1}", line=i + 2) from None
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ParseError(
            f"row sums to {sums[i]!r}, not 1 within 1e-06 (RowSumViolation)", line=i + 2) from None
    return validate_prob_matrix(table, tol=1e-6), out_labels


def _write_table(path: str, values: np.ndarray, kind: str, labels=None) -> None:
    k = values.shape[1]
    prefix = "p_" if kind == "probs" else "z_"
    header = [f"{prefix}{i}" for i in range(1, k + 1)]
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(values.shape[0]):
            row = [repr(float(x)) for x in values[i]]
            if labels is not None:
                row.append(str(int(labels[i])))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# benchmark harness

def trimmed_mean(values, frac: float = 0.05) -> float:
    """Mean after dropping floor(frac * len) values from each sorted tail."""
    a = np.sort(np.asarray(values, dtype=float))
    t = int(math.floor(frac * a.size))
    if a.size - 2 * t <= 0:
        return float(a.mean())
    return float(a[t:a.size - t].mean())


_POOL_CACHE: dict = {}


def _load_pools(cfg: ExperimentConfig):
    key = (cfg.source_path, cfg.target_path)
    if key not in _POOL_CACHE:
        src_table, src_labels = load_table(cfg.source_path)
        tgt_table, tgt_labels = load_table(cfg.target_path)
        if src_labels is None:
            raise ConfigError("files-mode benchmark needs a labeled source file")
        if tgt_labels is None:
            raise ConfigError("files-mode benchmark needs a labeled target pool "
                              "(labels are used only for resampling and scoring)")
        if src_table.k != tgt_table.k:
            raise ConfigError("source and target files disagree on k")
        _POOL_CACHE[key] = (src_table, src_labels, tgt_table, tgt_labels)
    return _POOL_CACHE[key]


def _as_logits(table) -> np.ndarray:
    if isinstance(table, LogitMatrix):
        return table.values
    return np.log(np.maximum(table.values, _LOG_FLOOR))


@dataclass
class _RepData:
    logits_source: np.ndarray
    labels_source: np.ndarray   # 1-based
    logits_target: np.ndarray
    labels_target: np.ndarray   # 1-based, hidden, evaluation only
    true_weights: Weights


def _make_replication_data(cfg: ExperimentConfig, seeds: list[int]) -> _RepData:
    if cfg.mode == "synthetic":
        spec = cfg.mixture_spec()
        target_dist = _shift_dist(cfg, spec.k, seeds[0])
        _, ys, Ps = generate_mixture(spec, spec.source_prior, cfg.n, seeds[1],
                                     mean_shift=cfg.epsilon)
        Xt, yt, _ = generate_mixture(spec, target_dist, cfg.m, seeds[2])
        Pt = posterior_matrix(spec, spec.source_prior, Xt, mean_shift=cfg.epsilon)
        truth = Weights(target_dist.probs / spec.source_prior.probs, spec.source_prior)
        t = cfg.planted_temperature
        return _RepData(
            logits_source=t * np.log(np.maximum(Ps.values, _LOG_FLOOR)),
            labels_source=ys,
            logits_target=t * np.log(np.maximum(Pt.values, _LOG_FLOOR)),
            labels_target=yt,
            true_weights=truth,
        )
    src_table, src_labels, tgt_table, tgt_labels = _load_pools(cfg)
    k = src_table.k
    pool_props = class_proportions(src_labels, k)
    if np.any(pool_props.probs == 0):
        raise ConfigError("files-mode source pool must contain every class")
    target_dist = _shift_dist(cfg, k, seeds[0])
    rng_src = rng_from_seed(seeds[1])
    src_idx = rng_src.integers(0, src_table.n, size=cfg.n)
    tgt_idx = resample_indices(tgt_labels - 1, target_dist, cfg.m, rng_from_seed(seeds[2]))
    truth = Weights(target_dist.probs / pool_props.probs, pool_props)
    return _RepData(
        logits_source=_as_logits(src_table)[src_idx],
        labels_source=src_labels[src_idx],
        logits_target=_as_logits(tgt_table)[tgt_idx],
        labels_target=tgt_labels[tgt_idx],
        true_weights=truth,
    )


def _split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """50/50 estimation/fitting split, deterministic in the seed."""
    perm = rng_from_seed(seed).permutation(n)
    half = n // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def _estimate_one(cfg: ExperimentConfig, estimator: str,
                  source: SourceSet, target: TargetSet) -> Weights:
    if estimator == "bbse_hard":
        return solve_bbse(confusion_matrix(source, "hard"), target_mean(target, "hard"))
    if estimator == "bbse_soft":
        return solve_bbse(confusion_matrix(source, "soft"), target_mean(target, "soft"))
    if estimator == "rlls":
        lam = cfg.rlls_lambda if cfg.rlls_lambda is not None else 0.05 / math.sqrt(source.n)
        return solve_rlls(confusion_matrix(source, "soft"), target_mean(target, "soft"), lam)
    if estimator == "mlls":
        props = class_proportions(source.labels0 + 1, source.k)
        return mlls_em(target.probs, props, tol=cfg.em_tol, max_iter=cfg.em_max_iter)
    if estimator == "elsa":
        ec = ElsaConfig(solver=cfg.elsa_solver, tol=cfg.elsa_tol, max_iter=cfg.elsa_max_iter)
        weights, _ = elsa_solve(source, target, ec)
        return weights
    raise ConfigError(f"unknown estimator {estimator!r}")


def _replication_rows(cfg: ExperimentConfig, rep: int) -> list[dict]:
    seeds = replication_seeds(cfg.seed, rep, 4)
    rep_seed = seeds[0]

    def base_row(estimator, calibration):
        return {
            "estimator": estimator, "calibration": calibration,
            "replication": rep, "seed": rep_seed,
            "failed": False, "error": None,
            "weights": None, "clipped": None, "constraint_gap": None,
            "mse": None, "delta_acc": None,
            "raw_accuracy": None, "adapted_accuracy": None,
            "calib_seconds": 0.0, "adapt_seconds": 0.0,
            "plugin_ci": None,
        }

    rows = []
    try:
        data = _make_replication_data(cfg, seeds)
    except LabelShiftError as exc:
        for cal in cfg.calibrations:
            for est in cfg.estimators:
                row = base_row(est, cal)
                row["failed"] = True
                row["error"] = f"{type(exc).__name__}: {exc}"
                rows.append(row)
        return rows

    needs_split = any(c != "none" for c in cfg.calibrations)
    n_rows = data.logits_source.shape[0]

    for cal in cfg.calibrations:
        t0 = time.perf_counter()
        cal_error = None
        source = target = None
        try:
            if needs_split:
                est_idx, fit_idx = _split_indices(n_rows, seeds[3])
            else:
                est_idx, fit_idx = np.arange(n_rows), np.empty(0, dtype=int)
            if cal == "none":
                cmap = CalibrationMap("none")
            else:
                cmap = fit_calibration(cal, LogitMatrix(data.logits_source[fit_idx]),
                                       data.labels_source[fit_idx])
            probs_source = apply_calibration(cmap, LogitMatrix(data.logits_source[est_idx]))
            probs_target = apply_calibration(cmap, LogitMatrix(data.logits_target))
            source = SourceSet(probs_source, data.labels_source[est_idx])
            target = TargetSet(probs_target, hidden_labels=data.labels_target)
        except LabelShiftError as exc:
            cal_error = f"{type(exc).__name__}: {exc}"
        calib_seconds = time.perf_counter() - t0

        for est in cfg.estimators:
            row = base_row(est, cal)
            row["calib_seconds"] = calib_seconds
            if cal_error is not None:
                row["failed"] = True
                row["error"] = cal_error
                rows.append(row)
                continue
            t1 = time.perf_counter()
            try:
                weights = _estimate_one(cfg, est, source, target)
                raw_preds = np.argmax(target.probs.values, axis=1) + 1
                adapted_preds = adapt_and_predict(target.probs, weights)
                truth_labels = data.labels_target
                raw_acc = float(np.mean(raw_preds == truth_labels))
                adapted_acc = float(np.mean(adapted_preds == truth_labels))
                row["weights"] = weights.omega.tolist()
                row["clipped"] = weights.clipped
                row["constraint_gap"] = weights.constraint_gap
                row["mse"] = weight_mse(weights, data.true_weights)
                row["delta_acc"] = adapted_acc - raw_acc
                row["raw_accuracy"] = raw_acc
                row["adapted_accuracy"] = adapted_acc
                if cfg.plugin_ci and est == "elsa":
                    sand = sandwich_covariance(source, target, weights, level=cfg.ci_level)
                    row["plugin_ci"] = {
                        "level": cfg.ci_level,
                        "intervals": sand.intervals.tolist(),
                        "covariance": sand.covariance.tolist(),
                    }
            except LabelShiftError as exc:
                row["failed"] = True
                row["error"] = f"{type(exc).__name__}: {exc}"
            row["adapt_seconds"] = time.perf_counter() - t1
            rows.append(row)
    return rows


def aggregate_rows(rows: list[dict]) -> dict:
    """Per (estimator, calibration): 5% two-sided trimmed mean of MSE, the
    95% replication band of MSE, and the trimmed mean of delta accuracy."""
    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(f"{row['estimator']}|{row['calibration']}", []).append(row)
    out = {}
    for key in sorted(groups):
        scored = [r for r in groups[key] if not r["failed"]]
        agg = {"n_scored": len(scored), "n_failed": len(groups[key]) - len(scored)}
        mses = [r["mse"] for r in scored if r["mse"] is not None]
        deltas = [r["delta_acc"] for r in scored if r["delta_acc"] is not None]
        if mses:
            band = np.percentile(np.asarray(mses, dtype=float), [2.5, 97.5])
            agg["mse_trimmed_mean"] = trimmed_mean(mses)
            agg["mse_replication_band"] = [float(band[0]), float(band[1])]
        else:
            agg["mse_trimmed_mean"] = None
            agg["mse_replication_band"] = None
        agg["delta_acc_trimmed_mean"] = trimmed_mean(deltas) if deltas else None
        out[key] = agg
    return out


@dataclass
class BenchmarkReport:
    config: dict
    rows: list
    aggregates: dict
    version: str = __version__
    mse_convention: str = MSE_CONVENTION
    created_at: str = ""

    def to_json_dict(self) -> dict:
        return {
            "schema": "labelshift-report-v1",
            "version": self.version,
            "created_at": self.created_at,
            "mse_convention": self.mse_convention,
            "config": self.config,
            "rows": self.rows,
            "aggregates": self.aggregates,
        }

    def canonical_dict(self) -> dict:
        """The determinism-comparison view: no timestamp, no wall-clock row
        fields, and no execution-only config (worker count, output routing)."""
        d = self.to_json_dict()
        d.pop("created_at")
        d["config"] = {k: v for k, v in d["config"].items()
                       if k not in ("jobs", "out", "format")}
        d["rows"] = [{k: v for k, v in row.items()
                      if k not in ("calib_seconds", "adapt_seconds")}
                     for row in d["rows"]]
        return d

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.canonical_dict(), sort_keys=True).encode()


def run_benchmark(config: ExperimentConfig) -> BenchmarkReport:
    """Run every (replication x calibration x estimator) cell.

    Replications are independent (per-replication derived seeds) and run on a
    worker pool; estimator failures are recorded per row, never fatal.
    """
    config.validate()
    if config.mode == "files":
        _load_pools(config)  # fail fast on unreadable/invalid files
    jobs = config.jobs or os.cpu_count() or 1
    reps = range(config.replications)
    if jobs <= 1 or config.replications == 1:
        chunks = [_replication_rows(config, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, config.replications)) as pool:
            chunks = list(pool.map(_replication_rows, [config] * config.replications, reps))
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r["estimator"], r["calibration"], r["replication"]))
    report = BenchmarkReport(
        config=config.to_dict(),
        rows=rows,
        aggregates=aggregate_rows(rows),
        created_at=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    )
    return report


CSV_HEADER = ["estimator", "calibration", "replication", "seed", "mse", "delta_acc",
              "calib_seconds", "adapt_seconds", "failed"]


def emit_report(report: BenchmarkReport, path: str, format: str = "json") -> None:
    """Write the report as nested JSON or flat per-replication CSV."""
    if format == "json":
        with open(path, "w") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in report.rows:
                writer.writerow([
                    row["estimator"], row["calibration"], row["replication"], row["seed"],
                    "" if row["mse"] is None else repr(row["mse"]),
                    "" if row["delta_acc"] is None else repr(row["delta_acc"]),
                    repr(row["calib_seconds"]), repr(row["adapt_seconds"]),
                    "true" if row["failed"] else "false",
                ])
        return
    raise ConfigError(f"format must be json or csv, got {format!r}")


def load_report(path: str) -> BenchmarkReport:
    """Reload a JSON report, re-deriving the aggregates from the rows and
    refusing to load if the stored aggregates disagree."""
    with open(path) as fh:
        d = json.load(fh)
    if d.get("schema") != "labelshift-report-v1":
        raise ParseError(f"not a benchmark report: schema {d.get('schema')!r}")
    report = BenchmarkReport(
        config=d["config"], rows=d["rows"], aggregates=d["aggregates"],
        version=d.get("version", ""), mse_convention=d.get("mse_convention", ""),
        created_at=d.get("created_at", ""),
    )
    recomputed = aggregate_rows(report.rows)
    if not _agg_close(recomputed, report.aggregates):
        raise ParseError("stored aggregates disagree with the per-replication rows")
    return report


def _agg_close(a: dict, b: dict) -> bool:
    if set(a) != set(b):
        return False
    for key in a:
        ga, gb = a[key], b[key]
        if set(ga) != set(gb):
            return False
        for f in ga:
            va, vb = ga[f], gb[f]
            if isinstance(va, list) != isinstance(vb, list):
                return False
            if isinstance(va, list):
                if len(va) != len(vb) or any(not _close(x, y) for x, y in zip(va, vb)):
                    return False
            elif not _close(va, vb):
                return False
    return True


def _close(x, y) -> bool:
    if x is None or y is None:
        return x is None and y is None
    return math.isclose(x, y, rel_tol=1e-12, abs_tol=1e-15)


# ---------------------------------------------------------------------------
# subcommands

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; config errors are exit 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_shift_flags(p):
    p.add_argument("--mechanism", choices=["dirichlet", "tweak_one"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--tweak-index", type=int, dest="tweak_index")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="labelshift",
                     description="Label-shift weight estimation, adaptation, and benchmarking")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="emit one synthetic source/target dataset as CSV")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--var", type=float, default=1.0)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--m", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--planted-temperature", type=float, default=1.0, dest="planted_temperature")
    p.add_argument("--kind", choices=["probs", "logits"], default="probs")
    p.add_argument("--out-dir", default=".", dest="out_dir")
    _add_shift_flags(p)

    p = sub.add_parser("estimate", help="one-shot weight estimation from prediction files")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--estimators", default="elsa")
    p.add_argument("--calibration", default="none", choices=list(CALIBRATIONS))
    p.add_argument("--rlls-lambda", type=float, default=None, dest="rlls_lambda")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ci", action="store_true", help="attach plug-in confidence intervals (elsa)")
    p.add_argument("--ci-level", type=float, default=0.95, dest="ci_level")
    p.add_argument("--out", default=None)

    p = sub.add_parser("adapt", help="apply a weights JSON to a prediction file")
    p.add_argument("--weights", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("benchmark", help="run the Monte-Carlo benchmark harness")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int, dest="replications")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--planted-temperature", type=float, dest="planted_temperature")
    p.add_argument("--estimators")
    p.add_argument("--calibrations")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "csv"])
    _add_shift_flags(p)

    p = sub.add_parser("report", help="verify and re-emit an existing JSON report")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    return parser


def _cmd_simulate(args) -> int:
    cfg = ExperimentConfig(
        k=args.k, dim=args.dim, radius=args.radius, var=args.var, n=args.n, m=args.m,
        seed=args.seed, epsilon=args.epsilon, planted_temperature=args.planted_temperature,
        **_shift_overrides(args),
    )
    cfg.validate()
    data = _make_replication_data(cfg, replication_seeds(cfg.seed, 0, 4))
    os.makedirs(args.out_dir, exist_ok=True)
    if args.kind == "logits":
        src, tgt = data.logits_source, data.logits_target
    else:
        from .calibrate import softmax
        src, tgt = softmax(data.logits_source), softmax(data.logits_target)
    _write_table(os.path.join(args.out_dir, "source.csv"), src, args.kind, data.labels_source)
    _write_table(os.path.join(args.out_dir, "target.csv"), tgt, args.kind, data.labels_target)
    print(f"wrote {args.out_dir}/source.csv ({cfg.n} rows) and "
          f"{args.out_dir}/target.csv ({cfg.m} rows)")
    return 0


def _shift_overrides(args) -> dict:
    out = {}
    for key in ("mechanism", "alpha", "rho", "tweak_index"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _cmd_estimate(args) -> int:
    estimators = tuple(s.strip() for s in args.estimators.split(",") if s.strip())
    for e in estimators:
        if e not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {e!r}")
    src_table, src_labels = load_table(args.source)
    tgt_table, _ = load_table(args.target)
    if src_labels is None:
        raise ConfigError("source file needs a label column")
    cal = args.calibration
    logits_src = _as_logits(src_table)
    logits_tgt = _as_logits(tgt_table)
    if cal != "none":
        est_idx, fit_idx = _split_indices(logits_src.shape[0], args.seed)
        cmap = fit_calibration(cal, LogitMatrix(logits_src[fit_idx]), src_labels[fit_idx])
    else:
        est_idx = np.arange(logits_src.shape[0])
        cmap = CalibrationMap("none")
    source = SourceSet(apply_calibration(cmap, LogitMatrix(logits_src[est_idx])),
                       src_labels[est_idx])
    target = TargetSet(apply_calibration(cmap, LogitMatrix(logits_tgt)))
    cfg = ExperimentConfig(rlls_lambda=args.rlls_lambda)
    result = {"calibration": cmap.to_json_dict(), "estimates": {}}
    for est in estimators:
        weights = _estimate_one(cfg, est, source, target)
        entry = {
            "omega": weights.omega.tolist(),
            "source_props": weights.source_props.probs.tolist(),
            "clipped": weights.clipped,
            "constraint_gap": weights.constraint_gap,
        }
        if args.ci and est == "elsa":
            sand = sandwich_covariance(source, target, weights, level=args.ci_level)
            entry["plugin_ci"] = sand.to_json_dict()
        result["estimates"][est] = entry
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_adapt(args) -> int:
    with open(args.weights) as fh:
        wd = json.load(fh)
    omega = np.asarray(wd["omega"], dtype=float)
    table, labels = load_table(args.probs)
    if isinstance(table, LogitMatrix):
        raise ConfigError("adapt needs probability rows; calibrate/softmax the logits first")
    adjusted = adjust_matrix(table, omega)
    preds = np.argmax(adjusted.values, axis=1) + 1
    k = adjusted.k
    header = [f"p_{i}" for i in range(1, k + 1)] + ["pred"]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(adjusted.n):
            writer.writerow([repr(float(x)) for x in adjusted.values[i]] + [str(int(preds[i]))])
    print(f"wrote {args.out} ({adjusted.n} rows)")
    return 0


def _cmd_benchmark(args) -> int:
    base = {}
    if args.config:
        try:
            with open(args.config) as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    overrides = {}
    for key in ("seed", "replications", "n", "m", "k", "epsilon", "planted_temperature",
                "jobs", "out", "format", "mechanism", "alpha", "rho", "tweak_index"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if args.estimators is not None:
        overrides["estimators"] = tuple(s.strip() for s in args.estimators.split(",") if s.strip())
    if args.calibrations is not None:
        overrides["calibrations"] = tuple(s.strip() for s in args.calibrations.split(",") if s.strip())
    cfg = ExperimentConfig.from_dict({**base, **overrides})
    report = run_benchmark(cfg)
    out = cfg.out or "report.json"
    emit_report(report, out, cfg.format)
    for key in sorted(report.aggregates):
        agg = report.aggregates[key]
        mse = agg["mse_trimmed_mean"]
        print(f"{key}: trimmed MSE = {mse if mse is not None else 'n/a'}"
              f" ({agg['n_scored']} scored, {agg['n_failed']} failed)")
    print(f"wrote {out}")
    if report.rows and all(row["failed"] for row in report.rows):
        return 3
    return 0


def _cmd_report(args) -> int:
    report = load_report(args.input)
    emit_report(report, args.out, args.format)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "estimate": _cmd_estimate,
        "adapt": _cmd_adapt,
        "benchmark": _cmd_benchmark,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (LabelShiftError, OSError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
