"""Experiment orchestration: config, experiment grids, results and plot data."""
from __future__ import annotations

import configparser
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import __version__
from .bounds import (
    BoundConstants,
    FunctionClassSpec,
    REPORT_CSV_COLUMNS,
    dudley_alpha,
    evaluate_bounds,
    generalization_bound,
    psi,
)
from .estimate import estimate_geometry
from .lipnet import TrainConfig, certified_spec, measure_gap, train
from .spaceform import SpaceFormGeometry, embed_ambient, make_task, sample_uniform_ball

log = logging.getLogger(__name__)

KINDS = ("synthetic_decay", "embedding_geometry", "curvature_ablation", "bound_eval")

SCHEMAS = {
    "synthetic_decay": ["kind", "kappa", "d", "D", "n", "seed", "gap", "bound_curvature",
                        "bound_euclidean", "predicted_rate", "train_risk", "test_risk",
                        "L", "error"],
    "curvature_ablation": ["kappa", "seed", "gap", "psi", "bound_curvature", "d", "D", "n",
                           "train_risk", "test_risk", "L", "error"],
    "embedding_geometry": ["dataset", "D", "d_hat", "kappa_hat", "improvement_pct", "n",
                           "gen_bound", "ambient_gen_bound", "euclidean_gen_bound", "error"],
    "bound_eval": list(REPORT_CSV_COLUMNS) + ["seed", "error"],
}

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_FAILED = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class UnknownColumnError(KeyError):
    pass


# ---------------------------------------------------------------------------
# config


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(",", " ").split()]


def _ints(text) -> list:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(round(float(v))) for v in str(text).replace(",", " ").split()]


def _strs(text) -> list:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _fmt_list(values) -> str:
    return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in values)


def _jsonable(obj):
    """Replace non-finite floats by None so manifests stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "synthetic_decay"
    d: tuple = (3,)
    kappas: tuple = (1.0, 0.0, -1.0)
    domain_radius: float = 1.5
    D: int = 100
    n: tuple = (100, 316, 1000, 3162, 10000)
    seeds: tuple = tuple(range(10))
    test_factor: int = 10
    task: str = "regression"
    label_noise: float = 0.1
    frequency: float = 3.0
    net: TrainConfig = TrainConfig(target_norm=1.25, output_bound=1.5, epochs=50)
    L: tuple = (1.0,)
    B: tuple = (1.0,)
    L_loss: tuple = (1.0,)
    constants: BoundConstants = BoundConstants()
    inputs: tuple = ()
    k_graph: int = 10
    n_triangles: int = 500
    estimate_seed: int = 0
    output_dir: str = "runs"
    workers: int = 0

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.kind != "embedding_geometry":
            if not self.n:
                raise ConfigError("n list is empty")
            if any(b <= a for a, b in zip(self.n, self.n[1:])):
                raise ConfigError(f"n list must be strictly increasing, got {list(self.n)}")
            if not self.kappas:
                raise ConfigError("kappa list is empty")
            if any(d < 1 for d in self.d):
                raise ConfigError("d must be >= 1")
        if self.kind == "curvature_ablation" and len(set(self.kappas)) < 2:
            raise ConfigError("curvature_ablation needs at least 2 distinct kappa values")
        if self.kind in ("synthetic_decay", "curvature_ablation"):
            if self.task not in ("regression", "classification"):
                raise ConfigError(f"unknown task {self.task!r}")
            if self.test_factor < 1:
                raise ConfigError("test_factor must be >= 1")
        for p in self.inputs:
            if not Path(p).is_file():
                raise ConfigError(f"input file not found: {p}")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")
        return self

    def to_ini(self) -> str:
        """Complete resolved config as INI text; parse_config reads it back."""
        cp = _case_sensitive_parser()
        cp["experiment"] = {
            "kind": self.kind, "d": _fmt_list(self.d), "kappas": _fmt_list(self.kappas),
            "domain_radius": repr(self.domain_radius), "D": str(self.D),
            "n": _fmt_list(self.n), "seeds": _fmt_list(self.seeds),
            "test_factor": str(self.test_factor), "task": self.task,
            "label_noise": repr(self.label_noise), "frequency": repr(self.frequency),
            "inputs": ", ".join(self.inputs), "k_graph": str(self.k_graph),
            "n_triangles": str(self.n_triangles), "estimate_seed": str(self.estimate_seed),
            "output_dir": self.output_dir, "workers": str(self.workers),
        }
        cp["net"] = {f.name: str(getattr(self.net, f.name)) for f in fields(TrainConfig)
                     if f.name != "seed"}
        cp["class"] = {"L": _fmt_list(self.L), "B": _fmt_list(self.B),
                       "L_loss": _fmt_list(self.L_loss)}
        cp["constants"] = {k: repr(v) for k, v in asdict(self.constants).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue().strip() + "\n"


def _case_sensitive_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    return cp


def parse_config(text: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build a validated config from INI text plus ``section.key -> value``
    overrides (CLI flags)."""
    cp = _case_sensitive_parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, str(value))

    known = {"experiment", "net", "class", "constants"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    base = ExperimentConfig()
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    try:
        kw = {}
        conv = {"kind": str, "d": _ints, "kappas": _floats, "domain_radius": float,
                "D": int, "n": _ints, "seeds": _ints, "test_factor": int, "task": str,
                "label_noise": float, "frequency": float, "inputs": _strs,
                "k_graph": int, "n_triangles": int, "estimate_seed": int,
                "output_dir": str, "workers": int}
        for key, value in ex.items():
            if key not in conv:
                raise ConfigError(f"unknown key experiment.{key}")
            v = conv[key](value)
            kw[key] = tuple(v) if isinstance(v, list) else v
        net_kw = {}
        if cp.has_section("net"):
            types = {f.name: f.type for f in fields(TrainConfig)}
            for key, value in cp["net"].items():
                if key not in types or key == "seed":
                    raise ConfigError(f"unknown key net.{key}")
                cur = getattr(base.net, key)
                net_kw[key] = type(cur)(float(value)) if isinstance(cur, (int, float)) else value
        kw["net"] = replace(base.net, **net_kw)
        if cp.has_section("class"):
            for key, value in cp["class"].items():
                if key not in ("L", "B", "L_loss"):
                    raise ConfigError(f"unknown key class.{key}")
                kw[key] = tuple(_floats(value))
        if cp.has_section("constants"):
            cst = {}
            valid = {f.name for f in fields(BoundConstants)}
            for key, value in cp["constants"].items():
                if key not in valid:
                    raise ConfigError(f"unknown key constants.{key}")
                cst[key] = float(value)
            kw["constants"] = BoundConstants(**cst)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return replace(base, **kw).validate()


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = p.read_text()
    if p.suffix == ".csv":
        text = config_from_results(text)
    return parse_config(text, overrides)


# ---------------------------------------------------------------------------
# results table and CSV


@dataclass
class ResultsTable:
    kind: str
    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise UnknownColumnError(name)
        return np.array([r.get(name) for r in self.rows])

    @property
    def n_errors(self) -> int:
        return sum(1 for r in self.rows if r.get("error"))


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return format(v, ".17g")
    # keep rows one line each
    return str(v).replace("\n", " ").replace(",", ";")


def write_csv(table: ResultsTable, path, config_text: Optional[str] = None) -> Path:
    """Write ``table``; the resolved config is echoed as leading '#' lines."""
    path = Path(path)
    lines = []
    if config_text:
        lines += ["# " + ln if ln else "#" for ln in config_text.rstrip("\n").split("\n")]
    lines.append(",".join(table.columns))
    for row in table.rows:
        lines.append(",".join(format_value(row.get(c)) for c in table.columns))
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_cell(text: str):
    if text == "":
        return None
    try:
        v = float(text)
    except ValueError:
        return text
    if math.isfinite(v) and v.is_integer() and "." not in text and "e" not in text.lower():
        return int(v)
    return v


def read_csv(path, kind: str = "") -> ResultsTable:
    header = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or not line:
            continue
        cells = line.split(",")
        if header is None:
            header = cells
            continue
        rows.append({c: _parse_cell(v) for c, v in zip(header, cells)})
    return ResultsTable(kind=kind, columns=header or [], rows=rows)


def config_from_results(text: str) -> str:
    """Recover the INI config echoed at the top of a results CSV."""
    out = []
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        out.append(line[2:] if line.startswith("# ") else line[1:])
    if not out:
        raise ConfigError("results file has no embedded config")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# cells


def _geometry(d, kappa, cfg: ExperimentConfig) -> SpaceFormGeometry:
    return SpaceFormGeometry.ball(d, kappa, cfg.domain_radius)


def predicted_rate(d: float, n: int, kappa: float, L: float,
                   constants: BoundConstants = BoundConstants()) -> float:
    """big_o_scale * (n^{-1/d} log n + psi(kappa, L))."""
    return constants.big_o_scale * (dudley_alpha(d, n) * math.log(n) + psi(kappa, L))


def _gap_cell(cfg: ExperimentConfig, d: int, kappa: float, n: int, seed: int) -> dict:
    geom = _geometry(d, kappa, cfg)
    net_cfg = replace(cfg.net, seed=seed)
    # bounds first: a violated precondition fails the cell before training
    spec = certified_spec(net_cfg.target_norm, net_cfg.output_bound, geom, net_cfg.loss)
    generalization_bound(geom, spec, n, cfg.constants)
    m = n * (1 + cfg.test_factor)
    sample = sample_uniform_ball(geom, m, seed)
    sample = embed_ambient(sample, cfg.D, seed + 10_007)
    sample = make_task(sample, cfg.task, seed + 20_011, noise=cfg.label_noise,
                       frequency=cfg.frequency)
    B = net_cfg.output_bound
    labels = np.clip(sample.labels, -B, B)
    sample = replace(sample, labels=labels)
    tr = replace(sample, intrinsic_points=sample.intrinsic_points[:n],
                 ambient_points=sample.ambient_points[:n], labels=labels[:n])
    te = replace(sample, intrinsic_points=sample.intrinsic_points[n:],
                 ambient_points=sample.ambient_points[n:], labels=labels[n:])
    net = train(tr.ambient_points, tr.labels, net_cfg).net
    rec = measure_gap(net, tr, te, net_cfg.loss, geom, spec, cfg.constants)
    return {
        "kappa": kappa, "d": d, "D": cfg.D, "n": n, "seed": seed, "gap": rec.gap,
        "bound_curvature": rec.bound_curvature, "bound_euclidean": rec.bound_euclidean,
        "predicted_rate": predicted_rate(d, n, kappa, spec.L, cfg.constants),
        "psi": psi(kappa, spec.L), "train_risk": rec.train_risk,
        "test_risk": rec.test_risk, "L": spec.L,
    }


def _bound_cell(cfg: ExperimentConfig, d, kappa, n, L, B, L_loss) -> dict:
    geom = _geometry(d, kappa, cfg)
    spec = FunctionClassSpec(L=L, B=B, L_loss=L_loss)
    return evaluate_bounds(geom, spec, n, cfg.D, cfg.constants).csv_row()


def _run_cell(job):
    fn, cfg, key, args = job
    try:
        row = fn(cfg, *args)
        row["error"] = ""
    except Exception as exc:  # isolate: one bad cell must not sink the run
        log.warning("cell %s failed: %s: %s", key, type(exc).__name__, exc)
        row = {"error": f"{type(exc).__name__}: {exc}"}
    return key, row


def worker_count(cfg: ExperimentConfig) -> int:
    """``workers`` from the config (0 means one per CPU), capped by the
    GEOBOUND_THREADS environment variable."""
    n = cfg.workers or os.cpu_count() or 1
    env = os.environ.get("GEOBOUND_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"GEOBOUND_THREADS must be an integer, got {env!r}") from None
    return n


def _execute(jobs, workers: int):
    """Run jobs and return (key, row) pairs sorted by key, whatever the
    scheduling order."""
    if workers <= 1 or len(jobs) <= 1:
        results = [_run_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    return sorted(results, key=lambda kr: kr[0])


def _finish_rows(results, schema, fixed: dict) -> list:
    rows = []
    for key, row in results:
        full = {c: None for c in schema}
        full.update(fixed)
        full.update(key[1])
        full.update(row)
        rows.append(full)
    return rows


def _metadata(cfg: ExperimentConfig) -> dict:
    return {"version": __version__, "kind": cfg.kind, "config": cfg.to_ini()}


# ---------------------------------------------------------------------------
# experiments


def run_synthetic_decay(cfg: ExperimentConfig) -> ResultsTable:
    cfg = replace(cfg, kind="synthetic_decay").validate()
    jobs = []
    for d in cfg.d:
        for kappa in cfg.kappas:
            for n in cfg.n:
                for seed in cfg.seeds:
                    ident = {"kappa": kappa, "d": d, "D": cfg.D, "n": n, "seed": seed}
                    jobs.append((_gap_cell, cfg, ((kappa, n, seed, d), ident),
                                 (d, kappa, n, seed)))
    results = _execute(jobs, worker_count(cfg))
    schema = SCHEMAS["synthetic_decay"]
    rows = _finish_rows(results, schema, {"kind": "synthetic_decay"})
    table = ResultsTable("synthetic_decay", schema,
                         [{c: r.get(c) for c in schema} for r in rows], _metadata(cfg))
    table.metadata["summary"] = decay_summary(table)
    return table


def run_curvature_ablation(cfg: ExperimentConfig) -> ResultsTable:
    cfg = replace(cfg, kind="curvature_ablation").validate()
    jobs = []
    for d in cfg.d:
        for kappa in cfg.kappas:
            for n in cfg.n:
                for seed in cfg.seeds:
                    ident = {"kappa": kappa, "d": d, "D": cfg.D, "n": n, "seed": seed}
                    jobs.append((_gap_cell, cfg, ((kappa, n, seed, d), ident),
                                 (d, kappa, n, seed)))
    results = _execute(jobs, worker_count(cfg))
    schema = SCHEMAS["curvature_ablation"]
    rows = _finish_rows(results, schema, {})
    table = ResultsTable("curvature_ablation", schema,
                         [{c: r.get(c) for c in schema} for r in rows], _metadata(cfg))
    table.metadata["summary"] = ablation_summary(table)
    return table


def run_bound_eval(cfg: ExperimentConfig) -> ResultsTable:
    cfg = replace(cfg, kind="bound_eval").validate()
    jobs = []
    for d in cfg.d:
        for kappa in cfg.kappas:
            for n in cfg.n:
                for L in cfg.L:
                    for B in cfg.B:
                        for L_loss in cfg.L_loss:
                            ident = {"d": d, "D": cfg.D, "kappa": kappa, "L": L, "B": B,
                                     "L_loss": L_loss, "n": n,
                                     "delta": cfg.constants.delta}
                            key = ((kappa, n, 0, d, L, B, L_loss), ident)
                            jobs.append((_bound_cell, cfg, key,
                                         (d, kappa, n, L, B, L_loss)))
    results = _execute(jobs, worker_count(cfg))
    schema = SCHEMAS["bound_eval"]
    rows = _finish_rows(results, schema, {"seed": 0})
    return ResultsTable("bound_eval", schema,
                        [{c: r.get(c) for c in schema} for r in rows], _metadata(cfg))


def load_points(path) -> np.ndarray:
    """Numeric CSV of points, one per row; a non-numeric header is skipped."""
    p = Path(path)
    with p.open() as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.strip().split(",")]
        skip = 0
    except ValueError:
        skip = 1
    X = np.loadtxt(p, delimiter=",", skiprows=skip, ndmin=2)
    if X.size == 0:
        raise ValueError(f"{path} contains no points")
    return X


def _embedding_cell(cfg: ExperimentConfig, path: str) -> dict:
    X = load_points(path)
    est = estimate_geometry(X, k=cfg.k_graph, n_triangles=cfg.n_triangles,
                            seed=cfg.estimate_seed)
    geom = est.geometry()
    spec = FunctionClassSpec(L=cfg.L[0], B=cfg.B[0], L_loss=cfg.L_loss[0])
    radius = float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1)))
    rep = evaluate_bounds(geom, spec, len(X), X.shape[1], cfg.constants,
                          ambient_radius=radius)
    diag = est.to_dict()
    diag["bounds"] = rep.to_dict()
    return {"D": X.shape[1], "d_hat": est.d_hat, "kappa_hat": est.kappa_hat,
            "improvement_pct": rep.improvement_pct, "n": len(X),
            "gen_bound": rep.gen_bound, "ambient_gen_bound": rep.ambient_gen_bound,
            "euclidean_gen_bound": rep.euclidean_gen_bound, "_diagnostics": diag}


def run_embedding_geometry(cfg: ExperimentConfig) -> ResultsTable:
    cfg = replace(cfg, kind="embedding_geometry").validate()
    jobs = []
    for i, path in enumerate(cfg.inputs):
        name = Path(path).stem
        jobs.append((_embedding_cell, cfg, ((i, name), {"dataset": name}), (path,)))
    results = _execute(jobs, worker_count(cfg))
    schema = SCHEMAS["embedding_geometry"]
    rows = _finish_rows(results, schema, {})
    diagnostics = {r["dataset"]: r.pop("_diagnostics", None) for r in rows}
    table = ResultsTable("embedding_geometry", schema,
                         [{c: r.get(c) for c in schema} for r in rows], _metadata(cfg))
    table.metadata["diagnostics"] = diagnostics
    return table


RUNNERS = {
    "synthetic_decay": run_synthetic_decay,
    "embedding_geometry": run_embedding_geometry,
    "curvature_ablation": run_curvature_ablation,
    "bound_eval": run_bound_eval,
}


# ---------------------------------------------------------------------------
# summaries


def _ok_rows(table: ResultsTable) -> list:
    return [r for r in table.rows if not r.get("error")]


def median_gaps(table: ResultsTable, n: Optional[int] = None) -> dict:
    groups = {}
    for r in _ok_rows(table):
        if n is None or r["n"] == n:
            groups.setdefault(r["kappa"], []).append(r["gap"])
    return {k: float(np.median(v)) for k, v in sorted(groups.items())}


def loglog_slope(ns, gaps) -> float:
    ns, gaps = np.asarray(ns, float), np.asarray(gaps, float)
    keep = gaps > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(ns[keep]), np.log(gaps[keep]), 1)[0])


def calibrate_big_o_scale(table: ResultsTable, kappa: float = 0.0) -> float:
    """Least-squares scale (in log space) mapping the unit-constant predicted
    rate onto the median gaps at ``kappa``."""
    ok = [r for r in _ok_rows(table) if r["kappa"] == kappa]
    if not ok:
        return float("nan")
    ns = sorted({r["n"] for r in ok})
    logs = []
    for n in ns:
        g = np.median([r["gap"] for r in ok if r["n"] == n])
        rate = np.median([r["predicted_rate"] for r in ok if r["n"] == n])
        if g > 0 and rate > 0:
            logs.append(math.log(g) - math.log(rate))
    return float(math.exp(np.mean(logs))) if logs else float("nan")


def decay_summary(table: ResultsTable) -> dict:
    out = {"slopes": {}, "bound_dominates": True}
    ok = _ok_rows(table)
    for kappa in sorted({r["kappa"] for r in ok}):
        sub = [r for r in ok if r["kappa"] == kappa]
        ns = sorted({r["n"] for r in sub})
        med = [float(np.median([r["gap"] for r in sub if r["n"] == n])) for n in ns]
        out["slopes"][format_value(kappa)] = loglog_slope(ns, med)
    out["bound_dominates"] = all(r["bound_curvature"] >= r["gap"] for r in ok)
    out["big_o_scale_fit"] = calibrate_big_o_scale(table)
    return out


def bootstrap_rankings(table: ResultsTable, order, n_boot: int = 10, seed: int = 0) -> int:
    """Number of seed-bootstrap resamples in which the median gaps satisfy
    gap(order[0]) >= gap(order[1]) >= ..."""
    ok = _ok_rows(table)
    gaps = {k: np.array([r["gap"] for r in ok if r["kappa"] == k]) for k in order}
    if any(len(v) == 0 for v in gaps.values()):
        return 0
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_boot):
        med = [np.median(rng.choice(gaps[k], len(gaps[k]))) for k in order]
        hits += all(a >= b for a, b in zip(med, med[1:]))
    return hits


def ablation_summary(table: ResultsTable) -> dict:
    med = median_gaps(table)
    neg = sorted(k for k in med if k <= 0)
    out = {"median_gap": {format_value(k): v for k, v in med.items()}}
    if len(neg) >= 2:
        rho = stats.spearmanr([-k for k in neg], [med[k] for k in neg])[0]
        out["spearman_neg_kappa_vs_gap"] = float(rho)
    else:
        out["spearman_neg_kappa_vs_gap"] = float("nan")
    order = sorted(neg)
    out["bootstrap_order"] = [format_value(k) for k in order]
    out["bootstrap_hits"] = bootstrap_rankings(table, order) if len(order) >= 2 else 0
    out["bootstrap_total"] = 10
    return out


# ---------------------------------------------------------------------------
# plot data


def emit_plot_data(table: ResultsTable, x: str, y: str, group: Optional[str], out_dir) -> dict:
    """One CSV per group value with rows sorted by ``x``, plus manifest.json."""
    for c in (x, y) + ((group,) if group else ()):
        if c not in table.columns:
            raise UnknownColumnError(c)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ok = [r for r in table.rows if not r.get("error")]
    groups = {}
    for r in ok:
        groups.setdefault(r[group] if group else "all", []).append(r)
    files = []
    for key in sorted(groups, key=lambda v: (isinstance(v, str), v)):
        rows = sorted(groups[key], key=lambda r: r[x])
        name = f"{y}_vs_{x}" + (f"_{group}={format_value(key)}" if group else "") + ".csv"
        sub = ResultsTable(table.kind, [x, y], [{x: r[x], y: r[y]} for r in rows])
        write_csv(sub, out_dir / name)
        files.append({"group": key, "file": name, "points": len(rows)})
    manifest = {"x": x, "y": y, "group_by": group, "x_label": x, "y_label": y,
                "groups": [f["group"] for f in files], "files": files}
    (out_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2,
                                                      sort_keys=True))
    return manifest


# ---------------------------------------------------------------------------
# run directories


def new_run_dir(base, kind: str) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    base = Path(base)
    path = base / f"{kind}-{stamp}"
    i = 1
    while path.exists():
        path = base / f"{kind}-{stamp}-{i}"
        i += 1
    path.mkdir(parents=True)
    return path


PLOT_SPECS = {
    "synthetic_decay": [("n", "gap", "kappa"), ("n", "bound_curvature", "kappa"),
                        ("n", "predicted_rate", "kappa")],
    "curvature_ablation": [("kappa", "gap", None)],
    "bound_eval": [("n", "gen_bound", "kappa")],
    "embedding_geometry": [],
}


def run_experiment(cfg: ExperimentConfig, out_base=None) -> tuple:
    """Run ``cfg`` into a fresh timestamped directory.

    Returns (table, run_dir, exit_code).
    """
    table = RUNNERS[cfg.kind](cfg)
    run_dir = new_run_dir(out_base or cfg.output_dir, cfg.kind)
    write_csv(table, run_dir / "results.csv", cfg.to_ini())
    extra_files = []
    diag = table.metadata.get("diagnostics")
    if diag:
        for name, d in diag.items():
            if d is not None:
                fn = f"diagnostics_{name}.json"
                (run_dir / fn).write_text(json.dumps(_jsonable(d), indent=2, sort_keys=True))
                extra_files.append(fn)
    plots = []
    for x, y, g in PLOT_SPECS[cfg.kind]:
        if table.rows:
            plots.append(emit_plot_data(table, x, y, g, run_dir / "plots" / f"{y}_vs_{x}"))
    n_err = table.n_errors
    if not table.rows or n_err == 0:
        code = EXIT_OK
    elif n_err == len(table.rows):
        code = EXIT_FAILED
    else:
        code = EXIT_PARTIAL
    manifest = {
        "version": __version__,
        "kind": cfg.kind,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": cfg.to_ini(),
        "rows": len(table.rows),
        "errors": n_err,
        "exit_code": code,
        "summary": table.metadata.get("summary"),
        "files": ["results.csv"] + extra_files,
        "plots": plots,
    }
    (run_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2,
                                                      sort_keys=True, default=str))
    return table, run_dir, code
