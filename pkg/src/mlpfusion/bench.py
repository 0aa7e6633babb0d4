"""Approximation-error benchmark over compressors and seeds.

Each (method, seed) cell compresses the teacher, then measures the mean
per-sample output error and the Frobenius distance between the teacher's and
the compressed model's SGD and Adam kernel matrices over the fixture inputs.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compress import METHODS, compress, equal_budget_prune_ratio
from .errors import InvalidArgument, MlpFusionError, TensorIOError
from .fixtures import fixture_hash
from .ntk import kernel_matrix, ntk_error, output_error
from .tuning import TuneConfig, label_by_teacher, train_toy, trajectory_distance

METRICS = "output = mean per-sample Frobenius; ntk = Frobenius of kernel-matrix difference"
COLUMNS = ("method", "params", "seed", "status", "output_error", "ntk_error_sgd", "ntk_error_adam", "seconds")
SUMMARY_SEED = "mean"
STD_SEED = "std"


@dataclass
class BenchConfig:
    methods: tuple = ("fuse", "sketch", "ablation", "mmd", "prune", "svd")
    seeds: tuple = tuple(range(10))
    k: int = 16
    t: int = 16
    ratio: float | None = None  # None -> equal nonzero budget with width k
    strategy: str = "standalone_p"
    mmd_steps: int = 200
    mmd_lr: float = 1.0
    bandwidth: str | float = "auto"
    timing: bool = False
    dynamics: bool = False
    dynamics_steps: int = 100
    dynamics_lr: float = 1e-3

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.seeds = tuple(int(s) for s in self.seeds)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise InvalidArgument(f"unknown methods {bad}; choose from {METHODS}")
        if not self.methods:
            raise InvalidArgument("at least one method is required")
        if not self.seeds:
            raise InvalidArgument("at least one seed is required")


@dataclass
class BenchmarkReport:
    header: dict
    rows: list
    summary: list
    dynamics: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = {"header": self.header, "rows": self.rows, "summary": self.summary, "dynamics": self.dynamics}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.header):
            buf.write(f"# {key}: {json.dumps(self.header[key], sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in self.rows + self.summary:
            w.writerow([_fmt(row[c]) for c in COLUMNS])
        return buf.getvalue()

    def mean(self, method: str, column: str = "ntk_error_adam") -> float:
        for row in self.summary:
            if row["method"] == method and row["seed"] == SUMMARY_SEED:
                return row[column]
        raise KeyError(method)

    def per_seed(self, method: str, column: str = "ntk_error_adam") -> dict:
        return {r["seed"]: r[column] for r in self.rows if r["method"] == method and r["status"] == "ok"}

    def write(self, out, fmt: str | None = None) -> Path:
        out = Path(out)
        fmt = fmt or ("json" if out.suffix == ".json" else "csv")
        text = self.to_json() if fmt == "json" else self.to_csv()
        try:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(text)
        except OSError as exc:
            raise TensorIOError(f"cannot write report: {exc}", path=str(out)) from exc
        return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _params_label(method, cfg: BenchConfig, ratio):
    if method == "svd":
        return f"t={cfg.t}"
    if method == "prune":
        return f"ratio={ratio!r}"
    if method == "mmd":
        return f"k={cfg.k};steps={cfg.mmd_steps};lr={cfg.mmd_lr!r};bandwidth={cfg.bandwidth}"
    if method == "fuse":
        return f"k={cfg.k};strategy={cfg.strategy}"
    return f"k={cfg.k}"


def _compress(teacher, method, seed, cfg: BenchConfig, ratio):
    return compress(
        teacher, method, k=cfg.k, t=cfg.t, ratio=ratio, seed=seed, strategy=cfg.strategy,
        steps=cfg.mmd_steps, lr=cfg.mmd_lr, bandwidth=cfg.bandwidth,
    )


def run_bench(teacher, head, inputs, cfg: BenchConfig | None = None) -> BenchmarkReport:
    cfg = cfg or BenchConfig()
    inputs = list(inputs)
    if not inputs:
        raise InvalidArgument("benchmark needs at least one input")
    ratio = equal_budget_prune_ratio(teacher, cfg.k) if cfg.ratio is None else cfg.ratio
    reference = {kind: kernel_matrix(teacher, head, inputs, kind) for kind in ("sgd", "adam")}
    rows = []
    for method in cfg.methods:
        for seed in cfg.seeds:
            row = {"method": method, "params": _params_label(method, cfg, ratio), "seed": seed}
            start = time.perf_counter()
            try:
                comp = _compress(teacher, method, seed, cfg, ratio)
                row.update(
                    status="ok",
                    output_error=output_error(teacher, comp, inputs),
                    ntk_error_sgd=ntk_error(reference["sgd"], kernel_matrix(comp, head, inputs, "sgd")),
                    ntk_error_adam=ntk_error(reference["adam"], kernel_matrix(comp, head, inputs, "adam")),
                )
            except MlpFusionError as exc:
                row.update(status=f"failed:{exc.code}", output_error=float("nan"),
                           ntk_error_sgd=float("nan"), ntk_error_adam=float("nan"))
            row["seconds"] = time.perf_counter() - start if cfg.timing else 0.0
            rows.append(row)
    rows.sort(key=lambda r: (cfg.methods.index(r["method"]), r["seed"]))
    header = {
        "metrics": METRICS,
        "seeds": list(cfg.seeds),
        "methods": list(cfg.methods),
        "fixture_hash": fixture_hash(teacher, head, inputs),
        "k": cfg.k,
        "t": cfg.t,
        "prune_ratio": ratio,
        "activation": teacher.act.kind,
        "timing": cfg.timing,
    }
    report = BenchmarkReport(header=header, rows=rows, summary=summarize(rows, cfg.methods))
    if cfg.dynamics:
        report.dynamics = dynamics_comparison(teacher, head, inputs, cfg)
        wins = sum(d["fuse_closer"] for d in report.dynamics)
        header["dynamics_fuse_closer"] = f"{wins}/{len(report.dynamics)}"
    return report


def summarize(rows, methods) -> list:
    out = []
    for method in methods:
        ok = [r for r in rows if r["method"] == method and r["status"] == "ok"]
        params = next((r["params"] for r in rows if r["method"] == method), "")
        for label, fn in ((SUMMARY_SEED, np.mean), (STD_SEED, np.std)):
            row = {"method": method, "params": params, "seed": label,
                   "status": f"{len(ok)}/{sum(r['method'] == method for r in rows)} ok"}
            for col in ("output_error", "ntk_error_sgd", "ntk_error_adam", "seconds"):
                row[col] = float(fn([r[col] for r in ok])) if ok else float("nan")
            out.append(row)
    return out


def dynamics_comparison(teacher, head, inputs, cfg: BenchConfig) -> list:
    """Adam training trajectories of fused and sketched students against the teacher's."""
    data = label_by_teacher(teacher, head, inputs)
    tc = TuneConfig(steps=cfg.dynamics_steps, lr=cfg.dynamics_lr, optimizer="adam")
    base = train_toy(teacher, head, data, tc, seed=0)
    out = []
    for seed in cfg.seeds:
        fused = compress(teacher, "fuse", k=cfg.k, seed=seed, strategy=cfg.strategy)
        sketch = compress(teacher, "sketch", k=cfg.k, seed=seed)
        d_fuse = trajectory_distance(base, train_toy(fused, head, data, tc, seed=seed))
        d_sketch = trajectory_distance(base, train_toy(sketch, head, data, tc, seed=seed))
        out.append({"seed": seed, "fuse_distance": d_fuse, "sketch_distance": d_sketch,
                    "fuse_closer": bool(d_fuse < d_sketch)})
    return out


def load_report(path) -> BenchmarkReport:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise TensorIOError(f"cannot read report: {exc}", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"report {path} is not JSON: {exc}") from exc
    return BenchmarkReport(doc["header"], doc["rows"], doc["summary"], doc.get("dynamics", []))


def verify_report(report: BenchmarkReport, teacher, head, inputs) -> bool:
    """True when the report was produced from exactly these tensors."""
    return report.header.get("fixture_hash") == fixture_hash(teacher, head, inputs)
