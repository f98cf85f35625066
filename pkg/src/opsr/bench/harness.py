"""Repeated benchmark runs, the recorded-R² rule, length-bin aggregation and reports."""

from __future__ import annotations

import csv
import io
import json
import math
import time
import zlib
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..opgraph import SIZE, AdjacencyMatrix, encode_expression
from ..pipeline import SolveConfig, solve
from .data import Benchmark, sample_dataset

REPORT_COLUMNS = ("name", "vars", "length", "recorded_r2", "recovery_rate", "strategy", "mean_time_s")


@dataclass(frozen=True)
class RunOutcome:
    r2: Optional[float]
    recovered: bool
    time_s: float = 0.0
    strategy: Optional[str] = None
    expression: Optional[str] = None
    # "no-candidate", "numerical-failure" or "error" when r2 is None
    failure: Optional[str] = None


@dataclass
class RunRecord:
    name: str
    n_vars: int
    length: int
    outcomes: list[RunOutcome] = field(default_factory=list)

    @property
    def recorded_r2(self) -> Optional[float]:
        return recorded_r2(self.outcomes)

    @property
    def recovery_rate(self) -> float:
        return sum(o.recovered for o in self.outcomes) / len(self.outcomes) if self.outcomes else 0.0

    @property
    def strategy(self) -> Optional[str]:
        c = Counter(o.strategy for o in self.outcomes if o.strategy)
        return min(c, key=lambda s: (-c[s], s)) if c else None

    @property
    def mean_time_s(self) -> float:
        return sum(o.time_s for o in self.outcomes) / len(self.outcomes) if self.outcomes else 0.0


def recorded_r2(outcomes: Sequence[RunOutcome]) -> Optional[float]:
    """1 when any run recovered; otherwise the median of the per-run R² values.

    Missing values sort below every number.  With an even run count the two
    middle order statistics are averaged; the result is None when either of
    them is missing.
    """
    if not outcomes:
        return None
    if any(o.recovered for o in outcomes):
        return 1.0
    vals = sorted((-math.inf if o.r2 is None else o.r2) for o in outcomes)
    k = len(vals)
    mid = [vals[k // 2]] if k % 2 else [vals[k // 2 - 1], vals[k // 2]]
    if any(v == -math.inf for v in mid):
        return None
    return sum(mid) / len(mid)


# -- matrix sources ---------------------------------------------------------

@dataclass(frozen=True)
class MatrixSource:
    kind: str  # "oracle" | "noisy" | "model"
    flips: int = 0
    path: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> "MatrixSource":
        text = text.strip()
        if text == "oracle":
            return cls("oracle")
        if text.startswith("noisy:"):
            try:
                k = int(text[6:])
            except ValueError:
                raise ValueError(f"bad flip count in {text!r}") from None
            if not 0 <= k <= SIZE * SIZE:
                raise ValueError(f"flip count must be in 0..{SIZE * SIZE}")
            return cls("noisy", flips=k)
        if text.startswith("model:") and len(text) > 6:
            return cls("model", path=text[6:])
        raise ValueError(f"unknown matrix source {text!r}; use oracle, noisy:k or model:path")

    def __str__(self) -> str:
        return {"oracle": "oracle", "noisy": f"noisy:{self.flips}", "model": f"model:{self.path}"}[self.kind]

    def matrix(self, b: Benchmark, data, seed) -> AdjacencyMatrix:
        if self.kind == "model":
            from ..neural import load_checkpoint, predict_matrix

            return predict_matrix(_cached_model(self.path, load_checkpoint), data.X, data.y)
        m = encode_expression(b.label)
        if self.kind == "noisy" and self.flips:
            rng = np.random.default_rng(seed)
            for pos in rng.choice(SIZE * SIZE, size=self.flips, replace=False):
                m = m.flipped(int(pos) // SIZE, int(pos) % SIZE)
        return m


_MODELS: dict = {}


def _cached_model(path, loader):
    if path not in _MODELS:
        _MODELS[path] = loader(path)
    return _MODELS[path]


# -- running ----------------------------------------------------------------

def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def run_seed(seed: int, name: str, repeat: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), _name_key(name), int(repeat)])


def _int_seed(ss: np.random.SeedSequence, salt: int) -> int:
    return int(np.random.SeedSequence(ss.entropy, spawn_key=(*ss.spawn_key, salt)).generate_state(1)[0])


def run_once(b: Benchmark, source: MatrixSource, cfg: SolveConfig, seed_seq, n_points: int = 1000) -> RunOutcome:
    t0 = time.perf_counter()
    try:
        data = sample_dataset(b, n_points, _int_seed(seed_seq, 0))
        m = source.matrix(b, data, _int_seed(seed_seq, 1))
        res = solve(m, data, b.n_vars, b.domain, b.label, cfg, seed=_int_seed(seed_seq, 2))
    except Exception as err:  # a failed run is data, not a crash
        return RunOutcome(None, False, time.perf_counter() - t0, failure=f"error: {type(err).__name__}")
    dt = time.perf_counter() - t0
    best = res.best
    if best is None:
        return RunOutcome(None, False, dt, failure="no-candidate")
    s = best.summary()
    if s["r2"] is None:
        return RunOutcome(None, False, dt, best.fit.strategy, failure="numerical-failure")
    return RunOutcome(float(s["r2"]), bool(best.recovered), dt, best.fit.strategy, s["expression"])


def run_benchmark(b: Benchmark, repeats: int = 10, seed: int = 0, source: MatrixSource | str = "oracle",
                  cfg: SolveConfig = SolveConfig(time_limit_s=60.0), n_points: int = 1000) -> RunRecord:
    """Run the matrix -> search -> fit -> recovery pipeline ``repeats`` times."""
    if isinstance(source, str):
        source = MatrixSource.parse(source)
    rec = RunRecord(b.name, b.n_vars, b.length)
    for r in range(repeats):
        rec.outcomes.append(run_once(b, source, cfg, run_seed(seed, b.name, r), n_points))
    return rec


def _run_job(args) -> RunRecord:
    return run_benchmark(*args)


def run_suite(benchmarks: Sequence[Benchmark], repeats: int = 10, seed: int = 0,
              source: MatrixSource | str = "oracle", cfg: SolveConfig = SolveConfig(time_limit_s=60.0),
              n_points: int = 1000, jobs: int = 1, progress=None) -> list[RunRecord]:
    """All benchmarks, in input order regardless of ``jobs``."""
    if isinstance(source, str):
        source = MatrixSource.parse(source)
    work = [(b, repeats, seed, source, cfg, n_points) for b in benchmarks]
    if jobs <= 1:
        out = []
        for w in work:
            out.append(_run_job(w))
            if progress:
                progress(out[-1])
        return out
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        out = list(ex.map(_run_job, work))
    if progress:
        for r in out:
            progress(r)
    return out


# -- aggregation ------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    recovery_rate: float
    mean_recorded_r2: Optional[float]
    bin_edges: tuple[float, ...]
    bin_counts: tuple[int, ...]
    bin_means: tuple[Optional[float], ...]
    grand_mean: float
    variance: float
    n_benchmarks: int

    def to_dict(self) -> dict:
        return {
            "n_benchmarks": self.n_benchmarks,
            "recovery_rate": self.recovery_rate,
            "mean_recorded_r2": self.mean_recorded_r2,
            "length_bins": {
                "edges": list(self.bin_edges),
                "counts": list(self.bin_counts),
                "mean_recovery": list(self.bin_means),
            },
            "grand_mean": self.grand_mean,
            "variance": self.variance,
        }


def binned_variance(counts: Sequence[int], means: Sequence[Optional[float]]) -> tuple[float, float]:
    """Grand mean and the count-weighted variance of per-bin means; empty bins are ignored."""
    pairs = [(c, m) for c, m in zip(counts, means) if c > 0]
    total = sum(c for c, _ in pairs)
    if total == 0:
        return 0.0, 0.0
    grand = sum(c * m for c, m in pairs) / total
    return grand, sum(c * (m - grand) ** 2 for c, m in pairs) / total


def length_bins(lengths: Sequence[float], bins: int = 5) -> tuple[list[float], list[int]]:
    """Equal-width bin edges over the observed range and each length's bin index."""
    if not lengths:
        return [], []
    lo, hi = min(lengths), max(lengths)
    if hi == lo:
        return [float(lo), float(hi)], [0] * len(lengths)
    width = (hi - lo) / bins
    edges = [lo + i * width for i in range(bins)] + [float(hi)]
    idx = [min(int((x - lo) / width), bins - 1) for x in lengths]
    return edges, idx


def aggregate_metrics(records: Sequence[RunRecord], bins: int = 5) -> Metrics:
    if bins < 1:
        raise ValueError("need at least one bin")
    rates = [r.recovery_rate for r in records]
    r2s = [r.recorded_r2 for r in records if r.recorded_r2 is not None]
    edges, idx = length_bins([r.length for r in records], bins)
    nb = bins if len(edges) > 2 else len(edges) // 2
    counts = [0] * nb
    sums = [0.0] * nb
    for i, rate in zip(idx, rates):
        counts[i] += 1
        sums[i] += rate
    means = [s / c if c else None for s, c in zip(sums, counts)]
    grand, var = binned_variance(counts, means)
    return Metrics(
        recovery_rate=sum(rates) / len(rates) if rates else 0.0,
        mean_recorded_r2=sum(r2s) / len(r2s) if r2s else None,
        bin_edges=tuple(edges), bin_counts=tuple(counts), bin_means=tuple(means),
        grand_mean=grand, variance=var, n_benchmarks=len(records),
    )


# -- reports ----------------------------------------------------------------

def _num(x) -> str:
    if x is None:
        return "None"
    return format(float(x), ".10g")


def report_csv(records: Sequence[RunRecord], timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in records:
        w.writerow([r.name, r.n_vars, r.length, _num(r.recorded_r2), _num(r.recovery_rate),
                    r.strategy or "", _num(r.mean_time_s) if timing else ""])
    return buf.getvalue()


def plot_data_csv(metrics: Metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("bin", "length_lo", "length_hi", "count", "mean_recovery"))
    for i, c in enumerate(metrics.bin_counts):
        lo = metrics.bin_edges[i] if i < len(metrics.bin_edges) else ""
        hi = metrics.bin_edges[i + 1] if i + 1 < len(metrics.bin_edges) else ""
        w.writerow((i, _num(lo), _num(hi), c, _num(metrics.bin_means[i])))
    return buf.getvalue()


def runs_csv(records: Sequence[RunRecord], timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("name", "repeat", "r2", "recovered", "strategy", "failure", "expression", "time_s"))
    for r in records:
        for i, o in enumerate(r.outcomes):
            w.writerow((r.name, i, _num(o.r2), int(o.recovered), o.strategy or "", o.failure or "",
                        o.expression or "", _num(o.time_s) if timing else ""))
    return buf.getvalue()


def emit_report(metrics: Metrics, records: Sequence[RunRecord], out_dir=None, fmt: str = "all",
                timing: bool = True) -> dict[str, str]:
    """Render the report artifacts; write them under ``out_dir`` when given.

    ``fmt`` is ``"csv"``, ``"json"`` or ``"all"``.  Returns file name -> text.
    """
    if fmt not in ("csv", "json", "all"):
        raise ValueError(f"unknown report format {fmt!r}")
    arts: dict[str, str] = {}
    if fmt in ("csv", "all"):
        arts["results.csv"] = report_csv(records, timing)
        arts["runs.csv"] = runs_csv(records, timing)
        arts["length_bins.csv"] = plot_data_csv(metrics)
    if fmt in ("json", "all"):
        arts["summary.json"] = json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for name, text in arts.items():
            (d / name).write_text(text, encoding="utf-8")
    return arts
