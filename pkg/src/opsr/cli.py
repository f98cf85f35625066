"""Command-line entry point.

Exit codes: 0 success (for ``solve``: a recovery), 1 no result, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .constopt.fitting import Dataset, OptConfig
from .expr.nodes import variables
from .expr.operators import EvalDomain
from .expr.parser import ParseError, parse
from .opgraph import AdjacencyMatrix, encode_expression, validate_matrix
from .pipeline import SolveConfig, solve
from .search import SearchConfig

EXIT_OK, EXIT_NO_RESULT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- configuration ------------------------------------------------------------


def _coerce(value: str, default):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        if default and isinstance(default[0], (int, float)):
            return tuple(type(default[0])(p) for p in parts)
        raise ValueError("this field cannot be set from text")
    return value


def _override(obj, items: dict[str, str], section: str):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, raw in items.items():
        if key not in fields:
            raise UsageError(f"unknown setting {section}.{key}")
        try:
            changes[key] = _coerce(raw, getattr(obj, key))
        except ValueError as err:
            raise UsageError(f"{section}.{key}: {err}") from None
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid [{section}] settings: {err}") from None


def read_config(path: Optional[str]) -> dict[str, dict[str, str]]:
    """INI-style file with sections ``run``, ``search``, ``opt`` and ``nn``."""
    if not path:
        return {}
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as err:
        raise UsageError(f"cannot read config {path}: {err}") from None
    out = {}
    for sec in cp.sections():
        if sec not in ("run", "search", "opt", "nn"):
            raise UsageError(f"unknown config section [{sec}]")
        out[sec] = dict(cp.items(sec))
    return out


@dataclasses.dataclass
class Settings:
    seed: Optional[int]
    search: SearchConfig
    opt: OptConfig
    nn: dict
    run: dict

    def solve_config(self, time_limit: Optional[float]) -> SolveConfig:
        # a wall-clock limit makes results depend on machine speed; 0 switches it off
        limit = time_limit if time_limit and time_limit > 0 else None
        return SolveConfig(search=self.search, opt=self.opt, time_limit_s=limit)

    def fingerprint(self) -> dict:
        return {
            "seed": self.seed,
            "search": _jsonable(dataclasses.asdict(self.search)),
            "opt": _jsonable(dataclasses.asdict(self.opt)),
            "nn": self.nn,
            "run": self.run,
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def settings_from(args) -> Settings:
    cfg = read_config(getattr(args, "config", None))
    run = dict(cfg.get("run", {}))
    seed = args.seed if getattr(args, "seed", None) is not None else run.pop("seed", None)
    run.pop("seed", None)
    if seed is not None:
        try:
            seed = int(seed)
        except ValueError:
            raise UsageError(f"seed must be an integer, got {seed!r}") from None
    search = _override(SearchConfig(), cfg.get("search", {}), "search")
    if getattr(args, "max_candidates", None) is not None:
        search = _override(search, {"max_candidates_per_round": str(args.max_candidates)}, "search")
    opt = _override(OptConfig(), cfg.get("opt", {}), "opt")
    return Settings(seed, search, opt, dict(cfg.get("nn", {})), run)


def _need_seed(s: Settings, command: str) -> int:
    if s.seed is None:
        raise UsageError(f"{command} needs --seed (or 'seed' under [run] in the config file)")
    return s.seed


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(out: Path, command: str, settings: dict, seeds: dict, files: Sequence[str]) -> Path:
    entries = []
    for name in sorted(files):
        data = (out / name).read_bytes()
        entries.append({"file": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    manifest = {
        "tool": "opsr",
        "version": __version__,
        "command": command,
        "seeds": seeds,
        "config": settings,
        "config_sha256": config_hash(settings),
        "artifacts": entries,
    }
    p = out / "manifest.json"
    p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return p


# -- commands -----------------------------------------------------------------

def cmd_encode(args) -> int:
    try:
        e = parse(args.expression)
    except ParseError as err:
        print(f"syntax error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        m = encode_expression(e)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    text = m.to_json()
    if args.out:
        p = Path(args.out)
        if p.suffix != ".json":
            p.mkdir(parents=True, exist_ok=True)
            p = p / "matrix.json"
        else:
            p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    print(text, end="")
    edges = sorted(m.named_edges())
    print("edges: " + (", ".join(f"{a}->{b}" for a, b in edges) if edges else "(none)"))
    return EXIT_OK


def _read_data(path: str) -> tuple[Dataset, int]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise UsageError(f"{path}: empty data file")
    head = [h.strip() for h in rows[0]]
    if not head or head[-1] != "y" or any(not h.startswith("x_") for h in head[:-1]):
        raise UsageError(f"{path}: header must be x_1[,x_2],y")
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as err:
        raise UsageError(f"{path}: {err}") from None
    n_vars = len(head) - 1
    return Dataset(arr[:, :n_vars], arr[:, n_vars]), n_vars


def _solve_inputs(args, s: Settings, seed: int):
    """(matrix, data, n_vars, domain, label) from the solve flags."""
    from .bench import MatrixSource, parse_ranges, resolve_benchmarks, run_seed, sample_dataset
    from .bench.data import Benchmark
    from .bench.harness import _int_seed

    label = domain = None
    bench = None
    if args.benchmark:
        pool = resolve_benchmarks(args.set) if args.set else (
            resolve_benchmarks("univariate") + resolve_benchmarks("bivariate"))
        found = [b for b in pool if b.name == args.benchmark]
        if not found:
            raise UsageError(f"no benchmark named {args.benchmark!r}")
        bench = found[0]
    elif args.expr:
        try:
            parse(args.expr)
        except ParseError as err:
            raise UsageError(f"syntax error: {err}") from None
        try:
            ranges = parse_ranges(args.ranges)
        except ValueError as err:
            raise UsageError(f"--ranges: {err}") from None
        bench = Benchmark("expr", args.expr, ranges)
        used = variables(bench.label)
        if used and max(used) > len(ranges):
            raise UsageError("--ranges must give one range per variable")
    ss = run_seed(seed, bench.name if bench else "solve", 0)
    if bench is not None:
        label, domain = bench.label, bench.domain
        if args.data:
            data, n_vars = _read_data(args.data)
        else:
            data, n_vars = sample_dataset(bench, args.points, _int_seed(ss, 0)), bench.n_vars
    else:
        if not args.data:
            raise UsageError("solve needs --benchmark, --expr or --data")
        data, n_vars = _read_data(args.data)
        if args.ranges:
            try:
                domain = EvalDomain(parse_ranges(args.ranges))
            except ValueError as err:
                raise UsageError(f"--ranges: {err}") from None
    if args.matrix:
        try:
            m = AdjacencyMatrix.from_json(Path(args.matrix).read_text(encoding="utf-8"))
        except (OSError, ValueError, KeyError) as err:
            raise UsageError(f"cannot read matrix {args.matrix}: {err}") from None
    else:
        try:
            src = MatrixSource.parse(args.matrix_source)
        except ValueError as err:
            raise UsageError(str(err)) from None
        if src.kind != "model" and bench is None:
            raise UsageError(f"matrix source {src} needs a known label (--benchmark or --expr)")
        m = src.matrix(bench, data, _int_seed(ss, 1))
    return m, data, n_vars, domain, label


def cmd_solve(args) -> int:
    s = settings_from(args)
    seed = _need_seed(s, "solve")
    m, data, n_vars, domain, label = _solve_inputs(args, s, seed)
    for d in validate_matrix(m):
        print(f"note: {d}", file=sys.stderr)
    t0 = time.perf_counter()
    res = solve(m, data, n_vars, domain, label, s.solve_config(args.time_limit), seed=seed)
    print(f"searched {res.n_candidates} candidate(s) in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    if not res.ranked:
        print("no candidates")
    for i, sc in enumerate(res.ranked[: args.top], 1):
        d = sc.summary()
        r2 = "None" if d["r2"] is None else f"{d['r2']:.9f}"
        print(f"{i:2d}. r2={r2} recovered={'yes' if sc.recovered else 'no'} "
              f"strategy={d['strategy']} {d['expression'] or d['skeleton']}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        body = {
            "matrix_edges": sorted(f"{a}->{b}" for a, b in m.named_edges()),
            "n_candidates": res.n_candidates,
            "recovered": res.recovered,
            "ranked": [sc.summary() for sc in res.ranked],
        }
        (out / "solve.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "matrix.json").write_text(m.to_json(), encoding="utf-8")
        fp = s.fingerprint() | {"matrix_source": args.matrix_source, "points": args.points}
        write_manifest(out, "solve", fp, {"seed": seed}, ["solve.json", "matrix.json"])
    return EXIT_OK if res.recovered else EXIT_NO_RESULT


def cmd_bench(args) -> int:
    from .bench import MatrixSource, aggregate_metrics, emit_report, resolve_benchmarks, run_suite

    s = settings_from(args)
    seed = _need_seed(s, "bench")
    try:
        benches = resolve_benchmarks(args.set)
        src = MatrixSource.parse(args.matrix_source)
    except (OSError, ValueError, KeyError) as err:
        raise UsageError(str(err)) from None
    if args.names:
        wanted = [n.strip() for n in args.names.split(",") if n.strip()]
        missing = [n for n in wanted if n not in {b.name for b in benches}]
        if missing:
            raise UsageError(f"unknown benchmark(s): {', '.join(missing)}")
        benches = [b for b in benches if b.name in wanted]
    repeats = args.repeats if args.repeats is not None else int(s.run.get("repeats", 10))
    if repeats < 1:
        raise UsageError("--repeats must be >= 1")

    def progress(rec):
        r2 = rec.recorded_r2
        print(f"{rec.name}: recovery {rec.recovery_rate:.1f}, R2 {'None' if r2 is None else f'{r2:.4f}'}",
              file=sys.stderr)

    records = run_suite(benches, repeats, seed, src, s.solve_config(args.time_limit), args.points,
                        jobs=args.jobs, progress=progress)
    metrics = aggregate_metrics(records, args.bins)
    out = Path(args.out)
    arts = emit_report(metrics, records, out, timing=args.timing)
    fp = s.fingerprint() | {"set": args.set, "names": args.names, "repeats": repeats, "points": args.points,
                            "matrix_source": str(src), "bins": args.bins, "time_limit_s": args.time_limit}
    write_manifest(out, "bench", fp, {"seed": seed, "per_run": "SeedSequence([seed, crc32(name), repeat])"},
                   list(arts))
    print(f"recovery rate {metrics.recovery_rate:.3f}, length-bin variance {metrics.variance:.4f}; "
          f"reports in {out}")
    return EXIT_OK


def _hyperparams(s: Settings, seed: int, args):
    from .neural import HyperParams

    hp = HyperParams(seed=seed)
    items = dict(s.nn)
    for key in ("epochs", "backward_epochs", "judgment_epochs"):
        v = getattr(args, key, None)
        if v is not None:
            items[key] = str(v)
    items.pop("seed", None)
    return _override(hp, items, "nn")


def cmd_train(args) -> int:
    from .neural import judgment_accuracy, judgment_corpus, save_checkpoint, train_backward, train_forward, \
        train_judgment
    from .neural.model import ALL_KINDS

    s = settings_from(args)
    seed = _need_seed(s, "train")
    hp = _hyperparams(s, seed, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print("training forward operator nets", file=sys.stderr)
    model = train_forward(ALL_KINDS, hp, args.family)
    print("training backward path", file=sys.stderr)
    train_backward(model, args.family)
    corpus = judgment_corpus(args.corpus, seed)
    print("training judgment head", file=sys.stderr)
    train_judgment(model, corpus)
    exact, per_edge = judgment_accuracy(model, corpus)
    save_checkpoint(model, out / "model.ckpt")
    with open(out / "loss_curve.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("stage", "step", "loss"))
        for stage, curve in model.curves.items():
            for i, v in enumerate(curve):
                w.writerow((stage, i, repr(v)))
    summary = {"judgment_exact_matrix_accuracy": exact, "judgment_entry_accuracy": per_edge,
               "final_loss": {k: v[-1] for k, v in model.curves.items() if v}}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    fp = s.fingerprint() | {"hyperparams": hp.to_dict(), "family": args.family, "corpus": args.corpus}
    write_manifest(out, "train", fp, {"seed": seed}, ["model.ckpt", "loss_curve.csv", "train_summary.json"])
    print(f"held-in exact-matrix accuracy {exact:.3f}, entry accuracy {per_edge:.4f}; checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .neural import BLOCKS, gradient_check

    s = settings_from(args)
    seed = s.seed if s.seed is not None else 0
    blocks = args.blocks.split(",") if args.blocks else list(BLOCKS)
    bad = [b for b in blocks if b not in BLOCKS]
    if bad:
        raise UsageError(f"unknown block(s) {', '.join(bad)}; choose from {', '.join(BLOCKS)}")
    ok = True
    for b in blocks:
        r = gradient_check(b, seed)
        ok &= r.ok
        print(f"{b:10s} max relative error {r.max_rel_error:.3e} over {r.n_checked} parameters "
              f"{'ok' if r.ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NO_RESULT


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opsr", description="Operator-graph guided symbolic regression.")
    p.add_argument("--version", action="version", version=f"opsr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_help="random seed"):
        sp.add_argument("--seed", type=int, help=seed_help)
        sp.add_argument("--config", help="INI file with [run], [search], [opt], [nn] sections")

    e = sub.add_parser("encode", help="adjacency matrix of an expression")
    e.add_argument("expression")
    e.add_argument("--out", help="output .json file or directory")

    s = sub.add_parser("solve", help="search and fit from a matrix source and data")
    common(s)
    src = s.add_mutually_exclusive_group()
    src.add_argument("--benchmark", help="benchmark name (label, ranges and data come from the set)")
    src.add_argument("--expr", help="label expression; data are sampled on --ranges")
    s.add_argument("--set", help="benchmark set name or file (default: both built-in sets)")
    s.add_argument("--ranges", default="(-1,1)", help="per-variable ranges, e.g. '(-1,1);(0,2)'")
    s.add_argument("--data", help="CSV with columns x_1[,x_2],y")
    s.add_argument("--matrix", help="adjacency matrix JSON (overrides --matrix-source)")
    s.add_argument("--matrix-source", default="oracle", help="oracle | noisy:k | model:path")
    s.add_argument("--points", type=int, default=1000, help="sampled data points")
    s.add_argument("--max-candidates", type=int, help="candidates per search round")
    s.add_argument("--time-limit", type=float, default=60.0, help="seconds per solve (0: no limit)")
    s.add_argument("--top", type=int, default=5, help="candidates to print")
    s.add_argument("--out", help="directory for solve.json, matrix.json and manifest.json")

    b = sub.add_parser("bench", help="repeated runs over a benchmark set with reports")
    common(b)
    b.add_argument("--set", default="univariate", help="univariate | bivariate | path to a benchmark file")
    b.add_argument("--names", help="comma-separated subset of benchmark names")
    b.add_argument("--repeats", type=int, help="runs per benchmark (default 10)")
    b.add_argument("--matrix-source", default="oracle", help="oracle | noisy:k | model:path")
    b.add_argument("--points", type=int, default=1000)
    b.add_argument("--bins", type=int, default=5, help="expression-length bins")
    b.add_argument("--max-candidates", type=int)
    b.add_argument("--time-limit", type=float, default=60.0, help="seconds per run (0: no limit)")
    b.add_argument("--jobs", type=int, default=1, help="parallel benchmark workers")
    b.add_argument("--timing", action="store_true", help="fill mean_time_s (reports are then not reproducible)")
    b.add_argument("--out", required=True)

    t = sub.add_parser("train", help="toy forward, backward and judgment training")
    common(t)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, help="forward training steps")
    t.add_argument("--backward-epochs", type=int)
    t.add_argument("--judgment-epochs", type=int)
    t.add_argument("--family", default="mixed", choices=("mixed", "cubic", "sinusoid", "linear"))
    t.add_argument("--corpus", type=int, default=50, help="judgment corpus size")

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks of every block")
    common(g)
    g.add_argument("--blocks", help="comma-separated subset")
    return p


_COMMANDS = {"encode": cmd_encode, "solve": cmd_solve, "bench": cmd_bench, "train": cmd_train,
             "gradcheck": cmd_gradcheck}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
