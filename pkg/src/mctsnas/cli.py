"""Command-line entry point: ``mctsnas {search,compare,score,gen}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import arch, radarsim
from .arch import ArchState, MacroConfig, build_spec, count_params, deserialize_spec, serialize_spec
from .naswot import NaswotScorer
from .searchcore import ALGORITHMS, Evaluator, SearchConfig, SearchResult, run_search

log = logging.getLogger("mctsnas")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SEARCH = 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScoringConfig:
    batch_size: int = 16
    input_size: int = 128
    scenarios: tuple[int, ...] = tuple(range(1, 11))

    def __post_init__(self):
        if self.batch_size < 1 or self.input_size < 1:
            raise ValueError("batch_size and input_size must be positive")
        for s in self.scenarios:
            radarsim.scenario(s)


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "nmcs"
    search: SearchConfig = field(default_factory=SearchConfig)
    macro: MacroConfig = field(default_factory=MacroConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    out: str = "runs/out"
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown RunConfig fields: {sorted(unknown)}")
        sub = {"search": SearchConfig, "macro": MacroConfig, "scoring": ScoringConfig}
        for name, typ in sub.items():
            if name in doc:
                d = dict(doc[name])
                bad = set(d) - {f.name for f in fields(typ)}
                if bad:
                    raise ConfigError(f"unknown {name} fields: {sorted(bad)}")
                if name == "scoring" and "scenarios" in d:
                    d["scenarios"] = tuple(d["scenarios"])
                doc[name] = typ(**d)
        return cls(**doc)


# ---------------------------------------------------------------------------
# wiring


def scoring_batch(scoring: ScoringConfig, seed: int) -> np.ndarray:
    size = scoring.input_size
    gen = radarsim.GeneratorConfig(shape=(min(size, 128), min(size, 128)), out_size=size)
    scen = [radarsim.scenario(s) for s in scoring.scenarios]
    data_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(0xDA7A,)).generate_state(1)[0])
    return radarsim.make_batch(scen, scoring.batch_size, data_seed, gen)


def make_evaluator(cfg: RunConfig, budget: int | None = None) -> tuple[Evaluator, NaswotScorer]:
    batch = scoring_batch(cfg.scoring, cfg.seed)
    scorer = NaswotScorer(batch, cfg.macro, seed=cfg.seed)
    return Evaluator(scorer, cfg.search, cfg.macro, budget=budget), scorer


def execute(cfg: RunConfig, budget: int | None = None) -> tuple[SearchResult, Evaluator, float]:
    ev, scorer = make_evaluator(cfg, budget)
    t0 = time.perf_counter()
    result = run_search(cfg.algorithm, cfg.search, ev, rescore=scorer)
    return result, ev, time.perf_counter() - t0


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: line {e.lineno} column {e.colno}: {e.msg}") from None
        cfg = RunConfig.from_dict(doc)
    s, m, sc = {}, {}, {}
    for flag, target, key in [
        ("budget", s, "budget"), ("alpha", s, "alpha"), ("k", s, "k"), ("bias", s, "bias"),
        ("tref", s, "tref"), ("level", s, "nmcs_level"), ("playout_width", s, "playout_width"),
        ("wall_clock", s, "time_per_move"), ("workers", s, "workers"),
        ("macro_r", m, "R"), ("base_channels", m, "base_channels"),
        ("batch_size", sc, "batch_size"), ("input_size", sc, "input_size"),
    ]:
        v = getattr(args, flag, None)
        if v is not None:
            target[key] = v
    if getattr(args, "reuse_tree", False):
        s["reuse_tree"] = True
    if getattr(args, "extended", False):
        s["extended"] = True
    top = {}
    if getattr(args, "algo", None):
        top["algorithm"] = args.algo
    if getattr(args, "out", None):
        top["out"] = args.out
    if getattr(args, "seed", None) is not None:
        top["seed"] = args.seed
        s["seed"] = args.seed
    else:
        s["seed"] = cfg.seed
    try:
        return replace(cfg, search=replace(cfg.search, **s), macro=replace(cfg.macro, **m),
                       scoring=replace(cfg.scoring, **sc), **top)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ---------------------------------------------------------------------------
# commands


def cmd_search(cfg: RunConfig) -> int:
    if cfg.search.budget < 1:
        raise ConfigError("--budget must be >= 1")
    result, ev, wall = execute(cfg)
    out = Path(cfg.out)
    doc = {"run_config": cfg.to_dict(), "result": result.to_dict()}
    _write(out / "result.json", json.dumps(doc, indent=2, sort_keys=True))
    spec = build_spec(result.best_state, cfg.macro)
    _write(out / "best_arch.json", serialize_spec(spec))
    with open(out / "playouts.ndjson", "w") as f:
        for rec in ev.log:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    _write(out / "timing.json", json.dumps({"wall_time_s": wall, "finished_at": time.time()}, indent=2))
    print(f"algorithm={cfg.algorithm} params={result.best_params} raw_score={result.best_raw_score} "
          f"violated={result.violated} playouts={result.playouts_done}")
    return EXIT_OK


def _median(xs):
    xs = [x for x in xs if x is not None and math.isfinite(x)]
    return statistics.median(xs) if xs else None


def cmd_compare(cfg: RunConfig, algorithms, n_seeds: int) -> int:
    if cfg.search.budget < 1 and cfg.search.time_per_move is None:
        raise ConfigError("--budget must be >= 1")
    if n_seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}")
    rows = []
    for i in range(n_seeds):
        seed = cfg.seed + i
        used = []
        for algo in algorithms:
            run = replace(cfg, algorithm=algo, seed=seed, search=replace(cfg.search, seed=seed))
            budget = None
            if algo == "random" and cfg.search.time_per_move is not None and used:
                # same number of playouts as the timed searches
                budget = max(used)
            result, ev, wall = execute(run, budget)
            used.append(result.playouts_done)
            rows.append({
                "algorithm": algo, "seed": seed, "best_params": result.best_params,
                "best_raw_score": result.best_raw_score, "violated": result.violated,
                "playouts": result.playouts_done, "wall_time": round(wall, 3),
            })
            log.info("%s seed=%d params=%d raw=%s", algo, seed, result.best_params, result.best_raw_score)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    summary = []
    for algo in algorithms:
        mine = [r for r in rows if r["algorithm"] == algo]
        summary.append({
            "algorithm": algo,
            "median_params": _median([r["best_params"] for r in mine]),
            "median_raw_score": _median([r["best_raw_score"] for r in mine]),
            "violations": sum(r["violated"] for r in mine),
            "runs": len(mine),
        })
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)
    _write(out / "compare_config.json", json.dumps(
        {"run_config": cfg.to_dict(), "algorithms": list(algorithms), "n_seeds": n_seeds},
        indent=2, sort_keys=True))
    print(f"{'Search algorithm':<18}{'N_param (median)':>18}{'raw score (median)':>20}")
    print(f"{'Baseline (U-Net)':<18}{arch.BASELINE_PARAMS:>18}{'-':>20}")
    for s in summary:
        raw = "-" if s["median_raw_score"] is None else f"{s['median_raw_score']:.3f}"
        print(f"{s['algorithm']:<18}{s['median_params']:>18}{raw:>20}")
    return EXIT_OK


def cmd_score(cfg: RunConfig, arch_file: str, show_kernel: bool = True) -> int:
    try:
        text = Path(arch_file).read_text()
    except OSError as e:
        raise OSError(f"cannot read {arch_file}: {e}") from e
    spec = deserialize_spec(text)
    batch = scoring_batch(cfg.scoring, cfg.seed)
    scorer = NaswotScorer(batch, spec.macro, seed=cfg.seed)
    decisions = arch.spec_to_decisions(spec)
    rep = scorer.report(spec, decisions)
    params = count_params(spec)
    print(f"params={params}")
    print(f"N_A={rep.n_units}")
    print(f"raw_score={rep.raw}")
    print(f"violated={params > cfg.search.alpha}")
    if show_kernel:
        with np.printoptions(linewidth=160, suppress=True):
            print("kernel=")
            print(rep.kernel.astype(np.int64))
    return EXIT_OK


def cmd_gen(scenarios, count: int, seed: int, out: str, size: int = 128) -> int:
    if count < 1:
        raise ConfigError("--count must be >= 1")
    scen = [radarsim.scenario(s) for s in scenarios]
    gen = radarsim.GeneratorConfig(shape=(size, size), out_size=radarsim.MAP_SIZE)
    samples = radarsim.make_samples(scen, count, seed, gen)
    outp = Path(out)
    outp.mkdir(parents=True, exist_ok=True)
    radarsim.write_batch(outp / "samples.bin", samples)
    train, val = radarsim.train_val_split(count, seed)
    radarsim.write_manifest(outp / "manifest.json", samples, {
        "seed": seed, "count": count, "scenarios": list(scenarios), "native_size": size,
        "split": {"train": train.tolist(), "val": val.tolist()},
    })
    print(f"wrote {count} samples to {outp}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _parse_scenarios(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scenario list {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="RunConfig JSON file; flags override it")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--budget", type=int, help="total playout budget")
    p.add_argument("--wall-clock", type=float, dest="wall_clock", metavar="SECONDS",
                   help="MCTS time per committed move instead of a playout split")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=int, help="parameter bound")
    p.add_argument("--k", type=float, help="exploration constant")
    p.add_argument("--bias", type=float, help="RAVE bias constant")
    p.add_argument("--tref", type=int, help="GRAVE visit threshold")
    p.add_argument("--level", type=int, help="NMCS nesting level")
    p.add_argument("--playout-width", type=int, dest="playout_width")
    p.add_argument("--workers", type=int)
    p.add_argument("--reuse-tree", action="store_true", dest="reuse_tree")
    p.add_argument("--extended", action="store_true", help="also search depth and width")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--input-size", type=int, dest="input_size")
    p.add_argument("--macro-r", type=int, dest="macro_r")
    p.add_argument("--base-channels", type=int, dest="base_channels")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mctsnas", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("search", help="run one search"))
    p = sub.add_parser("compare", help="run several algorithms over several seeds")
    _common(p)
    p.add_argument("--algorithms", default=",".join(ALGORITHMS))
    p.add_argument("--seeds", type=int, default=5)
    p = sub.add_parser("score", help="score one architecture document")
    _common(p)
    p.add_argument("arch_file")
    p = sub.add_parser("gen", help="generate synthetic range-Doppler samples")
    p.add_argument("--scenarios", type=_parse_scenarios, default=tuple(range(1, 11)))
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128, help="native map size before padding")
    p.add_argument("--out", default="data")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "gen":
            return cmd_gen(args.scenarios, args.count, args.seed, args.out, args.size)
        cfg = resolve_config(args)
        if args.command == "search":
            return cmd_search(cfg)
        if args.command == "compare":
            algos = [a.strip() for a in args.algorithms.split(",") if a.strip()]
            return cmd_compare(cfg, algos, args.seeds)
        if args.command == "score":
            return cmd_score(cfg, args.arch_file)
    except (ConfigError, arch.SpecParseError, arch.ShapeError) as e:
        print(f"mctsnas: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print(f"mctsnas: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"mctsnas: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:  # noqa: BLE001 - reported as a distinct exit status
        log.exception("search failed")
        print(f"mctsnas: search failed: {e}", file=sys.stderr)
        return EXIT_SEARCH
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
