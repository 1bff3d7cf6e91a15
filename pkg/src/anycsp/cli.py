"""Command-line interface: generate, train, validate, solve, baseline."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import baselines, checkpoint, instances
from .csp import CspError, CspInstance
from .nn import AGGREGATIONS
from .search import MODES, instance_rngs, run_batch

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

RESULT_FIELDS = ["instance_id", "run", "seed", "best_quality", "unsat_count", "steps_to_best",
                 "total_steps", "wall_ms", "solved", "detail"]
BASELINES = ("walksat", "maxwalksat", "greedy-col", "dsatur", "greedy-cut", "random")

log = logging.getLogger("anycsp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# instance files ---------------------------------------------------------


class LoadedInstance:
    def __init__(self, name, instance, clauses=None, n_vars=None, graph=None):
        self.name = name
        self.instance = instance
        self.clauses = clauses
        self.n_vars = n_vars
        self.graph = graph


def load_instance(path, colors: int | None = None, problem: str = "coloring") -> LoadedInstance:
    """Read ``.json``, ``.cnf`` or ``.col`` (as coloring or max cut)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    suffix = path.suffix.lower()
    if suffix == ".json":
        return LoadedInstance(path.stem, instances.parse_csp_json(text))
    if suffix == ".cnf":
        n, clauses = instances.parse_dimacs_cnf(text)
        clauses = instances.normalize_cnf(clauses)
        return LoadedInstance(path.stem, instances.reduce_cnf(clauses, n), clauses, n)
    if suffix == ".col":
        g = instances.parse_dimacs_col(text)
        if problem == "maxcut":
            inst = instances.reduce_maxcut(g)
        else:
            inst = instances.reduce_coloring(g, colors) if colors else None
        return LoadedInstance(path.stem, inst, graph=g)
    raise CspError(f"{path}: unknown instance format {suffix!r}")


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_results(path, rows) -> None:
    out = sys.stdout if path in (None, "-") else open(path, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in RESULT_FIELDS])
    finally:
        if out is not sys.stdout:
            out.close()


def _aggregate(rows: list[dict], base_seed: int) -> list[dict]:
    """Best-over-runs row per instance, then one overall mean row."""
    out = []
    by_inst: dict = {}
    for r in rows:
        by_inst.setdefault(r["instance_id"], []).append(r)
    for name, rs in by_inst.items():
        b = max(rs, key=lambda r: (r["best_quality"], -r["steps_to_best"], -r["run"]))
        out.append({**b, "run": "best"})
    if rows:
        mean = {k: float(np.mean([r[k] for r in rows]))
                for k in ("best_quality", "unsat_count", "steps_to_best", "total_steps", "wall_ms")}
        mean["solved"] = float(np.mean([r["solved"] for r in rows]))
        out.append({"instance_id": "ALL", "run": "mean", "seed": base_seed, **mean, "detail": ""})
    return out


def _write_survival(path, rows) -> None:
    """Cumulative solved instances against time (first solving run per instance)."""
    first: dict = {}
    for r in rows:
        if r["solved"]:
            key = (r["wall_ms"], r["steps_to_best"])
            first[r["instance_id"]] = min(first.get(r["instance_id"], key), key)
    events = sorted(first.values())
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["wall_ms", "steps", "solved"])
        for i, (ms, st) in enumerate(events, 1):
            w.writerow([_fmt(ms), st, i])


def _jobs(args) -> int:
    env = os.environ.get("ANYCSP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"ANYCSP_THREADS must be an integer, got {env!r}") from None
    return max(1, args.jobs)


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# generate ---------------------------------------------------------------


def _ratio(args):
    return tuple(args.ratio) if args.ratio else None


def _p(args):
    return tuple(args.p) if args.p else None


def cmd_generate(args) -> int:
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"dist": args.dist, "seed": args.seed, "n": args.n, "k": args.k,
                "ratio": _ratio(args), "p": _p(args), "instances": []}
    for i in range(args.count):
        seed = args.seed + i
        rng = np.random.default_rng(seed)
        prob = instances.sample_problem(args.dist, rng, n=args.n, k=args.k, ratio=_ratio(args), p=_p(args))
        stem = f"{args.dist}_{i:04d}"
        files = [f"{stem}.json"]
        (out / files[0]).write_text(instances.write_csp_json(prob.instance, prob.meta), encoding="utf-8")
        if prob.clauses is not None:
            files.append(f"{stem}.cnf")
            (out / files[-1]).write_text(instances.write_dimacs_cnf(prob.n_vars, prob.clauses), encoding="utf-8")
        if prob.graph is not None:
            files.append(f"{stem}.col")
            (out / files[-1]).write_text(instances.write_dimacs_col(prob.graph), encoding="utf-8")
        manifest["instances"].append({"files": files, "seed": seed, "meta": prob.meta})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {args.count} instances to {out}")
    return EXIT_OK


# train / validate -------------------------------------------------------


def _sampler_options(args) -> dict:
    return {"n": args.n, "k": args.k, "ratio": _ratio(args), "p": _p(args)}


def _validation_set(args) -> list[CspInstance]:
    rng = np.random.default_rng(args.val_seed)
    opts = _sampler_options(args)
    return [instances.sample_problem(args.dist, rng, **opts).instance for _ in range(args.val_count)]


def cmd_train(args) -> int:
    from .train import TrainConfig, train

    cfg = TrainConfig(
        steps=args.steps, batch_size=args.batch, T=args.T, discount=args.discount,
        lr_start=args.lr_start, lr_end=args.lr_end, d=args.d, aggregation=args.agg,
        use_uc=not args.no_uc, mode=args.mode, val_every=args.val_every, T_val=args.T_val,
        seed=args.seed, clip=args.clip, timing=not args.no_timing,
    )
    sampler = instances.make_sampler(args.dist, **_sampler_options(args))
    val = _validation_set(args) if args.val_count > 0 else None

    def progress(step, stats):
        if args.verbose and step % args.val_every == 0:
            print(f"step {step}: reward {stats['mean_total_reward']:.4f} best {stats['mean_best_quality']:.4f}",
                  file=sys.stderr)

    train(cfg, sampler, args.out, val_set=val, resume=args.resume, progress=progress)
    print(f"checkpoints in {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .train import validate

    params = checkpoint.load(args.checkpoint)
    if args.instances:
        insts = [load_instance(p, args.colors, args.problem).instance for p in args.instances]
        if any(i is None for i in insts):
            raise UsageError("--colors is required for .col coloring instances")
    else:
        if not args.dist:
            raise UsageError("give instance files or --dist")
        insts = _validation_set(args)
    metric = validate(params, insts, args.T_val, seed=args.seed)
    print(repr(metric))
    return EXIT_OK


# solve ------------------------------------------------------------------


def _solve_one(job):
    idx, path, args_d = job
    params = checkpoint.load(args_d["checkpoint"])
    li = load_instance(path, args_d["colors"], args_d["problem"])
    if li.instance is None:
        raise UsageError("--colors is required for .col coloring instances")
    runs = args_d["runs"]
    base = args_d["seed"] + idx * runs
    res = run_batch(params, [li.instance] * runs, args_d["steps"], instance_rngs(base, runs),
                    mode=args_d["mode"], stop_on_solution=not args_d["no_stop"], timeout=args_d["timeout"])
    rows = []
    for r, tr in enumerate(res.traces):
        ms = (tr.wall_ms[tr.steps_to_best - 1] if tr.steps_to_best > 0 else 0.0) if args_d["timing"] else 0.0
        rows.append({
            "instance_id": li.name, "run": r, "seed": base + r, "best_quality": tr.best_quality,
            "unsat_count": tr.unsat_count, "steps_to_best": tr.steps_to_best, "total_steps": tr.total_steps,
            "wall_ms": ms, "solved": int(tr.solved), "detail": "",
        })
        if args_d["trace_dir"]:
            tr_path = Path(args_d["trace_dir"]) / f"{li.name}_run{r}.csv"
            if not args_d["timing"]:
                tr.wall_ms = [0.0] * len(tr.wall_ms)
            tr.to_csv(tr_path)
    return rows


def cmd_solve(args) -> int:
    if args.steps is None and args.timeout is None:
        raise UsageError("set --steps or --timeout")
    if args.runs < 1:
        raise UsageError("--runs must be positive")
    checkpoint.load(args.checkpoint)  # fail early on a bad file
    if args.trace_dir:
        Path(args.trace_dir).mkdir(parents=True, exist_ok=True)
    args_d = {k: getattr(args, k) for k in ("checkpoint", "colors", "problem", "runs", "seed", "steps", "mode",
                                            "no_stop", "timeout", "trace_dir")}
    args_d["timing"] = not args.no_timing
    jobs = [(i, p, args_d) for i, p in enumerate(args.instances)]
    rows = [r for rs in _map(_solve_one, jobs, _jobs(args)) for r in rs]
    _write_results(args.out, rows + _aggregate(rows, args.seed))
    if args.survival:
        _write_survival(args.survival, rows)
    return EXIT_OK


# baselines --------------------------------------------------------------


def _baseline_one(job):
    idx, path, a = job
    name = a["name"]
    li = load_instance(path, a["colors"], "maxcut" if name == "greedy-cut" else "coloring")
    rows = []
    for r in range(a["runs"]):
        seed = a["seed"] + idx * a["runs"] + r
        row = {"instance_id": li.name, "run": r, "seed": seed, "wall_ms": 0.0, "detail": ""}
        if name in ("walksat", "maxwalksat"):
            if li.clauses is None:
                raise UsageError(f"{name} needs a CNF instance, got {path}")
            fn = baselines.walksat if name == "walksat" else baselines.max_walksat
            noise = a["noise"] if a["noise"] is not None else (0.5 if name == "walksat" else 1e-3)
            res = fn(li.clauses, a["flips"], noise, np.random.default_rng(seed), restarts=a["restarts"],
                     n_vars=li.n_vars)
            m = len(li.clauses)
            row.update(best_quality=(m - res.unsat) / m if m else 1.0, unsat_count=res.unsat,
                       steps_to_best=res.best_flip, total_steps=res.flips, solved=int(res.solved),
                       detail=f"tries={res.tries}")
        elif name in ("greedy-col", "dsatur"):
            if li.graph is None:
                raise UsageError(f"{name} needs a .col graph, got {path}")
            colors, k = (baselines.greedy_coloring(li.graph) if name == "greedy-col" else baselines.dsatur(li.graph))
            row.update(best_quality=1.0, unsat_count=baselines.count_conflicts(li.graph, colors), steps_to_best=0,
                       total_steps=0, solved=1, detail=f"colors={k}")
        elif name == "greedy-cut":
            if li.graph is None:
                raise UsageError(f"{name} needs a .col graph, got {path}")
            side = baselines.greedy_maxcut(li.graph)
            cut = instances.cut_size(li.graph, side)
            m = li.graph.m
            row.update(best_quality=cut / m if m else 1.0, unsat_count=m - cut, steps_to_best=0, total_steps=0,
                       solved=int(cut == m), detail=f"cut={cut}")
        else:
            if li.instance is None:
                raise UsageError("--colors is required for .col coloring instances")
            res = baselines.random_search(li.instance, a["steps"], np.random.default_rng(seed),
                                          stop_on_solution=True)
            m = len(li.instance.constraints)
            row.update(best_quality=res.best_quality, unsat_count=int(round((1 - res.best_quality) * m)),
                       steps_to_best=res.steps_to_best, total_steps=len(res.curve),
                       solved=int(res.best_quality >= 1.0))
        rows.append(row)
    return rows


def cmd_baseline(args) -> int:
    a = {k: getattr(args, k) for k in ("name", "colors", "runs", "seed", "flips", "restarts", "noise", "steps")}
    jobs = [(i, p, a) for i, p in enumerate(args.instances)]
    rows = [r for rs in _map(_baseline_one, jobs, _jobs(args)) for r in rs]
    _write_results(args.out, rows + _aggregate(rows, args.seed))
    return EXIT_OK


# parser -----------------------------------------------------------------


def _add_dist_flags(p, required=True):
    p.add_argument("--dist", choices=instances.DISTRIBUTIONS, required=required)
    p.add_argument("--n", type=int, default=None, help="variables / vertices")
    p.add_argument("--k", type=int, default=None, help="arity, clause width or colors")
    p.add_argument("--ratio", type=float, nargs="+", default=None, help="clause ratio or LO HI range")
    p.add_argument("--p", type=float, nargs="+", default=None, help="edge probability or LO HI range")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="anycsp", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write seeded instance files")
    _add_dist_flags(g)
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="instances")

    t = sub.add_parser("train", help="train a policy")
    _add_dist_flags(t)
    t.add_argument("--steps", type=int, default=500_000)
    t.add_argument("--batch", type=int, default=25)
    t.add_argument("--T", type=int, default=40)
    t.add_argument("--discount", type=float, default=0.75)
    t.add_argument("--lr-start", type=float, default=5e-6)
    t.add_argument("--lr-end", type=float, default=5e-7)
    t.add_argument("--d", type=int, default=128)
    t.add_argument("--agg", choices=AGGREGATIONS, default="max")
    t.add_argument("--no-uc", action="store_true", help="skip the constraint update MLP")
    t.add_argument("--mode", choices=MODES, default="global")
    t.add_argument("--val-every", type=int, default=1000)
    t.add_argument("--val-count", type=int, default=200)
    t.add_argument("--val-seed", type=int, default=10**6)
    t.add_argument("--T-val", type=int, default=200)
    t.add_argument("--clip", type=float, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="run")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--no-timing", action="store_true", help="write 0 in wall-clock columns")

    v = sub.add_parser("validate", help="mean unsatisfied constraints of a checkpoint")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("instances", nargs="*")
    _add_dist_flags(v, required=False)
    v.add_argument("--val-count", type=int, default=200)
    v.add_argument("--val-seed", type=int, default=10**6)
    v.add_argument("--T-val", type=int, default=200)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--colors", type=int, default=None)
    v.add_argument("--problem", choices=("coloring", "maxcut"), default="coloring")

    s = sub.add_parser("solve", help="search instances with a trained policy")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("instances", nargs="+")
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--timeout", type=float, default=None, help="seconds per instance")
    s.add_argument("--runs", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=MODES, default="global")
    s.add_argument("--no-stop", action="store_true", help="keep searching after a solution")
    s.add_argument("--colors", type=int, default=None, help="color count for .col files")
    s.add_argument("--problem", choices=("coloring", "maxcut"), default="coloring")
    s.add_argument("--out", default="-")
    s.add_argument("--survival", default=None)
    s.add_argument("--trace-dir", default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--no-timing", action="store_true")

    b = sub.add_parser("baseline", help="run a classical heuristic")
    b.add_argument("name", choices=BASELINES)
    b.add_argument("instances", nargs="+")
    b.add_argument("--flips", type=int, default=10_000)
    b.add_argument("--restarts", type=int, default=1)
    b.add_argument("--noise", type=float, default=None)
    b.add_argument("--steps", type=int, default=1000, help="samples for random search")
    b.add_argument("--runs", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--colors", type=int, default=None)
    b.add_argument("--out", default="-")
    b.add_argument("--jobs", type=int, default=1)
    return ap


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "validate": cmd_validate,
            "solve": cmd_solve, "baseline": cmd_baseline}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except UsageError as e:
        print(f"anycsp: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CspError, checkpoint.CheckpointError, OSError, json.JSONDecodeError) as e:
        print(f"anycsp: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        print(f"anycsp: failed: {e!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
