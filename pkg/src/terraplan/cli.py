"""Command-line entry points.

Subcommands compose the library: gen-maps | label | train | eval |
build-field | plan | bench. All randomness is seed-controlled; outputs
embed their full configuration. Exit codes: 0 success, 1 no path,
2 input/format error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from terraplan import errors
from terraplan.abstraction import AbstractState, to_detailed
from terraplan.arena import build_arena, default_arena
from terraplan.detailed import (
    FOOT_LATTICE_FULL,
    FOOT_LATTICE_REDUCED,
    DetailedSpace,
    DetailedState,
)
from terraplan.engine import EngineModel, plan as engine_plan
from terraplan.heuristics import (
    build_field,
    load_edge_cache,
    precompute_edges,
    save_edge_cache,
)
from terraplan.mapgen import (
    CATEGORIES,
    Dataset,
    generate_dataset,
    label_dataset,
    load_dataset,
    save_dataset,
)
from terraplan import neuralcost
from terraplan.terrain import (
    compute_cost_maps,
    load_heightmap_binary,
    load_heightmap_text,
    save_heightmap_text,
)

EXIT_OK = 0
EXIT_NOPATH = 1
EXIT_FORMAT = 2
EXIT_DIVERGED = 3


def _load_map(path: str):
    if path == "arena":
        spec, _, _ = default_arena()
        return build_arena(spec)
    if path.endswith(".hmb"):
        return load_heightmap_binary(path)
    return load_heightmap_text(path)


def _parse_counts(args) -> dict:
    counts = {c: args.per_category for c in CATEGORIES}
    if args.counts:
        for part in args.counts.split(","):
            k, _, v = part.partition("=")
            if k not in CATEGORIES:
                raise errors.FormatError(f"unknown category {k!r}")
            counts[k] = int(v)
    return counts


def cmd_gen_maps(args) -> int:
    counts = _parse_counts(args)
    t0 = time.time()
    ds = generate_dataset(counts, seed=args.seed, label=False)
    save_dataset(ds, args.out)
    print(f"generated {ds.n_maps} maps in {time.time() - t0:.1f}s -> {args.out}")
    return EXIT_OK


def cmd_label(args) -> int:
    ds = load_dataset(args.input)
    t0 = time.time()
    done = [0]

    def tick(i):
        done[0] = i
        if args.verbose and i % 50 == 0:
            print(f"  labeled {i}/{ds.n_maps} ({time.time() - t0:.0f}s)",
                  flush=True)

    labeled = label_dataset(ds, progress=tick)
    save_dataset(labeled, args.out)
    print(f"labeled {labeled.n_maps}/{ds.n_maps} maps "
          f"({labeled.n_tasks} tasks) in {time.time() - t0:.1f}s -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    train_ds = load_dataset(args.data)
    val_ds = load_dataset(args.val)
    net = neuralcost.CostNetwork(seed=args.seed)
    cfg = neuralcost.TrainConfig(
        learning_rate=args.lr, epochs=args.epochs,
        maps_per_batch=args.batch_maps, seed=args.seed)
    data = neuralcost.TrainData.from_dataset(train_ds)
    vdata = neuralcost.TrainData.from_dataset(val_ds)

    def log(row):
        print(f"epoch {row['epoch']:3d}  bce {row['bce']:.4f}  "
              f"l1 {row['l1']:.4f}  Wf {row['w_feasible']:.3g}  "
              f"Wc {row['w_costs']:.3g}  val_acc {row['val_accuracy']:.3f}  "
              f"val_err {row['val_cost_error']:.4f}", flush=True)

    neuralcost.train(net, data, vdata, cfg, log=log)
    neuralcost.save_weights(net, args.out)
    print(f"saved weights -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    net = neuralcost.load_weights(args.weights)
    metrics = neuralcost.evaluate(net, neuralcost.TrainData.from_dataset(ds))
    print(json.dumps(metrics, indent=2))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(metrics, f, indent=2)
    return EXIT_OK


def _parse_abstract(text: str) -> AbstractState:
    x, y, t = (int(v) for v in text.split(","))
    return AbstractState(x, y, t)


def cmd_build_field(args) -> int:
    hmap = _load_map(args.map)
    if args.cache_in:
        cache = load_edge_cache(args.cache_in)
    else:
        net = neuralcost.load_weights(args.weights)
        cache = precompute_edges(hmap, net)
    if args.cache_out:
        save_edge_cache(cache, args.cache_out)
    cmap = compute_cost_maps(hmap)
    space = DetailedSpace(cmap)
    goal_d = to_detailed(_parse_abstract(args.goal), cmap, space=space)
    if goal_d is None:
        print("goal state has no feasible embedding", file=sys.stderr)
        return EXIT_NOPATH
    field = build_field(goal_d, cache)
    finite = np.isfinite(field.values)
    print(f"field: {finite.sum()} reachable of {field.values.size} states, "
          f"max {field.values[finite].max():.2f}" if finite.any()
          else "field: empty")
    if args.out:
        np.save(args.out, field.values)
    return EXIT_OK


def _parse_detailed(text: str) -> DetailedState:
    v = [int(x) for x in text.split(",")]
    if len(v) == 3:
        v += [0, 0, 0, 0]
    return DetailedState(v[0], v[1], v[2], tuple(v[3:7]))


def cmd_plan(args) -> int:
    hmap = _load_map(args.map)
    cmap = compute_cost_maps(hmap)
    lattice = FOOT_LATTICE_FULL if args.full_lattice else FOOT_LATTICE_REDUCED
    space = DetailedSpace(cmap, lattice=lattice)
    model = EngineModel(space)
    start = _parse_detailed(args.start)
    goal = _parse_detailed(args.goal)
    field = None
    if args.heuristic == "learned":
        if args.cache_in:
            cache = load_edge_cache(args.cache_in)
        else:
            net = neuralcost.load_weights(args.weights)
            cache = precompute_edges(hmap, net)
        field = build_field(goal, cache).values
    res, status, exp, dt = engine_plan(model, start, goal, W=args.W,
                                       field=field, init_cap=1 << 20)
    if res is None:
        print(f"no path (status {status}, {exp} expansions)", file=sys.stderr)
        return EXIT_NOPATH
    print(f"cost {res.total_cost!r}  expansions {exp}  time {dt:.2f}s  "
          f"actions {len(res.actions)}")
    if args.out:
        with open(args.out, "w") as f:
            for s, a in zip(res.states, res.actions + [None]):
                f.write(f"{s.x},{s.y},{s.theta},{','.join(map(str, s.feet))}"
                        + (f"  {a!r}\n" if a is not None else "\n"))
    return EXIT_OK


def cmd_bench(args) -> int:
    from terraplan.bench import run_benchmark, speedup_table, write_csv

    spec, start, goals = default_arena()
    hmap = build_arena(spec)
    if args.goals:
        wanted = set(args.goals.split(","))
        goals = [g for g in goals if g.name in wanted]
    heuristics = tuple(args.heuristic.split(","))
    net = None
    cache = None
    if "learned" in heuristics:
        if args.cache_in:
            cache = load_edge_cache(args.cache_in)
        else:
            net = neuralcost.load_weights(args.weights)
    Ws = tuple(float(w) for w in args.W.split(","))
    lattice = FOOT_LATTICE_FULL if args.full_lattice else FOOT_LATTICE_REDUCED

    def progress(msg):
        print(f"  {msg}" if isinstance(msg, str) else f"  cache {msg[0]}/{msg[1]}",
              flush=True)

    rows, meta = run_benchmark(
        hmap, net, start, goals, Ws=Ws, heuristics=heuristics,
        lattice=lattice, cache=cache, timeout_s=args.timeout_s,
        progress=lambda *a: progress(a if len(a) > 1 else a[0]))
    write_csv(rows, meta, args.out)
    print(f"cache build: {meta['cache_build_s']:.1f}s")
    for (goal, h, w), s in sorted(speedup_table(rows).items()):
        print(f"  {goal:12s} {h:9s} W={w:<5g} speedup x{s:,.1f}")
    print(f"report -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="terraplan")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-maps", help="generate unlabeled training maps")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--per-category", type=int, default=10)
    g.add_argument("--counts", help="overrides, e.g. stairs=50,flat=5")
    g.set_defaults(fn=cmd_gen_maps)

    l = sub.add_parser("label", help="label maps with oracle shortest paths")
    l.add_argument("--in", dest="input", required=True)
    l.add_argument("--out", required=True)
    l.add_argument("--verbose", action="store_true")
    l.set_defaults(fn=cmd_label)

    t = sub.add_parser("train", help="train the cost network")
    t.add_argument("--data", required=True)
    t.add_argument("--val", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-maps", type=int, default=4)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a network on a labeled set")
    e.add_argument("--data", required=True)
    e.add_argument("--weights", required=True)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("build-field", help="precompute edges and build a field")
    b.add_argument("--map", required=True, help="height-map file or 'arena'")
    b.add_argument("--weights")
    b.add_argument("--goal", required=True, help="abstract 'x,y,theta'")
    b.add_argument("--cache-in")
    b.add_argument("--cache-out")
    b.add_argument("--out", help="save field values (.npy)")
    b.set_defaults(fn=cmd_build_field)

    pl = sub.add_parser("plan", help="plan one detailed query")
    pl.add_argument("--map", required=True)
    pl.add_argument("--start", required=True, help="x,y,theta[,f1,f2,f3,f4]")
    pl.add_argument("--goal", required=True)
    pl.add_argument("--W", type=float, default=1.0)
    pl.add_argument("--heuristic", choices=("geometric", "learned"),
                    default="geometric")
    pl.add_argument("--weights")
    pl.add_argument("--cache-in")
    pl.add_argument("--full-lattice", action="store_true")
    pl.add_argument("--out", help="write the path to a file")
    pl.set_defaults(fn=cmd_plan)

    be = sub.add_parser("bench", help="run the benchmark arena")
    be.add_argument("--weights")
    be.add_argument("--cache-in")
    be.add_argument("--out", required=True)
    be.add_argument("--W", default="1.0,1.25,2.0")
    be.add_argument("--heuristic", default="learned,geometric")
    be.add_argument("--goals", help="comma-separated subset of goal names")
    be.add_argument("--timeout-s", type=float, default=300.0)
    be.add_argument("--full-lattice", action="store_true")
    be.add_argument("--seed", type=int, default=0)
    be.set_defaults(fn=cmd_bench)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except errors.FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except errors.DivergenceDetected as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
