"""Command-line entry point.

Every subcommand is a thin adapter over the library and produces the same
results as calling the operations directly.  Randomized subcommands require
an explicit --seed; there is no hidden entropy.  Text-first outputs (TSV,
JSON, SVG, key=value) keep every artifact diffable.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import em, experiments, metrics, partition, polysys
from .errors import AssumptionError, MoeError
from .model import (
    Dataset,
    measure_from_text,
    measure_to_text,
    sample_dataset,
    uniform_box_sampler,
    unit_box,
)


def _read_measure(path):
    with open(path) as fh:
        return measure_from_text(fh.read())


def _read_dataset(path):
    data = np.loadtxt(path, delimiter="\t", ndmin=2)
    return Dataset(x=data[:, :-1], y=data[:, -1])


def _write_dataset(data: Dataset, path):
    rows = ["\t".join(format(v, ".17g") for v in (*data.x[i], data.y[i])) for i in range(data.n)]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


def _parse_bounds(text, d):
    if text is None:
        return unit_box(d)
    pairs = [tuple(float(v) for v in part.split(",")) for part in text.split(";")]
    return np.asarray(pairs, dtype=float).reshape(-1, 2)


def cmd_gen(args):
    truth = _read_measure(args.truth)
    bounds = _parse_bounds(args.bounds, truth.d)
    data = sample_dataset(truth, args.K, args.n, seed=args.seed, bounds=bounds)
    _write_dataset(data, args.out)
    print(f"wrote {data.n} rows to {args.out}")
    return 0


def cmd_fit(args):
    data = _read_dataset(args.data)
    truth = _read_measure(args.truth)
    plan_rng = np.random.default_rng(args.seed)
    plan = em.random_cell_plan(args.k, truth.k, plan_rng)
    cfg = em.FitConfig(
        k=args.k,
        K=args.K,
        init=em.InitSpec(truth, plan, args.noise_std),
        seed=args.seed,
        tol=args.tol,
        max_iters=args.max_iters,
        gating_lr=args.gating_lr,
        gating_steps_per_m=args.gating_steps,
    )
    result = em.fit(data, cfg)
    with open(args.out_measure, "w", newline="\n") as fh:
        fh.write(measure_to_text(result.measure))
    summary = {
        "loglik": float(result.loglik_trace[-1]),
        "iterations": result.iterations,
        "converged": result.converged,
        "wallclock_s": result.wallclock,
        "trace_head": [float(v) for v in result.loglik_trace[:5]],
    }
    if args.out_summary:
        with open(args.out_summary, "w", newline="\n") as fh:
            fh.write(json.dumps(summary, indent=2) + "\n")
    print(
        f"fit: loglik={summary['loglik']:.6f} iterations={result.iterations} "
        f"converged={str(result.converged).lower()}"
    )
    return 0


def cmd_loss(args):
    fitted = _read_measure(args.fit)
    truth = _read_measure(args.true)
    subsets = None
    if args.positive_mass_only:
        sampler = uniform_box_sampler(_parse_bounds(args.bounds, truth.d))
        subsets = partition.positive_mass_subsets(
            truth, args.K, sampler, args.mass_n_mc, seed=args.mass_seed
        )
    if args.metric == "d1":
        report = metrics.loss_d1(fitted, truth, args.K, renormalize=args.renormalize, subsets=subsets)
    elif args.metric == "d2":
        report = metrics.loss_d2(
            fitted, truth, args.K, polysys.rbar_fn(args.rbar),
            renormalize=args.renormalize, subsets=subsets,
        )
    else:
        report = metrics.loss_d3(fitted, truth, args.K, renormalize=args.renormalize, subsets=subsets)
    print(report.to_json())
    return 0


def cmd_hellinger(args):
    G_a = _read_measure(args.fit)
    G_b = _read_measure(args.true)
    bounds = _parse_bounds(args.bounds, G_b.d)
    sampler = uniform_box_sampler(bounds)
    grid = metrics.default_y_grid(G_a, G_b, bounds, args.y_points)
    est = metrics.expected_hellinger(
        G_a, args.K_fit, G_b, args.K_true, sampler, args.n_mc, grid, seed=args.seed
    )
    print(f"{est.mean:.10f} {est.stderr:.10f}")
    return 0


def cmd_partition_check(args):
    truth = _read_measure(args.truth)
    bounds = _parse_bounds(args.bounds, truth.d)
    sampler = uniform_box_sampler(bounds)
    etas = [float(tok) for tok in args.etas.split(",")]
    rng = np.random.default_rng(args.seed)
    directions = rng.standard_normal((truth.k, truth.d))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    directions /= np.where(norms > 0, norms, 1.0)
    print("eta\tmatch_rate")
    for eta in etas:
        perturbed = truth.beta1 + eta * directions
        G_fit = type(truth).from_arrays(
            truth.beta0, perturbed, truth.a, truth.b, truth.sigma,
            family=truth.family, dof=truth.dof,
        )
        rate = partition.partition_match_rate(
            truth, G_fit, None, args.K, args.K, sampler, args.n_mc, seed=args.seed
        )
        print(f"{eta:g}\t{rate:.6f}")
    return 0


def cmd_polysys(args):
    inst = polysys.PolySystemInstance(m=args.m, d=args.d, r=args.r)
    if args.search:
        cand = polysys.search_nontrivial(
            inst, restarts=args.restarts, seed=args.seed, convention=args.convention
        )
        if cand is None:
            print(f"no non-trivial solution found (m={args.m}, d={args.d}, r={args.r}, "
                  f"restarts={args.restarts}); absence is not a proof of insolvability")
            return 0
        print(f"verified non-trivial solution, max |residual| = "
              f"{polysys.max_abs_residual(inst, cand, args.convention):.3e}")
        for name in ("z1", "z2", "z3", "z4", "z5"):
            print(f"{name} = {np.asarray(getattr(cand, name)).tolist()}")
        _print_residual_table(inst, cand, args.convention)
        return 0
    if args.m != 2:
        print("the built-in constructive witness exists for m=2 only", file=sys.stderr)
        return 1
    cand = polysys.constructive_witness_m2(c=args.witness_c, d=args.d)
    _print_residual_table(inst, cand, args.convention)
    return 0


def _print_residual_table(inst, cand, convention):
    print("eta1\teta2\tresidual")
    for eta1, eta2, value in polysys.residual_table(inst, cand, convention):
        eta1_s = ",".join(str(e) for e in eta1)
        print(f"{eta1_s}\t{eta2}\t{format(value, '.17g')}")


def cmd_sweep(args):
    with open(args.config) as fh:
        cfg = experiments.parse_sweep_config(fh.read())
    cfg = experiments.replace_config(cfg, base_seed=args.seed)
    if args.jobs is not None:
        cfg = experiments.replace_config(cfg, parallelism=args.jobs)
    result = experiments.run_sweep(cfg)
    experiments.emit_csv(result, args.out)
    print(f"wrote {len(result.rows)} rows to {args.out}")
    if np.isfinite(result.slope):
        print(f"slope = {result.slope:.4f} +/- {result.slope_stderr:.4f}")
    if args.plot:
        experiments.emit_svg_loglog(result, args.plot, allow_no_fit=True)
        print(f"wrote plot to {args.plot}")
    if result.n_failures:
        print(f"{result.n_failures} fit(s) failed", file=sys.stderr)
        return 2
    return 0


def cmd_plot(args):
    rows = experiments.parse_csv(args.csv)
    result = experiments.SweepResult(rows=rows, slope=np.nan, slope_stderr=np.nan, intercept=np.nan)
    experiments.emit_svg_loglog(result, args.out, allow_no_fit=args.allow_no_fit)
    print(f"wrote plot to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moelab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="sample a synthetic dataset to TSV")
    g.add_argument("--truth", required=True)
    g.add_argument("--K", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--bounds", help='per-dimension box, e.g. "0,1;0,1"')
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit a measure to a TSV dataset by EM")
    f.add_argument("--data", required=True)
    f.add_argument("--truth", required=True, help="measure used for near-truth init")
    f.add_argument("--k", type=int, required=True)
    f.add_argument("--K", type=int, required=True)
    f.add_argument("--seed", type=int, required=True)
    f.add_argument("--noise-std", type=float, default=0.05)
    f.add_argument("--tol", type=float, default=1e-6)
    f.add_argument("--max-iters", type=int, default=2000)
    f.add_argument("--gating-lr", type=float, default=0.1)
    f.add_argument("--gating-steps", type=int, default=5)
    f.add_argument("--out-measure", required=True)
    f.add_argument("--out-summary")
    f.set_defaults(func=cmd_fit)

    lo = sub.add_parser("loss", help="Voronoi loss between two measures, JSON out")
    lo.add_argument("--metric", choices=("d1", "d2", "d3"), required=True)
    lo.add_argument("--K", type=int, required=True)
    lo.add_argument("--fit", required=True)
    lo.add_argument("--true", required=True)
    lo.add_argument("--rbar", choices=("exact", "conjecture"), default="exact")
    lo.add_argument("--renormalize", action="store_true")
    lo.add_argument("--positive-mass-only", action="store_true")
    lo.add_argument("--mass-n-mc", type=int, default=20000)
    lo.add_argument("--mass-seed", type=int, default=0)
    lo.add_argument("--bounds")
    lo.set_defaults(func=cmd_loss)

    he = sub.add_parser("hellinger", help="expected Hellinger distance with MC stderr")
    he.add_argument("--fit", required=True)
    he.add_argument("--K-fit", type=int, required=True)
    he.add_argument("--true", required=True)
    he.add_argument("--K-true", type=int, required=True)
    he.add_argument("--n-mc", type=int, default=200)
    he.add_argument("--seed", type=int, required=True)
    he.add_argument("--y-points", type=int, default=2001)
    he.add_argument("--bounds")
    he.set_defaults(func=cmd_hellinger)

    pc = sub.add_parser("partition-check", help="region match rate over a perturbation sweep")
    pc.add_argument("--truth", required=True)
    pc.add_argument("--K", type=int, required=True)
    pc.add_argument("--etas", default="1e-1,1e-2,1e-3,1e-4,1e-5,1e-6")
    pc.add_argument("--n-mc", type=int, default=100000)
    pc.add_argument("--seed", type=int, required=True)
    pc.add_argument("--bounds")
    pc.set_defaults(func=cmd_partition_check)

    ps = sub.add_parser("polysys", help="polynomial-system residual tables and search")
    ps.add_argument("--m", type=int, required=True)
    ps.add_argument("--d", type=int, default=1)
    ps.add_argument("--r", type=int, required=True)
    ps.add_argument("--convention", choices=("scale-doubled", "scale-single"), default="scale-doubled")
    ps.add_argument("--search", action="store_true")
    ps.add_argument("--restarts", type=int, default=50)
    ps.add_argument("--seed", type=int, required=True)
    ps.add_argument("--witness-c", type=float, default=1.0)
    ps.set_defaults(func=cmd_polysys)

    sw = sub.add_parser("sweep", help="replicated sample-size sweep to CSV (+SVG)")
    sw.add_argument("--config", required=True)
    sw.add_argument("--out", required=True)
    sw.add_argument("--plot")
    sw.add_argument("--seed", type=int, required=True, help="base seed for the sweep")
    sw.add_argument("--jobs", type=int)
    sw.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot", help="SVG log-log plot from an existing sweep CSV")
    pl.add_argument("--csv", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--allow-no-fit", action="store_true")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except AssumptionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MoeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
