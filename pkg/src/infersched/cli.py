"""Command-line interface: calibrate, plan, frontier, fluid, simulate, sweep."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, calibration, fluid, harness, planner, simulator
from .model import Instance
from .planner import FluidPlan, SliSpec
from .simplex import Infeasible


def _parse_grid(text: str) -> tuple[float, ...]:
    """`a:b:step` inclusive range, or a comma-separated list."""
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int(round((hi - lo) / step))
        return tuple(lo + i * step for i in range(count + 1) if lo + i * step <= hi + 1e-12)
    return tuple(float(v) for v in text.split(","))


def _load_sli(path) -> SliSpec | None:
    if path is None:
        return None
    with open(path) as fh:
        return SliSpec.from_dict(json.load(fh))


def cmd_calibrate(args) -> int:
    measurements = calibration.load_measurements(args.mixed, args.solo)
    result = calibration.calibrate(measurements)
    fragment = {
        "c": result.alpha + result.beta * args.b0,
        "a": result.beta,
        "b0": args.b0,
        "gamma": result.gamma,
        "fit": {
            "alpha": result.alpha,
            "beta": result.beta,
            "r_squared": result.r_squared,
            "n_mixed": result.n_mixed,
            "n_solo": result.n_solo,
        },
    }
    if args.batch_cap is not None:
        fragment["B"] = args.batch_cap
    if args.chunk_size is not None:
        fragment["C"] = args.chunk_size
    with open(args.out, "w") as fh:
        json.dump(fragment, fh, indent=2)
        fh.write("\n")
    print(
        f"alpha={result.alpha:.6g} beta={result.beta:.6g} gamma={result.gamma:.6g} "
        f"R2={result.r_squared:.4f} -> {args.out}"
    )
    return 0


def _explain_infeasible(inst: Instance, err: Infeasible) -> str:
    zero_patience = [c.class_id for c in inst.classes if c.patience_rate == 0]
    msg = f"planning problem infeasible: {err}"
    if zero_patience:
        msg += (
            f"\nclasses {zero_patience} have zero patience, so all their arrivals "
            "must be served; if the required prefill occupancy exceeds the cluster "
            "the plan cannot exist (overload)"
        )
    return msg


def cmd_plan(args) -> int:
    inst = Instance.from_json(args.config)
    sli = _load_sli(args.sli)
    try:
        plan = planner.plan_instance(inst, sli=sli, scheme=args.scheme)
    except Infeasible as err:
        print(_explain_infeasible(inst, err), file=sys.stderr)
        return 1
    if args.eliminate_decode_buffer:
        plan = planner.eliminate_decode_buffer(plan, inst)
    data = plan.to_dict()
    if args.gpus:
        data["params"] = planner.derive_policy_params(plan, args.gpus, inst).to_dict()
    with open(args.out, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")
    print(f"objective={plan.objective:.6g} sum_x={plan.total_prefill:.4f} -> {args.out}")
    return 0


def cmd_frontier(args) -> int:
    inst = Instance.from_json(args.config)
    points = planner.sweep_frontier(inst, args.axis, _parse_grid(args.grid), scheme=args.scheme)
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["eta", "objective", "feasible", "shadow_price"])
        for p in points:
            wr.writerow(
                [
                    repr(p.eta),
                    "" if p.objective is None else repr(p.objective),
                    p.feasible,
                    "" if p.shadow_price is None else repr(p.shadow_price),
                ]
            )
    print(f"{len(points)} grid points -> {args.out}")
    return 0


def cmd_fluid(args) -> int:
    inst = Instance.from_json(args.config)
    plan = FluidPlan.from_json(args.plan)
    state = fluid.FluidState.empty(inst.num_classes, pool_split=args.policy != fluid.GG_SP)
    traj = fluid.integrate(
        state, inst, plan, policy=args.policy, horizon=args.horizon, dt=args.dt
    )
    traj.to_csv(args.out, stride=args.stride)
    print(
        f"prefill gap {traj.prefill_gap(plan):.3g}, final decode queue "
        f"{traj.q_d[-1].sum():.3g} -> {args.out}"
    )
    return 0


def cmd_simulate(args) -> int:
    inst = Instance.from_json(args.config)
    plan = FluidPlan.from_json(args.plan) if args.plan else None
    rows = []
    for seed in range(args.seeds):
        rec = simulator.run(
            inst,
            args.gpus,
            args.policy,
            plan=plan,
            horizon=args.horizon,
            warmup=args.warmup,
            seed=args.seed0 + seed,
        )
        rows.extend(rec.row_dicts())
    cols = list(rows[0].keys())
    with open(args.out, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols)
        wr.writeheader()
        wr.writerows(rows)
    revs = sorted({r["rev_per_gpu"] for r in rows})
    print(f"{args.seeds} seed(s), mean rev/GPU {np.mean(revs):.4g} -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    spec = harness.ExperimentSpec.from_json(args.spec)
    path = harness.run_experiment(spec, args.out)
    print(f"wrote {path}")
    return 0


def _kind_command(kind):
    def handler(args) -> int:
        spec = harness.ExperimentSpec.from_json(args.spec)
        if spec.kind != kind:
            spec = harness.ExperimentSpec(**{**spec.__dict__, "kind": kind})
        path = harness.run_experiment(spec, args.out)
        print(f"wrote {path}")
        return 0

    return handler


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="infersched",
        description="Fluid planning and event-driven simulation for GPU inference clusters",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit the iteration-time law from measurement CSVs")
    p.add_argument("--mixed", required=True, help="CSV with chunk_size,iter_time_s")
    p.add_argument("--solo", required=True, help="CSV with tokens_per_s")
    p.add_argument("--b0", type=float, default=0.0, help="token threshold of the overhead regime")
    p.add_argument("--batch-cap", type=int, default=None)
    p.add_argument("--chunk-size", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("plan", help="solve the steady-state occupancy program")
    p.add_argument("--config", required=True)
    p.add_argument("--sli", default=None, help="JSON service-level spec")
    p.add_argument("--scheme", choices=["bundled", "separate"], default=None)
    p.add_argument("--eliminate-decode-buffer", action="store_true")
    p.add_argument("-n", "--gpus", type=int, default=0, help="also derive n-GPU policy parameters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("frontier", help="sweep one service-level bound")
    p.add_argument("--config", required=True)
    p.add_argument(
        "--axis", required=True, choices=list(planner.SLI_AXES)
    )
    p.add_argument("--grid", required=True, help="a:b:step or comma list")
    p.add_argument("--scheme", choices=["bundled", "separate"], default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("fluid", help="integrate the deterministic fluid dynamics")
    p.add_argument("--config", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--policy", choices=list(fluid.FLUID_POLICIES), default=fluid.GG_SP)
    p.add_argument("-T", "--horizon", type=float, default=2000.0)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--stride", type=int, default=100, help="CSV row thinning")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fluid)

    p = sub.add_parser("simulate", help="run the discrete-event cluster simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--plan", default=None)
    p.add_argument("--policy", choices=list(simulator.POLICIES), required=True)
    p.add_argument("-n", "--gpus", type=int, required=True)
    p.add_argument("-T", "--horizon", type=float, default=None)
    p.add_argument("--warmup", type=float, default=0.3)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed0", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run an experiment spec JSON")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    for kind in harness.KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment spec")
        p.add_argument("--spec", required=True)
        p.add_argument("--out", required=True)
        p.set_defaults(func=_kind_command(kind))

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Infeasible as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
