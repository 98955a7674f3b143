"""Experiment orchestration: convergence sweeps, baseline comparisons, SLI
frontiers, hardware/pricing sensitivity, and fluid traces.

Every experiment produces a long-format table (one metric per row) written as
a deterministic CSV plus a manifest that ties each output file to the tool
version, instance hash and root seed. Re-running a spec with the same root
seed reproduces the files byte for byte.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, fluid, planner, simulator
from .model import Instance
from .planner import SliSpec, sweep_frontier

CONVERGENCE = "convergence"
BASELINES = "baselines"
FRONTIER = "frontier"
HARDWARE = "hardware"
PRICING = "pricing"
FLUID_TRACE = "fluid-trace"
KINDS = (CONVERGENCE, BASELINES, FRONTIER, HARDWARE, PRICING, FLUID_TRACE)

JOBS_ENV = "INFERSCHED_JOBS"

BASELINE_POLICIES = (
    simulator.GG_SP,
    simulator.FI_WSP,
    simulator.GI_WSP,
    simulator.GF_WSP,
    simulator.FG_SP,
)


@dataclass
class ExperimentSpec:
    """Declarative description of one experiment run."""

    kind: str
    instance: Instance
    scheme: str | None = None
    n_list: tuple[int, ...] = (5, 20, 50, 200, 500)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    policy: str = simulator.GG_SP
    policies: tuple[str, ...] = BASELINE_POLICIES
    horizon: float | None = None
    warmup: float = 0.3
    axis: str = planner.TPOT_AXIS
    grid: tuple[float, ...] = ()
    b_grid: tuple[int, ...] = ()
    alpha_grid: tuple[float, ...] = ()
    beta_grid: tuple[float, ...] = ()
    gamma_grid: tuple[float, ...] = ()
    k_list: tuple[float, ...] = (0.1, 0.3, 1.0)
    ratio_points: int = 50
    fluid_horizon: float = 2000.0
    fluid_dt: float = 0.01
    root_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")

    @staticmethod
    def from_json(path) -> "ExperimentSpec":
        with open(path) as fh:
            data = json.load(fh)
        inst = data["instance"]
        if isinstance(inst, str):
            base = Path(path).parent / inst
            instance = Instance.from_json(base)
        else:
            instance = Instance.from_dict(inst)
        kwargs = {k: v for k, v in data.items() if k != "instance"}
        for key in (
            "n_list", "seeds", "policies", "grid", "b_grid", "alpha_grid",
            "beta_grid", "gamma_grid", "k_list",
        ):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return ExperimentSpec(instance=instance, **kwargs)


@dataclass
class ResultTable:
    """Long-format result rows plus the provenance manifest."""

    kind: str
    rows: list[dict]
    manifest: dict
    extra_outputs: list[str] = field(default_factory=list)

    def column_order(self) -> list[str]:
        seen: list[str] = []
        for row in self.rows:
            for key in row:
                if key not in seen:
                    seen.append(key)
        return seen

    def write(self, out_dir, name: str | None = None) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{name or self.kind}.csv"
        cols = self.column_order()
        with open(csv_path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(row.get(c)) for c in cols) + "\n")
        manifest_path = out / "manifest.json"
        manifest = {}
        if manifest_path.exists():
            with open(manifest_path) as fh:
                manifest = json.load(fh)
        manifest[csv_path.name] = self.manifest
        for extra in self.extra_outputs:
            manifest[extra] = self.manifest
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return csv_path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _manifest(spec: ExperimentSpec) -> dict:
    return {
        "tool_version": __version__,
        "instance_sha256": spec.instance.content_hash(),
        "root_seed": spec.root_seed,
        "kind": spec.kind,
    }


def _jobs() -> int:
    return max(1, int(os.environ.get(JOBS_ENV, "1")))


def _sim_task(args):
    inst, n, policy, plan, horizon, warmup, seed = args
    return simulator.run(
        inst, n, policy, plan=plan, horizon=horizon, warmup=warmup, seed=seed
    )


def _run_sims(tasks, jobs=None):
    jobs = jobs or _jobs()
    if jobs <= 1 or len(tasks) <= 1:
        return [_sim_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sim_task, tasks))


# --- experiments ---------------------------------------------------------------


def run_convergence(spec: ExperimentSpec) -> ResultTable:
    """Simulate the chosen policy across cluster sizes and seeds.

    The fluid-optimal revenue and occupancies are appended as reference rows
    so downstream consumers can plot gaps without re-solving the LP.
    """
    inst = spec.instance
    plan = planner.plan_instance(inst, scheme=spec.scheme)
    tasks = [
        (inst, n, spec.policy, plan, spec.horizon, spec.warmup, spec.root_seed + s)
        for n in spec.n_list
        for s in spec.seeds
    ]
    recs = _run_sims(tasks)
    rows = []
    for rec in recs:
        for r in rec.row_dicts():
            rows.append({"experiment": CONVERGENCE, **r})
    ref = {
        "experiment": CONVERGENCE,
        "policy": "fluid-reference",
        "n": 0,
        "seed": -1,
        "rev_per_gpu": plan.objective,
    }
    for i in range(inst.num_classes):
        rows.append(
            {
                **ref,
                "class": i,
                "x_occ": float(plan.x[i]),
                "ym_occ": float(plan.y_m[i]),
                "ys_occ": float(plan.y_s[i]),
                "qp_scaled": float(plan.q_p[i]),
                "qd_scaled": float(plan.q_d[i]),
            }
        )
    return ResultTable(CONVERGENCE, rows, _manifest(spec))


def run_baselines(spec: ExperimentSpec) -> ResultTable:
    """Compare scheduling policies at one cluster size; normalize mean revenue."""
    inst = spec.instance
    plan = planner.plan_instance(inst, scheme=spec.scheme)
    n = spec.n_list[0] if len(spec.n_list) == 1 else max(spec.n_list)
    tasks = []
    for policy in spec.policies:
        p = None if policy == simulator.FI_WSP else plan
        for s in spec.seeds:
            tasks.append((inst, n, policy, p, spec.horizon, spec.warmup, spec.root_seed + s))
    recs = _run_sims(tasks)
    by_policy: dict[str, list[float]] = {p: [] for p in spec.policies}
    for rec in recs:
        by_policy[rec.policy].append(rec.revenue_per_gpu)
    best = max(float(np.mean(v)) for v in by_policy.values())
    rows = []
    for policy in spec.policies:
        revs = by_policy[policy]
        mean = float(np.mean(revs))
        rows.append(
            {
                "experiment": BASELINES,
                "policy": policy,
                "n": n,
                "metric": "normalized_revenue",
                "value": mean / best if best > 0 else 0.0,
                "mean_rev_per_gpu": mean,
                "std_rev_per_gpu": float(np.std(revs)),
            }
        )
        for s, r in zip(spec.seeds, revs):
            rows.append(
                {
                    "experiment": BASELINES,
                    "policy": policy,
                    "n": n,
                    "seed": spec.root_seed + s,
                    "metric": "rev_per_gpu",
                    "value": r,
                }
            )
    return ResultTable(BASELINES, rows, _manifest(spec))


def run_frontier(spec: ExperimentSpec) -> ResultTable:
    """Trade-off curve of one service-level bound against optimal revenue."""
    points = sweep_frontier(spec.instance, spec.axis, spec.grid, scheme=spec.scheme)
    rows = [
        {
            "experiment": FRONTIER,
            "axis": spec.axis,
            "eta": p.eta,
            "objective": p.objective,
            "feasible": p.feasible,
            "shadow_price": p.shadow_price,
        }
        for p in points
    ]
    return ResultTable(FRONTIER, rows, _manifest(spec))


def run_hardware_sweep(spec: ExperimentSpec) -> ResultTable:
    """Optimal revenue and average token latency across hardware axes."""
    inst = spec.instance
    axes = []
    if spec.b_grid:
        axes.append(("B", [("batch_cap", int(b)) for b in spec.b_grid]))
    if spec.alpha_grid:
        base = inst.hardware
        axes.append(
            (
                "alpha",
                [("fixed_overhead", a + base.marginal_cost * base.threshold) for a in spec.alpha_grid],
            )
        )
    if spec.beta_grid:
        axes.append(("beta", [("marginal_cost", b) for b in spec.beta_grid]))
    if spec.gamma_grid:
        axes.append(("gamma", [("solo_rate", g) for g in spec.gamma_grid]))
    if not axes:
        raise ValueError("hardware sweep needs at least one of b/alpha/beta/gamma grids")

    rows = []
    for axis_name, points in axes:
        for field_name, value in points:
            hw_inst = inst.with_hardware(**{field_name: value})
            try:
                plan = planner.plan_instance(hw_inst, scheme=spec.scheme)
            except planner.Infeasible:
                rows.append(
                    {
                        "experiment": HARDWARE,
                        "axis": axis_name,
                        "value": value,
                        "objective": None,
                        "tpot": None,
                        "feasible": False,
                    }
                )
                continue
            rows.append(
                {
                    "experiment": HARDWARE,
                    "axis": axis_name,
                    "value": value,
                    "objective": plan.objective,
                    "tpot": plan.average_tpot(hw_inst),
                    "feasible": True,
                }
            )
    return ResultTable(HARDWARE, rows, _manifest(spec))


def run_pricing_grid(spec: ExperimentSpec) -> ResultTable:
    """Optimal revenue along the fixed-total price segment cp + cd = k."""
    inst = spec.instance
    fractions = np.linspace(0.02, 0.98, spec.ratio_points)
    rows = []
    for k in spec.k_list:
        best_val, best_idx = -np.inf, -1
        k_rows = []
        for idx, f in enumerate(fractions):
            cp, cd = k * float(f), k * float(1.0 - f)
            plan = planner.plan_instance(inst.with_prices(cp, cd), scheme=spec.scheme)
            k_rows.append(
                {
                    "experiment": PRICING,
                    "k": float(k),
                    "grid_index": idx,
                    "cp": cp,
                    "cd": cd,
                    "ratio": cp / cd,
                    "objective": plan.objective,
                    "argmax": False,
                }
            )
            if plan.objective > best_val:
                best_val, best_idx = plan.objective, idx
        k_rows[best_idx]["argmax"] = True
        rows.extend(k_rows)
    return ResultTable(PRICING, rows, _manifest(spec))


def run_fluid_trace(spec: ExperimentSpec, out_dir=None) -> ResultTable:
    """Integrate the fluid dynamics from empty and tabulate terminal diagnostics."""
    inst = spec.instance
    plan = planner.plan_instance(inst, scheme=spec.scheme)
    if spec.policy == simulator.GG_SP and plan.scheme == "bundled":
        plan = planner.eliminate_decode_buffer(plan, inst)
    policy = spec.policy if spec.policy in fluid.FLUID_POLICIES else fluid.GG_SP
    state = fluid.FluidState.empty(inst.num_classes, pool_split=policy != fluid.GG_SP)
    traj = fluid.integrate(
        state, inst, plan, policy=policy, horizon=spec.fluid_horizon, dt=spec.fluid_dt
    )
    extra = []
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        traj.to_csv(out / "fluid_trace.csv", stride=max(1, len(traj.times) // 20000))
        extra.append("fluid_trace.csv")
    rows = [
        {
            "experiment": FLUID_TRACE,
            "policy": policy,
            "metric": "prefill_gap",
            "value": traj.prefill_gap(plan),
        },
        {
            "experiment": FLUID_TRACE,
            "policy": policy,
            "metric": "decode_queue_final",
            "value": float(traj.q_d[-1].sum()),
        },
        {
            "experiment": FLUID_TRACE,
            "policy": policy,
            "metric": "drift_violations",
            "value": traj.decode_work_drift_violations(inst),
        },
        {
            "experiment": FLUID_TRACE,
            "policy": policy,
            "metric": "max_projection",
            "value": traj.max_projection,
        },
    ]
    return ResultTable(FLUID_TRACE, rows, _manifest(spec), extra_outputs=extra)


RUNNERS = {
    CONVERGENCE: run_convergence,
    BASELINES: run_baselines,
    FRONTIER: run_frontier,
    HARDWARE: run_hardware_sweep,
    PRICING: run_pricing_grid,
    FLUID_TRACE: run_fluid_trace,
}


def run_experiment(spec: ExperimentSpec, out_dir) -> Path:
    """Dispatch a spec to its runner and persist the table + manifest."""
    if spec.kind == FLUID_TRACE:
        table = run_fluid_trace(spec, out_dir=out_dir)
    else:
        table = RUNNERS[spec.kind](spec)
    return table.write(out_dir)
