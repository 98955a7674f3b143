"""Steady-state fluid planning: build and solve the occupancy LPs, rewrite
optima to empty the decode buffer, and derive control-policy parameters.

The LP decides, per GPU and per class, the prefill occupancy x, mixed/solo
decode occupancies y_m / y_s, and queue masses q_p / q_d, subject to capacity
coupling and flow balance. Service-level indicators enter either as hard rows
or as penalty terms on auxiliary gap variables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import simplex
from .model import BUNDLED, SEPARATE, Instance, ServiceRates, derive_rates, solo_efficiency_condition
from .simplex import Infeasible, Unbounded

HARD = "hard"
PENALTY = "penalty"

RESIDUAL_TOL = 1e-7


class ConditionViolated(Exception):
    """Solo decoding is too slow for the decode-buffer elimination rewrite."""


class ZeroPatience(Exception):
    """A class with zero patience holds decode backlog that nothing can absorb."""


@dataclass(frozen=True)
class SliTerm:
    """One service-level indicator: a hard bound or a penalty weight."""

    mode: str = HARD
    bound: float | None = None
    weight: float | None = None

    def __post_init__(self):
        if self.mode not in (HARD, PENALTY):
            raise ValueError(f"mode must be '{HARD}' or '{PENALTY}', got {self.mode!r}")
        if self.mode == HARD:
            if self.bound is None or self.bound <= 0:
                raise ValueError("hard SLI needs a positive bound")
        elif self.weight is None or self.weight <= 0:
            raise ValueError("penalty SLI needs a positive weight")


@dataclass(frozen=True)
class SliSpec:
    """Active service-level indicators for one planning problem."""

    prefill_fairness: SliTerm | None = None
    decode_fairness: SliTerm | None = None
    tpot: SliTerm | None = None
    force_zero_decode_buffer: bool = False

    def __post_init__(self):
        # The average-TPOT ratio only linearizes after cross-multiplication,
        # which requires a fixed bound; a penalty on the ratio itself is not
        # LP-representable.
        if self.tpot is not None and self.tpot.mode == PENALTY:
            raise ValueError("TPOT is only supported as a hard constraint")

    def to_dict(self) -> dict:
        def term(t):
            return None if t is None else {"mode": t.mode, "bound": t.bound, "weight": t.weight}

        return {
            "prefill_fairness": term(self.prefill_fairness),
            "decode_fairness": term(self.decode_fairness),
            "tpot": term(self.tpot),
            "force_zero_decode_buffer": self.force_zero_decode_buffer,
        }

    @staticmethod
    def from_dict(data: dict) -> "SliSpec":
        def term(d):
            if d is None:
                return None
            return SliTerm(
                mode=d.get("mode", HARD), bound=d.get("bound"), weight=d.get("weight")
            )

        return SliSpec(
            prefill_fairness=term(data.get("prefill_fairness")),
            decode_fairness=term(data.get("decode_fairness")),
            tpot=term(data.get("tpot")),
            force_zero_decode_buffer=bool(data.get("force_zero_decode_buffer", False)),
        )


@dataclass
class LpProblem:
    """Standard-form description: max c'v, A_ub v <= b_ub, A_eq v = b_eq, v >= 0."""

    c: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    labels_ub: list[str]
    labels_eq: list[str]
    num_classes: int
    num_vars: int
    instance: Instance
    scheme: str
    sli: SliSpec


@dataclass
class FluidPlan:
    """An LP solution: per-class occupancies, queue masses and the objective."""

    x: np.ndarray
    y_m: np.ndarray
    y_s: np.ndarray
    q_p: np.ndarray
    q_d: np.ndarray
    objective: float
    scheme: str
    sli: SliSpec = field(default_factory=SliSpec)
    duals: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.x)

    @property
    def total_prefill(self) -> float:
        return float(np.sum(self.x))

    def revenue(self, inst: Instance) -> float:
        """Revenue rate recomputed from the raw occupancy fields."""
        rates = derive_rates(inst)
        if self.scheme == BUNDLED:
            w = inst.rewards()
            return float(np.sum(w * (rates.mu_m * self.y_m + rates.mu_s * self.y_s)))
        hw = inst.hardware
        cp, cd = inst.pricing.prefill_price, inst.pricing.decode_price
        tau = hw.mixed_iteration_time
        return float(
            cp * hw.chunk_size / tau * np.sum(self.x)
            + cd / tau * np.sum(self.y_m)
            + cd * hw.solo_rate * np.sum(self.y_s)
        )

    def average_tpot(self, inst: Instance) -> float:
        return average_tpot(inst, self.total_prefill)

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "y_m": self.y_m.tolist(),
            "y_s": self.y_s.tolist(),
            "q_p": self.q_p.tolist(),
            "q_d": self.q_d.tolist(),
            "objective": self.objective,
            "scheme": self.scheme,
            "sli": self.sli.to_dict(),
            "duals": dict(self.duals),
        }

    @staticmethod
    def from_dict(data: dict) -> "FluidPlan":
        return FluidPlan(
            x=np.array(data["x"], dtype=float),
            y_m=np.array(data["y_m"], dtype=float),
            y_s=np.array(data["y_s"], dtype=float),
            q_p=np.array(data["q_p"], dtype=float),
            q_d=np.array(data["q_d"], dtype=float),
            objective=float(data["objective"]),
            scheme=data["scheme"],
            sli=SliSpec.from_dict(data.get("sli") or {}),
            duals=dict(data.get("duals") or {}),
        )

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @staticmethod
    def from_json(path) -> "FluidPlan":
        with open(path) as fh:
            return FluidPlan.from_dict(json.load(fh))


@dataclass(frozen=True)
class PolicyParams:
    """Cluster-level control parameters derived from a plan for n GPUs."""

    mixed_gpus: int
    prefill_targets: np.ndarray          # per-class occupancy targets n * x
    queue_targets: np.ndarray            # per-class integer prefill-queue targets
    solo_probs: np.ndarray               # per-class probability of routing to solo
    pool_weights_mixed: np.ndarray       # class pull weights within the mixed pool
    pool_weights_solo: np.ndarray
    priority_index: np.ndarray           # decode-to-prompt length ratio D/P
    queue_split_mixed: np.ndarray        # per-class decode-buffer mass q_dm
    queue_split_solo: np.ndarray         # per-class decode-buffer mass q_ds

    def to_dict(self) -> dict:
        return {
            "mixed_gpus": self.mixed_gpus,
            "prefill_targets": self.prefill_targets.tolist(),
            "queue_targets": self.queue_targets.tolist(),
            "solo_probs": self.solo_probs.tolist(),
            "pool_weights_mixed": self.pool_weights_mixed.tolist(),
            "pool_weights_solo": self.pool_weights_solo.tolist(),
            "priority_index": self.priority_index.tolist(),
            "queue_split_mixed": self.queue_split_mixed.tolist(),
            "queue_split_solo": self.queue_split_solo.tolist(),
        }


# --- LP construction ---------------------------------------------------------


def build_lp(inst: Instance, sli: SliSpec | None = None, scheme: str | None = None) -> LpProblem:
    """Assemble the steady-state LP for the requested revenue scheme.

    Variables per class i: x_i, y_m_i, y_s_i, q_p_i, q_d_i, laid out in
    blocks of I, followed by any fairness-gap auxiliaries.
    """
    sli = sli or SliSpec()
    scheme = scheme or inst.pricing.scheme
    if scheme not in (BUNDLED, SEPARATE):
        raise ValueError(f"unknown scheme {scheme!r}")

    n = inst.num_classes
    hw = inst.hardware
    rates = derive_rates(inst)
    lam = inst.arrival_rates()
    theta = inst.patience_rates()
    big_b = hw.batch_cap
    tau = hw.mixed_iteration_time
    gamma = hw.solo_rate

    ix = lambda i: i
    iym = lambda i: n + i
    iys = lambda i: 2 * n + i
    iqp = lambda i: 3 * n + i
    iqd = lambda i: 4 * n + i
    num_vars = 5 * n

    aux_prefill_gap = aux_decode_gap = None
    if sli.prefill_fairness is not None and sli.prefill_fairness.mode == PENALTY:
        aux_prefill_gap = num_vars
        num_vars += 1
    if sli.decode_fairness is not None and sli.decode_fairness.mode == PENALTY:
        aux_decode_gap = num_vars
        num_vars += 1

    c = np.zeros(num_vars)
    if scheme == BUNDLED:
        w = inst.rewards()
        for i in range(n):
            c[iym(i)] = w[i] * rates.mu_m[i]
            c[iys(i)] = w[i] * rates.mu_s[i]
    else:
        cp, cd = inst.pricing.prefill_price, inst.pricing.decode_price
        for i in range(n):
            c[ix(i)] = cp * hw.chunk_size / tau
            c[iym(i)] = cd / tau
            c[iys(i)] = cd * gamma
    if aux_prefill_gap is not None:
        c[aux_prefill_gap] = -sli.prefill_fairness.weight
    if aux_decode_gap is not None:
        c[aux_decode_gap] = -sli.decode_fairness.weight

    rows_ub, b_ub, labels_ub = [], [], []

    def add_ub(coeffs: dict, rhs: float, label: str):
        row = np.zeros(num_vars)
        for j, v in coeffs.items():
            row[j] = v
        rows_ub.append(row)
        b_ub.append(rhs)
        labels_ub.append(label)

    add_ub({ix(i): 1.0 for i in range(n)}, 1.0, "prefill_capacity")
    mixed = {iym(i): 1.0 for i in range(n)}
    mixed.update({ix(i): -(big_b - 1.0) for i in range(n)})
    add_ub(mixed, 0.0, "mixed_capacity")
    solo = {iys(i): 1.0 for i in range(n)}
    solo.update({ix(i): float(big_b) for i in range(n)})
    add_ub(solo, float(big_b), "solo_capacity")

    def add_gap_rows(var_of, term: SliTerm, aux, tag):
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if term.mode == HARD:
                    add_ub({var_of(i): 1.0, var_of(j): -1.0}, term.bound, f"{tag}[{i},{j}]")
                else:
                    add_ub({var_of(i): 1.0, var_of(j): -1.0, aux: -1.0}, 0.0, f"{tag}_gap[{i},{j}]")

    if sli.prefill_fairness is not None:
        add_gap_rows(ix, sli.prefill_fairness, aux_prefill_gap, "prefill_fairness")
    if sli.decode_fairness is not None:
        add_gap_rows(iys, sli.decode_fairness, aux_decode_gap, "decode_fairness")

    if sli.tpot is not None:
        # Average per-token latency is the slot-capacity-weighted mean of the
        # mixed and solo iteration times; the denominator B - sum(x) is
        # positive whenever sum(x) <= 1 < B, so cross-multiplying is exact:
        #   [tau (B-1) + eta - B/gamma] * sum(x) <= eta B - B/gamma.
        eta = sli.tpot.bound
        coeff = tau * (big_b - 1.0) + eta - big_b / gamma
        add_ub({ix(i): coeff for i in range(n)}, eta * big_b - big_b / gamma, "tpot")

    rows_eq, b_eq, labels_eq = [], [], []

    def add_eq(coeffs: dict, rhs: float, label: str):
        row = np.zeros(num_vars)
        for j, v in coeffs.items():
            row[j] = v
        rows_eq.append(row)
        b_eq.append(rhs)
        labels_eq.append(label)

    for i in range(n):
        add_eq({ix(i): rates.mu_p[i], iqp(i): theta[i]}, lam[i], f"prefill_balance[{i}]")
        add_eq(
            {
                ix(i): rates.mu_p[i],
                iqd(i): -theta[i],
                iym(i): -rates.mu_m[i],
                iys(i): -rates.mu_s[i],
            },
            0.0,
            f"decode_balance[{i}]",
        )
    if sli.force_zero_decode_buffer:
        for i in range(n):
            add_eq({iqd(i): 1.0}, 0.0, f"zero_decode_buffer[{i}]")

    return LpProblem(
        c=c,
        a_ub=np.array(rows_ub),
        b_ub=np.array(b_ub),
        a_eq=np.array(rows_eq),
        b_eq=np.array(b_eq),
        labels_ub=labels_ub,
        labels_eq=labels_eq,
        num_classes=n,
        num_vars=num_vars,
        instance=inst,
        scheme=scheme,
        sli=sli,
    )


def solve_lp(problem: LpProblem) -> FluidPlan:
    """Solve the LP and package the optimum as a checked :class:`FluidPlan`."""
    res = simplex.solve(problem.c, problem.a_ub, problem.b_ub, problem.a_eq, problem.b_eq)
    n = problem.num_classes
    v = res.x
    plan = FluidPlan(
        x=v[0:n].copy(),
        y_m=v[n : 2 * n].copy(),
        y_s=v[2 * n : 3 * n].copy(),
        q_p=v[3 * n : 4 * n].copy(),
        q_d=v[4 * n : 5 * n].copy(),
        objective=res.objective,
        scheme=problem.scheme,
        sli=problem.sli,
        duals={
            **{lab: float(d) for lab, d in zip(problem.labels_ub, res.duals_ub)},
            **{lab: float(d) for lab, d in zip(problem.labels_eq, res.duals_eq)},
        },
    )
    resid = max_residual(plan, problem.instance)
    if resid > RESIDUAL_TOL:
        raise RuntimeError(f"solver returned a plan with residual {resid:.3g}")
    return plan


def plan_instance(
    inst: Instance, sli: SliSpec | None = None, scheme: str | None = None
) -> FluidPlan:
    """Convenience: build and solve in one call."""
    return solve_lp(build_lp(inst, sli=sli, scheme=scheme))


def max_residual(plan: FluidPlan, inst: Instance) -> float:
    """Largest absolute violation across all base constraint rows."""
    rates = derive_rates(inst)
    lam = inst.arrival_rates()
    theta = inst.patience_rates()
    big_b = inst.hardware.batch_cap
    sx = float(np.sum(plan.x))
    worst = max(
        sx - 1.0,
        float(np.sum(plan.y_m)) - (big_b - 1.0) * sx,
        float(np.sum(plan.y_s)) - big_b * (1.0 - sx),
        float(np.max(-plan.x, initial=0.0)),
        float(np.max(-plan.y_m, initial=0.0)),
        float(np.max(-plan.y_s, initial=0.0)),
        float(np.max(-plan.q_p, initial=0.0)),
        float(np.max(-plan.q_d, initial=0.0)),
    )
    pf = lam - theta * plan.q_p - rates.mu_p * plan.x
    df = rates.mu_p * plan.x - theta * plan.q_d - rates.mu_m * plan.y_m - rates.mu_s * plan.y_s
    return max(worst, float(np.max(np.abs(pf))), float(np.max(np.abs(df))))


def average_tpot(inst: Instance, total_prefill: float) -> float:
    """Capacity-weighted mean seconds per output token at prefill mass X."""
    hw = inst.hardware
    big_b = hw.batch_cap
    x = total_prefill
    num = hw.mixed_iteration_time * (big_b - 1) * x + (big_b / hw.solo_rate) * (1.0 - x)
    return num / (big_b - x)


# --- decode-buffer elimination ------------------------------------------------


def eliminate_decode_buffer(plan: FluidPlan, inst: Instance) -> FluidPlan:
    """Rewrite a feasible plan into one with an empty decode buffer.

    Per class, the decode backlog is pushed upstream: prefill occupancy is
    lowered until completions exactly feed decode, and the displaced arrivals
    sit in the prefill queue instead. If the smaller prefill mass no longer
    supports the mixed decode occupancy, mass moves from mixed to solo slots
    at the class-independent speed ratio, preserving every class's completion
    rate and therefore the completion-value objective.
    """
    if plan.scheme != BUNDLED:
        raise ValueError(
            "decode-buffer elimination preserves the completion-value objective "
            "only; rewrite bundled plans"
        )
    if not solo_efficiency_condition(inst):
        raise ConditionViolated(
            "solo_rate * tau_mix < (B-1)/B: moving decode mass to solo slots "
            "cannot compensate the lost mixed capacity"
        )

    rates = derive_rates(inst)
    theta = inst.patience_rates()
    lam = inst.arrival_rates()
    big_b = inst.hardware.batch_cap
    kappa = inst.hardware.solo_rate * inst.hardware.mixed_iteration_time

    gap = rates.mu_p * plan.x - rates.mu_m * plan.y_m - rates.mu_s * plan.y_s
    gap = np.maximum(gap, 0.0)
    moved = gap > RESIDUAL_TOL
    if np.any(moved & (theta == 0.0)):
        bad = [int(i) for i in np.where(moved & (theta == 0.0))[0]]
        raise ZeroPatience(
            f"classes {bad} hold decode backlog but have zero patience; no "
            "abandonment can absorb the displaced queue mass"
        )

    x = plan.x - gap / rates.mu_p
    q_p = plan.q_p.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        q_p = np.where(theta > 0, (lam - rates.mu_p * x) / theta, q_p)
    y_m = plan.y_m.copy()
    y_s = plan.y_s.copy()

    overload = float(np.sum(y_m) - (big_b - 1.0) * np.sum(x))
    if overload > 0.0:
        total_m = float(np.sum(y_m))
        # Shrink mixed occupancy proportionally; the matching solo increase
        # delta_ys = -delta_ym / kappa keeps per-class completions fixed.
        shrink = y_m * (overload / total_m)
        y_m = y_m - shrink
        y_s = y_s + shrink / kappa

    out = FluidPlan(
        x=x,
        y_m=y_m,
        y_s=y_s,
        q_p=q_p,
        q_d=np.zeros_like(plan.q_d),
        objective=plan.objective,
        scheme=plan.scheme,
        sli=plan.sli,
        duals=dict(plan.duals),
    )
    out.objective = out.revenue(inst)
    return out


# --- policy parameters ---------------------------------------------------------


def derive_policy_params(plan: FluidPlan, n: int, inst: Instance) -> PolicyParams:
    """Scale a per-GPU plan to an n-GPU cluster and derive router parameters."""
    if n < 1:
        raise ValueError("need at least one GPU")
    rates = derive_rates(inst)
    # ceil with a small guard so exact multiples do not round up on float fuzz
    mixed = int(math.ceil(round(n * plan.total_prefill, 9)))
    mixed = min(max(mixed, 0), n)

    comp_m = rates.mu_m * plan.y_m
    comp_s = rates.mu_s * plan.y_s
    denom = comp_m + comp_s
    solo_probs = np.where(denom > 0, np.divide(comp_s, denom, where=denom > 0), 1.0)

    def weights(comp):
        total = float(np.sum(comp))
        return comp / total if total > 0 else np.zeros_like(comp)

    return PolicyParams(
        mixed_gpus=mixed,
        prefill_targets=n * plan.x,
        queue_targets=np.array([int(round(n * q)) for q in plan.q_p]),
        solo_probs=solo_probs,
        pool_weights_mixed=weights(comp_m),
        pool_weights_solo=weights(comp_s),
        priority_index=np.array([c.decode_len / c.prompt_len for c in inst.classes]),
        queue_split_mixed=(1.0 - solo_probs) * plan.q_d,
        queue_split_solo=solo_probs * plan.q_d,
    )


# --- frontier sweeps -----------------------------------------------------------

PREFILL_FAIRNESS_AXIS = "prefill-fairness"
DECODE_FAIRNESS_AXIS = "decode-fairness"
TPOT_AXIS = "tpot"
SLI_AXES = (PREFILL_FAIRNESS_AXIS, DECODE_FAIRNESS_AXIS, TPOT_AXIS)


@dataclass(frozen=True)
class FrontierPoint:
    eta: float
    objective: float | None
    feasible: bool
    shadow_price: float | None


def _sli_for_axis(axis: str, eta: float) -> SliSpec:
    term = SliTerm(mode=HARD, bound=eta)
    if axis == PREFILL_FAIRNESS_AXIS:
        # Fairness targets are defined at an empty decode buffer.
        return SliSpec(prefill_fairness=term, force_zero_decode_buffer=True)
    if axis == DECODE_FAIRNESS_AXIS:
        return SliSpec(decode_fairness=term, force_zero_decode_buffer=True)
    if axis == TPOT_AXIS:
        return SliSpec(tpot=term)
    raise ValueError(f"unknown SLI axis {axis!r}; expected one of {SLI_AXES}")


def _shadow_price(axis: str, plan: FluidPlan, inst: Instance, eta: float) -> float:
    if axis == TPOT_AXIS:
        # The bound appears on both sides of the cross-multiplied row; by the
        # envelope theorem dR*/d(eta) = dual * (B - sum x).
        dual = plan.duals.get("tpot", 0.0)
        return dual * (inst.hardware.batch_cap - plan.total_prefill)
    tag = "prefill_fairness[" if axis == PREFILL_FAIRNESS_AXIS else "decode_fairness["
    return sum(v for k, v in plan.duals.items() if k.startswith(tag))


def sweep_frontier(
    inst: Instance, sli_axis: str, grid, scheme: str | None = None
) -> list[FrontierPoint]:
    """Solve one LP per bound value; infeasible points are kept, not dropped."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty frontier grid")
    points = []
    for eta in grid:
        try:
            plan = plan_instance(inst, sli=_sli_for_axis(sli_axis, float(eta)), scheme=scheme)
        except Infeasible:
            points.append(FrontierPoint(float(eta), None, False, None))
            continue
        points.append(
            FrontierPoint(
                float(eta),
                plan.objective,
                True,
                _shadow_price(sli_axis, plan, inst, float(eta)),
            )
        )
    return points
