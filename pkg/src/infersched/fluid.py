"""Deterministic fluid trajectories of the gate-and-route control policies.

The prefill gate holds each class at its planned occupancy: while queued work
exists, class i is admitted at exactly mu_p_i * x_i_target, which both pulls
x_i up to the target and holds it there; above target nothing is admitted.
Decode routing comes in three flavors:

* ``gg-sp``       single FCFS buffer, work-conserving greedy fill (solo first);
* ``sli``         per-pool buffers fed by the per-class solo probability;
* ``sli-general`` same pools, but freed capacity pulls classes by fixed weights.

Capacity boundaries are handled with a short boundary layer (mass within
``delta`` seconds of a cap ramps in smoothly), so fixed-step RK4 needs no
event detection; a per-step projection audit catches any under-resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Instance, ServiceRates, derive_rates
from .planner import FluidPlan, PolicyParams, derive_policy_params

GG_SP = "gg-sp"
SLI = "sli"
SLI_GENERAL = "sli-general"
FLUID_POLICIES = (GG_SP, SLI, SLI_GENERAL)

_EPS = 1e-12


class InfeasibleState(ValueError):
    """A fluid state violates nonnegativity or a capacity bound beyond tolerance."""


class StepTooLarge(RuntimeError):
    """Projection had to correct more than the per-step budget; reduce dt."""


@dataclass
class FluidState:
    """Per-class fluid masses at one instant.

    ``q_dm``/``q_ds`` hold the pool-split decode buffers for the pool-based
    policies; for the single-buffer policy they are None and ``q_d`` is the
    lone buffer.
    """

    t: float
    q_p: np.ndarray
    q_d: np.ndarray
    x: np.ndarray
    y_m: np.ndarray
    y_s: np.ndarray
    q_dm: np.ndarray | None = None
    q_ds: np.ndarray | None = None

    @staticmethod
    def empty(num_classes: int, pool_split: bool = False) -> "FluidState":
        z = lambda: np.zeros(num_classes)
        return FluidState(
            t=0.0,
            q_p=z(),
            q_d=z(),
            x=z(),
            y_m=z(),
            y_s=z(),
            q_dm=z() if pool_split else None,
            q_ds=z() if pool_split else None,
        )

    def validate(self, inst: Instance, total_prefill_target: float, tol: float = 1e-9):
        big_b = inst.hardware.batch_cap
        cap_m = (big_b - 1.0) * total_prefill_target
        cap_s = big_b * (1.0 - total_prefill_target)
        arrays = [self.q_p, self.q_d, self.x, self.y_m, self.y_s]
        if any(np.min(a, initial=0.0) < -tol for a in arrays):
            raise InfeasibleState("negative fluid mass")
        if np.sum(self.x) > 1.0 + tol:
            raise InfeasibleState("prefill mass exceeds 1")
        if np.sum(self.y_m) > cap_m + tol or np.sum(self.y_s) > cap_s + tol:
            raise InfeasibleState("decode mass exceeds the static pool capacity")


def weighted_decode_work(state: FluidState, rates: ServiceRates) -> float:
    """Remaining decode work in mixed-iteration time units:
    sum_i (q_d_i + y_m_i + y_s_i) / mu_m_i."""
    return float(np.sum((state.q_d + state.y_m + state.y_s) / rates.mu_m))


class _Dynamics:
    """Compiled per-instance constants plus the policy right-hand side.

    State vector layout: [q_p | x | y_m | y_s | buffers] where buffers is
    q_d (one block) for gg-sp and q_dm, q_ds (two blocks) for pool policies.
    """

    def __init__(self, inst, plan, params, policy, dt):
        if policy not in FLUID_POLICIES:
            raise ValueError(f"unknown fluid policy {policy!r}; expected {FLUID_POLICIES}")
        rates = derive_rates(inst)
        self.policy = policy
        self.n = inst.num_classes
        self.lam = [c.arrival_rate for c in inst.classes]
        self.theta = [c.patience_rate for c in inst.classes]
        self.mu_p = list(rates.mu_p)
        self.mu_m = list(rates.mu_m)
        self.mu_s = list(rates.mu_s)
        self.xstar = list(plan.x)
        xs = float(np.sum(plan.x))
        big_b = inst.hardware.batch_cap
        self.cap_m = (big_b - 1.0) * xs
        self.cap_s = big_b * (1.0 - xs)
        self.delta = 2.0 * dt  # capacity boundary layer
        if params is None and policy in (SLI, SLI_GENERAL):
            params = derive_policy_params(plan, 1, inst)
        self.p_s = list(params.solo_probs) if params is not None else [0.0] * self.n
        self.w_m = list(params.pool_weights_mixed) if params is not None else None
        self.w_s = list(params.pool_weights_solo) if params is not None else None
        self.nvars = 5 * self.n if policy == GG_SP else 6 * self.n

    # -- state packing -------------------------------------------------------

    def pack(self, state: FluidState) -> list:
        s = list(state.q_p) + list(state.x) + list(state.y_m) + list(state.y_s)
        if self.policy == GG_SP:
            return s + list(state.q_d)
        q_dm = state.q_dm if state.q_dm is not None else state.q_d * 0.0
        q_ds = state.q_ds if state.q_ds is not None else state.q_d
        return s + list(q_dm) + list(q_ds)

    def unpack(self, s, t) -> FluidState:
        n = self.n
        a = lambda k: np.array(s[k * n : (k + 1) * n])
        if self.policy == GG_SP:
            return FluidState(t=t, q_p=a(0), x=a(1), y_m=a(2), y_s=a(3), q_d=a(4))
        q_dm, q_ds = a(4), a(5)
        return FluidState(
            t=t, q_p=a(0), x=a(1), y_m=a(2), y_s=a(3), q_d=q_dm + q_ds, q_dm=q_dm, q_ds=q_ds
        )

    # -- dynamics ------------------------------------------------------------

    def rhs(self, s: list) -> list:
        n = self.n
        # Intermediate integrator stages may sit a hair outside the feasible
        # set; rates are always evaluated on the clamped state.
        s = [v if v > 0.0 else 0.0 for v in s]
        out = [0.0] * self.nvars
        inflow = [0.0] * n
        # prefill gate
        for i in range(n):
            qp, x = s[i], s[n + i]
            target = self.xstar[i]
            feed = self.mu_p[i] * target
            if x > target + 1e-9:
                adm = 0.0
            elif qp > _EPS:
                adm = feed
            else:
                adm = min(self.lam[i], feed)
            out[i] = self.lam[i] - self.theta[i] * qp - adm
            out[n + i] = adm - self.mu_p[i] * x
            inflow[i] = self.mu_p[i] * x

        if self.policy == GG_SP:
            self._route_greedy(s, out, inflow)
        else:
            self._route_pools(s, out, inflow)
        return out

    def _route_greedy(self, s, out, inflow):
        """Single FCFS buffer; capacity is claimed solo-first, queue before inflow.

        Each pool can admit at most its slot-freeing rate plus its free
        capacity spread over the boundary layer. Queued mass (head of line)
        claims that budget before fresh prefill completions, which makes the
        router exactly work-conserving whenever the buffer is nonempty and
        keeps the vector field continuous across the empty-buffer boundary.
        """
        n = self.n
        ym = s[2 * n : 3 * n]
        ys = s[3 * n : 4 * n]
        qd = s[4 * n : 5 * n]
        refill_m = sum(self.mu_m[i] * ym[i] for i in range(n))
        refill_s = sum(self.mu_s[i] * ys[i] for i in range(n))
        admit_s = refill_s + max(0.0, self.cap_s - sum(ys)) / self.delta
        admit_m = refill_m + max(0.0, self.cap_m - sum(ym)) / self.delta
        qd_tot = sum(qd)
        it = sum(inflow)

        uq_s = min(qd_tot / self.delta, admit_s)
        uq_m = min(qd_tot / self.delta - uq_s, admit_m)
        ui_s = min(it, admit_s - uq_s)
        ui_m = min(it - ui_s, admit_m - uq_m)
        queued_frac = (it - ui_s - ui_m) / it if it > 0 else 0.0
        uq = uq_s + uq_m
        for i in range(n):
            qcomp = qd[i] / qd_tot if qd_tot > 0 else 0.0
            icomp = inflow[i] / it if it > 0 else 0.0
            out[4 * n + i] = inflow[i] * queued_frac - self.theta[i] * qd[i] - uq * qcomp
            out[2 * n + i] = uq_m * qcomp + ui_m * icomp - self.mu_m[i] * ym[i]
            out[3 * n + i] = uq_s * qcomp + ui_s * icomp - self.mu_s[i] * ys[i]

    def _route_pools(self, s, out, inflow):
        """Split inflow by solo probability; each pool is work-conserving."""
        n = self.n
        in_m = [(1.0 - self.p_s[i]) * inflow[i] for i in range(n)]
        in_s = [self.p_s[i] * inflow[i] for i in range(n)]
        self._pool(s, out, in_m, y_off=2 * n, q_off=4 * n, mu=self.mu_m,
                   cap=self.cap_m, weights=self.w_m)
        self._pool(s, out, in_s, y_off=3 * n, q_off=5 * n, mu=self.mu_s,
                   cap=self.cap_s, weights=self.w_s)

    def _pool(self, s, out, inflow, y_off, q_off, mu, cap, weights):
        n = self.n
        y = s[y_off : y_off + n]
        q = s[q_off : q_off + n]
        refill = sum(mu[i] * y[i] for i in range(n))
        admit = refill + max(0.0, cap - sum(y)) / self.delta
        q_tot = sum(q)
        it = sum(inflow)

        uq = min(q_tot / self.delta, admit)
        ui = min(it, admit - uq)
        queued_frac = (it - ui) / it if it > 0 else 0.0
        if self.policy == SLI_GENERAL and q_tot > _EPS:
            # freed capacity pulls classes by fixed weights over nonempty buffers
            wsum = sum(weights[i] for i in range(n) if q[i] > _EPS)
            qcomp = [
                (weights[i] / wsum if q[i] > _EPS and wsum > 0 else 0.0)
                for i in range(n)
            ]
        else:
            qcomp = [q[i] / q_tot if q_tot > 0 else 0.0 for i in range(n)]
        for i in range(n):
            icomp = inflow[i] / it if it > 0 else 0.0
            out[q_off + i] = inflow[i] * queued_frac - self.theta[i] * q[i] - uq * qcomp[i]
            out[y_off + i] = uq * qcomp[i] + ui * icomp - mu[i] * y[i]

    # -- feasibility repair ----------------------------------------------------

    def project(self, s: list) -> float:
        """Clamp to the nonnegative orthant and pool caps; returns |correction|."""
        n = self.n
        corr = 0.0
        for j in range(self.nvars):
            if s[j] < 0.0:
                corr += -s[j]
                s[j] = 0.0
        for off, cap in ((2 * n, self.cap_m), (3 * n, self.cap_s)):
            tot = sum(s[off : off + n])
            if tot > cap:
                over = tot - cap
                corr += over
                scale = cap / tot if tot > 0 else 0.0
                for i in range(n):
                    s[off + i] *= scale
        return corr

    def absorb_free_capacity(self, s: list) -> None:
        """Instantly place buffered mass into currently free slots (solo first).

        Applied once before integration so artificial initial states satisfy
        work conservation; during integration the dynamics keep buffers and
        free capacity mutually exclusive.
        """
        n = self.n
        if self.policy == GG_SP:
            offs = [(4 * n, 3 * n, self.cap_s), (4 * n, 2 * n, self.cap_m)]
        else:
            offs = [(5 * n, 3 * n, self.cap_s), (4 * n, 2 * n, self.cap_m)]
        for q_off, y_off, cap in offs:
            free = cap - sum(s[y_off : y_off + n])
            q_tot = sum(s[q_off : q_off + n])
            if free <= _EPS or q_tot <= _EPS:
                continue
            move = min(free, q_tot)
            for i in range(n):
                mi = move * s[q_off + i] / q_tot
                s[q_off + i] -= mi
                s[y_off + i] += mi


@dataclass
class FluidTrajectory:
    """Uniformly sampled fluid states plus terminal diagnostics."""

    policy: str
    times: np.ndarray
    q_p: np.ndarray
    q_d: np.ndarray
    x: np.ndarray
    y_m: np.ndarray
    y_s: np.ndarray
    w_d: np.ndarray
    q_dm: np.ndarray | None = None
    q_ds: np.ndarray | None = None
    max_projection: float = 0.0

    @property
    def num_classes(self) -> int:
        return self.x.shape[1]

    def final_state(self) -> FluidState:
        k = -1
        return FluidState(
            t=float(self.times[k]),
            q_p=self.q_p[k].copy(),
            q_d=self.q_d[k].copy(),
            x=self.x[k].copy(),
            y_m=self.y_m[k].copy(),
            y_s=self.y_s[k].copy(),
            q_dm=None if self.q_dm is None else self.q_dm[k].copy(),
            q_ds=None if self.q_ds is None else self.q_ds[k].copy(),
        )

    def prefill_gap(self, plan: FluidPlan) -> float:
        """sup-norm distance of the terminal prefill occupancy from the plan."""
        return float(np.max(np.abs(self.x[-1] - plan.x)))

    def decode_work_drift_violations(self, inst: Instance, tol: float = 1e-6) -> int:
        """Count samples where the decode-work drift bound fails.

        Whenever the buffer holds mass, the work measure must fall at least as
        fast as abandonment drains it: dW_d/dt <= -min_i(theta_i / mu_m_i) * q_d.
        """
        rates = derive_rates(inst)
        theta = inst.patience_rates()
        floor = float(np.min(theta / rates.mu_m))
        dt = float(self.times[1] - self.times[0])
        qd_tot = self.q_d.sum(axis=1)
        dw = np.diff(self.w_d) / dt
        active = qd_tot[:-1] > 1e-9
        bound = -floor * qd_tot[:-1] + tol
        return int(np.sum(dw[active] > bound[active]))

    def to_csv(self, path, stride: int = 1) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "class", "q_p", "q_d", "x", "y_m", "y_s", "W_d"])
            for k in range(0, len(self.times), stride):
                for i in range(self.num_classes):
                    wr.writerow(
                        [
                            repr(float(self.times[k])),
                            i,
                            repr(float(self.q_p[k, i])),
                            repr(float(self.q_d[k, i])),
                            repr(float(self.x[k, i])),
                            repr(float(self.y_m[k, i])),
                            repr(float(self.y_s[k, i])),
                            repr(float(self.w_d[k])),
                        ]
                    )


def fluid_rhs(
    state: FluidState,
    inst: Instance,
    plan: FluidPlan,
    params: PolicyParams | None = None,
    policy: str = GG_SP,
    dt: float = 0.01,
) -> FluidState:
    """Time-derivative of a fluid state under the given policy's controls."""
    dyn = _Dynamics(inst, plan, params, policy, dt)
    state.validate(inst, float(np.sum(plan.x)))
    return dyn.unpack(dyn.rhs(dyn.pack(state)), state.t)


def integrate(
    initial: FluidState,
    inst: Instance,
    plan: FluidPlan,
    policy: str = GG_SP,
    horizon: float = 2000.0,
    dt: float = 0.01,
    params: PolicyParams | None = None,
    projection_budget: float = 1e-6,
) -> FluidTrajectory:
    """Fixed-step RK4 with per-step projection onto the feasible set."""
    if dt <= 0 or horizon < dt:
        raise ValueError("need dt > 0 and horizon >= dt")
    dyn = _Dynamics(inst, plan, params, policy, dt)
    rates = derive_rates(inst)
    inv_mu_m = [1.0 / m for m in dyn.mu_m]

    s = dyn.pack(initial)
    dyn.absorb_free_capacity(s)
    steps = int(round(horizon / dt))
    n = dyn.n
    nv = dyn.nvars
    pool = dyn.policy != GG_SP

    times = np.empty(steps + 1)
    rec = {key: np.empty((steps + 1, n)) for key in ("q_p", "x", "y_m", "y_s", "q_d")}
    if pool:
        rec["q_dm"] = np.empty((steps + 1, n))
        rec["q_ds"] = np.empty((steps + 1, n))
    w_d = np.empty(steps + 1)

    def record(k, t):
        times[k] = t
        rec["q_p"][k] = s[0:n]
        rec["x"][k] = s[n : 2 * n]
        rec["y_m"][k] = s[2 * n : 3 * n]
        rec["y_s"][k] = s[3 * n : 4 * n]
        if pool:
            rec["q_dm"][k] = s[4 * n : 5 * n]
            rec["q_ds"][k] = s[5 * n : 6 * n]
            qd = [s[4 * n + i] + s[5 * n + i] for i in range(n)]
        else:
            qd = s[4 * n : 5 * n]
        rec["q_d"][k] = qd
        w_d[k] = sum((qd[i] + s[2 * n + i] + s[3 * n + i]) * inv_mu_m[i] for i in range(n))

    record(0, 0.0)
    rhs = dyn.rhs
    max_corr = 0.0
    half = dt / 2.0
    sixth = dt / 6.0
    for k in range(1, steps + 1):
        k1 = rhs(s)
        k2 = rhs([s[j] + half * k1[j] for j in range(nv)])
        k3 = rhs([s[j] + half * k2[j] for j in range(nv)])
        k4 = rhs([s[j] + dt * k3[j] for j in range(nv)])
        s = [s[j] + sixth * (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j]) for j in range(nv)]
        corr = dyn.project(s)
        if corr > projection_budget:
            raise StepTooLarge(
                f"projection moved {corr:.3g} at t={k * dt:.3f}; reduce dt"
            )
        max_corr = max(max_corr, corr)
        record(k, k * dt)

    return FluidTrajectory(
        policy=policy,
        times=times,
        q_p=rec["q_p"],
        q_d=rec["q_d"],
        x=rec["x"],
        y_m=rec["y_m"],
        y_s=rec["y_s"],
        w_d=w_d,
        q_dm=rec.get("q_dm"),
        q_ds=rec.get("q_ds"),
        max_projection=max_corr,
    )
