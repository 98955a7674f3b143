"""Discrete-event simulation of the n-GPU inference cluster.

Requests move prefill-queue -> prefill -> decode -> done, abandoning either
queue after an exponential patience time. Every GPU runs at most one prefill;
resident decodes complete at the mixed-mode rate while a prefill is active on
their GPU and at the solo rate otherwise. Mode flips invalidate and redraw the
resident decode completion clocks, which is exact because the clocks are
exponential.

Events live in a binary heap keyed by (time, sequence); invalidation is lazy
via per-job generation counters. All randomness flows through named
substreams of one root seed, so a record is a pure function of
(instance, n, policy, seed, horizon).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from heapq import heappush, heappop

import numpy as np

from .model import BUNDLED, Instance, derive_rates
from .planner import FluidPlan, PolicyParams, derive_policy_params
from .streams import ARRIVALS, PATIENCE, ROUTING, SERVICES, RandomStreams

GG_SP = "gg-sp"
FI_WSP = "fi-wsp"
GI_WSP = "gi-wsp"
GF_WSP = "gf-wsp"
FG_SP = "fg-sp"
PRIORITIZE = "prioritize"
SLI_AWARE = "sli"
SLI_GENERAL = "sli-general"
POLICIES = (GG_SP, FI_WSP, GI_WSP, GF_WSP, FG_SP, PRIORITIZE, SLI_AWARE, SLI_GENERAL)

_STATIC = (GG_SP, FG_SP, PRIORITIZE, SLI_AWARE, SLI_GENERAL)   # fixed mixed/solo split
_COUPLED = (FI_WSP, GI_WSP)                                    # decode stays in its slot
_GATED = (GG_SP, GI_WSP, GF_WSP, SLI_AWARE, SLI_GENERAL)       # occupancy-deviation gate
_FCFS = (FI_WSP, FG_SP)                                        # class-blind admission

# event codes
_ARR, _PDONE, _DDONE, _PABN, _DABN, _FLUSH = 0, 1, 2, 3, 4, 5
# job phases
_QP, _PS, _QD, _DS, _DONE, _GONE = 0, 1, 2, 3, 4, 5


class PlanMissing(ValueError):
    """The chosen policy needs a fluid plan and none was supplied."""


class NondeterminismGuard(RuntimeError):
    """Two runs with identical inputs diverged; the engine leaked randomness."""


class _Job:
    __slots__ = (
        "cls", "gpu", "phase", "qgen", "dgen", "arrival", "t_mode", "dur_m", "dur_s", "pool"
    )

    def __init__(self, cls, arrival):
        self.cls = cls
        self.gpu = -1
        self.phase = _QP
        self.qgen = 0
        self.dgen = 0
        self.arrival = arrival
        self.t_mode = 0.0
        self.dur_m = 0.0
        self.dur_s = 0.0
        self.pool = -1


class _FreeSet:
    """Set of GPU ids with O(1) add/remove and uniform random choice."""

    __slots__ = ("items", "pos")

    def __init__(self):
        self.items = []
        self.pos = {}

    def add(self, g):
        if g not in self.pos:
            self.pos[g] = len(self.items)
            self.items.append(g)

    def discard(self, g):
        i = self.pos.pop(g, None)
        if i is None:
            return
        last = self.items.pop()
        if i < len(self.items):
            self.items[i] = last
            self.pos[last] = i

    def choice(self, rng):
        return self.items[rng.randrange(len(self.items))]

    def __len__(self):
        return len(self.items)


@dataclass
class MetricsRecord:
    """Windowed time-averages and completion counts of one replication."""

    policy: str
    n: int
    seed: int
    horizon: float
    warmup: float
    revenue_per_gpu: float
    x_occ: np.ndarray
    ym_occ: np.ndarray
    ys_occ: np.ndarray
    qp_scaled: np.ndarray
    qd_scaled: np.ndarray
    tpot: np.ndarray
    arrivals: np.ndarray
    prefill_completions: np.ndarray
    decode_completions: np.ndarray
    prefill_abandons: np.ndarray
    decode_abandons: np.ndarray

    def equals(self, other: "MetricsRecord") -> bool:
        for name in self.__dataclass_fields__:
            a, b = getattr(self, name), getattr(other, name)
            if isinstance(a, np.ndarray):
                same = np.array_equal(a, b, equal_nan=True)
            else:
                same = a == b
            if not same:
                return False
        return True

    def row_dicts(self) -> list[dict]:
        rows = []
        for i in range(len(self.x_occ)):
            rows.append(
                {
                    "policy": self.policy,
                    "n": self.n,
                    "seed": self.seed,
                    "rev_per_gpu": self.revenue_per_gpu,
                    "class": i,
                    "x_occ": float(self.x_occ[i]),
                    "ym_occ": float(self.ym_occ[i]),
                    "ys_occ": float(self.ys_occ[i]),
                    "qp_scaled": float(self.qp_scaled[i]),
                    "qd_scaled": float(self.qd_scaled[i]),
                    "tpot_avg": float(self.tpot[i]),
                }
            )
        return rows


def revenue_accrue(
    inst: Instance, prefill_completions, decode_completions, n: int, window: float
) -> float:
    """Per-GPU revenue rate earned by the given completion counts.

    Bundled pricing pays the full request value on decode completion only;
    separate pricing pays each stage's tokens when that stage finishes.
    """
    sp = np.asarray(prefill_completions, dtype=float)
    sd = np.asarray(decode_completions, dtype=float)
    pricing = inst.pricing
    if pricing.scheme == BUNDLED:
        total = float(np.sum(inst.rewards() * sd))
    else:
        p = np.array([c.prompt_len for c in inst.classes])
        d = np.array([c.decode_len for c in inst.classes])
        total = float(
            np.sum(pricing.prefill_price * p * sp + pricing.decode_price * d * sd)
        )
    return total / (n * window)


class _Sim:
    def __init__(self, inst, n, policy, params, horizon, warmup, seed, audit=False):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
        self.inst = inst
        self.n = n
        self.policy = policy
        self.params = params
        self.horizon = float(horizon)
        self.t_window = warmup * self.horizon
        self.audit = audit
        self.ncls = inst.num_classes
        rates = derive_rates(inst)
        self.mu_p = list(rates.mu_p)
        self.mu_m = list(rates.mu_m)
        self.mu_s = list(rates.mu_s)
        self.lam_n = [c.arrival_rate * n for c in inst.classes]
        self.theta = [c.patience_rate for c in inst.classes]
        hw = inst.hardware
        self.cap = hw.batch_cap
        self.token_rate_m = 1.0 / hw.mixed_iteration_time   # tokens per slot-second
        self.token_rate_s = hw.solo_rate

        streams = RandomStreams(seed)
        self.rng_arr = [streams.stream(ARRIVALS, i) for i in range(self.ncls)]
        self.rng_srv = streams.stream(SERVICES)
        self.rng_pat = streams.stream(PATIENCE)
        self.rng_rt = streams.stream(ROUTING)

        if policy in _GATED or policy in _STATIC:
            if params is None:
                raise PlanMissing(f"policy {policy} requires a fluid plan")
        if params is not None:
            self.x_target = list(params.prefill_targets)
            self.q_target = list(params.queue_targets)
            self.p_solo = list(params.solo_probs)
            self.w_mixed = list(params.pool_weights_mixed)
            self.w_solo = list(params.pool_weights_solo)
            self.priority = list(params.priority_index)
            self.mixed_gpus = min(params.mixed_gpus, n)
        else:
            self.priority = [c.decode_len / c.prompt_len for c in inst.classes]
            self.mixed_gpus = n

        # --- cluster state ---
        self.static = policy in _STATIC
        m = self.mixed_gpus if self.static else n
        self.is_mixed = [g < m for g in range(n)]
        self.g_active: list = [None] * n
        self.g_decodes: list = [[] for _ in range(n)]
        self.g_mode = [False] * n            # True while resident clocks run mixed
        if self.static:
            self.d_cap = [self.cap - 1 if g < m else self.cap for g in range(n)]
        else:
            self.d_cap = [self.cap] * n      # shared slots; prefill occupies one

        self.free_solo = _FreeSet()          # static: solo pool; dynamic: unused
        self.free_mixed = _FreeSet()
        self.free_any = _FreeSet()
        self.ready_prefill = _FreeSet()
        for g in range(n):
            self._mark_free(g)
            self._mark_ready(g)

        # --- queues ---
        self.fcfs_queue = deque()
        self.class_queues = [deque() for _ in range(self.ncls)]
        self.qp_count = [0] * self.ncls
        self.buf_single = deque()            # shared decode buffer (greedy router)
        self.buf_pool = (deque(), deque())   # (mixed, solo) pool buffers
        self.buf_class = (
            [deque() for _ in range(self.ncls)],
            [deque() for _ in range(self.ncls)],
        )                                    # per-class pool buffers (weighted router)
        self.qd_count = [0] * self.ncls
        self.pool_count = [[0] * self.ncls, [0] * self.ncls]

        # --- counters and integrals ---
        z = lambda: [0] * self.ncls
        self.cnt_a = z()
        self.cnt_up = z()
        self.cnt_sp = z()
        self.cnt_udm = z()
        self.cnt_uds = z()
        self.cnt_sdm = z()
        self.cnt_sds = z()
        self.cnt_bp = z()
        self.cnt_bd = z()
        self.cnt_msm = z()
        self.cnt_mms = z()
        self.x_cnt = z()
        self.ym_cnt = z()
        self.ys_cnt = z()
        zf = lambda: [0.0] * self.ncls
        self.acc_x = zf()
        self.acc_ym = zf()
        self.acc_ys = zf()
        self.acc_qp = zf()
        self.acc_qd = zf()
        self.last_t = zf()
        self.tpot_dur = zf()
        self.tpot_tok = zf()
        self.snap = None

        self.t = 0.0
        self.seq = 0
        self.heap = []
        for i in range(self.ncls):
            if self.lam_n[i] > 0:
                self._push(self.rng_arr[i].exponential(self.lam_n[i]), _ARR, i, 0)
        self._push(self.t_window, _FLUSH, 0, 0)

    # ---- plumbing ----

    def _push(self, t, code, a, b):
        self.seq += 1
        heappush(self.heap, (t, self.seq, code, a, b))

    def _adv(self, i):
        dt = self.t - self.last_t[i]
        if dt > 0.0:
            self.acc_x[i] += self.x_cnt[i] * dt
            self.acc_ym[i] += self.ym_cnt[i] * dt
            self.acc_ys[i] += self.ys_cnt[i] * dt
            self.acc_qp[i] += self.qp_count[i] * dt
            self.acc_qd[i] += self.qd_count[i] * dt
            self.last_t[i] = self.t
        elif dt == 0.0:
            return
        else:
            raise AssertionError("time ran backwards")

    def _free_decode_slots(self, g):
        cap = self.d_cap[g]
        if not self.static and self.g_active[g] is not None:
            cap -= 1
        return cap - len(self.g_decodes[g])

    def _mark_free(self, g):
        free = self._free_decode_slots(g) > 0
        if self.static:
            target = self.free_mixed if self.is_mixed[g] else self.free_solo
        else:
            target = self.free_any
        (target.add if free else target.discard)(g)

    def _mark_ready(self, g):
        if self.static:
            ready = self.is_mixed[g] and self.g_active[g] is None
        else:
            ready = self.g_active[g] is None and self._free_decode_slots(g) > 0
        (self.ready_prefill.add if ready else self.ready_prefill.discard)(g)

    def _resample(self, g, to_mixed):
        """Redraw resident decode clocks on g at the new mode's rates."""
        t = self.t
        mu = self.mu_m if to_mixed else self.mu_s
        push = self._push
        srv = self.rng_srv
        moved = self.g_decodes[g]
        for job in moved:
            i = job.cls
            dur = t - job.t_mode
            if self.g_mode[g]:
                job.dur_m += dur
            else:
                job.dur_s += dur
            job.t_mode = t
            job.dgen += 1
            self._adv(i)
            if to_mixed:
                self.ym_cnt[i] += 1
                self.ys_cnt[i] -= 1
                self.cnt_msm[i] += 1
            else:
                self.ym_cnt[i] -= 1
                self.ys_cnt[i] += 1
                self.cnt_mms[i] += 1
            push(t + srv.exponential(mu[i]), _DDONE, job, job.dgen)
        self.g_mode[g] = to_mixed

    # ---- prefill side ----

    def _start_prefill(self, g, job):
        i = job.cls
        job.phase = _PS
        job.gpu = g
        job.qgen += 1
        self.g_active[g] = job
        self._adv(i)
        self.x_cnt[i] += 1
        self.cnt_up[i] += 1
        self.qp_count[i] -= 1
        if not self.g_mode[g] and self.g_decodes[g]:
            self._resample(g, True)
        else:
            self.g_mode[g] = True
        self._push(self.t + self.rng_srv.exponential(self.mu_p[i]), _PDONE, g, 0)
        self._mark_ready(g)
        if not self.static:
            self._mark_free(g)

    def _pop_queued(self, q):
        while q:
            job = q.popleft()
            if job.phase == _QP:
                return job
        return None

    def _pick_class(self):
        """Class to admit next, or -1; implements the per-policy admission rule."""
        if self.policy in _FCFS:
            job = self._pop_queued(self.fcfs_queue)
            if job is None:
                return -1, None
            return job.cls, job
        best = -1
        best_key = None
        if self.policy == PRIORITIZE:
            for i in range(self.ncls):
                if self.qp_count[i] > 0:
                    key = (-self.priority[i], i)
                    if best < 0 or key < best_key:
                        best, best_key = i, key
        else:
            # occupancy-deviation gate; classes with zero target are never admitted
            for i in range(self.ncls):
                if self.qp_count[i] > 0 and self.x_target[i] > 0:
                    xi = (self.x_cnt[i] - self.x_target[i]) / self.x_target[i]
                    key = (xi, -(self.qp_count[i] - self.q_target[i]), i)
                    if best < 0 or key < best_key:
                        best, best_key = i, key
        if best < 0:
            return -1, None
        return best, self._pop_queued(self.class_queues[best])

    def _drain_prefill(self):
        while len(self.ready_prefill):
            i, job = self._pick_class()
            if job is None:
                return
            g = self.ready_prefill.choice(self.rng_rt)
            self._start_prefill(g, job)

    # ---- decode side ----

    def _place_decode(self, job, g):
        i = job.cls
        job.phase = _DS
        job.gpu = g
        job.t_mode = self.t
        job.dgen += 1
        self.g_decodes[g].append(job)
        self._adv(i)
        if self.g_mode[g]:
            self.ym_cnt[i] += 1
            self.cnt_udm[i] += 1
            rate = self.mu_m[i]
        else:
            self.ys_cnt[i] += 1
            self.cnt_uds[i] += 1
            rate = self.mu_s[i]
        self._push(self.t + self.rng_srv.exponential(rate), _DDONE, job, job.dgen)
        self._mark_free(g)
        if not self.static:
            self._mark_ready(g)

    def _enqueue_decode(self, job, pool=-1):
        i = job.cls
        job.phase = _QD
        job.qgen += 1
        job.pool = pool
        self._adv(i)
        self.qd_count[i] += 1
        if pool < 0:
            self.buf_single.append(job)
        else:
            self.pool_count[pool][i] += 1
            if self.policy == SLI_GENERAL:
                self.buf_class[pool][i].append(job)
            else:
                self.buf_pool[pool].append(job)
        if self.theta[i] > 0:
            self._push(self.t + self.rng_pat.exponential(self.theta[i]), _DABN, job, job.qgen)

    def _route_decode(self, job):
        """Send a decode-ready job to a slot or a buffer, per the policy."""
        i = job.cls
        if self.policy in (SLI_AWARE, SLI_GENERAL):
            solo = self.rng_rt.uniform() <= self.p_solo[i]
            free = self.free_solo if solo else self.free_mixed
            if len(free):
                self._place_decode(job, free.choice(self.rng_rt))
            else:
                self._enqueue_decode(job, pool=1 if solo else 0)
        elif self.static:
            # greedy: solo slots first, then mixed, else the shared buffer
            if len(self.free_solo):
                self._place_decode(job, self.free_solo.choice(self.rng_rt))
            elif len(self.free_mixed):
                self._place_decode(job, self.free_mixed.choice(self.rng_rt))
            else:
                self._enqueue_decode(job)
        else:  # gf-wsp: any free slot, else the shared buffer
            if len(self.free_any):
                self._place_decode(job, self.free_any.choice(self.rng_rt))
            else:
                self._enqueue_decode(job)

    def _pull_decode(self, g):
        """A slot on g freed; pull the next buffered decode for g's pool."""
        if self.policy == SLI_GENERAL:
            pool = 0 if self.is_mixed[g] else 1
            counts = self.pool_count[pool]
            w = self.w_mixed if pool == 0 else self.w_solo
            total_w = sum(w[i] for i in range(self.ncls) if counts[i] > 0)
            if total_w <= 0.0:
                nonempty = [i for i in range(self.ncls) if counts[i] > 0]
                if not nonempty:
                    return None
                pick = nonempty[self.rng_rt.randrange(len(nonempty))]
            else:
                u = self.rng_rt.uniform() * total_w
                acc = 0.0
                pick = -1
                for i in range(self.ncls):
                    if counts[i] > 0:
                        acc += w[i]
                        if u <= acc:
                            pick = i
                            break
                if pick < 0:  # float edge
                    pick = max(i for i in range(self.ncls) if counts[i] > 0)
            return self._pop_queued(self.buf_class[pool][pick])
        if self.policy == SLI_AWARE:
            pool = 0 if self.is_mixed[g] else 1
            return self._pop_queued(self.buf_pool[pool])
        return self._pop_queued(self.buf_single)

    # ---- event handlers ----

    def _on_arrival(self, i):
        self._push(self.t + self.rng_arr[i].exponential(self.lam_n[i]), _ARR, i, 0)
        job = _Job(i, self.t)
        self._adv(i)
        self.cnt_a[i] += 1
        self.qp_count[i] += 1
        if self.policy in _FCFS:
            self.fcfs_queue.append(job)
        else:
            self.class_queues[i].append(job)
        self._drain_prefill()
        if job.phase == _QP and self.theta[i] > 0:
            self._push(self.t + self.rng_pat.exponential(self.theta[i]), _PABN, job, job.qgen)

    def _on_prefill_done(self, g):
        job = self.g_active[g]
        i = job.cls
        self.g_active[g] = None
        self._adv(i)
        self.x_cnt[i] -= 1
        self.cnt_sp[i] += 1
        self._mark_ready(g)
        if not self.static:
            self._mark_free(g)

        if self.policy in _COUPLED:
            # the finished prefill keeps its slot and decodes in place
            self._place_decode(job, g)
            self._drain_prefill()
        elif self.policy == GF_WSP:
            # freed capacity prefers a new prefill over waiting decodes
            self._drain_prefill()
            self._route_decode(job)
            while self._free_decode_slots(g) > 0:
                nxt = self._pull_decode(g)
                if nxt is None:
                    break
                self._dequeue_accounting(nxt)
                self._place_decode(nxt, g)
        else:
            self._route_decode(job)
            self._drain_prefill()

        if self.g_mode[g] and self.g_active[g] is None:
            if self.g_decodes[g]:
                self._resample(g, False)
            else:
                self.g_mode[g] = False

    def _dequeue_accounting(self, job):
        i = job.cls
        job.qgen += 1
        self._adv(i)
        self.qd_count[i] -= 1
        if job.pool >= 0:
            self.pool_count[job.pool][i] -= 1
            job.pool = -1

    def _on_decode_done(self, job, gen):
        if job.dgen != gen or job.phase != _DS:
            return
        g = job.gpu
        i = job.cls
        dur = self.t - job.t_mode
        self._adv(i)
        if self.g_mode[g]:
            job.dur_m += dur
            self.ym_cnt[i] -= 1
            self.cnt_sdm[i] += 1
        else:
            job.dur_s += dur
            self.ys_cnt[i] -= 1
            self.cnt_sds[i] += 1
        job.phase = _DONE
        self.g_decodes[g].remove(job)
        if self.t >= self.t_window:
            self.tpot_dur[i] += job.dur_m + job.dur_s
            self.tpot_tok[i] += (
                job.dur_m * self.token_rate_m + job.dur_s * self.token_rate_s
            )
        self._mark_free(g)
        if not self.static:
            self._mark_ready(g)

        if self.policy in _COUPLED:
            self._drain_prefill()
            return
        if self.policy == GF_WSP:
            self._drain_prefill()
        if self._free_decode_slots(g) > 0:
            nxt = self._pull_decode(g)
            if nxt is not None:
                self._dequeue_accounting(nxt)
                self._place_decode(nxt, g)

    def _on_prefill_abandon(self, job, gen):
        if job.phase != _QP or job.qgen != gen:
            return
        i = job.cls
        job.phase = _GONE
        self._adv(i)
        self.qp_count[i] -= 1
        self.cnt_bp[i] += 1

    def _on_decode_abandon(self, job, gen):
        if job.phase != _QD or job.qgen != gen:
            return
        i = job.cls
        job.phase = _GONE
        self._adv(i)
        self.qd_count[i] -= 1
        self.cnt_bd[i] += 1
        if job.pool >= 0:
            self.pool_count[job.pool][i] -= 1
            job.pool = -1

    # ---- audits -------------------------------------------------------------

    def _audit(self):
        for i in range(self.ncls):
            assert self.qp_count[i] == self.cnt_a[i] - self.cnt_up[i] - self.cnt_bp[i]
            assert self.x_cnt[i] == self.cnt_up[i] - self.cnt_sp[i]
            assert (
                self.qd_count[i]
                == self.cnt_sp[i] - self.cnt_udm[i] - self.cnt_uds[i] - self.cnt_bd[i]
            )
            assert (
                self.ym_cnt[i]
                == self.cnt_udm[i] - self.cnt_sdm[i] + self.cnt_msm[i] - self.cnt_mms[i]
            )
            assert (
                self.ys_cnt[i]
                == self.cnt_uds[i] - self.cnt_sds[i] + self.cnt_mms[i] - self.cnt_msm[i]
            )
        for g in range(self.n):
            active = self.g_active[g] is not None
            cap = self.d_cap[g] - (1 if (not self.static and active) else 0)
            assert len(self.g_decodes[g]) <= cap
        assert sum(1 for a in self.g_active if a is not None) <= self.n

    # ---- main loop ---------------------------------------------------------

    def run(self) -> MetricsRecord:
        horizon = self.horizon
        heap = self.heap
        while heap:
            t, _, code, a, b = heappop(heap)
            if t > horizon:
                break
            self.t = t
            if code == _DDONE:
                self._on_decode_done(a, b)
            elif code == _ARR:
                self._on_arrival(a)
            elif code == _PDONE:
                self._on_prefill_done(a)
            elif code == _PABN:
                self._on_prefill_abandon(a, b)
            elif code == _DABN:
                self._on_decode_abandon(a, b)
            else:
                self._snapshot()
            if self.audit:
                self._audit()

        self.t = horizon
        for i in range(self.ncls):
            self._adv(i)
        return self._finalize()

    def _snapshot(self):
        for i in range(self.ncls):
            self._adv(i)
        self.snap = (
            [list(self.acc_x), list(self.acc_ym), list(self.acc_ys),
             list(self.acc_qp), list(self.acc_qd)],
            [list(self.cnt_sp), list(self.cnt_sdm), list(self.cnt_sds),
             list(self.cnt_a), list(self.cnt_bp), list(self.cnt_bd)],
        )

    def _finalize(self) -> MetricsRecord:
        if self.snap is None:
            self._snapshot()
        accs, counts = self.snap
        window = self.horizon - self.t_window
        nw = self.n * window
        arr = lambda cur, old: np.array([c - o for c, o in zip(cur, old)], dtype=float)
        d_x = arr(self.acc_x, accs[0])
        d_ym = arr(self.acc_ym, accs[1])
        d_ys = arr(self.acc_ys, accs[2])
        d_qp = arr(self.acc_qp, accs[3])
        d_qd = arr(self.acc_qd, accs[4])
        d_sp = arr(self.cnt_sp, counts[0])
        d_sd = arr(self.cnt_sdm, counts[1]) + arr(self.cnt_sds, counts[2])
        d_a = arr(self.cnt_a, counts[3])
        d_bp = arr(self.cnt_bp, counts[4])
        d_bd = arr(self.cnt_bd, counts[5])

        revenue = revenue_accrue(self.inst, d_sp, d_sd, self.n, window)
        tpot = np.array(
            [
                self.tpot_dur[i] / self.tpot_tok[i] if self.tpot_tok[i] > 0 else np.nan
                for i in range(self.ncls)
            ]
        )
        return MetricsRecord(
            policy=self.policy,
            n=self.n,
            seed=0,
            horizon=self.horizon,
            warmup=self.t_window / self.horizon if self.horizon else 0.0,
            revenue_per_gpu=revenue,
            x_occ=d_x / nw,
            ym_occ=d_ym / nw,
            ys_occ=d_ys / nw,
            qp_scaled=d_qp / nw,
            qd_scaled=d_qd / nw,
            tpot=tpot,
            arrivals=d_a,
            prefill_completions=d_sp,
            decode_completions=d_sd,
            prefill_abandons=d_bp,
            decode_abandons=d_bd,
        )


def default_horizon(inst: Instance, decode_means: float = 20.0, warmup: float = 0.3) -> float:
    """Horizon such that the post-warmup window covers the given number of the
    slowest class's mean mixed-decode times."""
    rates = derive_rates(inst)
    window = decode_means / float(np.min(rates.mu_m))
    return window / (1.0 - warmup)


def run(
    inst: Instance,
    n: int,
    policy: str,
    plan: FluidPlan | None = None,
    params: PolicyParams | None = None,
    horizon: float | None = None,
    warmup: float = 0.3,
    seed: int = 0,
    audit: bool = False,
    self_test: bool = False,
) -> MetricsRecord:
    """Simulate one replication and return its windowed metrics.

    ``params`` can be passed directly (e.g. hand-built targets for validation
    runs); otherwise they are derived from ``plan``. Policies without static
    planning or a gate (fi-wsp) run plan-free.
    """
    if n < 1:
        raise ValueError("need at least one GPU")
    if params is None and plan is not None:
        params = derive_policy_params(plan, n, inst)
    if horizon is None:
        horizon = default_horizon(inst, warmup=warmup)
    if horizon <= 0 or not (0.0 <= warmup < 1.0):
        raise ValueError("need horizon > 0 and warmup in [0, 1)")

    def one() -> MetricsRecord:
        rec = _Sim(inst, n, policy, params, horizon, warmup, seed, audit=audit).run()
        rec.seed = seed
        return rec

    rec = one()
    if self_test:
        if not rec.equals(one()):
            raise NondeterminismGuard("replay with the same seed diverged")
    return rec
