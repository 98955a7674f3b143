"""Behavioral comparisons between scheduling policies.

These runs are sized for CI speed (small clusters, mid-length horizons); the
full-scale orderings live in the acceptance suite.
"""

import dataclasses

import numpy as np
import pytest

from infersched import planner, simulator
from infersched.model import HardwareProfile, Instance, Pricing, WorkloadClass
from infersched.planner import eliminate_decode_buffer, plan_instance

from conftest import make_reference_instance


def mean_rev(inst, n, policy, plan, seeds, horizon=400.0, warmup=0.4):
    return float(
        np.mean(
            [
                simulator.run(
                    inst, n, policy, plan=plan, horizon=horizon, warmup=warmup, seed=s
                ).revenue_per_gpu
                for s in seeds
            ]
        )
    )


@pytest.fixture(scope="module")
def contended_instance():
    """Decode-bound workload with an expensive mixed mode; admission mix and
    routing decisions move revenue by tens of percent here."""
    return Instance(
        classes=(
            WorkloadClass(1500, 500, 0.5, 0.25, 0),
            WorkloadClass(2000, 250, 0.5, 0.25, 1),
        ),
        hardware=HardwareProfile(
            batch_cap=8, chunk_size=256, fixed_overhead=0.10,
            marginal_cost=6.2e-5, threshold=0.0, solo_rate=45.45,
        ),
        pricing=Pricing(0.1, 0.2, "bundled"),
    )


@pytest.fixture(scope="module")
def contended_plan(contended_instance):
    return eliminate_decode_buffer(
        plan_instance(contended_instance, scheme="bundled"), contended_instance
    )


def test_admission_gate_beats_blind_fcfs_under_static_planning(
    contended_instance, contended_plan
):
    seeds = (0, 1, 2)
    gated = mean_rev(contended_instance, 60, "gg-sp", contended_plan, seeds)
    blind = mean_rev(contended_instance, 60, "fg-sp", contended_plan, seeds)
    assert gated > blind * 1.05


def test_decode_first_routing_beats_prefill_first(contended_instance, contended_plan):
    seeds = (0, 1, 2)
    decode_first = mean_rev(contended_instance, 60, "gg-sp", contended_plan, seeds)
    prefill_first = mean_rev(contended_instance, 60, "gf-wsp", contended_plan, seeds)
    assert decode_first > prefill_first * 1.2


def test_gate_improves_on_fcfs_in_coupled_architecture(contended_instance, contended_plan):
    seeds = (0, 1, 2)
    gated = mean_rev(contended_instance, 60, "gi-wsp", contended_plan, seeds)
    fcfs = mean_rev(contended_instance, 60, "fi-wsp", None, seeds)
    assert gated > fcfs * 1.02


def test_reference_instance_gate_improves_coupled_baseline():
    inst = make_reference_instance("bundled")
    plan = eliminate_decode_buffer(plan_instance(inst, scheme="bundled"), inst)
    seeds = (0, 1, 2)
    gated = mean_rev(inst, 100, "gi-wsp", plan, seeds, horizon=500.0)
    fcfs = mean_rev(inst, 100, "fi-wsp", None, seeds, horizon=500.0)
    assert gated > fcfs


def test_charging_scheme_moves_congestion_downstream():
    # value recognized per stage invites prefill greed: the decode buffer
    # swells while the prefill queue thins, and vice versa under
    # completion-based value
    sep = make_reference_instance("separate")
    bun = make_reference_instance("bundled")
    sep_plan = plan_instance(sep, scheme="separate")
    bun_plan = eliminate_decode_buffer(plan_instance(bun, scheme="bundled"), bun)
    seeds = (0, 1, 2)
    pr = [
        simulator.run(sep, 100, "prioritize", plan=sep_plan, horizon=600.0, warmup=0.5, seed=s)
        for s in seeds
    ]
    gg = [
        simulator.run(bun, 100, "gg-sp", plan=bun_plan, horizon=600.0, warmup=0.5, seed=s)
        for s in seeds
    ]
    qd_pr = np.mean([r.qd_scaled.sum() for r in pr])
    qd_gg = np.mean([r.qd_scaled.sum() for r in gg])
    qp_pr = np.mean([r.qp_scaled.sum() for r in pr])
    qp_gg = np.mean([r.qp_scaled.sum() for r in gg])
    assert qd_pr > qd_gg
    assert qp_gg > qp_pr


def test_priority_gate_prefers_high_decode_ratio_class():
    inst = make_reference_instance("separate")
    plan = plan_instance(inst, scheme="separate")
    rec = simulator.run(inst, 50, "prioritize", plan=plan, horizon=300.0, seed=0)
    # class 0 (ratio 3.33) is always admitted before class 1 (ratio 0.13),
    # so class-0 prefill abandonment stays near zero
    assert rec.prefill_abandons[0] <= rec.prefill_abandons[1]
