import json

import numpy as np
import pytest

from infersched import harness, planner
from infersched.harness import ExperimentSpec, run_experiment
from infersched.model import Instance

from conftest import make_reference_instance


@pytest.fixture(scope="module")
def inst():
    return make_reference_instance()


def small_convergence_spec(inst):
    return ExperimentSpec(
        kind=harness.CONVERGENCE,
        instance=inst,
        n_list=(5, 20),
        seeds=(0, 1),
        horizon=60.0,
        warmup=0.3,
        scheme="separate",
    )


class TestSpecs:
    def test_duplicate_seeds_rejected(self, inst):
        with pytest.raises(ValueError):
            ExperimentSpec(kind=harness.CONVERGENCE, instance=inst, seeds=(1, 1))

    def test_unknown_kind_rejected(self, inst):
        with pytest.raises(ValueError):
            ExperimentSpec(kind="ablation", instance=inst)

    def test_spec_json_round_trip(self, inst, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(
            json.dumps(
                {
                    "kind": "frontier",
                    "instance": inst.to_dict(),
                    "axis": "tpot",
                    "grid": [0.03, 0.04],
                    "scheme": "bundled",
                }
            )
        )
        spec = ExperimentSpec.from_json(path)
        assert spec.kind == "frontier"
        assert spec.grid == (0.03, 0.04)
        assert spec.instance == Instance.from_dict(inst.to_dict())

    def test_spec_with_instance_path(self, inst, tmp_path):
        inst.to_json(tmp_path / "inst.json")
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"kind": "pricing", "instance": "inst.json"}))
        spec = ExperimentSpec.from_json(path)
        assert spec.instance.num_classes == 2


class TestConvergence:
    def test_reference_row_carries_fluid_optimum(self, inst, tmp_path):
        table = harness.run_convergence(small_convergence_spec(inst))
        plan = planner.plan_instance(inst, scheme="separate")
        refs = [r for r in table.rows if r["policy"] == "fluid-reference"]
        assert len(refs) == inst.num_classes
        assert refs[0]["rev_per_gpu"] == pytest.approx(plan.objective)
        assert refs[0]["x_occ"] == pytest.approx(float(plan.x[0]))

    def test_byte_identical_reruns(self, inst, tmp_path):
        spec = small_convergence_spec(inst)
        p1 = run_experiment(spec, tmp_path / "a")
        p2 = run_experiment(spec, tmp_path / "b")
        assert p1.read_bytes() == p2.read_bytes()
        m1 = (tmp_path / "a" / "manifest.json").read_bytes()
        m2 = (tmp_path / "b" / "manifest.json").read_bytes()
        assert m1 == m2

    def test_manifest_covers_every_output(self, inst, tmp_path):
        out = tmp_path / "out"
        run_experiment(small_convergence_spec(inst), out)
        manifest = json.loads((out / "manifest.json").read_text())
        outputs = {p.name for p in out.iterdir() if p.name != "manifest.json"}
        assert outputs == set(manifest)
        for entry in manifest.values():
            assert entry["tool_version"]
            assert entry["instance_sha256"] == inst.content_hash()


class TestBaselines:
    def test_single_policy_normalizes_to_one(self, inst):
        spec = ExperimentSpec(
            kind=harness.BASELINES,
            instance=inst,
            n_list=(10,),
            seeds=(0, 1),
            policies=("gg-sp",),
            horizon=60.0,
        )
        table = harness.run_baselines(spec)
        norm = [r for r in table.rows if r["metric"] == "normalized_revenue"]
        assert len(norm) == 1
        assert norm[0]["value"] == pytest.approx(1.0)

    def test_per_seed_rows_retained(self, inst):
        spec = ExperimentSpec(
            kind=harness.BASELINES,
            instance=inst,
            n_list=(10,),
            seeds=(0, 1, 2),
            policies=("gg-sp", "fi-wsp"),
            horizon=60.0,
        )
        table = harness.run_baselines(spec)
        per_seed = [r for r in table.rows if r["metric"] == "rev_per_gpu"]
        assert len(per_seed) == 6


class TestFrontierTable:
    def test_infeasible_points_are_recorded(self, inst):
        spec = ExperimentSpec(
            kind=harness.FRONTIER,
            instance=inst,
            axis="tpot",
            grid=(0.02, 0.03),
            scheme="bundled",
        )
        table = harness.run_frontier(spec)
        assert table.rows[0]["feasible"] is False
        assert table.rows[0]["objective"] is None
        assert table.rows[1]["feasible"] is True

    def test_csv_columns(self, inst, tmp_path):
        spec = ExperimentSpec(
            kind=harness.FRONTIER, instance=inst, axis="tpot",
            grid=(0.03,), scheme="bundled",
        )
        path = run_experiment(spec, tmp_path)
        header = path.read_text().splitlines()[0]
        assert header == "experiment,axis,eta,objective,feasible,shadow_price"


class TestHardwareSweep:
    def test_batch_cap_axis_monotone(self, inst):
        spec = ExperimentSpec(
            kind=harness.HARDWARE, instance=inst, b_grid=(4, 8, 16), scheme="separate"
        )
        table = harness.run_hardware_sweep(spec)
        objs = [r["objective"] for r in table.rows if r["axis"] == "B"]
        assert objs == sorted(objs)

    def test_requires_a_grid(self, inst):
        with pytest.raises(ValueError):
            harness.run_hardware_sweep(
                ExperimentSpec(kind=harness.HARDWARE, instance=inst)
            )

    def test_marginal_cost_axis_decreasing(self, inst):
        spec = ExperimentSpec(
            kind=harness.HARDWARE, instance=inst,
            beta_grid=(2e-5, 2e-4), scheme="separate",
        )
        rows = harness.run_hardware_sweep(spec).rows
        assert rows[0]["objective"] > rows[1]["objective"]


class TestPricingGrid:
    def test_argmax_marked_once_per_total(self, inst):
        spec = ExperimentSpec(
            kind=harness.PRICING, instance=inst, k_list=(0.1, 1.0),
            ratio_points=9, scheme="separate",
        )
        table = harness.run_pricing_grid(spec)
        for k in (0.1, 1.0):
            marks = [r for r in table.rows if r["k"] == k and r["argmax"]]
            assert len(marks) == 1

    def test_objective_scales_linearly_with_total_price(self, inst):
        spec = ExperimentSpec(
            kind=harness.PRICING, instance=inst, k_list=(0.1, 1.0),
            ratio_points=5, scheme="separate",
        )
        rows = harness.run_pricing_grid(spec).rows
        small = {r["grid_index"]: r["objective"] for r in rows if r["k"] == 0.1}
        big = {r["grid_index"]: r["objective"] for r in rows if r["k"] == 1.0}
        for idx, val in small.items():
            assert big[idx] == pytest.approx(10.0 * val, rel=1e-9)


class TestFluidTraceExperiment:
    def test_trace_diagnostics(self, inst, tmp_path):
        spec = ExperimentSpec(
            kind=harness.FLUID_TRACE, instance=inst, scheme="bundled",
            fluid_horizon=50.0, fluid_dt=0.01,
        )
        path = run_experiment(spec, tmp_path)
        rows = path.read_text().splitlines()
        assert any("prefill_gap" in r for r in rows)
        assert (tmp_path / "fluid_trace.csv").exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert "fluid-trace.csv" in manifest
