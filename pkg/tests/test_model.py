import numpy as np
import pytest

from infersched.model import (
    HardwareProfile,
    Instance,
    Pricing,
    WorkloadClass,
    derive_rates,
    iteration_time,
    solo_efficiency_condition,
)

from conftest import assert_close, make_reference_instance


def hw(c=0.0174, a=6.2e-5, b0=0.0, B=16, C=256, gamma=45.45):
    return HardwareProfile(
        batch_cap=B, chunk_size=C, fixed_overhead=c, marginal_cost=a,
        threshold=b0, solo_rate=gamma,
    )


class TestIterationTime:
    def test_below_threshold_is_pure_overhead(self):
        profile = hw(c=0.02, a=1e-4, b0=32)
        assert iteration_time(0.0, profile) == 0.02
        assert iteration_time(31.9, profile) == 0.02

    def test_calibrated_mixed_iteration(self):
        assert_close(iteration_time(256, hw()), 0.0174 + 6.2e-5 * 256, rel=1e-12)
        small = hw(c=0.0152, a=3.6e-5)
        assert_close(iteration_time(256, small), 0.0152 + 3.6e-5 * 256, rel=1e-12)

    def test_piecewise_linear_slopes(self):
        profile = hw(c=0.02, a=1e-4, b0=100)
        pts = np.linspace(0, 400, 161)
        vals = np.array([iteration_time(float(b), profile) for b in pts])
        d = np.diff(vals) / np.diff(pts)
        below = pts[1:] <= 100
        assert np.allclose(d[below], 0.0, atol=1e-15)
        assert np.allclose(d[pts[1:] > 102.5], 1e-4, rtol=1e-9)
        assert np.all(np.diff(vals) >= -1e-18)

    def test_negative_tokens_rejected(self):
        with pytest.raises(ValueError):
            iteration_time(-1.0, hw())


class TestDeriveRates:
    def test_reference_class0(self):
        rates = derive_rates(make_reference_instance())
        tau = 0.0174 + 6.2e-5 * 256
        assert_close(rates.mu_p[0], 256 / (300 * tau))
        assert_close(rates.mu_m[0], 1 / (1000 * tau))
        assert_close(rates.mu_s[0], 45.45 / 1000)

    def test_reference_class1(self):
        rates = derive_rates(make_reference_instance())
        tau = 0.0174 + 6.2e-5 * 256
        assert_close(rates.mu_p[1], 256 / (3000 * tau))
        assert_close(rates.mu_m[1], 1 / (400 * tau))
        assert_close(rates.mu_s[1], 45.45 / 400)

    def test_unit_normalization(self):
        # P = C, D = 1, tau = 1, gamma = 1 collapses every rate to 1
        inst = Instance(
            classes=(WorkloadClass(10, 1, 0.1, 0.1, 0),),
            hardware=hw(c=0.5, a=0.05, b0=0, C=10, B=4, gamma=1.0),
            pricing=Pricing(0.1, 0.1),
        )
        rates = derive_rates(inst)
        assert_close([rates.mu_p[0], rates.mu_m[0], rates.mu_s[0]], [1, 1, 1], rel=1e-12)

    def test_mode_ratio_is_class_independent(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            classes = tuple(
                WorkloadClass(rng.uniform(50, 4000), rng.uniform(50, 4000), 0.3, 0.1, i)
                for i in range(4)
            )
            inst = Instance(classes=classes, hardware=hw(), pricing=Pricing(0.1, 0.2))
            rates = derive_rates(inst)
            ratios = rates.mu_s / rates.mu_m
            assert np.max(np.abs(ratios - ratios[0])) <= 1e-12 * ratios[0]

    def test_prefill_rate_scale_invariance(self):
        # doubling both the prompt and the chunk preserves mu_p * tau * P / C = 1
        inst = make_reference_instance()
        for scale in (1.0, 2.0):
            scaled = Instance(
                classes=tuple(
                    WorkloadClass(c.prompt_len * scale, c.decode_len, c.arrival_rate,
                                  c.patience_rate, c.class_id)
                    for c in inst.classes
                ),
                hardware=hw(C=256 * scale),
                pricing=inst.pricing,
            )
            rates = derive_rates(scaled)
            tau = scaled.hardware.mixed_iteration_time
            for i, cls in enumerate(scaled.classes):
                assert_close(
                    rates.mu_p[i] * tau * cls.prompt_len / scaled.hardware.chunk_size, 1.0
                )


class TestSoloEfficiencyCondition:
    def test_reference_holds(self):
        assert solo_efficiency_condition(make_reference_instance())

    def test_boundary_inclusive(self):
        # flat iteration law gives tau = 1 exactly, so gamma * tau == (B-1)/B
        inst = Instance(
            classes=(WorkloadClass(100, 100, 0.1, 0.1, 0),),
            hardware=hw(c=1.0, a=0.0, b0=0, C=1, B=2, gamma=0.5),
            pricing=Pricing(0.1, 0.1),
        )
        assert inst.hardware.solo_rate * inst.hardware.mixed_iteration_time == 0.5
        assert solo_efficiency_condition(inst)

    def test_slow_solo_fails(self):
        inst = Instance(
            classes=(WorkloadClass(100, 100, 0.1, 0.1, 0),),
            hardware=hw(c=1.0, a=1e-9, b0=0, C=1, B=16, gamma=0.1),
            pricing=Pricing(0.1, 0.1),
        )
        assert not solo_efficiency_condition(inst)


class TestValidationAndSerialization:
    def test_field_invariants(self):
        with pytest.raises(ValueError):
            WorkloadClass(0, 10, 0.1, 0.1, 0)
        with pytest.raises(ValueError):
            WorkloadClass(10, -1, 0.1, 0.1, 0)
        with pytest.raises(ValueError):
            WorkloadClass(10, 10, -0.1, 0.1, 0)
        with pytest.raises(ValueError):
            hw(B=1)
        with pytest.raises(ValueError):
            hw(gamma=0.0)
        with pytest.raises(ValueError):
            Pricing(0.0, 0.0)
        with pytest.raises(ValueError):
            Pricing(0.1, 0.1, scheme="prepaid")

    def test_zero_arrival_rate_allowed(self):
        WorkloadClass(10, 10, 0.0, 0.1, 0)

    def test_class_ids_must_be_dense(self):
        with pytest.raises(ValueError):
            Instance(
                classes=(WorkloadClass(10, 10, 0.1, 0.1, 1),),
                hardware=hw(),
                pricing=Pricing(0.1, 0.1),
            )

    def test_json_round_trip(self, tmp_path):
        inst = make_reference_instance()
        path = tmp_path / "inst.json"
        inst.to_json(path)
        back = Instance.from_json(path)
        assert back == inst
        assert back.content_hash() == inst.content_hash()

    def test_json_field_names(self, tmp_path):
        data = make_reference_instance().to_dict()
        assert set(data["classes"][0]) == {"P", "D", "lambda", "theta"}
        assert set(data["hardware"]) == {"B", "C", "c", "a", "b0", "gamma"}
        assert set(data["pricing"]) == {"cp", "cd", "scheme"}

    def test_bundled_reward(self):
        pricing = Pricing(0.1, 0.2)
        assert pricing.bundled_reward(WorkloadClass(300, 1000, 0.5, 0.1, 0)) == pytest.approx(230.0)
