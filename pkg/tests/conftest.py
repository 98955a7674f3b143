import numpy as np
import pytest

from infersched.model import HardwareProfile, Instance, Pricing, WorkloadClass


def make_reference_instance(scheme: str = "separate") -> Instance:
    """Two-class calibrated workload used across the suite: one decode-heavy
    class and one prefill-heavy class on a 16-slot GPU profile."""
    return Instance(
        classes=(
            WorkloadClass(prompt_len=300, decode_len=1000, arrival_rate=0.5,
                          patience_rate=0.1, class_id=0),
            WorkloadClass(prompt_len=3000, decode_len=400, arrival_rate=0.5,
                          patience_rate=0.1, class_id=1),
        ),
        hardware=HardwareProfile(
            batch_cap=16, chunk_size=256, fixed_overhead=0.0174,
            marginal_cost=6.2e-5, threshold=0.0, solo_rate=45.45,
        ),
        pricing=Pricing(prefill_price=0.1, decode_price=0.2, scheme=scheme),
    )


@pytest.fixture(scope="session")
def ref_instance() -> Instance:
    return make_reference_instance()


@pytest.fixture(scope="session")
def ref_instance_bundled() -> Instance:
    return make_reference_instance("bundled")


def assert_close(actual, expected, rel=1e-9, abs_tol=0.0):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    tol = rel * np.maximum(np.abs(expected), 1e-300) + abs_tol
    assert np.all(np.abs(actual - expected) <= tol), f"{actual} !~ {expected}"
