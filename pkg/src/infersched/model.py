"""Domain types and rate arithmetic shared by the planner, fluid integrator
and discrete-event simulator.

A cluster instance is described by request classes (prompt/output lengths,
arrival and patience rates), a GPU iteration-time law, and a pricing scheme.
All service rates used elsewhere in the package are derived here.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

BUNDLED = "bundled"
SEPARATE = "separate"
SCHEMES = (BUNDLED, SEPARATE)


@dataclass(frozen=True)
class WorkloadClass:
    """One request class: token lengths plus arrival/patience rates (per GPU)."""

    prompt_len: float
    decode_len: float
    arrival_rate: float
    patience_rate: float
    class_id: int = 0

    def __post_init__(self):
        if self.prompt_len <= 0:
            raise ValueError(f"prompt_len must be > 0, got {self.prompt_len}")
        if self.decode_len <= 0:
            raise ValueError(f"decode_len must be > 0, got {self.decode_len}")
        # arrival_rate == 0 is accepted so that no-inflow corner cases remain
        # expressible; everything downstream degrades gracefully to zero flow.
        if self.arrival_rate < 0:
            raise ValueError(f"arrival_rate must be >= 0, got {self.arrival_rate}")
        if self.patience_rate < 0:
            raise ValueError(f"patience_rate must be >= 0, got {self.patience_rate}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")


@dataclass(frozen=True)
class HardwareProfile:
    """GPU iteration-time law and batching limits.

    An iteration that advances ``b_eff`` effective tokens takes
    ``fixed_overhead + marginal_cost * max(0, b_eff - threshold)`` seconds.
    ``solo_rate`` is the calibrated per-slot token speed of a decode-only GPU;
    it is an independent measurement and is not required to equal
    ``1 / fixed_overhead``.
    """

    batch_cap: int
    chunk_size: float
    fixed_overhead: float
    marginal_cost: float
    threshold: float = 0.0
    solo_rate: float = 1.0

    def __post_init__(self):
        if int(self.batch_cap) != self.batch_cap or self.batch_cap < 2:
            raise ValueError(f"batch_cap must be an integer >= 2, got {self.batch_cap}")
        if self.chunk_size <= 0:
            raise ValueError(f"chunk_size must be > 0, got {self.chunk_size}")
        if self.fixed_overhead <= 0:
            raise ValueError(f"fixed_overhead must be > 0, got {self.fixed_overhead}")
        # marginal_cost == 0 is the degenerate constant-time law produced by a
        # flat calibration fit; it is accepted as long as iteration times stay
        # positive.
        if self.marginal_cost < 0:
            raise ValueError(f"marginal_cost must be >= 0, got {self.marginal_cost}")
        if self.threshold < 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if self.solo_rate <= 0:
            raise ValueError(f"solo_rate must be > 0, got {self.solo_rate}")
        if self.mixed_iteration_time <= 0:
            raise ValueError(
                "mixed iteration time alpha + beta * chunk_size must be > 0, "
                f"got {self.mixed_iteration_time}"
            )

    @property
    def alpha(self) -> float:
        """Intercept of the mixed-iteration line: fixed_overhead - marginal_cost * threshold."""
        return self.fixed_overhead - self.marginal_cost * self.threshold

    @property
    def beta(self) -> float:
        """Slope of the mixed-iteration line (seconds per token)."""
        return self.marginal_cost

    @property
    def mixed_iteration_time(self) -> float:
        """Iteration time when a full prefill chunk is present."""
        return self.alpha + self.beta * self.chunk_size

    @property
    def solo_iteration_time(self) -> float:
        return 1.0 / self.solo_rate


@dataclass(frozen=True)
class Pricing:
    """Per-token prices and the revenue-recognition scheme."""

    prefill_price: float
    decode_price: float
    scheme: str = BUNDLED

    def __post_init__(self):
        if self.prefill_price < 0 or self.decode_price < 0:
            raise ValueError("token prices must be >= 0")
        if self.prefill_price == 0 and self.decode_price == 0:
            raise ValueError("at least one token price must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")

    def bundled_reward(self, cls: WorkloadClass) -> float:
        """Full-request value: prefill_price * P + decode_price * D."""
        return self.prefill_price * cls.prompt_len + self.decode_price * cls.decode_len


@dataclass(frozen=True)
class ServiceRates:
    """Per-class service rates: prefill, mixed decode and solo decode."""

    mu_p: np.ndarray
    mu_m: np.ndarray
    mu_s: np.ndarray

    @property
    def solo_to_mixed_ratio(self) -> float:
        """Class-independent speedup mu_s / mu_m (equals solo_rate * tau_mix)."""
        return float(self.mu_s[0] / self.mu_m[0])


@dataclass(frozen=True)
class Instance:
    """A complete problem instance: classes, hardware and pricing."""

    classes: tuple[WorkloadClass, ...]
    hardware: HardwareProfile
    pricing: Pricing

    def __post_init__(self):
        if not self.classes:
            raise ValueError("instance needs at least one class")
        ids = [c.class_id for c in self.classes]
        if ids != list(range(len(self.classes))):
            raise ValueError(f"class_ids must be 0..{len(self.classes) - 1} in order, got {ids}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def rewards(self) -> np.ndarray:
        """Bundled per-completion value for every class."""
        return np.array([self.pricing.bundled_reward(c) for c in self.classes])

    def arrival_rates(self) -> np.ndarray:
        return np.array([c.arrival_rate for c in self.classes])

    def patience_rates(self) -> np.ndarray:
        return np.array([c.patience_rate for c in self.classes])

    def with_hardware(self, **changes) -> "Instance":
        return replace(self, hardware=replace(self.hardware, **changes))

    def with_prices(self, prefill_price: float, decode_price: float) -> "Instance":
        return replace(
            self,
            pricing=replace(
                self.pricing, prefill_price=prefill_price, decode_price=decode_price
            ),
        )

    def to_dict(self) -> dict:
        # numeric fields are coerced so the canonical JSON (and its hash) does
        # not depend on whether callers passed ints or floats
        hw = self.hardware
        return {
            "classes": [
                {
                    "P": float(c.prompt_len),
                    "D": float(c.decode_len),
                    "lambda": float(c.arrival_rate),
                    "theta": float(c.patience_rate),
                }
                for c in self.classes
            ],
            "hardware": {
                "B": int(hw.batch_cap),
                "C": float(hw.chunk_size),
                "c": float(hw.fixed_overhead),
                "a": float(hw.marginal_cost),
                "b0": float(hw.threshold),
                "gamma": float(hw.solo_rate),
            },
            "pricing": {
                "cp": float(self.pricing.prefill_price),
                "cd": float(self.pricing.decode_price),
                "scheme": self.pricing.scheme,
            },
        }

    @staticmethod
    def from_dict(data: dict) -> "Instance":
        classes = tuple(
            WorkloadClass(
                prompt_len=float(c["P"]),
                decode_len=float(c["D"]),
                arrival_rate=float(c["lambda"]),
                patience_rate=float(c["theta"]),
                class_id=i,
            )
            for i, c in enumerate(data["classes"])
        )
        hw = data["hardware"]
        hardware = HardwareProfile(
            batch_cap=int(hw["B"]),
            chunk_size=float(hw["C"]),
            fixed_overhead=float(hw["c"]),
            marginal_cost=float(hw["a"]),
            threshold=float(hw.get("b0", 0.0)),
            solo_rate=float(hw["gamma"]),
        )
        pr = data["pricing"]
        pricing = Pricing(
            prefill_price=float(pr["cp"]),
            decode_price=float(pr["cd"]),
            scheme=str(pr["scheme"]).lower(),
        )
        return Instance(classes=classes, hardware=hardware, pricing=pricing)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @staticmethod
    def from_json(path) -> "Instance":
        with open(path) as fh:
            return Instance.from_dict(json.load(fh))

    def content_hash(self) -> str:
        """sha256 of the canonical JSON form, used in result manifests."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def iteration_time(effective_tokens: float, hw: HardwareProfile) -> float:
    """Seconds for one GPU iteration processing ``effective_tokens`` tokens."""
    if effective_tokens < 0:
        raise ValueError("effective token count must be >= 0")
    return hw.fixed_overhead + hw.marginal_cost * max(0.0, effective_tokens - hw.threshold)


def derive_rates(inst: Instance) -> ServiceRates:
    """Per-class completion rates implied by the iteration-time law.

    Prefill advances one chunk per mixed iteration, mixed decode one token per
    mixed iteration, and solo decode runs at the calibrated per-slot speed.
    """
    hw = inst.hardware
    tau = hw.mixed_iteration_time
    p = np.array([c.prompt_len for c in inst.classes])
    d = np.array([c.decode_len for c in inst.classes])
    return ServiceRates(
        mu_p=hw.chunk_size / (p * tau),
        mu_m=1.0 / (d * tau),
        mu_s=hw.solo_rate / d,
    )


def solo_efficiency_condition(inst: Instance) -> bool:
    """True when solo decode is fast enough that holding completed prefills in
    a decode queue can never help a steady-state plan.

    The test is ``solo_rate * tau_mix >= (B - 1) / B``: one solo slot must be
    worth at least a mixed slot after accounting for the reserved prefill slot.
    """
    hw = inst.hardware
    return hw.solo_rate * hw.mixed_iteration_time >= (hw.batch_cap - 1) / hw.batch_cap
