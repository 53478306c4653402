"""Deterministic synthetic stream generators.

The heavy-tail generator places a configurable mass uniformly in a body
range and the rest uniformly in a tail range, emulating the skewed regime
where most readings sit far below the public upper bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidParameterError
from ..rng import RandomSource

_STREAM_SYNTH = 77


@dataclass(frozen=True)
class SynthSpec:
    """Which synthetic distribution to draw.

    kinds:
        constant(value) -- every reading equals ``value``.
        uniform(low, high) -- iid uniform readings.
        heavy_tail(body_mass, body_max, tail_max) -- ``body_mass`` fraction
            uniform on [0, body_max], remainder uniform on (body_max, tail_max].
    """

    kind: str
    params: tuple

    @classmethod
    def constant(cls, value: float) -> "SynthSpec":
        return cls("constant", (float(value),))

    @classmethod
    def uniform(cls, low: float, high: float) -> "SynthSpec":
        return cls("uniform", (float(low), float(high)))

    @classmethod
    def heavy_tail(cls, body_mass: float, body_max: float, tail_max: float) -> "SynthSpec":
        return cls("heavy_tail", (float(body_mass), float(body_max), float(tail_max)))

    @classmethod
    def parse(cls, kind: str, params) -> "SynthSpec":
        expected = {"constant": 1, "uniform": 2, "heavy_tail": 3}
        if kind not in expected:
            raise InvalidParameterError(f"unknown synthetic kind {kind!r}")
        params = tuple(float(p) for p in params)
        if len(params) != expected[kind]:
            raise InvalidParameterError(
                f"{kind} takes {expected[kind]} parameter(s), got {len(params)}"
            )
        return cls(kind, params)

    def validate(self) -> None:
        if self.kind == "constant":
            if self.params[0] < 0:
                raise InvalidParameterError("constant value must be >= 0")
        elif self.kind == "uniform":
            low, high = self.params
            if not 0 <= low <= high:
                raise InvalidParameterError("need 0 <= low <= high")
        elif self.kind == "heavy_tail":
            body_mass, body_max, tail_max = self.params
            if not 0 < body_mass <= 1:
                raise InvalidParameterError("body mass must be in (0, 1]")
            if not 0 < body_max < tail_max:
                raise InvalidParameterError("need 0 < body_max < tail_max")
        else:
            raise InvalidParameterError(f"unknown synthetic kind {self.kind!r}")


def gen_synthetic(spec: SynthSpec, n: int, seed: int) -> np.ndarray:
    """Draw a deterministic stream for (spec, seed)."""
    spec.validate()
    if n < 0:
        raise InvalidParameterError("n must be >= 0")
    rng = RandomSource(seed, _STREAM_SYNTH)
    if spec.kind == "constant":
        return np.full(n, spec.params[0])
    if spec.kind == "uniform":
        low, high = spec.params
        return low + (high - low) * rng.uniform(n)
    body_mass, body_max, tail_max = spec.params
    in_body = rng.uniform(n) < body_mass
    u = rng.uniform(n)
    body = u * body_max
    tail = body_max + u * (tail_max - body_max)
    return np.where(in_body, body, tail)
