"""Reproducible sampling keys and compensated accumulation.

Randomness is counter-based: a :class:`SampleKey` is a pure name for one
draw, and the generator it yields is a function of the key alone.  This lets
the same draw be evaluated at two different points by two different calls,
which the variance-reduced recursions require.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SampleKey:
    """Names one random draw: same (run_seed, draw_index), same draw."""

    run_seed: int
    draw_index: int


def derive_key(run_seed: int, draw_index: int) -> SampleKey:
    """Return the key for draw ``draw_index`` of the run seeded ``run_seed``."""
    if draw_index < 0:
        raise ValueError(f"draw_index must be non-negative, got {draw_index}")
    return SampleKey(int(run_seed), int(draw_index))


def key_rng(key: SampleKey) -> np.random.Generator:
    """Fresh generator for a key; never shares state with any other draw."""
    return np.random.default_rng((key.run_seed & _MASK64, key.draw_index))


@dataclass(frozen=True)
class CompensatedSum:
    """Neumaier running sum; error stays bounded regardless of term count."""

    total: float = 0.0
    compensation: float = 0.0

    @property
    def value(self) -> float:
        return self.total + self.compensation


def comp_add(acc: CompensatedSum, term: float) -> CompensatedSum:
    """Add ``term`` to the compensated accumulator, returning a new one."""
    term = float(term)
    t = acc.total + term
    if abs(acc.total) >= abs(term):
        comp = acc.compensation + ((acc.total - t) + term)
    else:
        comp = acc.compensation + ((term - t) + acc.total)
    return CompensatedSum(t, comp)


def sq_norm(v: np.ndarray) -> float:
    """Squared Euclidean norm as a Python float."""
    return float(v @ v)
