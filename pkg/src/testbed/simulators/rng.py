"""splitmix64 RNG and Poisson sampling.

Pure 64-bit integer arithmetic so sequences are identical across platforms;
substreams are derived per (seed, sensor, minute) so any tick can be
regenerated in isolation.
"""

from __future__ import annotations

import math

from testbed.eventlog.log import fnv1a64

_U64 = (1 << 64) - 1

POISSON_LAMBDA_MAX = 1e4


class LambdaTooLarge(ValueError):
    pass


def rng_next(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _U64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return state, (z ^ (z >> 31)) & _U64


class Rng:
    """Stateful wrapper over the splitmix64 recurrence."""

    def __init__(self, seed: int):
        self.state = seed & _U64

    def next_u64(self) -> int:
        self.state, value = rng_next(self.state)
        return value

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def randrange(self, n: int) -> int:
        return self.next_u64() % n


def poisson_sample(rng: Rng, lam: float) -> int:
    """Knuth inversion: multiply uniforms until the product drops below
    e^-lambda. lambda = 0 returns 0 without consuming randomness."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam > POISSON_LAMBDA_MAX:
        raise LambdaTooLarge(f"lambda {lam} > {POISSON_LAMBDA_MAX}")
    if lam == 0:
        return 0
    threshold = math.exp(-lam)
    k = 0
    p = 1.0
    while True:
        p *= rng.uniform()
        if p < threshold:
            return k
        k += 1


def substream(seed: int, sensor_id: str, minute_epoch: int) -> Rng:
    """Independent stream for one (sensor, minute) cell:
    splitmix64 seeded with seed xor fnv1a64(sensor_id) xor minute_epoch."""
    return Rng(seed ^ fnv1a64(sensor_id.encode("utf-8")) ^ (minute_epoch & _U64))
