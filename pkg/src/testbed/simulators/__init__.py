"""Deterministic, seeded generators for the traffic and smart-lighting use
cases; each publishes to the broker as an MQTT client."""

from testbed.simulators.lighting import LightingSimConfig, LightingState, lighting_step
from testbed.simulators.rng import LambdaTooLarge, Rng, poisson_sample, rng_next
from testbed.simulators.traffic import TrafficSimConfig, traffic_tick

__all__ = [
    "LambdaTooLarge",
    "LightingSimConfig",
    "LightingState",
    "Rng",
    "TrafficSimConfig",
    "lighting_step",
    "poisson_sample",
    "rng_next",
    "traffic_tick",
]
