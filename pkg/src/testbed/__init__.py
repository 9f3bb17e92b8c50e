"""Self-contained IoT experimentation testbed.

Four layers in one package: deterministic sensor simulators publish over an
embedded MQTT-subset broker, a bridge persists every message into a
partitioned replayable event log, a store materializes time-series
aggregates, and a gateway serves the query API plus live-update ticks for
the dashboard.
"""

__version__ = "0.1.0"
