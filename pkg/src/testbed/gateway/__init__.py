"""HTTP query API and live-update push feeding the dashboard."""

from testbed.gateway.server import Gateway, StoreFollower

__all__ = ["Gateway", "StoreFollower"]
