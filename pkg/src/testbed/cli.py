"""`testbed` command line: run any pipeline stage alone, or everything at
once with `demo`. Structured logs go to stderr as one JSON object per line;
command results (counts, reports) go to stdout.

Exit codes: 0 clean (including SIGINT shutdown of long-running commands),
1 runtime failure or failed verify, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
import time
from datetime import datetime, timezone
from pathlib import Path

from testbed import __version__
from testbed.broker.server import BrokerServer
from testbed.eventlog.bridge import Bridge
from testbed.eventlog.log import EventLog
from testbed.gateway.server import Gateway, StoreFollower
from testbed.model import MalformedPayload, parse_ts
from testbed.scenario import Scenario, ScenarioError, load_scenario
from testbed.simulators.publisher import (
    run_lighting_backfill,
    run_lighting_live,
    run_traffic_backfill,
    run_traffic_live,
)
from testbed.store import Store
from testbed.verify import run_verify

SNAPSHOT_NAME = "store-snapshot.json"


class JsonLogFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        doc = {
            "ts": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z",
            "stage": record.name.removeprefix("testbed."),
            "level": record.levelname.lower(),
            "msg": record.getMessage(),
        }
        if record.exc_info:
            doc["exc"] = self.formatException(record.exc_info)
        return json.dumps(doc, separators=(",", ":"))


class _StderrHandler(logging.StreamHandler):
    """Resolves sys.stderr at emit time (it gets swapped under pytest)."""

    def __init__(self):
        logging.Handler.__init__(self)

    @property
    def stream(self):
        return sys.stderr


def configure_logging(verbose: bool) -> None:
    handler = _StderrHandler()
    handler.setFormatter(JsonLogFormatter())
    root = logging.getLogger("testbed")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def install_sigint() -> threading.Event:
    stop = threading.Event()

    def handler(_signum, _frame):
        logging.getLogger("testbed.cli").info("SIGINT received, shutting down")
        stop.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    return stop


def parse_host_port(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="testbed", description=__doc__)
    parser.add_argument("--version", action="version", version=f"testbed {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("broker", help="run the MQTT-subset broker")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=1883)

    p = sub.add_parser("bridge", help="run the MQTT-to-log bridge")
    p.add_argument("--broker", type=parse_host_port, default=("127.0.0.1", 1883), metavar="HOST:PORT")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--partitions", type=int, default=4)

    p = sub.add_parser("sim", help="run a simulator publisher")
    p.add_argument("use_case", choices=["traffic", "lighting"])
    p.add_argument("--scenario", required=True)
    p.add_argument("--broker", type=parse_host_port, default=None, metavar="HOST:PORT")
    p.add_argument("--backfill", nargs=2, metavar=("FROM", "TO"), help="RFC-3339 UTC window")
    p.add_argument("--speedup", type=float, default=0.0, help="backfill pacing; 0 = max speed")

    p = sub.add_parser("ingest", help="run the log-to-store consumer")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--once", action="store_true", help="catch up, snapshot, exit")

    p = sub.add_parser("serve", help="serve the query API and dashboard")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--scenario", help="scenario file for sensor labels and power_w")
    p.add_argument("--static", help="directory of dashboard static files")

    p = sub.add_parser("demo", help="run all stages in one process")
    p.add_argument("--scenario", required=True)

    p = sub.add_parser("replay", help="reset the store group, rebuild, print row counts")
    p.add_argument("--data-dir", required=True)

    p = sub.add_parser("verify", help="headless end-to-end check; exit 0/1")
    p.add_argument("--scenario", required=True)
    p.add_argument("--minutes", type=int, default=60)
    p.add_argument("--fault-injection", action="store_true", help="restart the broker mid-run")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    log = logging.getLogger("testbed.cli")
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        log.error("configuration error: %s", exc)
        print(json.dumps({"error": "config", "message": str(exc)}))
        return 2
    except Exception:
        log.exception("%s failed", args.command)
        return 1


# ---------------------------------------------------------------- commands


def cmd_broker(args) -> int:
    stop = install_sigint()
    server = BrokerServer(host=args.host, port=args.port)
    server.start()
    stop.wait()
    server.stop()
    return 0


def cmd_bridge(args) -> int:
    stop = install_sigint()
    host, port = args.broker
    elog = EventLog(args.data_dir, default_partitions=args.partitions)
    bridge = Bridge(host, port, elog)
    thread = threading.Thread(target=bridge.run, name="bridge", daemon=True)
    thread.start()
    stop.wait()
    bridge.stop()
    thread.join(timeout=5)
    elog.close()
    return 0


def cmd_sim(args) -> int:
    stop = install_sigint()
    scenario = load_scenario(args.scenario)
    host, port = args.broker if args.broker else ("127.0.0.1", scenario.broker_port)
    cfg = scenario.traffic if args.use_case == "traffic" else scenario.lighting
    if cfg is None:
        raise ScenarioError(f"scenario has no {args.use_case} section")
    if args.backfill:
        try:
            start, end = parse_ts(args.backfill[0]), parse_ts(args.backfill[1])
        except MalformedPayload as exc:
            raise ScenarioError(f"--backfill: {exc}") from None
        if args.use_case == "traffic":
            acked = run_traffic_backfill(cfg, host, port, start, end, speedup=args.speedup, stop=stop)
        else:
            acked = run_lighting_backfill(cfg, host, port, start, end, speedup=args.speedup, stop=stop)
        print(json.dumps({"published": acked}))
        return 0
    if args.use_case == "traffic":
        run_traffic_live(cfg, host, port, stop)
    else:
        run_lighting_live(cfg, host, port, stop)
    return 0


def cmd_ingest(args) -> int:
    stop = install_sigint()
    data_dir = Path(args.data_dir)
    elog = EventLog(data_dir)
    store = Store()
    snapshot = data_dir / SNAPSHOT_NAME
    store.load_snapshot(snapshot)
    if args.once:
        processed = store.consume(elog)
        store.save_snapshot(snapshot)
        print(json.dumps({"processed": processed, "rows": store.row_counts()}))
        elog.close()
        return 0
    follower = StoreFollower(store, elog, snapshot_path=snapshot)
    follower.start()
    stop.wait()
    follower.stop()
    print(json.dumps({"rows": store.row_counts()}))
    elog.close()
    return 0


def cmd_serve(args) -> int:
    stop = install_sigint()
    data_dir = Path(args.data_dir)
    scenario = load_scenario(args.scenario) if args.scenario else Scenario()
    elog = EventLog(data_dir)
    store = Store(power_w=scenario.power_w)
    snapshot = data_dir / SNAPSHOT_NAME
    store.load_snapshot(snapshot)
    static = args.static or scenario.gateway_static
    gateway = Gateway(
        store,
        host=args.host,
        port=args.port,
        labels=scenario.sensor_labels(),
        static_dir=static,
    )
    gateway.start()
    follower = StoreFollower(store, elog, gateway=gateway, snapshot_path=snapshot)
    follower.start()
    stop.wait()
    follower.stop()
    gateway.stop()
    elog.close()
    return 0


def cmd_demo(args) -> int:
    stop = install_sigint()
    log = logging.getLogger("testbed.cli")
    scenario = load_scenario(args.scenario)
    if scenario.traffic is None and scenario.lighting is None:
        raise ScenarioError("demo needs at least one simulator section (traffic or lighting)")
    data_dir = Path(scenario.data_dir)

    server = BrokerServer(host="127.0.0.1", port=scenario.broker_port)
    server.start()
    elog = EventLog(data_dir, default_partitions=scenario.partitions)
    bridge = Bridge("127.0.0.1", server.port, elog)
    threads = [threading.Thread(target=bridge.run, name="bridge", daemon=True)]

    store = Store(power_w=scenario.power_w)
    snapshot = data_dir / SNAPSHOT_NAME
    store.load_snapshot(snapshot)
    gateway = Gateway(
        store,
        host="0.0.0.0",
        port=scenario.gateway_port,
        labels=scenario.sensor_labels(),
        static_dir=scenario.gateway_static,
    )
    gateway.start()
    follower = StoreFollower(store, elog, gateway=gateway, snapshot_path=snapshot)
    follower.start()

    if scenario.traffic is not None:
        threads.append(threading.Thread(target=_demo_traffic, args=(scenario, server.port, stop), name="sim-traffic", daemon=True))
    if scenario.lighting is not None:
        threads.append(threading.Thread(target=_demo_lighting, args=(scenario, server.port, stop), name="sim-lighting", daemon=True))
    for t in threads:
        t.start()
    log.info("demo up: broker :%d, gateway :%d, data %s", server.port, gateway.port, data_dir)

    stop.wait()
    bridge.stop()
    for t in threads:
        t.join(timeout=5)
    follower.stop()
    gateway.stop()
    server.stop()
    elog.close()
    return 0


def _demo_traffic(scenario: Scenario, port: int, stop: threading.Event) -> None:
    cfg = scenario.traffic
    if cfg.start_ts and cfg.end_ts and not stop.is_set():
        run_traffic_backfill(cfg, "127.0.0.1", port, cfg.start_ts, cfg.end_ts, stop=stop)
    run_traffic_live(cfg, "127.0.0.1", port, stop)


def _demo_lighting(scenario: Scenario, port: int, stop: threading.Event) -> None:
    cfg = scenario.lighting
    anchor = scenario.traffic
    if anchor and anchor.start_ts and anchor.end_ts and not stop.is_set():
        run_lighting_backfill(cfg, "127.0.0.1", port, anchor.start_ts, anchor.end_ts, stop=stop)
    run_lighting_live(cfg, "127.0.0.1", port, stop)


def cmd_replay(args) -> int:
    data_dir = Path(args.data_dir)
    elog = EventLog(data_dir)
    store = Store()
    processed = store.rebuild_from_log(elog)
    store.save_snapshot(data_dir / SNAPSHOT_NAME)
    print(json.dumps({"processed": processed, "rows": store.row_counts()}))
    elog.close()
    return 0


def cmd_verify(args) -> int:
    scenario = load_scenario(args.scenario)
    if scenario.traffic is None and scenario.lighting is None:
        raise ScenarioError("verify needs at least one simulator section")
    report = run_verify(scenario, minutes=args.minutes, fault_injection=args.fault_injection)
    for check in report.checks:
        print(json.dumps(check))
    print(json.dumps({"ok": report.ok, "elapsed_s": report.elapsed_s}))
    return 0 if report.ok else 1


COMMANDS = {
    "broker": cmd_broker,
    "bridge": cmd_bridge,
    "sim": cmd_sim,
    "ingest": cmd_ingest,
    "serve": cmd_serve,
    "demo": cmd_demo,
    "replay": cmd_replay,
    "verify": cmd_verify,
}


if __name__ == "__main__":
    sys.exit(main())
