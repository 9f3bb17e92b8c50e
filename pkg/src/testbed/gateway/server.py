"""Gateway: JSON query endpoints over the store plus a server-sent-events
stream of refresh ticks (pull-on-notify: ticks carry no data, clients
re-query).

Endpoints (all GET):
    /api/meta
    /api/traffic/series?from=&to=&hour_from=&hour_to=&sensors=&classes=&distribution=&group_by=&bucket=
    /api/lighting/energy?from=&to=&hour_from=&hour_to=&sensors=&group_by=&bucket=
    /api/lighting/total?sensor=&date=&hour_from=&hour_to=
    /api/stream            (SSE: event "tick", data {"use_case": ...})
Anything else under / serves static dashboard files when configured.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import queue
import threading
import time
from datetime import date
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from testbed.eventlog.log import EventLog
from testbed.model import DistributionType, VehicleClass, format_ts
from testbed.store import InvalidSpec, QuerySpec, Store, UnknownSensor
from testbed.store.query import Bucket, EnergyTotals, GroupBy, SeriesResult

log = logging.getLogger("testbed.gateway")

TRAFFIC_TICK_S = 60.0
LIGHTING_TICK_S = 30.0

SERIES_PARAMS = {
    "from", "to", "hour_from", "hour_to", "sensors", "classes",
    "distribution", "group_by", "bucket",
}
ENERGY_PARAMS = SERIES_PARAMS - {"classes", "distribution"}
TOTAL_PARAMS = {"sensor", "date", "hour_from", "hour_to"}


class _BadRequest(Exception):
    def __init__(self, status: int, code: str, param: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.param = param


class Gateway:
    """HTTP/1.1 server over a Store; safe for many concurrent readers."""

    def __init__(
        self,
        store: Store,
        host: str = "0.0.0.0",
        port: int = 8080,
        labels: dict[str, str] | None = None,
        static_dir: str | Path | None = None,
        traffic_tick_s: float = TRAFFIC_TICK_S,
        lighting_tick_s: float = LIGHTING_TICK_S,
        cors_origin: str = "*",
    ):
        self.store = store
        self.host = host
        self.port = port
        self.labels = labels or {}
        self.static_dir = Path(static_dir) if static_dir else None
        self.traffic_tick_s = traffic_tick_s
        self.lighting_tick_s = lighting_tick_s
        self.cors_origin = cors_origin
        self._httpd: ThreadingHTTPServer | None = None
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._sse_clients: set[queue.SimpleQueue] = set()
        self._sse_lock = threading.Lock()

    # ---------------------------------------------------------------- lifecycle

    def start(self) -> None:
        gateway = self

        class Handler(_Handler):
            pass

        Handler.gateway = gateway
        self._httpd = ThreadingHTTPServer((self.host, self.port), Handler)
        self._httpd.daemon_threads = True
        self.port = self._httpd.server_address[1]
        serve = threading.Thread(target=self._httpd.serve_forever, name="gateway-http", daemon=True)
        ticker = threading.Thread(target=self._tick_loop, name="gateway-ticker", daemon=True)
        self._threads = [serve, ticker]
        serve.start()
        ticker.start()
        log.info("gateway listening on %s:%d", self.host, self.port)

    def stop(self) -> None:
        self._stop.set()
        self.broadcast(None)  # wake SSE writers so connections close
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
        for t in self._threads:
            t.join(timeout=2)

    # ---------------------------------------------------------------- ticks

    def _tick_loop(self) -> None:
        next_traffic = time.monotonic() + self.traffic_tick_s
        next_lighting = time.monotonic() + self.lighting_tick_s
        while not self._stop.is_set():
            now = time.monotonic()
            wake = min(next_traffic, next_lighting)
            if now < wake:
                if self._stop.wait(min(wake - now, 0.5)):
                    return
                continue
            if now >= next_traffic:
                self.broadcast("traffic")
                next_traffic += self.traffic_tick_s
            if now >= next_lighting:
                self.broadcast("lighting")
                next_lighting += self.lighting_tick_s

    def notify_ingest(self, use_case: str) -> None:
        """Extra tick immediately after an ingest batch for this use case."""
        self.broadcast(use_case)

    def broadcast(self, use_case: str | None) -> None:
        with self._sse_lock:
            clients = list(self._sse_clients)
        for q in clients:
            q.put(use_case)

    def sse_register(self) -> queue.SimpleQueue:
        q: queue.SimpleQueue = queue.SimpleQueue()
        with self._sse_lock:
            self._sse_clients.add(q)
        return q

    def sse_unregister(self, q: queue.SimpleQueue) -> None:
        with self._sse_lock:
            self._sse_clients.discard(q)


class _Handler(BaseHTTPRequestHandler):
    gateway: Gateway
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # route through logging, not stderr prints
        log.debug("%s " + fmt, self.client_address[0], *args)

    # ---------------------------------------------------------------- plumbing

    def _headers(self, status: int, content_type: str, length: int | None, no_store: bool = True) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        if length is not None:
            self.send_header("Content-Length", str(length))
        if no_store:
            self.send_header("Cache-Control", "no-store")
        self.send_header("Access-Control-Allow-Origin", self.gateway.cors_origin)
        self.end_headers()

    def _json(self, status: int, doc: dict) -> None:
        body = json.dumps(doc, separators=(",", ":")).encode()
        self._headers(status, "application/json", len(body))
        self.wfile.write(body)

    def _error(self, status: int, code: str, param: str, message: str) -> None:
        self._json(status, {"code": code, "param": param, "message": message})

    # ---------------------------------------------------------------- routing

    def do_GET(self):  # noqa: N802 (http.server API)
        url = urlparse(self.path)
        params = {k: v[-1] for k, v in parse_qs(url.query, keep_blank_values=True).items()}
        try:
            if url.path == "/api/meta":
                self._json(200, self._meta())
            elif url.path == "/api/traffic/series":
                self._json(200, _series_doc(self._query_traffic(params)))
            elif url.path == "/api/lighting/energy":
                self._json(200, _series_doc(self._query_energy(params)))
            elif url.path == "/api/lighting/total":
                self._json(200, _totals_doc(self._query_total(params)))
            elif url.path == "/api/stream":
                self._stream()
            elif url.path.startswith("/api/"):
                self._error(404, "invalid_spec", "path", f"no such endpoint {url.path}")
            else:
                self._static(url.path)
        except _BadRequest as exc:
            self._error(exc.status, exc.code, exc.param, str(exc))
        except InvalidSpec as exc:
            self._error(400, "invalid_spec", exc.param, str(exc))
        except UnknownSensor as exc:
            self._error(404, "unknown_sensor", "sensors", f"unknown sensor {exc.sensor!r}")
        except (BrokenPipeError, ConnectionResetError):
            pass
        except Exception:
            log.exception("internal error serving %s", self.path)
            try:
                self._error(500, "internal", "", "internal error")
            except OSError:
                pass

    # ---------------------------------------------------------------- endpoints

    def _meta(self) -> dict:
        store = self.gateway.store
        doc: dict = {}
        for use_case in ("traffic", "lighting"):
            sensors = store.known_sensors(use_case)
            bounds = store.date_bounds(use_case)
            doc[use_case] = {
                "sensors": [
                    {"id": s, "label": self.gateway.labels.get(s, s)} for s in sensors
                ],
                "date_min": bounds[0].isoformat() if bounds else None,
                "date_max": bounds[1].isoformat() if bounds else None,
            }
        doc["power_w"] = store.power_w
        doc["tick_seconds"] = {
            "traffic": self.gateway.traffic_tick_s,
            "lighting": self.gateway.lighting_tick_s,
        }
        return doc

    def _query_traffic(self, params: dict[str, str]) -> SeriesResult:
        _check_params(params, SERIES_PARAMS)
        spec = QuerySpec(
            use_case="traffic",
            date_from=_date(params, "from"),
            date_to=_date(params, "to"),
            hour_from=_hour(params, "hour_from", 0),
            hour_to=_hour(params, "hour_to", 23),
            sensors=_csv(params, "sensors"),
            classes=_classes(params),
            distribution=_enum(params, "distribution", DistributionType, DistributionType.total),
            group_by=_enum(params, "group_by", GroupBy, GroupBy.time_bucket),
            bucket=_enum(params, "bucket", Bucket, Bucket.hour),
        )
        return self.gateway.store.query_traffic(spec)

    def _query_energy(self, params: dict[str, str]) -> SeriesResult:
        _check_params(params, ENERGY_PARAMS)
        spec = QuerySpec(
            use_case="lighting",
            date_from=_date(params, "from"),
            date_to=_date(params, "to"),
            hour_from=_hour(params, "hour_from", 0),
            hour_to=_hour(params, "hour_to", 23),
            sensors=_csv(params, "sensors"),
            group_by=_enum(params, "group_by", GroupBy, GroupBy.time_bucket),
            bucket=_enum(params, "bucket", Bucket, Bucket.hour),
        )
        return self.gateway.store.query_energy(spec)

    def _query_total(self, params: dict[str, str]) -> EnergyTotals:
        _check_params(params, TOTAL_PARAMS)
        sensor = params.get("sensor")
        if not sensor:
            raise _BadRequest(400, "invalid_spec", "sensor", "sensor is required")
        try:
            return self.gateway.store.query_energy_total(
                sensor,
                _date(params, "date"),
                _hour(params, "hour_from", 0),
                _hour(params, "hour_to", 23),
            )
        except UnknownSensor as exc:
            raise _BadRequest(404, "unknown_sensor", "sensor", f"unknown sensor {exc.sensor!r}") from None

    # ---------------------------------------------------------------- SSE

    def _stream(self) -> None:
        q = self.gateway.sse_register()
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-store")
            self.send_header("Access-Control-Allow-Origin", self.gateway.cors_origin)
            self.end_headers()
            self.wfile.write(b": connected\n\n")
            self.wfile.flush()
            while not self.gateway._stop.is_set():
                try:
                    use_case = q.get(timeout=15.0)
                except queue.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                if use_case is None:
                    return
                payload = json.dumps({"use_case": use_case}, separators=(",", ":"))
                self.wfile.write(f"event: tick\ndata: {payload}\n\n".encode())
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            self.gateway.sse_unregister(q)

    # ---------------------------------------------------------------- static

    def _static(self, path: str) -> None:
        root = self.gateway.static_dir
        if root is None:
            self._error(404, "invalid_spec", "path", "no static content configured")
            return
        name = path.lstrip("/") or "index.html"
        target = (root / name).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            self._error(404, "invalid_spec", "path", f"not found: {path}")
            return
        body = target.read_bytes()
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        self._headers(200, ctype, len(body), no_store=False)
        self.wfile.write(body)


# -------------------------------------------------------------------- params


def _check_params(params: dict[str, str], allowed: set[str]) -> None:
    for key in params:
        if key not in allowed:
            raise _BadRequest(400, "invalid_spec", key, f"unknown parameter {key!r}")


def _date(params: dict[str, str], key: str) -> date:
    raw = params.get(key)
    if not raw:
        raise _BadRequest(400, "invalid_spec", key, f"{key} is required (YYYY-MM-DD)")
    try:
        return date.fromisoformat(raw)
    except ValueError:
        raise _BadRequest(400, "invalid_spec", key, f"bad date {raw!r}") from None


def _hour(params: dict[str, str], key: str, default: int) -> int:
    raw = params.get(key)
    if raw is None or raw == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise _BadRequest(400, "invalid_spec", key, f"{key} must be an integer") from None
    if not 0 <= value <= 23:
        raise _BadRequest(400, "invalid_spec", key, f"{key} must be 0..23")
    return value


def _csv(params: dict[str, str], key: str) -> tuple[str, ...]:
    raw = params.get(key, "")
    return tuple(s for s in raw.split(",") if s) if raw else ()


def _classes(params: dict[str, str]) -> tuple[VehicleClass, ...]:
    out = []
    for name in _csv(params, "classes"):
        try:
            out.append(VehicleClass(name))
        except ValueError:
            raise _BadRequest(400, "invalid_spec", "classes", f"unknown vehicle class {name!r}") from None
    return tuple(out)


def _enum(params: dict[str, str], key: str, enum_cls, default):
    raw = params.get(key)
    if raw is None or raw == "":
        return default
    try:
        return enum_cls(raw)
    except ValueError:
        raise _BadRequest(400, "invalid_spec", key, f"bad {key} {raw!r}") from None


# -------------------------------------------------------------------- serializers


def _series_doc(result: SeriesResult) -> dict:
    return {
        "groups": [
            {"label": g.label, "points": [[format_ts(ts), v] for ts, v in g.points]}
            for g in result.groups
        ]
    }


def _totals_doc(t: EnergyTotals) -> dict:
    return {
        "sensor": t.sensor_id,
        "date": t.date.isoformat(),
        "hour_from": t.hour_from,
        "hour_to": t.hour_to,
        "window_seconds": t.window_seconds,
        "on_seconds": t.on_seconds,
        "off_seconds": t.off_seconds,
        "energy_wh": t.energy_wh,
        "hourly_wh": list(t.hourly_wh),
    }


# -------------------------------------------------------------------- log follower


class StoreFollower:
    """Continuously catches the store up to the log, firing an ingest tick
    per use case whenever a poll round processed records."""

    def __init__(
        self,
        store: Store,
        eventlog: EventLog,
        gateway: Gateway | None = None,
        poll_s: float = 0.25,
        snapshot_path: str | Path | None = None,
        snapshot_every_s: float = 30.0,
    ):
        self.store = store
        self.eventlog = eventlog
        self.gateway = gateway
        self.poll_s = poll_s
        self.snapshot_path = Path(snapshot_path) if snapshot_path else None
        self.snapshot_every_s = snapshot_every_s
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name="store-follower", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
        if self.snapshot_path is not None:
            self.store.save_snapshot(self.snapshot_path)

    def _run(self) -> None:
        last_snapshot = time.monotonic()
        while not self._stop.is_set():
            for stream, use_case in (("traffic", "traffic"), ("lighting", "lighting")):
                try:
                    processed = self.store.consume(self.eventlog, streams=(stream,))
                except Exception:
                    log.exception("store consume failed for %s", stream)
                    continue
                if processed and self.gateway is not None:
                    self.gateway.notify_ingest(use_case)
            if (
                self.snapshot_path is not None
                and time.monotonic() - last_snapshot >= self.snapshot_every_s
            ):
                self.store.save_snapshot(self.snapshot_path)
                last_snapshot = time.monotonic()
            if self._stop.wait(self.poll_s):
                return
