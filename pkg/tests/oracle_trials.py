"""Shared generators + comparators for randomized query-vs-oracle trials."""

import math
import random
from datetime import date, datetime, timedelta, timezone

from testbed.eventlog import LogRecord, partition_for_key
from testbed.model import (
    DistributionType,
    HGV_SUBCLASSES,
    LightingEvent,
    LightingEventKind,
    TrafficReading,
    VehicleClass,
    encode_lighting,
    encode_traffic,
)
from testbed.store import QuerySpec, Store
from testbed.store.oracle import oracle_energy_total, oracle_query_energy, oracle_query_traffic
from testbed.store.query import Bucket, GroupBy, InvalidSpec

UTC = timezone.utc
BASE_DATE = date(2017, 3, 1)
BASE = datetime(2017, 3, 1, tzinfo=UTC)


def random_traffic_dataset(rng: random.Random, max_rows=1000):
    sensors = [f"S{i:02d}" for i in range(rng.randint(1, 4))]
    days = rng.randint(1, 3)
    n = rng.randint(0, max_rows)
    seen = set()
    readings = []
    for _ in range(n):
        sensor = rng.choice(sensors)
        ts = BASE + timedelta(
            days=rng.randrange(days), hours=rng.randrange(24), minutes=rng.randrange(60)
        )
        if (sensor, ts) in seen:
            continue
        seen.add((sensor, ts))
        subs = {c.value: rng.randrange(4) for c in HGV_SUBCLASSES}
        readings.append(
            TrafficReading(
                sensor_id=sensor,
                ts=ts,
                twmv=rng.randrange(20),
                carv=rng.randrange(40),
                busv=rng.randrange(5),
                lgv=rng.randrange(10),
                hgv=sum(subs.values()),
                **subs,
            )
        )
    return sensors, days, readings


def random_traffic_spec(rng: random.Random, sensors, days):
    while True:
        d0 = rng.randrange(days)
        d1 = rng.randrange(d0, days)
        bucket = rng.choice(list(Bucket))
        if bucket == Bucket.minute:
            d1 = d0  # keep oracle scans cheap
            h0 = rng.randrange(24)
            h1 = min(23, h0 + rng.randrange(0, 6))
        else:
            h0 = rng.randrange(24)
            h1 = rng.randrange(h0, 24)
        group_by = rng.choice(list(GroupBy))
        chosen_sensors = tuple(sorted(rng.sample(sensors, rng.randint(1, len(sensors))))) if rng.random() < 0.7 else ()
        if group_by == GroupBy.date:
            chosen_sensors = (rng.choice(sensors),)
        classes = (
            tuple(rng.sample(list(VehicleClass), rng.randint(1, 4))) if rng.random() < 0.7 else ()
        )
        spec = QuerySpec(
            use_case="traffic",
            date_from=BASE_DATE + timedelta(days=d0),
            date_to=BASE_DATE + timedelta(days=d1),
            hour_from=h0,
            hour_to=h1,
            sensors=chosen_sensors,
            classes=classes,
            distribution=rng.choice(list(DistributionType)),
            group_by=group_by,
            bucket=bucket,
        )
        try:
            spec.validate()
            return spec
        except InvalidSpec:
            continue


def random_lighting_dataset(rng: random.Random, max_switches=400):
    sensors = [f"L{i:02d}" for i in range(rng.randint(1, 3))]
    days = rng.randint(1, 2)
    events = []
    for sensor in sensors:
        cursor = BASE + timedelta(seconds=rng.randrange(3600))
        end = BASE + timedelta(days=days)
        budget = rng.randint(0, max_switches // len(sensors))
        for _ in range(budget):
            if cursor >= end:
                break
            on = cursor
            duration = rng.choice([30, 60, 179, 180, 181, 600, 3600, 7200])
            off = on + timedelta(seconds=duration)
            events.append(LightingEvent(sensor, on, LightingEventKind.light_on))
            if rng.random() < 0.4:
                events.append(LightingEvent(sensor, on, LightingEventKind.motion))
            if off < end and rng.random() > 0.05:  # occasionally leave trailing on
                events.append(LightingEvent(sensor, off, LightingEventKind.light_off))
                cursor = off + timedelta(seconds=rng.randrange(60, 7200))
            else:
                break
    return sensors, days, events


def random_lighting_spec(rng: random.Random, sensors, days):
    while True:
        d0 = rng.randrange(days)
        d1 = rng.randrange(d0, days)
        bucket = rng.choice(list(Bucket))
        if bucket == Bucket.minute:
            d1 = d0
            h0 = rng.randrange(24)
            h1 = min(23, h0 + rng.randrange(0, 4))
        else:
            h0 = rng.randrange(24)
            h1 = rng.randrange(h0, 24)
            if h1 - h0 > 10:
                h1 = h0 + 10
        group_by = rng.choice(list(GroupBy))
        chosen = tuple(sorted(rng.sample(sensors, rng.randint(1, len(sensors))))) if rng.random() < 0.7 else ()
        if group_by == GroupBy.date:
            chosen = (rng.choice(sensors),)
        spec = QuerySpec(
            use_case="lighting",
            date_from=BASE_DATE + timedelta(days=d0),
            date_to=BASE_DATE + timedelta(days=d1),
            hour_from=h0,
            hour_to=h1,
            sensors=chosen,
            group_by=group_by,
            bucket=bucket,
        )
        try:
            spec.validate()
            return spec
        except InvalidSpec:
            continue


def store_with_traffic(readings):
    store = Store()
    for i, r in enumerate(readings):
        key = r.sensor_id.encode()
        store.ingest(LogRecord("traffic", partition_for_key(key, 4), i, key, encode_traffic(r), 0))
    return store


def store_with_lighting(events, power_w=40.0):
    store = Store(power_w=power_w)
    for i, e in enumerate(events):
        key = e.sensor_id.encode()
        store.ingest(LogRecord("lighting", partition_for_key(key, 4), i, key, encode_lighting(e), 0))
    return store


def assert_series_match(result, expected, exact: bool):
    got = [(g.label, list(g.points)) for g in result.groups]
    assert len(got) == len(expected), f"group count {len(got)} != {len(expected)}"
    for (glabel, gpoints), (elabel, epoints) in zip(got, expected):
        assert glabel == elabel
        assert len(gpoints) == len(epoints), f"{glabel}: {len(gpoints)} vs {len(epoints)} buckets"
        for (gts, gv), (ets, ev) in zip(gpoints, epoints):
            assert gts == ets, f"{glabel}: bucket {gts} != {ets}"
            if exact:
                assert gv == ev, f"{glabel}@{gts}: {gv} != {ev}"
            else:
                assert math.isclose(gv, ev, rel_tol=1e-9, abs_tol=1e-12), f"{glabel}@{gts}: {gv} != {ev}"


def run_traffic_trial(rng: random.Random):
    sensors, days, readings = random_traffic_dataset(rng)
    store = store_with_traffic(readings)
    spec = random_traffic_spec(rng, sensors, days)
    known = store.known_sensors("traffic")
    resolved = spec.resolved(known) if (not spec.sensors or set(spec.sensors) <= set(known)) else None
    if resolved is None:
        return  # sensor absent from data: engine raises UnknownSensor, nothing to compare
    result = store.query_traffic(spec)
    expected = oracle_query_traffic(readings, resolved)
    assert_series_match(result, expected, exact=spec.distribution == DistributionType.total)


def run_energy_trial(rng: random.Random):
    sensors, days, events = random_lighting_dataset(rng)
    store = store_with_lighting(events)
    spec = random_lighting_spec(rng, sensors, days)
    known = store.known_sensors("lighting")
    if spec.sensors and not set(spec.sensors) <= set(known):
        return
    resolved = spec.resolved(known)
    result = store.query_energy(spec)
    expected = oracle_query_energy(events, resolved, power_w=40.0)
    assert_series_match(result, expected, exact=False)


def run_energy_total_trial(rng: random.Random):
    sensors, days, events = random_lighting_dataset(rng)
    store = store_with_lighting(events)
    known = store.known_sensors("lighting")
    if not known:
        return
    sensor = rng.choice(known)
    h0 = rng.randrange(24)
    h1 = rng.randrange(h0, 24)
    d = BASE_DATE + timedelta(days=rng.randrange(days))
    totals = store.query_energy_total(sensor, d, h0, h1)
    expected = oracle_energy_total(events, sensor, d, h0, h1, power_w=40.0)
    assert totals.on_seconds == expected["on_seconds"]
    assert totals.off_seconds == expected["off_seconds"]
    assert totals.window_seconds == expected["window_seconds"]
    assert math.isclose(totals.energy_wh, expected["energy_wh"], rel_tol=1e-9, abs_tol=1e-12)
    for got, want in zip(totals.hourly_wh, expected["hourly_wh"]):
        assert math.isclose(got, want, rel_tol=1e-9, abs_tol=1e-12)
    assert totals.on_seconds + totals.off_seconds == totals.window_seconds
    assert math.isclose(sum(totals.hourly_wh), totals.energy_wh, rel_tol=0, abs_tol=1e-6)
