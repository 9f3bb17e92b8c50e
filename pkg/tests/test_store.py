import random
from datetime import date, datetime, timedelta, timezone

import pytest

from testbed.eventlog import EventLog, LogRecord, partition_for_key
from testbed.model import (
    DistributionType,
    LightingEvent,
    LightingEventKind,
    TrafficReading,
    VehicleClass,
    encode_lighting,
    encode_traffic,
)
from testbed.store import InvalidSpec, QuerySpec, Store, UnknownSensor
from testbed.store.query import Bucket, GroupBy

UTC = timezone.utc
D = date(2017, 3, 1)


def t(h=8, m=0, s=0, day=1):
    return datetime(2017, 3, day, h, m, s, tzinfo=UTC)


def traffic_record(reading, offset=0):
    value = encode_traffic(reading)
    key = reading.sensor_id.encode()
    return LogRecord("traffic", partition_for_key(key, 4), offset, key, value, 0)


def lighting_record(event, offset=0):
    value = encode_lighting(event)
    key = event.sensor_id.encode()
    return LogRecord("lighting", partition_for_key(key, 4), offset, key, value, 0)


def ingest_traffic(store, *readings):
    for i, r in enumerate(readings):
        store.ingest(traffic_record(r, offset=i))


def ingest_lighting(store, *events):
    for i, e in enumerate(events):
        store.ingest(lighting_record(e, offset=i))


def spec(**kw):
    defaults = dict(use_case="traffic", date_from=D, date_to=D)
    defaults.update(kw)
    return QuerySpec(**defaults)


# ---------------------------------------------------------------- ingest


def test_ingest_idempotent():
    store = Store()
    r = TrafficReading(sensor_id="S01", ts=t(), carv=3)
    assert store.ingest(traffic_record(r)) == "inserted"
    assert store.ingest(traffic_record(r)) == "duplicate"
    assert store.row_counts()["traffic"] == 1


def test_ingest_distinct_timestamps_two_rows():
    store = Store()
    ingest_traffic(store, TrafficReading("S01", t(8, 0), carv=1), TrafficReading("S01", t(8, 1), carv=2))
    assert store.row_counts()["traffic"] == 2


def test_ingest_undecodable_dead_letter():
    store = Store()
    bad = LogRecord("traffic", 0, 0, b"S01", b"{broken", 0)
    assert store.ingest(bad) == "dead_letter"
    assert store.dead_letters == {"traffic": 1}
    assert store.row_counts()["traffic"] == 0


def test_ingest_unknown_stream_raises():
    store = Store()
    with pytest.raises(ValueError):
        store.ingest(LogRecord("mystery", 0, 0, b"", b"", 0))


def test_duplicate_storm_collapses_to_distinct_events():
    store = Store()
    rng = random.Random(3)
    readings = [
        TrafficReading(f"S{k:02d}", t(8, m), carv=rng.randrange(20))
        for k in range(3)
        for m in range(40)
    ]
    storm = readings * 3
    rng.shuffle(storm)
    for r in storm:
        store.ingest(traffic_record(r))
    # set-of-keys oracle
    assert store.row_counts()["traffic"] == len({(r.sensor_id, r.ts) for r in readings})


def test_lighting_dedup_keyed_on_event_kind():
    store = Store()
    ingest_lighting(
        store,
        LightingEvent("L01", t(9, 0, 0), LightingEventKind.motion),
        LightingEvent("L01", t(9, 0, 0), LightingEventKind.light_on),
        LightingEvent("L01", t(9, 0, 0), LightingEventKind.motion),  # dup
    )
    assert store.row_counts()["lighting"] == 2


# ---------------------------------------------------------------- query_traffic


def test_total_sums_rows_in_bucket():
    store = Store()
    ingest_traffic(
        store,
        TrafficReading("S01", t(8, 0), carv=3),
        TrafficReading("S01", t(8, 10), carv=5),
        TrafficReading("S01", t(8, 45), carv=2),
    )
    result = store.query_traffic(spec(classes=(VehicleClass.carv,), hour_from=8, hour_to=8))
    assert len(result.groups) == 1
    assert result.groups[0].label == "carv"
    assert result.groups[0].points == ((t(8, 0), 10.0),)


def test_average_per_minute_divides_by_window_minutes():
    store = Store()
    ingest_traffic(
        store,
        TrafficReading("S01", t(8, 0), carv=3),
        TrafficReading("S01", t(8, 10), carv=5),
        TrafficReading("S01", t(8, 45), carv=2),
    )
    result = store.query_traffic(
        spec(
            classes=(VehicleClass.carv,),
            hour_from=8,
            hour_to=8,
            distribution=DistributionType.average_per_minute,
        )
    )
    assert result.groups[0].points[0][1] == pytest.approx(10 / 60, abs=1e-12)


def test_empty_match_zero_filled_groups():
    store = Store()
    ingest_traffic(store, TrafficReading("S01", t(8, 0), carv=3))
    result = store.query_traffic(
        spec(date_from=date(2017, 4, 1), date_to=date(2017, 4, 1), hour_from=8, hour_to=9,
             classes=(VehicleClass.carv, VehicleClass.busv))
    )
    assert [g.label for g in result.groups] == ["carv", "busv"]
    for g in result.groups:
        assert len(g.points) == 2
        assert all(v == 0.0 for _ts, v in g.points)


def test_group_by_sensor_one_series_each():
    store = Store()
    ingest_traffic(
        store,
        TrafficReading("S01", t(8, 0), carv=3, busv=1),
        TrafficReading("S02", t(8, 0), carv=7),
    )
    result = store.query_traffic(spec(group_by=GroupBy.sensor, hour_from=8, hour_to=8))
    assert [g.label for g in result.groups] == ["S01", "S02"]
    assert result.groups[0].points[0][1] == 4.0
    assert result.groups[1].points[0][1] == 7.0


def test_group_by_date_normalizes_to_common_day():
    store = Store()
    ingest_traffic(
        store,
        TrafficReading("S01", t(8, 0, day=1), carv=3),
        TrafficReading("S01", t(8, 0, day=2), carv=9),
    )
    result = store.query_traffic(
        spec(date_to=date(2017, 3, 2), sensors=("S01",), group_by=GroupBy.date, hour_from=8, hour_to=8)
    )
    assert [g.label for g in result.groups] == ["2017-03-01", "2017-03-02"]
    common = datetime(1970, 1, 1, 8, 0, tzinfo=UTC)
    assert result.groups[0].points == ((common, 3.0),)
    assert result.groups[1].points == ((common, 9.0),)


def test_hour_window_inclusive_both_ends():
    store = Store()
    ingest_traffic(
        store,
        TrafficReading("S01", t(7, 59), carv=1),
        TrafficReading("S01", t(8, 0), carv=2),
        TrafficReading("S01", t(10, 59), carv=4),
        TrafficReading("S01", t(11, 0), carv=8),
    )
    result = store.query_traffic(
        spec(classes=(VehicleClass.carv,), hour_from=8, hour_to=10, bucket=Bucket.day)
    )
    assert result.groups[0].points[0][1] == 6.0  # 2 + 4


def test_default_classes_are_all_ten():
    store = Store()
    ingest_traffic(store, TrafficReading("S01", t(8, 0), carv=1, twmv=2, hgv=3, hgvr2=3))
    result = store.query_traffic(spec(hour_from=8, hour_to=8))
    assert [g.label for g in result.groups] == [c.value for c in VehicleClass]


def test_monotone_totals_under_more_ingest():
    store = Store()
    ingest_traffic(store, TrafficReading("S01", t(8, 0), carv=3))
    q = spec(classes=(VehicleClass.carv,), hour_from=8, hour_to=8)
    before = store.query_traffic(q).groups[0].points[0][1]
    ingest_traffic(store, TrafficReading("S01", t(8, 30), carv=5))
    after = store.query_traffic(q).groups[0].points[0][1]
    assert after >= before


# ---------------------------------------------------------------- spec validation


@pytest.mark.parametrize(
    "kw,param",
    [
        (dict(hour_from=25), "hour_from"),
        (dict(hour_to=-1), "hour_to"),
        (dict(hour_from=10, hour_to=2), "hour_from"),
        (dict(date_from=date(2017, 3, 5)), "date_from"),
        (dict(group_by=GroupBy.date), "sensors"),
        (dict(group_by=GroupBy.date, sensors=("a", "b")), "sensors"),
        (dict(group_by=GroupBy.sensor, date_to=date(2017, 3, 2), bucket=Bucket.minute), "bucket"),
        (dict(use_case="lighting", classes=(VehicleClass.carv,)), "classes"),
        (dict(use_case="parking"), "use_case"),
    ],
)
def test_invalid_specs(kw, param):
    with pytest.raises(InvalidSpec) as err:
        spec(**kw).validate()
    assert err.value.param == param


def test_unknown_sensor_raises():
    store = Store()
    ingest_traffic(store, TrafficReading("S01", t(8, 0)))
    with pytest.raises(UnknownSensor):
        store.query_traffic(spec(sensors=("S99",)))


# ---------------------------------------------------------------- on_intervals


def on_off(sensor, pairs):
    events = []
    for on_ts, off_ts in pairs:
        events.append(LightingEvent(sensor, on_ts, LightingEventKind.light_on))
        if off_ts is not None:
            events.append(LightingEvent(sensor, off_ts, LightingEventKind.light_off))
    return events


def test_on_interval_simple_pair():
    store = Store()
    ingest_lighting(store, *on_off("L01", [(t(9, 0, 0), t(9, 3, 0))]))
    (iv,) = store.on_intervals("L01", t(0), t(23, 59, 59))
    assert (iv.start_ts, iv.end_ts) == (t(9, 0, 0), t(9, 3, 0))


def test_trailing_on_clipped_at_window_end():
    store = Store()
    ingest_lighting(store, *on_off("L01", [(t(9, 0, 0), None)]))
    (iv,) = store.on_intervals("L01", t(9, 0, 0), t(9, 0, 50))
    assert (iv.start_ts, iv.end_ts) == (t(9, 0, 0), t(9, 0, 50))


def test_intervals_clipped_to_window():
    store = Store()
    ingest_lighting(store, *on_off("L01", [(t(8, 50, 0), t(9, 10, 0))]))
    (iv,) = store.on_intervals("L01", t(9, 0, 0), t(9, 5, 0))
    assert (iv.start_ts, iv.end_ts) == (t(9, 0, 0), t(9, 5, 0))


def test_two_motion_simulator_trace_yields_280s():
    from testbed.simulators.lighting import LightingSimConfig, lighting_step, new_state

    cfg = LightingSimConfig(motion_rate_profile=[0.0] * 24)
    state = new_state(t(9, 0, 0))
    state.cursor_minute = t(23, 0, 0)
    state.pending = [t(9, 0, 0), t(9, 1, 40)]  # motions at t and t+100s
    _, events = lighting_step(cfg, "L01", t(12, 0, 0), state)
    store = Store()
    ingest_lighting(store, *events)
    (iv,) = store.on_intervals("L01", t(0), t(23, 59, 59))
    assert (iv.end_ts - iv.start_ts).total_seconds() == 280


def test_alternation_violations_flagged_and_skipped():
    store = Store()
    ingest_lighting(
        store,
        LightingEvent("L01", t(9, 0, 0), LightingEventKind.light_on),
        LightingEvent("L01", t(9, 1, 0), LightingEventKind.light_on),  # violation
        LightingEvent("L01", t(9, 2, 0), LightingEventKind.light_off),
        LightingEvent("L01", t(9, 5, 0), LightingEventKind.light_off),  # violation
    )
    (iv,) = store.on_intervals("L01", t(0), t(23, 59, 59))
    assert (iv.start_ts, iv.end_ts) == (t(9, 0, 0), t(9, 2, 0))
    assert store.alternation_violations == 2
    # repeated queries do not inflate the counter
    store.on_intervals("L01", t(0), t(23, 59, 59))
    assert store.alternation_violations == 2


# ---------------------------------------------------------------- query_energy


def lspec(**kw):
    defaults = dict(use_case="lighting", date_from=D, date_to=D)
    defaults.update(kw)
    return QuerySpec(**defaults)


def test_full_hour_interval_at_40w_is_40wh():
    store = Store(power_w=40.0)
    ingest_lighting(store, *on_off("L01", [(t(9, 0, 0), t(10, 0, 0))]))
    result = store.query_energy(lspec(hour_from=9, hour_to=9))
    assert result.groups[0].label == "total"
    assert result.groups[0].points == ((t(9, 0), 40.0),)


def test_no_intervals_zero_series():
    store = Store()
    ingest_lighting(store, LightingEvent("L01", t(9, 0, 0), LightingEventKind.motion))
    result = store.query_energy(lspec(hour_from=8, hour_to=10))
    assert all(v == 0.0 for g in result.groups for _b, v in g.points)


def test_straddling_interval_splits_and_sums():
    store = Store(power_w=40.0)
    # 30 min in hour 9, 30 min in hour 10
    ingest_lighting(store, *on_off("L01", [(t(9, 30, 0), t(10, 30, 0))]))
    result = store.query_energy(lspec(hour_from=9, hour_to=10))
    points = dict(result.groups[0].points)
    assert points[t(9, 0)] == pytest.approx(20.0)
    assert points[t(10, 0)] == pytest.approx(20.0)
    assert sum(points.values()) == pytest.approx(40.0)


def test_energy_group_by_sensor_and_date():
    store = Store(power_w=40.0)
    ingest_lighting(store, *on_off("L01", [(t(9, 0, 0), t(10, 0, 0))]))
    ingest_lighting(store, *on_off("L02", [(t(9, 0, 0), t(9, 30, 0))]))
    by_sensor = store.query_energy(lspec(hour_from=9, hour_to=9, group_by=GroupBy.sensor))
    assert {g.label: g.points[0][1] for g in by_sensor.groups} == {"L01": 40.0, "L02": 20.0}

    ingest_lighting(store, *on_off("L01", [(t(9, 0, 0, day=2), t(9, 15, 0, day=2))]))
    by_date = store.query_energy(
        lspec(date_to=date(2017, 3, 2), sensors=("L01",), group_by=GroupBy.date, hour_from=9, hour_to=9)
    )
    assert [g.label for g in by_date.groups] == ["2017-03-01", "2017-03-02"]
    assert by_date.groups[0].points[0][1] == pytest.approx(40.0)
    assert by_date.groups[1].points[0][1] == pytest.approx(10.0)


def test_energy_outside_hour_window_excluded():
    store = Store(power_w=40.0)
    ingest_lighting(store, *on_off("L01", [(t(7, 0, 0), t(8, 0, 0))]))
    result = store.query_energy(lspec(hour_from=9, hour_to=10))
    assert all(v == 0.0 for g in result.groups for _b, v in g.points)


# ---------------------------------------------------------------- energy totals


def test_energy_total_280s_interval():
    store = Store(power_w=40.0)
    ingest_lighting(store, *on_off("L01", [(t(9, 0, 0), t(9, 4, 40))]))
    totals = store.query_energy_total("L01", D)
    assert totals.on_seconds == 280
    assert totals.off_seconds == 86_400 - 280
    assert totals.on_seconds + totals.off_seconds == totals.window_seconds == 86_400
    assert totals.on_seconds / totals.window_seconds == pytest.approx(0.00324, abs=5e-5)
    assert totals.energy_wh == pytest.approx(40.0 * 280 / 3600)
    assert sum(totals.hourly_wh) == pytest.approx(totals.energy_wh, abs=1e-6)


def test_energy_total_all_day_on():
    store = Store(power_w=40.0)
    ingest_lighting(store, *on_off("L01", [(t(0, 0, 0), None)]))
    totals = store.query_energy_total("L01", D)
    assert totals.on_seconds == 86_400
    assert totals.off_seconds == 0


def test_energy_total_empty_day():
    store = Store()
    ingest_lighting(store, *on_off("L01", [(t(9, 0, 0), t(9, 10, 0))]))
    totals = store.query_energy_total("L01", date(2017, 4, 15))
    assert totals.on_seconds == 0
    assert totals.off_seconds == 86_400


def test_energy_total_hour_window():
    store = Store(power_w=40.0)
    ingest_lighting(store, *on_off("L01", [(t(9, 0, 0), t(11, 0, 0))]))
    totals = store.query_energy_total("L01", D, hour_from=10, hour_to=12)
    assert totals.on_seconds == 3600
    assert totals.window_seconds == 3 * 3600
    assert totals.hourly_wh[10] == pytest.approx(40.0)
    assert totals.hourly_wh[9] == 0.0


def test_energy_total_unknown_sensor():
    store = Store()
    with pytest.raises(UnknownSensor):
        store.query_energy_total("L99", D)


# ---------------------------------------------------------------- rebuild & snapshot


def seeded_log(tmp_path, n=60):
    elog = EventLog(tmp_path / "log")
    elog.create_stream("traffic")
    elog.create_stream("lighting")
    rng = random.Random(5)
    for i in range(n):
        r = TrafficReading(f"S{i % 2:02d}", t(8 + i % 3, i % 60), carv=rng.randrange(10))
        elog.append("traffic", r.sensor_id.encode(), encode_traffic(r))
    for i in range(n // 3):
        base = t(9, 0, 0) + timedelta(minutes=7 * i)
        for ev in on_off("L01", [(base, base + timedelta(seconds=180))]):
            elog.append("lighting", b"L01", encode_lighting(ev))
    return elog


def test_rebuild_matches_incremental(tmp_path):
    elog = seeded_log(tmp_path)
    incremental = Store()
    incremental.consume(elog)
    q = spec(hour_from=8, hour_to=10, group_by=GroupBy.sensor)
    before = incremental.query_traffic(q)
    rebuilt = Store()
    rebuilt.rebuild_from_log(elog)
    assert rebuilt.query_traffic(q) == before
    assert rebuilt.row_counts() == incremental.row_counts()
    elog.close()


def test_rebuild_empty_log(tmp_path):
    elog = EventLog(tmp_path / "log")
    store = Store()
    assert store.rebuild_from_log(elog) == 0
    assert store.row_counts() == {"traffic": 0, "lighting": 0}
    elog.close()


def test_rebuild_twice_identical(tmp_path):
    elog = seeded_log(tmp_path)
    store = Store()
    store.rebuild_from_log(elog)
    counts1 = store.row_counts()
    q = spec(hour_from=8, hour_to=10)
    r1 = store.query_traffic(q)
    store.rebuild_from_log(elog)
    assert store.row_counts() == counts1
    assert store.query_traffic(q) == r1
    elog.close()


def test_snapshot_roundtrip(tmp_path):
    elog = seeded_log(tmp_path)
    store = Store(power_w=42.0)
    store.consume(elog)
    snap = tmp_path / "snap.json"
    store.save_snapshot(snap)

    restored = Store(power_w=42.0)
    assert restored.load_snapshot(snap)
    assert restored.row_counts() == store.row_counts()
    assert restored.offsets == store.offsets
    q = spec(hour_from=8, hour_to=10, group_by=GroupBy.sensor)
    assert restored.query_traffic(q) == store.query_traffic(q)
    lq = lspec(hour_from=9, hour_to=12, group_by=GroupBy.sensor)
    assert restored.query_energy(lq) == store.query_energy(lq)

    # resuming from the snapshot's offsets re-reads nothing new
    assert restored.consume(elog) == 0
    elog.close()


def test_load_snapshot_missing_returns_false(tmp_path):
    assert Store().load_snapshot(tmp_path / "none.json") is False
