import math

import numpy as np
import pytest

from pmnet.fieldsim import (
    DeploymentEntry,
    DeploymentMap,
    GroundTruthField,
    PlumeEvent,
    SensorErrorModel,
    Texture,
    WeatherModel,
    generate_deployment,
    sample_sensor,
    truth_at,
    truth_series,
    weather_series,
    write_truth_csv,
)
from pmnet.geo import BBox, DomainError, GeoPoint, M_PER_DEG, haversine
from pmnet.seasons import ConfigError, SeasonCalendar

CENTER = GeoPoint(17.4455, 78.3489)
REGION = BBox.square(CENTER, 2000.0)
BASE = {"monsoon": 40.0, "winter": 120.0, "summer": 80.0}
NOV = 1636000000  # early November 2021, winter


def offset(p: GeoPoint, north_m: float = 0.0, east_m: float = 0.0) -> GeoPoint:
    return GeoPoint(p.lat + north_m / M_PER_DEG,
                    p.lon + east_m / (M_PER_DEG * math.cos(math.radians(p.lat))))


def test_background_only_field_is_the_baseline():
    fld = GroundTruthField(REGION, BASE)
    for p in (CENTER, REGION.sw, REGION.ne, offset(CENTER, 300, -700)):
        pm10, pm25 = truth_at(fld, p, NOV)
        assert pm10 == 120.0
        assert pm25 == pytest.approx(0.55 * 120.0)


def test_plume_at_center_and_at_one_sigma():
    ev = PlumeEvent(CENTER, 250.0, 300.0, NOV - 3600, NOV, NOV + 7200)
    fld = GroundTruthField(REGION, BASE, events=(ev,))
    assert truth_at(fld, CENTER, NOV)[0] == pytest.approx(120.0 + 300.0, rel=1e-12)
    p = offset(CENTER, north_m=250.0)
    d = haversine(CENTER, p)
    assert d == pytest.approx(250.0, abs=1e-6)
    expected = 120.0 + 300.0 * math.exp(-0.5 * (d / 250.0) ** 2)
    assert truth_at(fld, p, NOV)[0] == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(120.0 + 300.0 * math.exp(-0.5), rel=1e-6)


def test_plume_contributes_nothing_outside_its_window():
    ev = PlumeEvent(CENTER, 250.0, 300.0, NOV, NOV + 600, NOV + 1200)
    fld = GroundTruthField(REGION, BASE, events=(ev,))
    pm10, _ = truth_series(fld, CENTER, [NOV - 30, NOV, NOV + 1200, NOV + 1230])
    assert pm10.tolist() == [120.0, 120.0, 120.0, 120.0]
    assert ev.ramp(NOV + 300) == pytest.approx(0.5)
    assert ev.ramp(NOV + 900) == pytest.approx(0.5)


@pytest.mark.parametrize("args", [(1, 1, 1), (2, 1, 3), (1, 2, 2)])
def test_plume_validation(args):
    s, p, e = args
    with pytest.raises(ConfigError):
        PlumeEvent(CENTER, 100.0, 10.0, s, p, e)
    with pytest.raises(ConfigError):
        PlumeEvent(CENTER, 0.0, 10.0, 0, 1, 2)


def test_outside_region_is_a_domain_error():
    fld = GroundTruthField(REGION, BASE)
    with pytest.raises(DomainError):
        truth_at(fld, offset(REGION.ne, north_m=10.0), NOV)


def test_pm25_never_exceeds_pm10_and_both_non_negative():
    fld = GroundTruthField(REGION, {"monsoon": 5.0, "winter": 5.0, "summer": 5.0},
                           diurnal=((3.0, 20.0),),
                           texture=Texture(200.0, 30.0, seed=3),
                           pm25_texture=Texture(200.0, 30.0, seed=4))
    times = NOV + 30 * np.arange(2880)
    for p in (CENTER, offset(CENTER, 400, 400), offset(CENTER, -800, 100)):
        pm10, pm25 = truth_series(fld, p, times)
        assert (pm10 >= 0).all() and (pm25 >= 0).all() and (pm25 <= pm10).all()


def test_diurnal_harmonic_periods():
    fld = GroundTruthField(REGION, BASE, diurnal=((18.0, 10.0), (6.0, 4.0)))
    midnight = 1636070400  # 2021-11-05T00:00Z
    at = lambda h: truth_at(fld, CENTER, midnight + int(h * 3600))[0]
    # first harmonic peaks at 18:00, second (12 h period) at 06:00 and 18:00
    assert at(18) == pytest.approx(120.0 + 10.0 + 4.0)
    assert at(6) == pytest.approx(120.0 - 10.0 + 4.0)
    assert at(18) == pytest.approx(at(18 + 24))


def test_season_switches_baseline():
    fld = GroundTruthField(REGION, BASE)
    aug, may = 1628000000, 1652000000
    assert truth_at(fld, CENTER, aug)[0] == 40.0
    assert truth_at(fld, CENTER, may)[0] == 80.0
    cal = SeasonCalendar({"monsoon": (6, 7, 8, 9), "winter": (10, 11, 12, 1, 2), "summer": (3, 4, 5)})
    fld2 = GroundTruthField(REGION, BASE, calendar=cal)
    assert truth_at(fld2, CENTER, 1634000000)[0] == 120.0  # October now winter


def test_determinism_bit_for_bit():
    mk = lambda: GroundTruthField(REGION, BASE, diurnal=((20.0, 30.0),), texture=Texture(300.0, 25.0, seed=9))
    times = NOV + 30 * np.arange(500)
    a = truth_series(mk(), offset(CENTER, 123, -456), times)
    b = truth_series(mk(), offset(CENTER, 123, -456), times)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    c = truth_series(GroundTruthField(REGION, BASE, diurnal=((20.0, 30.0),), texture=Texture(300.0, 25.0, seed=10)),
                     offset(CENTER, 123, -456), times)
    assert not np.array_equal(a[0], c[0])


def test_continuity_bound():
    ev = PlumeEvent(offset(CENTER, 100, 100), 300.0, 500.0, NOV, NOV + 1800, NOV + 7200)
    fld = GroundTruthField(REGION, BASE, diurnal=((20.0, 40.0), (8.0, 15.0)), events=(ev,),
                           texture=Texture(300.0, 25.0, seed=1, time_scale=1800.0))
    times = np.arange(NOV - 600, NOV + 8000, 1)
    pm10, _ = truth_series(fld, CENTER, times)
    assert np.abs(np.diff(pm10)).max() <= fld.max_rate() * 1.0 + 1e-9


def test_texture_covariance_decays_with_distance():
    # empirical covariance over many seeds at lag 0 / L / 3L
    L, amp = 300.0, 10.0
    prods = {0.0: [], L: [], 3 * L: []}
    for seed in range(300):
        tx = Texture(L, amp, seed=seed)
        v0 = tx.evaluate(0.0, 0.0, [0.0])[0]
        for d in prods:
            prods[d].append(v0 * tx.evaluate(d, 0.0, [0.0])[0])
    cov = {d: np.mean(v) for d, v in prods.items()}
    assert cov[0.0] == pytest.approx(amp ** 2, rel=0.2)
    assert cov[L] == pytest.approx(amp ** 2 * math.exp(-0.5), rel=0.35)
    assert abs(cov[3 * L]) < 0.15 * amp ** 2


@pytest.mark.parametrize("model,truth,rh,expected", [
    (SensorErrorModel(), 37.2, 50.0, 37.2),
    (SensorErrorModel(alpha=2.0, beta=5.0), 10.0, 50.0, 25.0),
    (SensorErrorModel(), 1500.0, 50.0, 999.9),
    (SensorErrorModel(beta=-20.0), 5.0, 50.0, 0.0),
    (SensorErrorModel(alpha=1.0, beta=2.0, rh_inflation=1.5), 10.0, 85.0, 18.0),
    (SensorErrorModel(alpha=1.0, beta=2.0, rh_inflation=1.5), 10.0, 80.0, 12.0),
])
def test_sample_sensor_examples(model, truth, rh, expected):
    got = sample_sensor(model, truth, rh, np.random.default_rng(0))
    assert got == pytest.approx(expected, abs=1e-12)


def test_sample_sensor_noise_and_arrays():
    rng = np.random.default_rng(1)
    truth = np.full(20000, 100.0)
    raw = sample_sensor(SensorErrorModel(alpha=0.8, beta=12.0, noise_sigma=3.0), truth, 50.0, rng)
    assert raw.shape == truth.shape
    assert raw.mean() == pytest.approx(92.0, abs=0.1)
    assert raw.std() == pytest.approx(3.0, rel=0.03)


def test_noiseless_sensor_is_exact_affine():
    truth = np.linspace(0, 400, 1000)
    raw = sample_sensor(SensorErrorModel(alpha=0.8, beta=12.0), truth, np.full(1000, 40.0), np.random.default_rng(0))
    assert np.array_equal(raw, 0.8 * truth + 12.0)


@pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"noise_sigma": -1.0}, {"rh_inflation": 0.9}])
def test_error_model_validation(kw):
    with pytest.raises(ConfigError):
        SensorErrorModel(**kw)


def test_weather_exercises_the_rh_filter():
    times = 1628000000 + 30 * np.arange(2880 * 7)  # a monsoon week
    temp, rh = weather_series(WeatherModel(), SeasonCalendar(), times, np.random.default_rng(0))
    assert (rh >= 0).all() and (rh <= 100).all()
    assert 0 < (rh > 80).mean() < 0.5
    assert temp.mean() == pytest.approx(27.0, abs=0.5)


def test_grid_single_device_at_center():
    dep = generate_deployment(REGION, 1, "grid")
    (e,) = dep.entries
    assert haversine(e.point, REGION.center) < 1e-6


def test_grid_49_spacing():
    dep = generate_deployment(REGION, 49, "grid")
    pts = [e.point for e in dep]
    nn = [min(haversine(p, q) for q in pts if q is not p) for p in pts]
    assert np.median(nn) == pytest.approx(2000.0 / 7, rel=2e-3)


def test_grid_too_many_devices():
    with pytest.raises(ConfigError):
        generate_deployment(REGION, 10, "grid", grid_shape=(3, 3))


def test_paper49_layout():
    dep = generate_deployment(REGION, 49, "paper49", seed=5)
    assert len(dep) == 49
    counts = {t: sum(e.location_type == t for e in dep) for t in ("L1", "L2", "L3", "L4")}
    assert counts == {"L1": 11, "L2": 6, "L3": 16, "L4": 16}
    assert sum(e.name.startswith("AQ") for e in dep) == 43
    assert sum(e.name.startswith("AV") for e in dep) == 6
    # every 400 m box of the 5x5 partition holds at least one device
    boxes = set()
    for e in dep:
        r = int((e.point.lat - REGION.sw.lat) / (REGION.ne.lat - REGION.sw.lat) * 5)
        c = int((e.point.lon - REGION.sw.lon) / (REGION.ne.lon - REGION.sw.lon) * 5)
        boxes.add((r, c))
    assert len(boxes) == 25
    assert generate_deployment(REGION, 49, "paper49", seed=5) == dep
    with pytest.raises(ConfigError):
        generate_deployment(REGION, 48, "paper49")


def test_random_and_colocated_layouts():
    dep = generate_deployment(REGION, 30, "random", seed=2)
    assert len(dep) == 30 and all(REGION.contains(e.point) for e in dep)
    co = generate_deployment(REGION, 5, "colocated")
    assert {e.point for e in co} == {REGION.center}
    with pytest.raises(ConfigError):
        generate_deployment(REGION, 5, "hexagonal")


def test_deployment_map_invariants():
    e = DeploymentEntry(1, "a", CENTER, "L1")
    with pytest.raises(ConfigError):
        DeploymentMap(REGION, (e, DeploymentEntry(1, "b", CENTER, "L2")))
    with pytest.raises(ConfigError):
        DeploymentMap(REGION, (DeploymentEntry(2, "b", GeoPoint(0.0, 0.0), "L2"),))
    with pytest.raises(ConfigError):
        DeploymentMap(REGION, (DeploymentEntry(2, "b", CENTER, "L9"),))


def test_truth_csv(tmp_path):
    fld = GroundTruthField(REGION, BASE)
    dep = generate_deployment(REGION, 4, "grid")
    path = tmp_path / "truth.csv"
    write_truth_csv(path, fld, dep, [NOV, NOV + 3600])
    lines = path.read_text().splitlines()
    assert lines[0] == "created_at,lat,lon,pm10,pm25"
    assert len(lines) == 1 + 8
    assert lines[1].startswith("2021-11-04T")
