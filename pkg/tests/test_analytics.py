import io
import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmnet.analytics import (
    CorrelationPoint,
    ExpFitModel,
    FitError,
    GridError,
    NoKnee,
    UndefinedCorrelation,
    bin_by_distance,
    correlation_vs_distance,
    fit_report,
    fit_two_term_exp,
    grid_pgm,
    haversine,
    idw,
    idw_grid,
    kendall_tau,
    knee_distance,
    read_correlation_csv,
    sparse_subset_rmse,
    spread_subset,
    write_correlation_csv,
    write_grid_csv,
)
from pmnet.analytics.expfit import _levenberg_marquardt
from pmnet.fieldsim import DeploymentEntry, DeploymentMap, generate_deployment
from pmnet.geo import BBox, DomainError, GeoPoint, M_PER_DEG, cell_centers
from pmnet.pipeline import TimeSeries

CENTER = GeoPoint(17.4455, 78.3489)
REGION = BBox.square(CENTER, 2000.0)
DECAY_REF = ExpFitModel(0.4801, -0.0124, 0.7380, -0.0001)


def north(p, m):
    return GeoPoint(p.lat + m / M_PER_DEG, p.lon)


# haversine

def test_haversine_examples():
    assert haversine(CENTER, CENTER) == 0.0
    assert haversine(GeoPoint(0, 0), GeoPoint(0, 1)) == pytest.approx(111195.0, abs=1.0)
    assert haversine(GeoPoint(0, 0), GeoPoint(0, 1)) == pytest.approx(6371000 * math.pi / 180, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-89, 89), st.floats(-179, 179), st.floats(-89, 89), st.floats(-179, 179))
def test_haversine_symmetry(a, b, c, d):
    p, q = GeoPoint(a, b), GeoPoint(c, d)
    assert haversine(p, q) == pytest.approx(haversine(q, p), rel=1e-12, abs=1e-9)


def test_geopoint_validation():
    with pytest.raises(DomainError):
        GeoPoint(91, 0)
    with pytest.raises(DomainError):
        GeoPoint(0, 181)


# idw

def test_idw_examples():
    assert idw([(CENTER, 42.0), (north(CENTER, 100), 7.0)], CENTER) == 42.0
    assert idw([(north(CENTER, 100), 10.0), (north(CENTER, -100), 20.0)], CENTER) == pytest.approx(15.0)
    samples = [(north(CENTER, 100), 10.0), (north(CENTER, 200), 20.0), (north(CENTER, 400), 40.0)]
    assert idw(samples, CENTER) == pytest.approx((16 * 10 + 4 * 20 + 1 * 40) / 21, rel=1e-9)
    assert idw(samples, CENTER) == pytest.approx(13.3333333, rel=1e-6)
    with pytest.raises(DomainError):
        idw([], CENTER)
    with pytest.raises(DomainError):
        idw(samples, CENTER, power=0)


def test_idw_snap_rule_half_metre():
    near, far = north(CENTER, 0.49), north(CENTER, 0.51)
    assert idw([(near, 5.0), (north(CENTER, 300), 100.0)], CENTER) == 5.0
    assert idw([(far, 5.0), (north(CENTER, 300), 100.0)], CENTER) != 5.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-900, 900), st.floats(-900, 900), st.floats(0, 999)), min_size=1, max_size=8),
       st.floats(-990, 990), st.floats(-990, 990), st.floats(0.5, 4))
def test_idw_convex_bound(pts, tx, ty, p):
    m_lon = M_PER_DEG * math.cos(math.radians(CENTER.lat))
    at = lambda x, y: GeoPoint(CENTER.lat + y / M_PER_DEG, CENTER.lon + x / m_lon)
    samples = [(at(x, y), v) for x, y, v in pts]
    got = idw(samples, at(tx, ty), p)
    vals = [v for *_, v in pts]
    assert min(vals) - 1e-9 <= got <= max(vals) + 1e-9


def brute_grid(dep, values, nx, ny, power):
    samples = [(e.point, values[e.device_id]) for e in dep if e.device_id in values]
    return np.array([idw(samples, c, power) for c in cell_centers(dep.region, nx, ny)]).reshape(ny, nx)


@pytest.mark.parametrize("seed,layout,power", [(0, "paper49", 2.0), (1, "random", 1.5), (2, "grid", 3.0)])
def test_idw_grid_equals_brute_force_exactly(seed, layout, power):
    dep = generate_deployment(REGION, 49, layout, seed=seed)
    rng = np.random.default_rng(seed)
    values = {e.device_id: float(rng.uniform(20, 600)) for e in dep}
    g = idw_grid(dep, values, nx=20, ny=17, power=power)
    assert g.cells.shape == (17, 20)
    assert np.array_equal(g.cells, brute_grid(dep, values, 20, 17, power))
    assert g.cells.min() >= min(values.values()) and g.cells.max() <= max(values.values())


def test_idw_grid_snaps_device_on_cell_centre():
    centers = cell_centers(REGION, 5, 5)
    dep = DeploymentMap(REGION, (DeploymentEntry(1, "a", centers[7], "L1"),
                                 DeploymentEntry(2, "b", north(centers[20], 30), "L2")))
    g = idw_grid(dep, {1: 77.0, 2: 5.0}, nx=5, ny=5)
    assert g.cells.ravel()[7] == 77.0


def test_idw_grid_trivial_cases():
    dep = generate_deployment(REGION, 9, "random", seed=4)
    g = idw_grid(dep, {dep.entries[0].device_id: 33.0})
    assert (g.cells == 33.0).all()
    g = idw_grid(dep, {e.device_id: 12.5 for e in dep})
    assert np.allclose(g.cells, 12.5, rtol=1e-14)
    with pytest.raises(GridError):
        idw_grid(dep, {})
    with pytest.raises(GridError):
        idw_grid(dep, {1: 1.0}, nx=1)


def test_cell_centres_row_major_north_first():
    c = cell_centers(REGION, 4, 3)
    assert len(c) == 12
    assert c[0].lat > c[4].lat > c[8].lat
    assert c[0].lon < c[1].lon < c[3].lon


def test_sparse_subset_rmse():
    dep = generate_deployment(REGION, 49, "paper49", seed=3)
    rng = np.random.default_rng(3)
    values = {e.device_id: float(rng.uniform(50, 300)) for e in dep}
    full = idw_grid(dep, values)
    ids = [e.device_id for e in dep]
    assert sparse_subset_rmse(full, dep, ids, values) == 0.0
    flat = {i: 80.0 for i in ids}
    assert sparse_subset_rmse(idw_grid(dep, flat), dep, ids[:4], flat) == pytest.approx(0.0, abs=1e-12)
    sub = idw_grid(dep.subset(ids[:4]), {i: values[i] for i in ids[:4]})
    expected = math.sqrt(np.mean((full.cells - sub.cells) ** 2))
    assert sparse_subset_rmse(full, dep, ids[:4], values) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(DomainError):
        sparse_subset_rmse(full, dep, [], values)
    with pytest.raises(DomainError):
        sparse_subset_rmse(full, dep, [999], values)


def test_spread_subset_respects_separation():
    dep = generate_deployment(REGION, 49, "paper49", seed=1)
    for k in (4, 12):
        ids = spread_subset(dep, k, np.random.default_rng(k))
        assert len(set(ids)) == k
        pts = [dep.by_id()[i].point for i in ids]
        gap = min(haversine(a, b) for a, b in itertools.combinations(pts, 2))
        assert gap >= 2000 / math.sqrt(k) / 2
    assert spread_subset(dep, 4, np.random.default_rng(9)) == spread_subset(dep, 4, np.random.default_rng(9))


def test_grid_exports(tmp_path):
    dep = generate_deployment(REGION, 4, "grid")
    g = idw_grid(dep, {1: 10.0, 2: 20.0, 3: 30.0, 4: 40.0}, nx=3, ny=2)
    buf = io.StringIO()
    write_grid_csv(buf, g)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "lat,lon,value" and len(lines) == 7
    pgm = grid_pgm(g)
    header, px = pgm.split(b"\n255\n", 1)
    assert header.startswith(b"P5\n# min=") and header.endswith(b"3 2")
    assert len(px) == 6 and min(px) == 0 and max(px) == 255
    assert grid_pgm(g, 0.0, 100.0) != pgm


# kendall

def kendall_oracle(x, y):
    nc = nd = tx = ty = 0
    n = len(x)
    for i in range(n):
        for j in range(i + 1, n):
            sx = (x[i] > x[j]) - (x[i] < x[j])
            sy = (y[i] > y[j]) - (y[i] < y[j])
            if sx == 0 and sy == 0:
                continue
            if sx == 0:
                tx += 1
            elif sy == 0:
                ty += 1
            elif sx == sy:
                nc += 1
            else:
                nd += 1
    return (nc - nd) / math.sqrt((nc + nd + tx) * (nc + nd + ty))


def test_kendall_examples():
    x = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6]
    assert kendall_tau(x, x) == 1.0
    assert kendall_tau(x, [-v for v in x]) == -1.0
    with pytest.raises(UndefinedCorrelation):
        kendall_tau([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        kendall_tau([1, 2], [1])
    with pytest.raises(ValueError):
        kendall_tau([1], [1])


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 120).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 8), min_size=n, max_size=n), st.lists(st.integers(0, 8), min_size=n, max_size=n))))
def test_kendall_matches_oracle_with_ties(xy):
    x, y = xy
    if len(set(x)) < 2 or len(set(y)) < 2:
        with pytest.raises(UndefinedCorrelation):
            kendall_tau(x, y)
        return
    assert kendall_tau(x, y) == pytest.approx(kendall_oracle(x, y), abs=1e-12)


def test_kendall_monotone_invariance_and_antisymmetry():
    rng = np.random.default_rng(5)
    x = np.round(rng.normal(size=150), 1)
    y = np.round(x + rng.normal(size=150), 1)
    t = kendall_tau(x, y)
    assert kendall_tau(np.exp(x), y) == pytest.approx(t, abs=1e-15)
    assert kendall_tau(x, 3 * y + 7) == pytest.approx(t, abs=1e-15)
    assert kendall_tau(x, -y) == pytest.approx(-t, abs=1e-15)


# correlation vs distance

def test_correlation_pairs_and_identical_series():
    dep = generate_deployment(REGION, 49, "paper49", seed=0)
    rng = np.random.default_rng(0)
    times = 1636000000 - 1636000000 % 3600 + 3600 * np.arange(48)
    series = {e.device_id: TimeSeries(e.device_id, times, rng.normal(size=48), 3600) for e in dep}
    pts = correlation_vs_distance(dep, series)
    assert len(pts) == 1176
    assert all(-1 <= p.tau <= 1 for p in pts)

    co = generate_deployment(REGION, 2, "colocated")
    same = TimeSeries(1, times, np.arange(48.0), 3600)
    (p,) = correlation_vs_distance(co, {1: same, 2: TimeSeries(2, times, np.arange(48.0), 3600)})
    assert p.tau == 1.0 and p.distance == 0.0 and p.n_samples == 48


def test_correlation_skips_short_overlap_and_constant():
    co = generate_deployment(REGION, 3, "colocated")
    t = 3600 * np.arange(30)
    series = {1: TimeSeries(1, t, np.arange(30.0), 3600),
              2: TimeSeries(2, t + 3600 * 10, np.arange(30.0), 3600),  # 20 common hours
              3: TimeSeries(3, t, np.zeros(30), 3600)}
    assert correlation_vs_distance(co, series) == []


def test_correlation_csv_round_trip_and_binning():
    pts = [CorrelationPoint(1, 2, 100.0, 0.5, 48), CorrelationPoint(1, 3, 150.0, 0.3, 48),
           CorrelationPoint(2, 3, 260.0, 0.1, 40)]
    buf = io.StringIO()
    write_correlation_csv(buf, pts)
    assert buf.getvalue().splitlines()[0] == "device_a,device_b,distance_m,tau,n"
    assert read_correlation_csv(io.StringIO(buf.getvalue())) == pts
    assert bin_by_distance(pts, 200.0) == [(125.0, pytest.approx(0.4)), (260.0, 0.1)]


# exponential fit

def test_reference_decay_value_at_zero():
    assert float(DECAY_REF(0.0)) == pytest.approx(1.2181, abs=1e-12)


def test_fit_recovers_reference_coefficients():
    x = np.arange(0, 1701, 50.0)
    m = fit_two_term_exp(zip(x, DECAY_REF(x)))
    for got, want in ((m.a, DECAY_REF.a), (m.b, DECAY_REF.b), (m.c, DECAY_REF.c), (m.d, DECAY_REF.d)):
        assert abs(got - want) / abs(want) < 1e-3
    assert m.residual_rmse < 1e-9 and m.residual_rmse <= m.init_rmse


def test_fit_single_exponential():
    x = np.linspace(0, 2000, 40)
    y = 0.9 * np.exp(-0.002 * x)
    m = fit_two_term_exp(zip(x, y))
    assert m.residual_rmse < 1e-6
    assert np.allclose(m(x), y, atol=1e-5)


def test_fit_noisy_residual_not_worse_than_start():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1700, 300)
    y = DECAY_REF(x) + rng.normal(0, 0.05, 300)
    m = fit_two_term_exp(zip(x, y))
    assert m.residual_rmse <= m.init_rmse
    assert m.residual_rmse == pytest.approx(0.05, rel=0.15)


def test_lm_descent_property():
    x = np.linspace(0, 1, 30)
    y = 0.5 * np.exp(-20 * x) + 0.7 * np.exp(-0.2 * x)
    theta0 = np.array([0.3, -5.0, 0.3, -0.5])
    r0 = theta0[0] * np.exp(theta0[1] * x) + theta0[2] * np.exp(theta0[3] * x) - y
    _, cost, _ = _levenberg_marquardt(theta0, x, y)
    assert cost <= float(r0 @ r0)


def test_fit_preconditions():
    with pytest.raises(FitError):
        fit_two_term_exp([(0, 1.0)] * 7)
    with pytest.raises(FitError):
        fit_two_term_exp([(i * 10.0, 1.0) for i in range(20)])


def knee_oracle(model, threshold):
    s0 = abs(float(model.slope(0.0)))
    x = np.arange(0.0, 100000.0, 0.01)
    return x[np.argmax(np.abs(model.slope(x)) <= threshold * s0)]


def test_knee_on_reference_decay():
    k = knee_distance(DECAY_REF)
    assert k == 350.0
    assert abs(k - knee_oracle(DECAY_REF, 0.025)) <= 5.0
    assert knee_distance(DECAY_REF, threshold=0.1) == round(knee_oracle(DECAY_REF, 0.1) / 10) * 10


def test_knee_single_term_closed_form():
    m = ExpFitModel(0.0, -0.0124, 0.738, -0.0001)
    assert knee_distance(m, 0.1) == round(math.log(0.1) / -0.0001 / 10) * 10


def test_knee_monotone_in_fast_rate():
    steeper = ExpFitModel(DECAY_REF.a, 2 * DECAY_REF.b, DECAY_REF.c, DECAY_REF.d)
    assert knee_distance(steeper) < knee_distance(DECAY_REF)


def test_knee_errors():
    with pytest.raises(NoKnee):
        knee_distance(ExpFitModel(1.0, 0.001, 1.0, 0.0))
    with pytest.raises(NoKnee):
        knee_distance(ExpFitModel(0.0, -1.0, 0.0, -1.0))


def test_fit_report_fields():
    rep = json.loads(fit_report(DECAY_REF, 0.025))
    assert rep["knee_distance_m"] == 350.0
    assert {"a", "b", "c", "d", "residual_rmse", "knee_threshold"} <= set(rep)
