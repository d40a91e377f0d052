import json
import math

import numpy as np
import pytest

from afclab.echo import AFCWindow
from afclab.errors import DomainError
from afclab.medium import Grid, SpectralProfile
from afclab.optimizer import (
    PARAM_NAMES,
    ParamRanges,
    ScanConfig,
    ScanRecord,
    best_record,
    correlation_matrix,
    extract_comb_parameters,
    records_from_csv,
    records_to_csv,
    run_scan,
    sample_params,
    trial_seed,
)


def test_ranges_validation():
    with pytest.raises(DomainError):
        ParamRanges(rate_peak=(10.0, 10.0))
    with pytest.raises(DomainError):
        ParamRanges(n_loop=(1.5, 10))


def test_sample_within_ranges_and_deterministic():
    r = ParamRanges()
    a = sample_params(r, 42)
    assert a == sample_params(r, 42)
    for name in PARAM_NAMES:
        lo, hi = getattr(r, name)
        assert lo <= a[name] <= hi
    assert isinstance(a["n_loop"], int)


def test_sample_tiny_range():
    lo = 1000.0
    r = ParamRanges(rate_peak=(lo, math.nextafter(lo, 2e3)))
    for seed in range(20):
        v = sample_params(r, seed)["rate_peak"]
        assert lo <= v <= math.nextafter(lo, 2e3)


def test_sample_means_at_midpoints():
    r = ParamRanges()
    samples = [sample_params(r, trial_seed(9, i)) for i in range(850)]
    for name in PARAM_NAMES:
        lo, hi = getattr(r, name)
        mean = np.mean([s[name] for s in samples])
        assert mean == pytest.approx((lo + hi) / 2, rel=0.05)


def test_extract_comb_parameters_on_ideal_comb():
    from afclab.echo import comb_profile

    grid = Grid.centered(span=14e6, step=10e3)
    w = AFCWindow(0.0, 10e6, 2e6, 4.0, 2.5, 0.7)
    comb = extract_comb_parameters(comb_profile(w, grid), w)
    assert comb["d"] == pytest.approx(2.5)
    assert comb["d0"] == pytest.approx(0.7)
    assert comb["finesse"] == pytest.approx(4.0, rel=0.05)


def test_extract_flat_profile():
    grid = Grid.centered(span=14e6, step=10e3)
    p = SpectralProfile(grid.start, grid.step, np.full(grid.count, 3.3))
    comb = extract_comb_parameters(p, AFCWindow(0.0, 10e6, 2e6))
    assert comb["d"] == 0.0 and comb["d0"] == pytest.approx(3.3) and comb["finesse"] == 1.0


def test_single_trial_reproducible():
    a = run_scan(ParamRanges(), 1, 5)
    b = run_scan(ParamRanges(), 1, 5)
    assert len(a) == 1
    assert a[0].params == b[0].params and a[0].efficiency == b[0].efficiency
    assert 0 <= a[0].efficiency <= 1


def test_scan_best_beats_median():
    records = run_scan(ParamRanges(), 200, 1)
    eff = [r.efficiency for r in records]
    assert best_record(records).efficiency > np.median(eff)
    assert [r.index for r in records] == list(range(200))


def test_trials_independent_of_scan_length():
    short = run_scan(ParamRanges(), 5, 3)
    long = run_scan(ParamRanges(), 12, 3)
    for a, b in zip(short, long):
        assert a.params == b.params and a.efficiency == b.efficiency


def test_parallel_matches_sequential():
    seq = run_scan(ParamRanges(), 16, 2)
    par = run_scan(ParamRanges(), 16, 2, workers=2)
    assert records_to_csv(seq) == records_to_csv(par)


@pytest.mark.parametrize("seed", range(5))
def test_wider_rate_range_not_worse(seed):
    narrow = run_scan(ParamRanges(rate_peak=(100.0, 3000.0)), 200, seed)
    wide = run_scan(ParamRanges(rate_peak=(100.0, 6000.0)), 200, seed)
    assert best_record(wide).efficiency >= best_record(narrow).efficiency


def test_errored_trials_are_flagged():
    # a pump band that leaves the local grid raises inside the trial
    config = ScanConfig(margin=0.0)
    records = run_scan(ParamRanges(pulse_bandwidth=(1.0e6, 1.5e6)), 3, 0, config)
    assert all(not r.ok for r in records)
    assert all(math.isnan(r.efficiency) for r in records)
    assert all("CoverageError" in r.error for r in records)
    with pytest.raises(DomainError):
        correlation_matrix(records)


def _records(columns):
    n = len(next(iter(columns.values())))
    out = []
    for i in range(n):
        params = {k: float(v[i]) for k, v in columns.items() if k != "efficiency"}
        out.append(ScanRecord(params, float(columns["efficiency"][i]), i, i))
    return out


def test_correlation_properties():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=850)
    y = rng.uniform(size=850)
    recs = _records({"x": x, "y": y, "efficiency": 0.1 * x + 0.01 * rng.uniform(size=850)})
    rep = correlation_matrix(recs)
    m = rep.matrix
    np.testing.assert_allclose(np.diag(m), 1.0)
    np.testing.assert_array_equal(m, m.T)
    assert np.all(np.abs(m) <= 1)
    assert abs(m[0, 1]) < 0.1
    assert m[0, 2] > 0
    np.testing.assert_allclose(m[0, 2], np.corrcoef(x, [r.efficiency for r in recs])[0, 1], atol=1e-12)
    scaled = _records({"x": 5 * x + 3, "y": 0.01 * y - 2, "efficiency": [r.efficiency for r in recs]})
    np.testing.assert_allclose(correlation_matrix(scaled).matrix, m, atol=1e-12)


def test_correlation_zero_variance():
    rng = np.random.default_rng(1)
    recs = _records({"x": rng.uniform(size=10), "c": np.full(10, 2.0), "efficiency": rng.uniform(size=10)})
    rep = correlation_matrix(recs)
    assert rep.zero_variance == ["c"]
    i = rep.names.index("c")
    assert rep.matrix[i, i] == 1.0
    assert np.all(np.delete(rep.matrix[i], i) == 0.0)
    with pytest.raises(DomainError):
        correlation_matrix(recs[:2])


def test_csv_round_trip_and_json_report():
    records = run_scan(ParamRanges(), 6, 4)
    text = records_to_csv(records)
    back = records_from_csv(text)
    assert [r.params for r in back] == [r.params for r in records]
    assert [r.efficiency for r in back] == [r.efficiency for r in records]
    assert records_to_csv(back) == text
    rep = json.loads(correlation_matrix(records).to_json())
    assert rep["names"] == list(PARAM_NAMES) + ["efficiency"]
