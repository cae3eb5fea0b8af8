import json
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from sspdtomo.errors import ParseError, UnsupportedVersionError, ValidationError
from sspdtomo.fisher import MeasurementBudget, crb_errors, fisher_matrix, linear_apd_povm
from sspdtomo.io import (
    RunManifest,
    load_crb_report,
    load_dataset,
    load_dataset_file,
    load_povm,
    load_rates,
    load_result,
    save_dataset,
    save_povm,
    save_rates,
    save_result,
)
from sspdtomo.povm import DetectorSetting
from sspdtomo.reconstruction import ReconstructionConfig, reconstruct
from sspdtomo.states import coherent_distribution
from sspdtomo.tomography import CountRateSurface

rate_matrices = st.integers(1, 6).flatmap(
    lambda n: st.integers(1, 6).flatmap(
        lambda m: st.lists(st.lists(st.floats(0, 1), min_size=m, max_size=m), min_size=n, max_size=n)
    )
)


def make_surface(rates, pulses=1000):
    rates = np.array(rates, dtype=float)
    n, m = rates.shape
    settings_ = tuple(DetectorSetting(5.0 + 0.37 * i, i) for i in range(n))
    return CountRateSurface(settings_, np.logspace(-1.3, 4.6, m), rates, pulses)


def assert_fits_equal(a, b):
    np.testing.assert_array_equal(a.povm.elements, b.povm.elements)
    np.testing.assert_array_equal(a.residual, b.residual)
    np.testing.assert_array_equal(a.degenerate, b.degenerate)
    assert a.settings == b.settings
    for ra, rb in zip(a.responses, b.responses):
        assert ra.eta == rb.eta
        np.testing.assert_array_equal(ra.p, rb.p)


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(rate_matrices)
def test_dataset_roundtrip(tmp_path, rates):
    surf = make_surface(rates)
    path = tmp_path / "d.csv"
    save_dataset(surf, path, {"wavelength": "1500 nm", "pulse_rate": "20 MHz"})
    df = load_dataset_file(path)
    assert df.surface == surf
    assert df.metadata == {"wavelength": "1500 nm", "pulse_rate": "20 MHz"}


def test_counts_and_pulses_become_rates(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(
        "bias_current_uA,mean_photons_per_pulse,clicks,pulses\n"
        "5.0,0.1,10,100\n5.0,1.0,20,100\n5.0,10.0,40,100\n"
        "6.0,0.1,30,100\n6.0,1.0,50,100\n6.0,10.0,70,100\n"
    )
    surf = load_dataset(p)
    assert surf.rates.shape == (2, 3)
    np.testing.assert_allclose(surf.rates, [[0.1, 0.2, 0.4], [0.3, 0.5, 0.7]])
    assert surf.pulses == 100


def test_bad_rate_names_line_and_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("bias_current_uA,mean_photons_per_pulse,rate\n5.0,0.1,0.5\n5.0,1.0,1.2\n")
    with pytest.raises(ValidationError, match=r"line 3, column rate"):
        load_dataset(p)


def test_malformed_row_has_line_number(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("# format: sspdtomo-dataset/1\nbias_current_uA,mean_photons_per_pulse,rate\n5.0,0.1\n")
    with pytest.raises(ParseError, match="line 3"):
        load_dataset(p)
    p.write_text("bias_current_uA,mean_photons_per_pulse,rate\n5.0,abc,0.1\n")
    with pytest.raises(ParseError, match="line 2"):
        load_dataset(p)


def test_dataset_version_mismatch(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("# format: sspdtomo-dataset/2\nbias_current_uA,mean_photons_per_pulse,rate\n5.0,0.1,0.5\n")
    with pytest.raises(UnsupportedVersionError):
        load_dataset(p)


def test_missing_cell_is_reported(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("bias_current_uA,mean_photons_per_pulse,rate\n5.0,0.1,0.5\n5.0,1.0,0.6\n6.0,0.1,0.7\n")
    with pytest.raises(ValidationError, match="6.0 uA"):
        load_dataset(p)


def test_full_grid_load_is_fast(tmp_path):
    rng = np.random.default_rng(0)
    surf = make_surface(rng.uniform(0, 1, (165, 30)))
    path = tmp_path / "big.csv"
    save_dataset(surf, path)
    t = time.perf_counter()
    loaded = load_dataset(path)
    assert time.perf_counter() - t < 1.0
    assert loaded == surf


def test_rates_roundtrip(tmp_path):
    c = np.array([5.0, 5.05, 7.123456789012345])
    r = np.array([0.0, 1 / 3, 1.0])
    save_rates(c, r, tmp_path / "r.csv")
    c2, r2 = load_rates(tmp_path / "r.csv")
    np.testing.assert_array_equal(c, c2)
    np.testing.assert_array_equal(r, r2)


def test_povm_roundtrip(tmp_path, fitted):
    path = tmp_path / "povm.json"
    save_povm(fitted, path)
    back = load_povm(path)
    assert_fits_equal(fitted, back)
    assert back.povm.n_settings == 165
    assert json.loads(path.read_text())["n_mr"] == 30


def test_truncated_povm_file(tmp_path, fitted):
    path = tmp_path / "povm.json"
    save_povm(fitted, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ParseError):
        load_povm(path)


def test_povm_version_mismatch(tmp_path, fitted):
    path = tmp_path / "povm.json"
    save_povm(fitted, path)
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(UnsupportedVersionError):
        load_povm(path)


def test_povm_shape_mismatch(tmp_path, fitted):
    path = tmp_path / "povm.json"
    save_povm(fitted, path)
    doc = json.loads(path.read_text())
    doc["n_mr"] = 12
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError):
        load_povm(path)


def test_result_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    povm = linear_apd_povm(0.3, np.linspace(0.1, 1, 6), 4)
    cfg = ReconstructionConfig(iterations=2500, n_mr=4, trace_every=500)
    res = reconstruct(povm, rng.uniform(0.05, 0.6, 6), cfg)
    save_result(res, tmp_path / "r.json")
    back = load_result(tmp_path / "r.json")
    np.testing.assert_array_equal(back.rho.probs, res.rho.probs)
    np.testing.assert_array_equal(back.loglik_trace, res.loglik_trace)
    np.testing.assert_array_equal(back.predicted, res.predicted)
    assert back.config == cfg and back.iterations_run == res.iterations_run


def test_crb_roundtrip_with_infinities(tmp_path):
    rho = coherent_distribution(2.5, 30)
    povm = linear_apd_povm(0.028, np.linspace(0.01, 1, 100), 30)
    rep = crb_errors(fisher_matrix(povm, rho, MeasurementBudget.uniform(6e8, 100)), rho)
    save_result(rep, tmp_path / "c.json")
    back = load_crb_report(tmp_path / "c.json")
    np.testing.assert_array_equal(back.sigma, rep.sigma)
    np.testing.assert_array_equal(back.relative, rep.relative)
    assert back.condition_flag == rep.condition_flag and back.rank == rep.rank


def test_wrong_schema(tmp_path):
    rho = coherent_distribution(1.0, 3)
    rep = crb_errors(np.eye(4), rho)
    save_result(rep, tmp_path / "c.json")
    with pytest.raises(ParseError):
        load_result(tmp_path / "c.json")


def test_manifest_is_sorted_and_stable(tmp_path):
    m = RunManifest("tomo", {"b": 1, "a": 2}, {"in": "x"}, {"out": "y"}, 5, "0.1.0")
    m.write(tmp_path / "m1.json")
    RunManifest("tomo", {"a": 2, "b": 1}, {"in": "x"}, {"out": "y"}, 5, "0.1.0").write(tmp_path / "m2.json")
    assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    assert json.loads((tmp_path / "m1.json").read_text())["subcommand"] == "tomo"


def test_no_temp_files_left(tmp_path):
    save_rates([5.0], [0.5], tmp_path / "r.csv")
    assert [p.name for p in tmp_path.iterdir()] == ["r.csv"]
