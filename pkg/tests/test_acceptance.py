"""Acceptance criteria, one test each. Every test records a PASS/FAIL line
that is printed in the terminal summary."""
import contextlib
import time
import warnings

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import fd_fisher, grid_ml_n3
from sspdtomo import kernels
from sspdtomo.fisher import (
    MeasurementBudget,
    compare_detectors,
    crb_errors,
    default_transmissions,
    fisher_matrix,
    linear_apd_povm,
)
from sspdtomo.povm import (
    DetectorSetting,
    NonlinearResponse,
    Povm,
    assemble_povm_row,
    bernoulli_matrix,
    click_probability_coherent,
    click_probability_state,
)
from sspdtomo.reconstruction import ReconstructionConfig, classify_family, reconstruct
from sspdtomo.simulator import (
    DEFAULT_CURRENTS,
    DEFAULT_POWERS,
    NoiseModel,
    SyntheticDetector,
    fidelity_curve,
    simulate_state_rates,
    simulate_surface,
    synthetic_response,
)
from sspdtomo.states import (
    FockDistribution,
    coherent_distribution,
    family_distribution,
    fidelity,
    g2_zero,
    thermal_distribution,
)
from sspdtomo.tomography import fit_all

pytestmark = pytest.mark.acceptance


@contextlib.contextmanager
def criterion(number, title):
    info = {}
    start = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        line = f"FAIL  {number}. {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    detail = ", ".join(f"{k}={v}" for k, v in info.items())
    line = f"PASS  {number}. {title} ({detail}; {time.perf_counter() - start:.1f} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_criterion_1_tomography_roundtrip(detector):
    with criterion(1, "tomography roundtrip") as info:
        surface = simulate_surface(detector, DEFAULT_CURRENTS, DEFAULT_POWERS)
        assert surface.rates.shape == (165, 20)
        t = time.perf_counter()
        fit = fit_all(surface)
        elapsed = time.perf_counter() - t
        err = 0.0
        for c, resp in zip(DEFAULT_CURRENTS, fit.responses):
            truth = synthetic_response(detector, c)
            err = max(err, abs(resp.eta - truth.eta), float(np.max(np.abs(resp.p - truth.p))))
        info["max_param_error"] = f"{err:.2e}"
        info["fit_seconds"] = f"{elapsed:.1f}"
        assert err < 1e-3, f"max parameter error {err:.3g}"
        assert elapsed < 60, f"tomography took {elapsed:.1f} s"


def test_criterion_2_em_correctness(fitted, detector):
    with criterion(2, "EM correctness") as info:
        truth_povm = detector.povm(DEFAULT_CURRENTS)
        cfg = ReconstructionConfig(iterations=1_000_000)
        for family, mean in (("coherent", 2.5), ("thermal", 1.0)):
            state = family_distribution(family, mean, 30)
            res = reconstruct(fitted.povm, truth_povm.predict(state), cfg)
            f = fidelity(res.rho, state)
            info[f"F_{family}"] = f"{f:.6f}"
            assert res.iterations_run <= 1_000_000
            assert f >= 0.999, f"{family}({mean}) fidelity {f:.6f}"
            assert np.all(np.diff(res.loglik_trace) >= -1e-9 * cfg.trace_every)

        worst = np.inf
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n_settings, n_mr = int(rng.integers(1, 40)), int(rng.integers(0, 30))
            P = rng.uniform(0, 1, (n_settings, n_mr + 1))
            if seed % 2:
                R = rng.uniform(0, 1, n_settings)
            else:
                R = P @ rng.dirichlet(np.ones(n_mr + 1))
            povm = Povm(tuple(DetectorSetting(1.0 + i, i) for i in range(n_settings)), P)
            res = reconstruct(povm, R, ReconstructionConfig(iterations=500, n_mr=n_mr, trace_every=1))
            worst = min(worst, float(np.min(np.diff(res.loglik_trace))))
        info["min_step_gain"] = f"{worst:.1e}"
        assert worst >= -1e-9


def test_criterion_3_grid_oracle():
    with criterion(3, "EM vs brute-force simplex grid") as info:
        t = time.perf_counter()
        worst = worst_exact = worst_oracle = 0.0
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            P = rng.uniform(0, 1, (8, 4))
            truth = rng.dirichlet(np.ones(4))
            R = P @ truth
            povm = Povm(tuple(DetectorSetting(1.0 + i, i) for i in range(8)), P)
            em = reconstruct(povm, R, ReconstructionConfig(iterations=200_000, n_mr=3, trace_every=10_000))
            grid = grid_ml_n3(P, R, step=1e-3)
            worst = max(worst, float(np.max(np.abs(em.rho.probs - grid))))
            # noiseless data: the exact maximum is the generating state
            worst_exact = max(worst_exact, float(np.max(np.abs(em.rho.probs - truth))))
            worst_oracle = max(worst_oracle, float(np.max(np.abs(grid - truth))))
        elapsed = time.perf_counter() - t
        info["max_component_diff"] = f"{worst:.2e}"
        assert worst <= 1e-3, (
            f"EM vs grid {worst:.3e}; EM vs exact maximum {worst_exact:.1e}; "
            f"grid vs exact maximum {worst_oracle:.3e}"
        )
        assert elapsed < 300


def test_criterion_4_fidelity_degradation(fitted, detector):
    with criterion(4, "fidelity degrades from <n>=1 to <n>=10") as info:
        cfg = ReconstructionConfig(iterations=20_000)
        for family in ("coherent", "thermal"):
            lo, hi = fidelity_curve(
                detector, family, [1.0, 10.0], repeats=30, noise=NoiseModel(0.02), cfg=cfg, povm=fitted.povm
            )
            assert not lo.failures and not hi.failures
            spread = max(lo.fidelity_std, hi.fidelity_std)
            drop = lo.fidelity_mean - hi.fidelity_mean
            info[family] = f"{lo.fidelity_mean:.5f}->{hi.fidelity_mean:.5f} (spread {spread:.1e})"
            assert drop > 2 * spread, f"{family}: drop {drop:.3g} vs spread {spread:.3g}"


def test_criterion_5_family_discrimination(fitted, detector):
    with criterion(5, "coherent/thermal discrimination for <n> <= 5") as info:
        truth = detector.povm(DEFAULT_CURRENTS)
        cfg = ReconstructionConfig(iterations=5000)
        worst = 1.0
        for family, noise in (("coherent", 0.02), ("thermal", 0.06)):
            for mean in (0.5, 1.0, 2.0, 3.0, 4.0, 5.0):
                state = family_distribution(family, mean, 30)
                hits = 0
                for seed in range(30):
                    R = simulate_state_rates(truth, state, NoiseModel(noise, seed))
                    hits += classify_family(fitted.povm, R, noise, cfg).family == family
                acc = hits / 30
                worst = min(worst, acc)
                assert acc >= 0.9, f"{family}({mean}) accuracy {acc:.2f}"
        info["min_accuracy"] = f"{worst:.2f}"


def test_criterion_6_crb_direction(detector):
    with criterion(6, "CRB: nonlinear detector beats equal-efficiency APD") as info:
        currents = np.linspace(DEFAULT_CURRENTS[0], DEFAULT_CURRENTS[-1], 100)
        sspd = detector.povm(currents, 30)
        responses = [synthetic_response(detector, c) for c in currents]
        assert any(r.p[1] < 0.01 and r.p[2] > 0.5 for r in responses), "no two-photon-sensitive setting"
        eta = float(sspd.elements[:, 1].max())
        apd = linear_apd_povm(eta, default_transmissions(100), 30)
        assert apd.elements[:, 1].max() == pytest.approx(eta, rel=1e-12)
        rho = coherent_distribution(2.5, 30)
        n, ratio = compare_detectors(sspd, apd, rho, MeasurementBudget.uniform(6e8, 100))
        sel = [(k, r) for k, r in zip(n, ratio) if 1 <= k <= 6 and rho.probs[k] > 1e-6]
        assert len(sel) == 6
        info["ratios_n1..6"] = "[" + ", ".join(f"{r:.3f}" for _, r in sel) + "]"
        assert all(r < 1 for _, r in sel)


def test_criterion_7_fisher_validity():
    with criterion(7, "Fisher matrix validity") as info:
        worst_fd = 0.0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            el = rng.uniform(0.02, 0.98, (5, 4))
            povm = Povm(tuple(DetectorSetting(1.0 + i, i) for i in range(5)), el)
            rho = FockDistribution.from_weights(rng.dirichlet(np.ones(4)) + 0.01)
            shots = rng.integers(1000, 100000, 5)
            budget = MeasurementBudget(int(shots.sum()), shots)
            F = fisher_matrix(povm, rho, budget)
            assert np.array_equal(F, F.T)
            assert np.linalg.eigvalsh(F).min() >= -1e-10 * np.trace(F)
            G = fd_fisher(povm, rho, budget)
            worst_fd = max(worst_fd, float(np.max(np.abs(F - G) / np.abs(G))))
            s1 = crb_errors(F, rho).sigma
            for k in (4, 9, 100):
                sk = crb_errors(fisher_matrix(povm, rho, budget.scaled(k)), rho).sigma
                np.testing.assert_allclose(sk * np.sqrt(k), s1, rtol=1e-12)
        info["max_fd_rel_diff"] = f"{worst_fd:.1e}"
        assert worst_fd < 1e-6


def test_criterion_8_algebraic_invariants():
    with criterion(8, "algebraic invariants") as info:
        rng = np.random.default_rng(8)
        worst_rows = worst_comp = worst_fwd = 0.0
        for _ in range(200):
            eta, n_mr = float(rng.uniform()), int(rng.integers(0, 120))
            worst_rows = max(worst_rows, float(np.max(np.abs(bernoulli_matrix(eta, n_mr).sum(1) - 1))))
            a, b = rng.uniform(size=2)
            v = np.ones(n_mr + 1)
            v[:5] = rng.uniform(size=min(5, n_mr + 1))
            lhs = bernoulli_matrix(a, n_mr) @ (bernoulli_matrix(b, n_mr) @ v)
            worst_comp = max(worst_comp, float(np.max(np.abs(lhs - bernoulli_matrix(a * b, n_mr) @ v))))
        for _ in range(200):
            resp = NonlinearResponse(float(rng.uniform(0.001, 1)), rng.uniform(size=5))
            mean = float(rng.uniform(0, 50))
            n_mr = max(int(np.ceil(mean + 10 * np.sqrt(mean))), 4)
            via_row = click_probability_state(assemble_povm_row(resp, n_mr), coherent_distribution(mean, n_mr))
            worst_fwd = max(worst_fwd, abs(via_row - float(click_probability_coherent(resp, mean))))
        g2c = max(abs(g2_zero(coherent_distribution(m, int(m + 10 * np.sqrt(m)) + 30)) - 1) for m in (0.1, 1, 2.5, 10, 40))
        g2t = max(abs(g2_zero(thermal_distribution(m, int(40 * (m + 1)))) - 2) for m in (0.1, 1, 2.5, 10))
        info.update(rows=f"{worst_rows:.1e}", composition=f"{worst_comp:.1e}", forward=f"{worst_fwd:.1e}",
                    g2_coherent=f"{g2c:.1e}", g2_thermal=f"{g2t:.1e}")
        assert worst_rows <= 1e-12
        assert worst_comp <= 1e-12
        assert worst_fwd <= 1e-6
        assert g2c < 1e-6 and g2t < 1e-6


def test_criterion_9_io_and_determinism(tmp_path, fitted):
    from sspdtomo import io as sio
    from sspdtomo.cli import main

    with criterion(9, "lossless I/O and byte-identical reruns") as info:
        surface = simulate_surface(SyntheticDetector(), DEFAULT_CURRENTS[::11], noise=NoiseModel(0.02, 5))
        sio.save_dataset(surface, tmp_path / "d.csv")
        assert sio.load_dataset(tmp_path / "d.csv") == surface
        sio.save_povm(fitted, tmp_path / "p.json")
        back = sio.load_povm(tmp_path / "p.json")
        assert np.array_equal(back.povm.elements, fitted.povm.elements)
        assert all(a.eta == b.eta and np.array_equal(a.p, b.p) for a, b in zip(back.responses, fitted.responses))
        assert np.array_equal(back.residual, fitted.residual)
        rates = simulate_state_rates(fitted.povm, coherent_distribution(2.0), NoiseModel(0.02, 1))
        sio.save_rates(fitted.povm.currents, rates, tmp_path / "r.csv")
        c2, r2 = sio.load_rates(tmp_path / "r.csv")
        assert np.array_equal(c2, fitted.povm.currents) and np.array_equal(r2, rates)
        res = reconstruct(fitted.povm, rates, ReconstructionConfig(iterations=3000))
        sio.save_result(res, tmp_path / "res.json")
        rb = sio.load_result(tmp_path / "res.json")
        assert np.array_equal(rb.rho.probs, res.rho.probs) and np.array_equal(rb.loglik_trace, res.loglik_trace)
        assert rb.config == res.config
        rho = coherent_distribution(2.5)
        rep = crb_errors(fisher_matrix(fitted.povm, rho, MeasurementBudget.uniform(6e8, 165)), rho)
        sio.save_result(rep, tmp_path / "crb.json")
        cb = sio.load_crb_report(tmp_path / "crb.json")
        assert np.array_equal(cb.sigma, rep.sigma) and np.array_equal(cb.relative, rep.relative)

        currents = ",".join(str(c) for c in DEFAULT_CURRENTS[::41])
        n_files = 0
        for run in ("a", "b"):
            d = tmp_path / run
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert main(["synth", "--out", str(d / "data"), "--currents", currents, "--noise", "0.02",
                             "--state", "coherent:3", "--state-noise", "0.02", "--seed", "4"]) == 0
                assert main(["tomo", str(tmp_path / "a" / "data" / "dataset.csv"), "--grid-count", "9",
                             "--out", str(d / "tomo")]) == 0
            assert main(["reconstruct", str(tmp_path / "a" / "tomo" / "povm.json"),
                         str(tmp_path / "a" / "data" / "rates.csv"), "--iterations", "2000",
                         "--family", "coherent", "--out", str(d / "rec")]) == 0
            assert main(["crb", "--povm", str(tmp_path / "a" / "tomo" / "povm.json"), "--apd-eta", "match",
                         "--settings", "20", "--out", str(d / "crb")]) == 0
            assert main(["simulate", "--means", "1", "--repeats", "2", "--iterations", "200",
                         "--seed", "3", "--out", str(d / "sim")]) == 0
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file():
                twin = tmp_path / "b" / f.relative_to(tmp_path / "a")
                assert f.read_bytes() == twin.read_bytes(), f"{f.name} differs between reruns"
                n_files += 1
        info["identical_files"] = n_files
