"""Command-line front end.

Subcommands::

    sspdtomo synth        write a synthetic probe dataset and state-rate file
    sspdtomo tomo         detector tomography -> POVM file and response tables
    sspdtomo reconstruct  EM state reconstruction from a POVM and measured rates
    sspdtomo simulate     repeated simulate/reconstruct fidelity sweep
    sspdtomo crb          Cramer-Rao errors for one detector, or a two-detector ratio

Every run writes ``manifest.json`` next to its outputs. Tables are plain
CSV; nothing is plotted.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .errors import SspdTomoError
from .fisher import (
    MeasurementBudget,
    compare_detectors,
    crb_errors,
    default_transmissions,
    fisher_matrix,
    linear_apd_povm,
)
from .povm import povm_from_responses, regrid_povm
from .reconstruction import ReconstructionConfig, chi_square, reconstruct
from .simulator import (
    DEFAULT_CURRENTS,
    DEFAULT_POWERS,
    NoiseModel,
    SyntheticDetector,
    fidelity_curve,
    simulate_state_rates,
    simulate_surface,
)
from .states import FAMILIES, closest_reference_state, family_distribution, fidelity
from .tomography import fit_all, grid_by_current

log = logging.getLogger("sspdtomo")

SEED_ENV = "SSPDTOMO_SEED"
DEFAULT_NOISE = {"coherent": 0.02, "thermal": 0.06}


def _state(spec: str, n_mr: int):
    family, sep, mean = spec.partition(":")
    if not sep or family not in FAMILIES:
        raise argparse.ArgumentTypeError(f"state must look like coherent:2.5 or thermal:1.0, got {spec!r}")
    return family, float(mean), family_distribution(family, float(mean), n_mr)


def _floats(text: str):
    return [float(x) for x in text.split(",") if x.strip()]


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get(SEED_ENV, "0"))


def _manifest(args, out: Path, inputs: dict, outputs: list, seed=None, **params):
    skip = {"func", "out", "verbose"}
    resolved = {k: v for k, v in vars(args).items() if k not in skip and k not in inputs}
    resolved.update(params)
    sio.RunManifest(
        subcommand=args.command,
        parameters=resolved,
        inputs={k: str(v) for k, v in inputs.items()},
        outputs={name: name for name in outputs},
        seed=seed,
        tool_version=__version__,
    ).write(out / "manifest.json")


def cmd_synth(args) -> int:
    out = Path(args.out)
    seed = _seed(args)
    det = SyntheticDetector()
    surface = simulate_surface(
        det, DEFAULT_CURRENTS if args.currents is None else _floats(args.currents),
        DEFAULT_POWERS, NoiseModel(args.noise, seed),
    )
    sio.save_dataset(surface, out / "dataset.csv", {
        "wavelength": "1500 nm", "pulse_rate": "20 MHz",
        "provenance": "synthetic detector, sspdtomo synth",
    })
    outputs = ["dataset.csv"]
    if args.state:
        _, _, state = _state(args.state, args.n_mr)
        truth = det.povm(surface.currents, args.n_mr)
        rates = simulate_state_rates(truth, state, NoiseModel(args.state_noise, seed + 1))
        sio.save_rates(surface.currents, rates, out / "rates.csv", {"state": args.state})
        outputs.append("rates.csv")
    _manifest(args, out, {}, outputs, seed)
    print(f"wrote {', '.join(outputs)} to {out}")
    return 0


def cmd_tomo(args) -> int:
    out = Path(args.out)
    raw = sio.load_dataset(args.dataset)
    grid = np.linspace(args.grid_min, args.grid_max, args.grid_count)
    surface = grid_by_current(raw, grid)
    fit = fit_all(surface, args.n_mr, workers=args.workers)
    sio.save_povm(fit, out / "povm.json")
    sio.write_table(
        out / "residuals.csv",
        ["index", "bias_current_uA", "eta", "p0", "p1", "p2", "p3", "p4", "residual", "degenerate"],
        [
            [s.index, s.bias_current, r.eta, *map(float, r.p), float(res), int(deg)]
            for s, r, res, deg in zip(fit.settings, fit.responses, fit.residual, fit.degenerate)
        ],
    )
    sio.write_table(
        out / "response_curves.csv",
        ["bias_current_uA"] + [f"n{n}" for n in range(fit.n_mr + 1)],
        [[s.bias_current, *map(float, row)] for s, row in zip(fit.settings, fit.povm.elements)],
    )
    _manifest(args, out, {"dataset": args.dataset}, ["povm.json", "residuals.csv", "response_curves.csv"])
    print(f"fitted {len(fit.responses)} settings; max residual {fit.residual.max():.3g}")
    if fit.degenerate.any():
        print(f"degenerate settings: {np.flatnonzero(fit.degenerate).tolist()}")
    return 0


def cmd_reconstruct(args) -> int:
    out = Path(args.out)
    fit = sio.load_povm(args.povm)
    povm = fit.povm
    n_mr = povm.n_mr if args.n_mr is None else args.n_mr
    if n_mr != povm.n_mr:
        povm = povm_from_responses(fit.settings, fit.responses, n_mr)
    currents, measured = sio.load_rates(args.rates)
    if currents.size != povm.n_settings or not np.allclose(currents, np.sort(povm.currents), rtol=0, atol=1e-9):
        povm = regrid_povm(povm, currents)
    else:
        povm = povm.subset(np.argsort(povm.currents))
    cfg = ReconstructionConfig(iterations=args.iterations, n_mr=n_mr)
    result = reconstruct(povm, measured, cfg)
    chi2 = {
        fam: chi_square(measured, povm.predict(closest_reference_state(result.rho, fam)), args.relative_error)
        for fam in FAMILIES
    }
    summary = {"mean_photon_number": result.rho.mean, "chi2": chi2}
    ref = None
    if args.family != "none":
        ref = closest_reference_state(result.rho, args.family)
        summary["family"] = args.family
        summary["fidelity"] = fidelity(result.rho, ref)
    sio.save_result(result, out / "result.json", extra=summary)
    header = ["n", "reconstructed"] + (["reference"] if ref is not None else [])
    rows = [
        [n, float(result.rho.probs[n])] + ([float(ref.probs[n])] if ref is not None else [])
        for n in range(n_mr + 1)
    ]
    sio.write_table(out / "bars.csv", header, rows)
    sio.write_table(out / "chi2.csv", ["family", "chi2"], [[f, float(v)] for f, v in chi2.items()])
    _manifest(args, out, {"povm": args.povm, "rates": args.rates}, ["result.json", "bars.csv", "chi2.csv"])
    print(f"<n> = {result.rho.mean:.4f} after {result.iterations_run} iterations")
    if ref is not None:
        print(f"fidelity vs closest {args.family} state: {summary['fidelity']:.5f}")
    for fam, v in chi2.items():
        print(f"chi2[{fam}] = {v:.4g}")
    return 0


def cmd_simulate(args) -> int:
    out = Path(args.out)
    seed = _seed(args)
    noise = DEFAULT_NOISE[args.family] if args.noise is None else args.noise
    cfg = ReconstructionConfig(iterations=args.iterations, n_mr=args.n_mr)
    points = fidelity_curve(
        SyntheticDetector(), args.family, _floats(args.means), args.repeats,
        NoiseModel(noise, seed), cfg, refit=args.refit,
    )
    sio.write_table(
        out / "fidelity_curve.csv",
        ["mean_photons", "fidelity_mean", "fidelity_std", "repeats_ok", "repeats_failed"],
        [[p.mean, p.fidelity_mean, p.fidelity_std, len(p.fidelities), len(p.failures)] for p in points],
    )
    _manifest(args, out, {}, ["fidelity_curve.csv"], seed, noise=noise)
    for p in points:
        print(f"<n>={p.mean:g}: F = {p.fidelity_mean:.5f} +/- {p.fidelity_std:.5f}")
    return 0


def _detector(spec: str, n_settings: int, n_mr: int):
    if spec == "synthetic":
        return SyntheticDetector().povm(np.linspace(DEFAULT_CURRENTS[0], DEFAULT_CURRENTS[-1], n_settings), n_mr)
    fit = sio.load_povm(spec)
    povm = fit.povm
    if povm.n_mr != n_mr:
        povm = povm_from_responses(fit.settings, fit.responses, n_mr)
    if povm.n_settings != n_settings:
        c = povm.currents
        povm = regrid_povm(povm, np.linspace(c.min(), c.max(), n_settings))
    return povm


def _crb_rows(report):
    return [
        [n, float(r), float(s), float(rel)]
        for n, (r, s, rel) in enumerate(zip(report.rho, report.sigma, report.relative))
    ]


def cmd_crb(args) -> int:
    out = Path(args.out)
    n_mr = args.n_mr
    _, _, rho = _state(args.state, n_mr)
    budget = MeasurementBudget.uniform(int(args.shots), args.settings)
    detectors = []
    if args.povm:
        detectors.append(("a", _detector(args.povm, args.settings, n_mr)))
    if args.povm_b:
        detectors.append(("b", _detector(args.povm_b, args.settings, n_mr)))
    if args.apd_eta is not None:
        if args.apd_eta == "match":
            if not detectors:
                raise SspdTomoError("--apd-eta match needs --povm to match against")
            eta = float(detectors[0][1].elements[:, 1].max())
        else:
            eta = float(args.apd_eta)
        detectors.append(("apd", linear_apd_povm(eta, default_transmissions(args.settings), n_mr)))
    if not detectors:
        raise SspdTomoError("give --povm and/or --apd-eta")
    if len(detectors) > 2:
        raise SspdTomoError("at most two detectors can be compared")

    outputs = []
    reports = []
    for name, povm in detectors:
        rep = crb_errors(fisher_matrix(povm, rho, budget), rho, constrained=args.constrained)
        reports.append(rep)
        sio.save_result(rep, out / f"crb_{name}.json")
        sio.write_table(out / f"relative_errors_{name}.csv", ["n", "rho", "sigma", "relative"], _crb_rows(rep))
        outputs += [f"crb_{name}.json", f"relative_errors_{name}.csv"]
    if len(detectors) == 2:
        n, ratio = compare_detectors(detectors[0][1], detectors[1][1], rho, budget, args.constrained)
        sio.write_table(
            out / "ratios.csv",
            ["n", "relative_a", "relative_b", "ratio"],
            [[int(k), float(reports[0].relative[k]), float(reports[1].relative[k]), float(r)]
             for k, r in zip(n, ratio)],
        )
        outputs.append("ratios.csv")
        for k, r in zip(n[:8], ratio[:8]):
            print(f"n={k}: ratio {r:.4g}")
    else:
        for k in range(min(8, n_mr + 1)):
            print(f"n={k}: relative error {reports[0].relative[k]:.4g}")
    inputs = {k: getattr(args, k) for k in ("povm", "povm_b") if getattr(args, k)}
    _manifest(args, out, inputs, outputs)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sspdtomo", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset (and optional state rates)")
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=0.0, help="relative noise on probe rates")
    p.add_argument("--currents", help="comma-separated bias currents (uA)")
    p.add_argument("--state", help="e.g. coherent:2.5; also write rates.csv for this state")
    p.add_argument("--state-noise", type=float, default=0.0)
    p.add_argument("--n-mr", type=int, default=30)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tomo", help="detector tomography")
    p.add_argument("dataset")
    p.add_argument("--grid-min", type=float, default=5.0)
    p.add_argument("--grid-max", type=float, default=13.25)
    p.add_argument("--grid-count", type=int, default=165)
    p.add_argument("--n-mr", type=int, default=30)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tomo)

    p = sub.add_parser("reconstruct", help="EM state reconstruction")
    p.add_argument("povm")
    p.add_argument("rates")
    p.add_argument("--iterations", type=int, default=1_000_000)
    p.add_argument("--n-mr", type=int)
    p.add_argument("--family", choices=["coherent", "thermal", "none"], default="none")
    p.add_argument("--relative-error", type=float, default=0.02)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("simulate", help="fidelity-vs-mean sweep on the synthetic detector")
    p.add_argument("--family", choices=FAMILIES, default="coherent")
    p.add_argument("--means", default="1,2,4,6,8,10,12,15")
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--noise", type=float, help="default 0.02 coherent / 0.06 thermal")
    p.add_argument("--iterations", type=int, default=1_000_000)
    p.add_argument("--n-mr", type=int, default=30)
    p.add_argument("--refit", action="store_true", help="redo tomography for every repeat")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("crb", help="Cramer-Rao relative errors and detector comparison")
    p.add_argument("--povm", help="POVM file, or 'synthetic' for the built-in detector")
    p.add_argument("--povm-b", help="second POVM file to compare against")
    p.add_argument("--apd-eta", help="linear APD efficiency, or 'match' for the first detector's")
    p.add_argument("--state", default="coherent:2.5")
    p.add_argument("--shots", type=float, default=6e8)
    p.add_argument("--settings", type=int, default=100)
    p.add_argument("--n-mr", type=int, default=30)
    p.add_argument("--constrained", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crb)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SspdTomoError, OSError, argparse.ArgumentTypeError) as exc:
        print(f"sspdtomo {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
