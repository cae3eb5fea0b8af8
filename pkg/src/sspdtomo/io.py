"""File formats.

Count-rate data are delimited text (CSV) with ``#`` metadata lines on top::

    # format: sspdtomo-dataset/1
    # wavelength: 1500 nm
    bias_current_uA,mean_photons_per_pulse,clicks,pulses
    5.0,0.05,12,20000000

A ``rate`` column may replace ``clicks``; ``pulses`` is optional then.
State-rate files used for reconstruction have the same layout without the
``mean_photons_per_pulse`` column.

POVMs, reconstruction results and CRB reports are JSON objects carrying
``schema`` and ``version`` fields. Floats are written with ``repr`` so
they read back bit-for-bit; non-finite values use JSON's ``Infinity`` and
``NaN`` extensions. All writes go to a temporary file that is renamed over
the target.
"""
from __future__ import annotations

import csv
import io as _io
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, UnsupportedVersionError, ValidationError
from .fisher import CrbReport
from .povm import DetectorSetting, NonlinearResponse, Povm
from .reconstruction import ReconstructionConfig, ReconstructionResult
from .states import FockDistribution
from .tomography import CountRateSurface, TomographyFit

log = logging.getLogger(__name__)

DATASET_FORMAT = "sspdtomo-dataset"
RATES_FORMAT = "sspdtomo-rates"
FORMAT_VERSION = 1

CURRENT_COL = "bias_current_uA"
POWER_COL = "mean_photons_per_pulse"


@dataclass
class DatasetFile:
    version: int
    metadata: dict
    surface: CountRateSurface


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    return repr(float(x))


# -- delimited text ---------------------------------------------------------

def _read_table(path, expected_format):
    """Split a CSV file into metadata, header and numbered data rows."""
    text = Path(path).read_text(encoding="utf-8")
    meta, body, header = {}, [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            key, sep, value = s[1:].partition(":")
            if sep:
                meta[key.strip()] = value.strip()
            continue
        row = next(csv.reader([s]))
        if header is None:
            header = [h.strip() for h in row]
        else:
            body.append((lineno, row))
    fmt = meta.get("format")
    if fmt is not None:
        name, _, ver = fmt.partition("/")
        if name != expected_format:
            raise ParseError(f"{path}: format {name!r}, expected {expected_format!r}")
        try:
            version = int(ver)
        except ValueError:
            raise ParseError(f"{path}: bad format version {ver!r}") from None
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(
                f"{path}: {expected_format} version {version} is not supported (expected {FORMAT_VERSION})"
            )
    if header is None:
        raise ParseError(f"{path}: missing header row")
    return meta, header, body


def _parse_rows(path, header, body, required):
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(f"{path}: missing column(s) {', '.join(missing)}")
    has_rate = "rate" in header
    if not has_rate and not {"clicks", "pulses"} <= set(header):
        raise ParseError(f"{path}: need a 'rate' column or both 'clicks' and 'pulses'")
    cols = {name: i for i, name in enumerate(header)}
    out = []
    for lineno, row in body:
        if len(row) != len(header):
            raise ParseError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = {name: float(row[i]) for name, i in cols.items() if row[i].strip() != ""}
        except ValueError as exc:
            raise ParseError(f"{path}, line {lineno}: {exc}") from None
        for name in required:
            if name not in vals:
                raise ParseError(f"{path}, line {lineno}: empty {name}")
        if has_rate and "rate" in vals:
            rate = vals["rate"]
            col = "rate"
        else:
            if "clicks" not in vals or "pulses" not in vals:
                raise ParseError(f"{path}, line {lineno}: need rate or clicks and pulses")
            if vals["pulses"] <= 0:
                raise ValidationError(f"{path}, line {lineno}, column pulses: must be > 0")
            rate = vals["clicks"] / vals["pulses"]
            col = "clicks"
        if not (0.0 <= rate <= 1.0):
            raise ValidationError(
                f"{path}, line {lineno}, column {col}: click probability {rate!r} outside [0, 1]"
            )
        out.append((lineno, vals, rate))
    if not out:
        raise ParseError(f"{path}: no data rows")
    return out


def _pulses_of(rows):
    pulses = {int(v["pulses"]) for _, v, _ in rows if "pulses" in v}
    if not pulses:
        return 1
    if len(pulses) > 1:
        log.warning("pulse counts differ between rows; recording the smallest (%d)", min(pulses))
    return min(pulses)


def load_dataset_file(path) -> DatasetFile:
    meta, header, body = _read_table(path, DATASET_FORMAT)
    rows = _parse_rows(path, header, body, [CURRENT_COL, POWER_COL])
    currents = sorted({v[CURRENT_COL] for _, v, _ in rows})
    powers = sorted({v[POWER_COL] for _, v, _ in rows})
    ci = {c: i for i, c in enumerate(currents)}
    pj = {p: j for j, p in enumerate(powers)}
    rates = np.full((len(currents), len(powers)), np.nan)
    for lineno, v, rate in rows:
        i, j = ci[v[CURRENT_COL]], pj[v[POWER_COL]]
        if not np.isnan(rates[i, j]):
            raise ValidationError(f"{path}, line {lineno}: duplicate (current, power) cell")
        rates[i, j] = rate
    holes = np.argwhere(np.isnan(rates))
    if holes.size:
        i, j = holes[0]
        raise ValidationError(
            f"{path}: no rate for current {currents[i]} uA at {powers[j]} photons/pulse"
        )
    settings = tuple(DetectorSetting(c, i) for i, c in enumerate(currents))
    try:
        surface = CountRateSurface(settings, np.array(powers), rates, _pulses_of(rows))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    meta.pop("format", None)
    return DatasetFile(FORMAT_VERSION, meta, surface)


def load_dataset(path) -> CountRateSurface:
    return load_dataset_file(path).surface


def _header_lines(fmt, metadata):
    lines = [f"# format: {fmt}/{FORMAT_VERSION}"]
    for k, v in (metadata or {}).items():
        lines.append(f"# {k}: {v}")
    return lines


def save_dataset(surface: CountRateSurface, path, metadata: dict | None = None) -> None:
    lines = _header_lines(DATASET_FORMAT, metadata)
    lines.append(f"{CURRENT_COL},{POWER_COL},rate,pulses")
    for s, row in zip(surface.settings, surface.rates):
        for power, rate in zip(surface.powers, row):
            lines.append(f"{_fmt(s.bias_current)},{_fmt(power)},{_fmt(rate)},{surface.pulses}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_rates(currents, rates, path, metadata: dict | None = None) -> None:
    lines = _header_lines(RATES_FORMAT, metadata)
    lines.append(f"{CURRENT_COL},rate")
    for c, r in zip(currents, rates):
        lines.append(f"{_fmt(c)},{_fmt(r)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_rates(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``(currents, click probabilities)`` sorted by current."""
    _, header, body = _read_table(path, RATES_FORMAT)
    rows = _parse_rows(path, header, body, [CURRENT_COL])
    pairs = sorted((v[CURRENT_COL], rate) for _, v, rate in rows)
    currents = np.array([c for c, _ in pairs])
    if np.any(np.diff(currents) <= 0):
        raise ValidationError(f"{path}: duplicate bias currents")
    return currents, np.array([r for _, r in pairs])


def write_table(path, header, rows) -> None:
    """Plain CSV table for plotting tools."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    atomic_write_text(path, buf.getvalue())


# -- structured JSON --------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


def _load_json(path, schema):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("schema") != schema:
        raise ParseError(f"{path}: expected a {schema!r} document")
    if doc.get("version") != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: {schema} version {doc.get('version')!r} is not supported (expected {FORMAT_VERSION})"
        )
    return doc


def _floats(a):
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def save_povm(fit: TomographyFit, path) -> None:
    doc = {
        "schema": "sspdtomo/povm",
        "version": FORMAT_VERSION,
        "n_mr": fit.n_mr,
        "settings": [
            {
                "index": s.index,
                "bias_current_uA": float(s.bias_current),
                "eta": r.eta,
                "p": _floats(r.p),
                "residual": float(res),
                "degenerate": bool(deg),
            }
            for s, r, res, deg in zip(fit.settings, fit.responses, fit.residual, fit.degenerate)
        ],
        "elements": [_floats(row) for row in fit.povm.elements],
    }
    atomic_write_text(path, _dump(doc))


def load_povm(path) -> TomographyFit:
    doc = _load_json(path, "sspdtomo/povm")
    try:
        n_mr = int(doc["n_mr"])
        recs = doc["settings"]
        el = np.array(doc["elements"], dtype=float)
        if el.shape != (len(recs), n_mr + 1):
            raise ValidationError(
                f"element matrix has shape {el.shape}, expected {(len(recs), n_mr + 1)}"
            )
        settings = tuple(DetectorSetting(float(r["bias_current_uA"]), int(r["index"])) for r in recs)
        responses = tuple(NonlinearResponse(float(r["eta"]), r["p"]) for r in recs)
        return TomographyFit(
            responses=responses,
            residual=np.array([float(r["residual"]) for r in recs]),
            povm=Povm(settings, el),
            degenerate=np.array([bool(r.get("degenerate", False)) for r in recs]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise ValidationError(f"{path}: {exc}") from None
        raise ParseError(f"{path}: malformed POVM document ({exc!r})") from None


def save_result(obj, path, extra: dict | None = None) -> None:
    """Write a ReconstructionResult or CrbReport."""
    if isinstance(obj, ReconstructionResult):
        doc = {
            "schema": "sspdtomo/reconstruction",
            "version": FORMAT_VERSION,
            "config": asdict(obj.config),
            "iterations_run": obj.iterations_run,
            "mean_photon_number": obj.rho.mean,
            "rho": _floats(obj.rho.probs),
            "predicted": _floats(obj.predicted),
            "loglik_trace": _floats(obj.loglik_trace),
        }
    elif isinstance(obj, CrbReport):
        doc = {
            "schema": "sspdtomo/crb",
            "version": FORMAT_VERSION,
            "constrained": bool(obj.constrained),
            "condition_flag": bool(obj.condition_flag),
            "rank": int(obj.rank),
            "rho": _floats(obj.rho) if obj.rho is not None else None,
            "sigma": _floats(obj.sigma),
            "relative": _floats(obj.relative),
        }
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    if extra:
        doc["extra"] = extra
    atomic_write_text(path, _dump(doc))


def load_result(path) -> ReconstructionResult:
    doc = _load_json(path, "sspdtomo/reconstruction")
    try:
        return ReconstructionResult(
            rho=FockDistribution(doc["rho"]),
            loglik_trace=np.array(doc["loglik_trace"], dtype=float),
            iterations_run=int(doc["iterations_run"]),
            predicted=np.array(doc["predicted"], dtype=float),
            config=ReconstructionConfig(**doc["config"]),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed reconstruction document ({exc!r})") from None


def load_crb_report(path) -> CrbReport:
    doc = _load_json(path, "sspdtomo/crb")
    try:
        return CrbReport(
            sigma=np.array(doc["sigma"], dtype=float),
            relative=np.array(doc["relative"], dtype=float),
            condition_flag=bool(doc["condition_flag"]),
            rho=None if doc["rho"] is None else np.array(doc["rho"], dtype=float),
            rank=int(doc["rank"]),
            constrained=bool(doc["constrained"]),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed CRB document ({exc!r})") from None


@dataclass
class RunManifest:
    subcommand: str
    parameters: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seed: int | None = None
    tool_version: str = ""

    def write(self, path) -> None:
        doc = {"schema": "sspdtomo/manifest", "version": FORMAT_VERSION, **asdict(self)}
        atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")
