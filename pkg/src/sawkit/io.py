"""File formats: Touchstone one-port files, CSV traces, JSON reports and sweep manifests.

Touchstone metadata
-------------------
Comment lines of the form ``! key: value`` before the option line are read
as trace metadata; ``value`` is parsed as JSON when possible.  The keys
``drive_power_dbm``, ``temperature_K`` and ``label`` fill the matching trace
fields and everything else lands in ``ComplexTrace.extra``.

Reports
-------
Reports are canonical JSON: keys sorted, floats written with 17
significant digits, two-space indent, UTF-8, trailing newline.  The digest
is the SHA-256 of those bytes.  Non-finite numbers are rejected before
anything is written.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .domain import ComplexTrace, DeviceGeometry, ResonanceFit
from .errors import ParseError, ReportValidationError, ValidationError

__all__ = [
    "SCHEMA_VERSION",
    "TouchstoneData",
    "parse_touchstone",
    "read_touchstone",
    "write_touchstone",
    "read_csv_trace",
    "write_csv_trace",
    "read_trace",
    "ResonanceRecord",
    "Report",
    "canonical_json",
    "write_report",
    "read_report",
    "report_digest",
    "SweepManifest",
    "read_manifest",
    "file_digest",
]

SCHEMA_VERSION = "1"

_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
_FORMATS = ("ri", "ma", "db")
_TRACE_FIELDS = ("drive_power_dbm", "temperature_K", "label")


# --- Touchstone --------------------------------------------------------------


@dataclass(frozen=True)
class TouchstoneData:
    """Raw content of a one-port Touchstone file (any number of points)."""

    frequencies: np.ndarray
    s11: np.ndarray
    unit: str
    fmt: str
    reference_ohm: float
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def to_trace(self) -> ComplexTrace:
        meta = dict(self.metadata)
        kw = {k: meta.pop(k) for k in _TRACE_FIELDS if k in meta}
        return ComplexTrace(self.frequencies, self.s11, extra=meta, **kw)


def _meta_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _parse_option_line(tokens: list[str], line_no: int) -> tuple[str, str, float]:
    unit, param, fmt, ref = "ghz", "s", "ma", 50.0
    i = 0
    while i < len(tokens):
        tok = tokens[i].lower()
        if tok in _UNITS:
            unit = tok
        elif tok in _FORMATS:
            fmt = tok
        elif tok in ("s", "y", "z", "g", "h"):
            param = tok
        elif tok == "r":
            if i + 1 >= len(tokens):
                raise ParseError("option line has R without a reference impedance", line_no)
            try:
                ref = float(tokens[i + 1])
            except ValueError:
                raise ParseError(f"invalid reference impedance {tokens[i + 1]!r}", line_no) from None
            i += 1
        else:
            raise ParseError(f"unknown option-line token {tokens[i]!r}", line_no)
        i += 1
    if param != "s":
        raise ParseError(f"only S parameters are supported, got {param.upper()}", line_no)
    return unit, fmt, ref


def _to_complex(a: float, b: float, fmt: str) -> complex:
    if fmt == "ri":
        return complex(a, b)
    mag = a if fmt == "ma" else 10.0 ** (a / 20.0)
    ang = math.radians(b)
    return complex(mag * math.cos(ang), mag * math.sin(ang))


def parse_touchstone(text: str) -> TouchstoneData:
    """Parse the text of a version-1 one-port Touchstone file."""
    option = None
    rows: list[list[str]] = []
    row_lines: list[int] = []
    meta: dict[str, Any] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped[0] == "!":
            if option is None:
                m = re.match(r"!\s*([A-Za-z_][\w.]*)\s*:\s*(.*)$", stripped)
                if m:
                    meta[m.group(1)] = _meta_value(m.group(2).strip())
            continue
        body = stripped.split("!", 1)[0].strip()
        if body.startswith("["):
            raise ParseError(
                f"keyword {body.split(']')[0]}] found; only version-1 one-port Touchstone files are supported",
                line_no,
            )
        if body.startswith("#"):
            if option is not None:
                raise ParseError("second option line", line_no)
            option = _parse_option_line(body[1:].split(), line_no)
            continue
        if option is None:
            raise ParseError("data before the option line '# <unit> S <RI|MA|DB> R <ref>'", line_no)
        cols = body.split()
        if len(cols) != 3:
            raise ParseError(
                f"expected 3 columns (frequency and one complex value) for a one-port file, got {len(cols)}",
                line_no,
            )
        rows.append(cols)
        row_lines.append(line_no)
    if option is None:
        raise ParseError("missing option line '# <unit> S <RI|MA|DB> R <ref>'")
    if not rows:
        raise ParseError("no data rows")
    try:
        data = np.array(rows, dtype=float)
    except ValueError:
        for cols, line_no in zip(rows, row_lines):
            try:
                [float(c) for c in cols]
            except ValueError:
                raise ParseError(f"non-numeric value in {' '.join(cols)!r}", line_no) from None
        raise  # pragma: no cover
    bad = ~np.all(np.isfinite(data), axis=1)
    if bad.any():
        raise ParseError("non-finite value", row_lines[int(np.argmax(bad))])
    unit, fmt, ref = option
    freqs = data[:, 0] * _UNITS[unit]
    step = np.diff(freqs) <= 0
    if step.any():
        k = int(np.argmax(step)) + 1
        raise ParseError(f"frequency {freqs[k]:.17g} Hz does not increase", row_lines[k])
    a, b = data[:, 1], data[:, 2]
    if fmt == "ri":
        values = a + 1j * b
    else:
        mag = a if fmt == "ma" else 10.0 ** (a / 20.0)
        values = mag * np.exp(1j * np.deg2rad(b))
    return TouchstoneData(freqs, values.astype(complex), unit, fmt, ref, meta)


def read_touchstone(path) -> ComplexTrace:
    path = Path(path)
    if path.suffix.lower() not in ("", ".s1p", ".ts", ".txt"):
        if re.fullmatch(r"\.s\d+p", path.suffix.lower()):
            raise ParseError(f"{path.name}: multi-port Touchstone files are not supported")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path.name}: not a UTF-8 text file ({exc.reason})") from None
    try:
        data = parse_touchstone(text)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return data.to_trace()


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_touchstone(trace: ComplexTrace, path, *, header: Sequence[str] = ()) -> None:
    """Write a one-port file in Hz / RI with 17 significant digits (lossless)."""
    lines = [f"! {h}" for h in header]
    meta: dict[str, Any] = {}
    if trace.label:
        meta["label"] = trace.label
    if trace.drive_power_dbm is not None:
        meta["drive_power_dbm"] = trace.drive_power_dbm
    if trace.temperature_K is not None:
        meta["temperature_K"] = trace.temperature_K
    meta.update(trace.extra)
    for k in sorted(meta):
        lines.append(f"! {k}: {canonical_json(meta[k], indent=None).strip()}")
    lines.append("# Hz S RI R 50")
    for f, s in zip(trace.frequencies, trace.s11):
        lines.append(f"{_fmt(f)} {_fmt(s.real)} {_fmt(s.imag)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- CSV -------------------------------------------------------------------

_CSV_ALIASES = {
    "freq": ("frequency", "frequency_hz", "freq", "f", "f_hz"),
    "re": ("re", "real", "s11_re", "re_s11", "s11_real"),
    "im": ("im", "imag", "s11_im", "im_s11", "s11_imag"),
    "mag_db": ("mag_db", "s11_db", "db", "magnitude_db"),
    "phase_deg": ("phase_deg", "s11_phase_deg", "phase", "angle_deg"),
    "power_dbm": ("power_dbm", "drive_power_dbm", "p_dbm"),
    "temperature_K": ("temperature_k", "temperature", "t_k"),
}


def _resolve(header: list[str], key: str, column_map: Mapping[str, str]) -> int | None:
    lowered = [h.strip().lower() for h in header]
    if key in column_map and column_map[key] is not None:
        want = column_map[key].strip().lower()
        if want not in lowered:
            raise ParseError(f"column {column_map[key]!r} (for {key}) not found in header {header}", 1)
        return lowered.index(want)
    for alias in _CSV_ALIASES[key]:
        if alias in lowered:
            return lowered.index(alias)
    return None


def read_csv_trace(path, column_map: Mapping[str, str] | None = None) -> ComplexTrace:
    """Read a trace from a CSV file with a header row.

    ``column_map`` maps the roles ``freq``, ``re``, ``im``, ``mag_db``,
    ``phase_deg``, ``power_dbm`` and ``temperature_K`` to header names;
    unmapped roles are looked up among common spellings.  Frequencies are
    in Hz.  Real/imaginary columns take precedence over magnitude/phase.
    """
    column_map = dict(column_map or {})
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    idx = {k: _resolve(header, k, column_map) for k in _CSV_ALIASES}
    if idx["freq"] is None:
        raise ParseError(f"{path}: no frequency column (tried {', '.join(_CSV_ALIASES['freq'])})", 1)
    use_ri = idx["re"] is not None or idx["im"] is not None
    if use_ri:
        missing = [k for k in ("re", "im") if idx[k] is None]
        if missing and not (idx["mag_db"] is not None and idx["phase_deg"] is not None):
            raise ParseError(f"{path}: column for {missing[0]!r} not found and no mag_db/phase_deg fallback", 1)
        use_ri = not missing
    elif idx["mag_db"] is None or idx["phase_deg"] is None:
        missing = "mag_db" if idx["mag_db"] is None else "phase_deg"
        raise ParseError(f"{path}: need re/im or mag_db/phase_deg columns; {missing!r} not found", 1)
    freqs, vals = [], []
    power, temp = [], []
    for row_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {row_no} has {len(row)} fields, header has {len(header)}", row_no)
        try:
            f = float(row[idx["freq"]])
            if use_ri:
                v = complex(float(row[idx["re"]]), float(row[idx["im"]]))
            else:
                v = _to_complex(float(row[idx["mag_db"]]), float(row[idx["phase_deg"]]), "db")
            if idx["power_dbm"] is not None:
                power.append(float(row[idx["power_dbm"]]))
            if idx["temperature_K"] is not None:
                temp.append(float(row[idx["temperature_K"]]))
        except ValueError:
            raise ParseError(f"{path}: non-numeric value in row {row_no}", row_no) from None
        if freqs and f <= freqs[-1]:
            raise ParseError(f"{path}: frequency in row {row_no} does not increase", row_no)
        freqs.append(f)
        vals.append(v)
    kw: dict[str, Any] = {"label": path.stem}
    for name, col in (("drive_power_dbm", power), ("temperature_K", temp)):
        if col:
            if len(set(col)) != 1:
                raise ParseError(f"{path}: column for {name} must be constant within one trace")
            kw[name] = col[0]
    try:
        return ComplexTrace(np.array(freqs), np.array(vals, dtype=complex), **kw)
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_csv_trace(trace: ComplexTrace, path) -> None:
    header = ["frequency", "re", "im"]
    extra_cols = []
    if trace.drive_power_dbm is not None:
        extra_cols.append(("power_dbm", trace.drive_power_dbm))
    if trace.temperature_K is not None:
        extra_cols.append(("temperature_K", trace.temperature_K))
    header += [c for c, _ in extra_cols]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for f, s in zip(trace.frequencies, trace.s11):
            w.writerow([_fmt(f), _fmt(s.real), _fmt(s.imag)] + [_fmt(v) for _, v in extra_cols])


def read_trace(path, column_map: Mapping[str, str] | None = None) -> ComplexTrace:
    """Dispatch on the file suffix: ``.csv`` or Touchstone."""
    if Path(path).suffix.lower() == ".csv":
        return read_csv_trace(path, column_map)
    return read_touchstone(path)


def file_digest(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- canonical JSON -----------------------------------------------------------


def _plain(obj, where: str = "$"):
    """Convert to JSON-ready builtins, rejecting non-finite numbers."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise ReportValidationError(f"non-finite number {obj!r} at {where}")
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [_plain(obj.real, where + ".re"), _plain(obj.imag, where + ".im")]
    if isinstance(obj, Mapping):
        out = {}
        for k, v in obj.items():
            if not isinstance(k, str):
                raise ReportValidationError(f"non-string key {k!r} at {where}")
            out[k] = _plain(v, f"{where}.{k}")
        return out
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v, f"{where}[{i}]") for i, v in enumerate(obj)]
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict(), where)
    raise ReportValidationError(f"cannot serialise {type(obj).__name__} at {where}")


def _dump(obj, indent: int | None, level: int) -> str:
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        text = format(obj, ".17g")
        # keep a float-looking token so the type survives a round trip
        if re.fullmatch(r"-?\d+", text):
            text += ".0"
        return text
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = "," if indent is not None else ", "
    if isinstance(obj, list):
        if not obj:
            return "[]"
        return "[" + sep.join(pad + _dump(v, indent, level + 1) for v in obj) + end + "]"
    if not obj:
        return "{}"
    items = (pad + json.dumps(k, ensure_ascii=False) + ": " + _dump(obj[k], indent, level + 1) for k in sorted(obj))
    return "{" + sep.join(items) + end + "}"


def canonical_json(obj, indent: int | None = 2) -> str:
    """Canonical text of ``obj``: sorted keys, ``%.17g`` floats, newline-terminated."""
    return _dump(_plain(obj), indent, 0) + "\n"


# --- Reports -------------------------------------------------------------------


@dataclass(frozen=True)
class ResonanceRecord:
    """One fitted mode plus where it came from."""

    fit: ResonanceFit
    source: str = ""
    meta: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = self.fit.to_dict()
        d["source"] = self.source
        d["meta"] = dict(self.meta)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ResonanceRecord":
        return cls(ResonanceFit.from_dict(d), d.get("source", ""), d.get("meta", {}))


@dataclass
class Report:
    """Everything a CLI run produced.

    ``tls_fits`` and ``twotone`` hold the ``to_dict()`` forms of the fit
    results; ``tables`` holds plot-ready rows keyed by table name.
    """

    inputs: dict[str, Any] = field(default_factory=dict)
    resonances: list[ResonanceRecord] = field(default_factory=list)
    tls_fits: list[dict[str, Any]] = field(default_factory=list)
    twotone: list[dict[str, Any]] = field(default_factory=list)
    tables: dict[str, Any] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "inputs": self.inputs,
            "resonances": [r.to_dict() for r in self.resonances],
            "tls_fits": self.tls_fits,
            "twotone": self.twotone,
            "tables": self.tables,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Report":
        if "schema_version" not in d:
            raise ReportValidationError("report has no schema_version")
        if d["schema_version"] != SCHEMA_VERSION:
            raise ReportValidationError(f"unsupported schema_version {d['schema_version']!r}")
        try:
            return cls(
                inputs=dict(d.get("inputs", {})),
                resonances=[ResonanceRecord.from_dict(r) for r in d.get("resonances", [])],
                tls_fits=list(d.get("tls_fits", [])),
                twotone=list(d.get("twotone", [])),
                tables=dict(d.get("tables", {})),
                provenance=dict(d.get("provenance", {})),
                schema_version=d["schema_version"],
            )
        except (KeyError, TypeError, ValidationError) as exc:
            raise ReportValidationError(f"malformed report: {exc}") from None

    def canonical(self) -> dict[str, Any]:
        """The JSON-ready structure, for structural comparison."""
        return json.loads(canonical_json(self.to_dict()))


def report_digest(text: str | bytes) -> str:
    data = text.encode("utf-8") if isinstance(text, str) else text
    return "sha256:" + hashlib.sha256(data).hexdigest()


def write_report(report: Report, path) -> str:
    """Write canonical JSON and return its digest.  Validation happens before any I/O."""
    if not report.schema_version:
        raise ReportValidationError("report has no schema_version")
    text = canonical_json(report.to_dict())
    data = text.encode("utf-8")
    Path(path).write_bytes(data)
    return report_digest(data)


def read_report(path) -> Report:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportValidationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ReportValidationError(f"{path}: report must be a JSON object")
    return Report.from_dict(d)


# --- sweep manifests ------------------------------------------------------------

MANIFEST_KINDS = ("geometry_sweep", "power_sweep", "temperature_sweep", "twotone_scan")
_GRID_KEYS = {
    "geometry_sweep": ("cavity_length_L",),
    "power_sweep": ("power_dbm",),
    "temperature_sweep": ("temperature_K", "power_dbm"),
    "twotone_scan": ("n_pump", "probe_detunings"),
}
_SYNTHESIS_DEFAULTS = {
    "Q_i": 4.74e4,
    "Q_c": 5.0e4,
    "noise_sigma": 0.005,
    "cable_delay_tau": 40e-9,
    "background_amplitude": 0.9,
    "background_phase": 0.7,
    "points": 1001,
    "span_linewidths": 5.0,
    "repeats": 1,
    "points_per_linewidth": 20.0,
}


@dataclass(frozen=True)
class SweepManifest:
    """A synthetic experiment: what to sweep, how to synthesise each trace, which seed.

    Grids by kind: ``geometry_sweep`` needs ``cavity_length_L`` (m);
    ``power_sweep`` needs ``power_dbm``; ``temperature_sweep`` needs
    ``temperature_K`` and ``power_dbm``; ``twotone_scan`` needs ``n_pump``
    and ``probe_detunings`` (Hz, probe minus pump).  ``tls`` holds the loss
    model used to generate Q_i (and for two-tone ``omega0``, ``t2``); a
    power sweep without it uses the constant ``synthesis.Q_i``.
    """

    kind: str
    geometry: DeviceGeometry
    grid: Mapping[str, Any]
    synthesis: Mapping[str, Any] = field(default_factory=dict)
    tls: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "."

    def __post_init__(self):
        if self.kind not in MANIFEST_KINDS:
            raise ValidationError(f"manifest kind {self.kind!r} must be one of {', '.join(MANIFEST_KINDS)}")
        for key in _GRID_KEYS[self.kind]:
            values = self.grid.get(key)
            if values is None:
                raise ValidationError(f"{self.kind} manifest needs grid.{key}")
            if not isinstance(values, (list, tuple)) or len(values) == 0:
                raise ValidationError(f"grid.{key} must be a non-empty list")
            if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in values):
                raise ValidationError(f"grid.{key} must contain finite numbers")
        if self.kind in ("temperature_sweep", "twotone_scan"):
            for key in ("Q_TLS", "Q_rl", "n_c"):
                if key not in self.tls:
                    raise ValidationError(f"{self.kind} manifest needs tls.{key}")
        if self.kind == "twotone_scan":
            for key in ("omega0", "t2"):
                if key not in self.tls:
                    raise ValidationError(f"twotone_scan manifest needs tls.{key}")
            if any(d == 0 for d in self.grid["probe_detunings"]):
                raise ValidationError("probe detunings must be non-zero")
        unknown = set(self.synthesis) - set(_SYNTHESIS_DEFAULTS) - {"f0", "margin"}
        if unknown:
            raise ValidationError(f"unknown synthesis keys: {', '.join(sorted(unknown))}")
        if int(self.seed) != self.seed:
            raise ValidationError("seed must be an integer")
        merged = {**_SYNTHESIS_DEFAULTS, **self.synthesis}
        if int(merged["repeats"]) < 1:
            raise ValidationError("synthesis.repeats must be at least 1")
        object.__setattr__(self, "synthesis", merged)
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self, *, include_output: bool = True) -> dict[str, Any]:
        d = {
            "kind": self.kind,
            "geometry": self.geometry.to_dict(),
            "grid": dict(self.grid),
            "synthesis": dict(self.synthesis),
            "tls": dict(self.tls),
            "seed": self.seed,
        }
        if include_output:
            d["output_dir"] = self.output_dir
        return d

    def digest(self) -> str:
        """Digest of the content that determines the results (``output_dir`` excluded)."""
        return report_digest(canonical_json(self.to_dict(include_output=False)))

    def with_seed(self, seed: int) -> "SweepManifest":
        return SweepManifest(self.kind, self.geometry, self.grid, self.synthesis, self.tls, seed, self.output_dir)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base_dir: str | os.PathLike | None = None) -> "SweepManifest":
        if not isinstance(d, Mapping):
            raise ValidationError("manifest must be a JSON object")
        missing = [k for k in ("kind", "geometry", "grid") if k not in d]
        if missing:
            raise ValidationError(f"manifest is missing {', '.join(missing)}")
        unknown = set(d) - {"kind", "geometry", "grid", "synthesis", "tls", "seed", "output_dir"}
        if unknown:
            raise ValidationError(f"unknown manifest keys: {', '.join(sorted(unknown))}")
        try:
            geometry = DeviceGeometry(**d["geometry"])
        except TypeError as exc:
            raise ValidationError(f"geometry: {exc}") from None
        out = d.get("output_dir", ".")
        if base_dir is not None and not os.path.isabs(out):
            out = os.path.join(base_dir, out)
        return cls(
            kind=d["kind"],
            geometry=geometry,
            grid=dict(d["grid"]),
            synthesis=dict(d.get("synthesis", {})),
            tls=dict(d.get("tls", {})),
            seed=d.get("seed", 0),
            output_dir=str(out),
        )


def read_manifest(path) -> SweepManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}", exc.lineno) from None
    return SweepManifest.from_dict(d, base_dir=path.parent)


def iter_records(reports: Iterable[Report]) -> Iterable[ResonanceRecord]:
    for r in reports:
        yield from r.resonances
