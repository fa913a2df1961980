"""Command-line interface.

Exit codes: 0 on success, 1 on invalid input (including usage errors and
I/O failures), 2 when a numerical stage fails or a rerun does not reproduce
its report.  Reports go to ``--out`` or, without it, to standard output.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .errors import NumericalError, SawkitError, ValidationError
from .io import (
    Report,
    ResonanceRecord,
    SweepManifest,
    canonical_json,
    file_digest,
    read_manifest,
    read_report,
    read_trace,
    report_digest,
    write_csv_trace,
    write_touchstone,
)
from .loss_models import TlsLossParams, fit_power_sweep
from .pipeline import (
    analyze_power,
    analyze_temperature,
    analyze_twotone,
    compare_truth,
    geometry_table,
    fit_traces,
    plan_traces,
    summarize_comparison,
    tls_from_manifest,
)

__all__ = ["main", "run_cli", "build_parser"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _provenance(command: str, options: Mapping[str, Any], **extra) -> dict[str, Any]:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    created = None
    if epoch:
        try:
            created = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        except ValueError:
            raise ValidationError(f"SOURCE_DATE_EPOCH must be an integer, got {epoch!r}") from None
    return {"tool": "sawkit", "version": __version__, "command": command, "options": dict(options), "created": created, **extra}


def _columns(args) -> dict[str, str]:
    names = {"freq": "freq_col", "re": "re_col", "im": "im_col", "mag_db": "mag_db_col", "phase_deg": "phase_deg_col"}
    return {k: getattr(args, a) for k, a in names.items() if getattr(args, a, None)}


def _load_reports(paths: Sequence[str]) -> tuple[list[Report], list[dict]]:
    ordered = sorted(paths)
    return [read_report(p) for p in ordered], [{"path": p, "digest": file_digest(p)} for p in ordered]


def _records(reports: Sequence[Report]) -> list[ResonanceRecord]:
    return [r for rep in reports for r in rep.resonances]


def _truth_path(trace_path: str) -> Path:
    p = Path(trace_path)
    return p.with_name(p.stem + ".truth.json")


# --- commands (each takes a plain options dict so reruns can replay it) -----------


def _cmd_simulate(opts: Mapping[str, Any], out_dir: Path) -> Report:
    manifest = SweepManifest.from_dict(opts["manifest"])
    if opts.get("seed") is not None:
        manifest = manifest.with_seed(opts["seed"])
    fmt = opts.get("format", "s1p")
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for item in plan_traces(manifest):
        name = f"{item.stem}.{fmt}"
        if fmt == "csv":
            write_csv_trace(item.trace, out_dir / name)
        else:
            write_touchstone(item.trace, out_dir / name, header=(f"sawkit {__version__} synthetic trace",))
        truth = {"trace_file": name, "manifest_digest": manifest.digest(), "truth": item.truth}
        truth_name = f"{item.stem}.truth.json"
        (out_dir / truth_name).write_text(canonical_json(truth), encoding="utf-8")
        rows.append(
            {"stem": item.stem, "trace_file": name, "trace_digest": file_digest(out_dir / name), "truth_file": truth_name}
        )
    return Report(
        inputs={"manifest_digest": manifest.digest()},
        tables={"traces": rows},
        provenance=_provenance("simulate", opts, seed=manifest.seed, manifest_digest=manifest.digest()),
    )


def _cmd_fit_resonance(opts: Mapping[str, Any]) -> Report:
    paths = list(opts["traces"])
    items = [(p, read_trace(p, opts.get("columns") or None)) for p in paths]
    records = fit_traces(items, multimode=opts.get("multimode", False), bootstrap=opts.get("bootstrap", 0), seed=opts.get("seed", 0))
    tables: dict[str, Any] = {}
    if opts.get("compare_truth"):
        truths = {}
        for p in paths:
            tp = _truth_path(p)
            if not tp.exists():
                raise ValidationError(f"{p}: no ground-truth sidecar {tp.name}")
            truths[p] = json.loads(tp.read_text(encoding="utf-8"))["truth"]
        rows = compare_truth(records, truths)
        tables["truth_comparison"] = rows
        tables["truth_summary"] = summarize_comparison(rows)
    return Report(
        inputs={"traces": [{"path": p, "digest": file_digest(p)} for p in paths]},
        resonances=records,
        tables=tables,
        provenance=_provenance("fit-resonance", opts, seed=opts.get("seed", 0)),
    )


def _read_power_csv(path: str, n_col: str | None, qi_col: str | None):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]

    def find(explicit, aliases, role):
        for name in ([explicit.lower()] if explicit else aliases):
            if name in header:
                return header.index(name)
        raise ValidationError(f"{path}: no {role} column (tried {', '.join([explicit] if explicit else aliases)})")

    i_n = find(n_col, ("n", "phonon_number", "n_phonons"), "phonon-number")
    i_q = find(qi_col, ("q_i", "qi", "q_int"), "internal-Q")
    data = []
    for k, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ValidationError(f"{path}: row {k} has {len(r)} fields, header has {len(header)}")
        try:
            data.append((float(r[i_n]), float(r[i_q])))
        except ValueError:
            raise ValidationError(f"{path}: non-numeric value in row {k}") from None
    return np.array(data).reshape(-1, 2)


def _cmd_fit_power(opts: Mapping[str, Any]) -> Report:
    path = opts["input"]
    if path.lower().endswith(".csv"):
        if opts.get("f0") is None or opts.get("temperature") is None:
            raise ValidationError("CSV input needs --f0 and --temperature")
        data = _read_power_csv(path, opts.get("n_col"), opts.get("qi_col"))
        fit = fit_power_sweep(data[:, 0], data[:, 1], opts["temperature"], opts["f0"])
        entry = {"kind": "power_sweep", "temperature_K": opts["temperature"], **fit.to_dict(), "warnings": []}
        rows = [{"n": float(a), "Q_i": float(b), "Q_i_sigma": None} for a, b in data]
        records = []
    else:
        rep = read_report(path)
        records = rep.resonances
        entry, rows = analyze_power(records, opts.get("temperature"))
    return Report(
        inputs={"files": [{"path": path, "digest": file_digest(path)}]},
        tls_fits=[entry],
        tables={"power_sweep": rows},
        provenance=_provenance("fit-power", opts),
    )


def _cmd_fit_temperature(opts: Mapping[str, Any]) -> Report:
    reports, inputs = _load_reports(opts["reports"])
    entry, tables = analyze_temperature(_records(reports), T_ref=opts.get("t_ref", 0.01))
    return Report(inputs={"files": inputs}, tls_fits=[entry], tables=tables, provenance=_provenance("fit-temperature", opts))


def _tls_params(opts: Mapping[str, Any], f0: float) -> TlsLossParams:
    if opts.get("tls_report"):
        rep = read_report(opts["tls_report"])
        if not rep.tls_fits:
            raise ValidationError(f"{opts['tls_report']}: report has no TLS fit")
        return TlsLossParams.from_dict(rep.tls_fits[0]["params"]).replace(f0=f0)
    missing = [k for k in ("q_tls", "q_rl", "n_c") if opts.get(k) is None]
    if missing:
        raise ValidationError("give --tls-report or all of --q-tls, --q-rl, --n-c")
    return TlsLossParams(
        Q_TLS=opts["q_tls"], Q_rl=opts["q_rl"], n_c=opts["n_c"], beta=opts.get("beta") or 1.0, f0=f0,
        T_ref=opts.get("t_ref") or 0.01, mu=opts.get("mu") or 0.0,
    )


def _cmd_fit_twotone(opts: Mapping[str, Any]) -> Report:
    reports, inputs = _load_reports(opts["reports"])
    records = _records(reports)
    pumps = {r.meta.get("f_pump") for r in records if "f_pump" in r.meta}
    if len(pumps) != 1:
        raise ValidationError("two-tone fits need resonances from exactly one pump frequency")
    p = _tls_params(opts, float(pumps.pop()))
    entry = analyze_twotone(records, p, temperature=opts.get("temperature"), t1_closure_ratio=opts.get("t1_ratio", 0.5))
    if opts.get("tls_report"):
        inputs.append({"path": opts["tls_report"], "digest": file_digest(opts["tls_report"])})
    return Report(inputs={"files": inputs}, twotone=[entry], provenance=_provenance("fit-twotone", opts))


def _cmd_sweep(opts: Mapping[str, Any]) -> Report:
    manifest = SweepManifest.from_dict(opts["manifest"])
    if opts.get("seed") is not None:
        manifest = manifest.with_seed(opts["seed"])
    planned = plan_traces(manifest)
    multimode = manifest.kind == "geometry_sweep"
    records = fit_traces([(t.stem, t.trace) for t in planned], multimode=multimode, seed=manifest.seed)
    truths = {t.stem: t.truth for t in planned}
    comparison = compare_truth(records, truths)
    tables: dict[str, Any] = {"truth_comparison": comparison, "truth_summary": summarize_comparison(comparison)}
    tls_fits, twotone = [], []
    kind = manifest.kind
    if kind == "geometry_sweep":
        rows, rs_fit = geometry_table(records, manifest.geometry)
        generated = {t.stem: t.truth for t in planned}
        for row in rows:
            row["fsr_model"] = generated[row["source"]]["fsr"]
        tables["geometry"] = rows
        tables["rs_fit"] = rs_fit
    elif kind == "power_sweep":
        if len(set(manifest.grid["power_dbm"])) >= 5:
            entry, rows = analyze_power(records)
            tls_fits.append(entry)
            tables["power_sweep"] = rows
    elif kind == "temperature_sweep":
        entry, extra = analyze_temperature(records, T_ref=float(manifest.tls.get("T_ref", 0.01)))
        tls_fits.append(entry)
        tables.update(extra)
    elif kind == "twotone_scan":
        f_pump = records[0].meta["f_pump"]
        p = tls_from_manifest(manifest, f_pump)
        twotone.append(analyze_twotone(records, p, temperature=manifest.tls.get("T")))
    return Report(
        inputs={"manifest_digest": manifest.digest()},
        resonances=records,
        tls_fits=tls_fits,
        twotone=twotone,
        tables=tables,
        provenance=_provenance("sweep", opts, seed=manifest.seed, manifest_digest=manifest.digest()),
    )


def _merge(opts: Mapping[str, Any]) -> Report:
    reports, inputs = _load_reports(opts["reports"])
    merged = Report(inputs={"files": inputs}, provenance=_provenance("report merge", opts))
    for path, rep in zip(sorted(opts["reports"]), reports):
        merged.resonances.extend(rep.resonances)
        merged.tls_fits.extend(rep.tls_fits)
        merged.twotone.extend(rep.twotone)
        for k, v in rep.tables.items():
            if isinstance(v, list) and isinstance(merged.tables.get(k), list):
                merged.tables[k] = merged.tables[k] + v
            elif k not in merged.tables:
                merged.tables[k] = v
            else:
                merged.tables[f"{k}@{path}"] = v
    return merged


_REPLAYABLE: dict[str, Callable[[Mapping[str, Any]], Report]] = {
    "fit-resonance": _cmd_fit_resonance,
    "fit-power": _cmd_fit_power,
    "fit-temperature": _cmd_fit_temperature,
    "fit-twotone": _cmd_fit_twotone,
    "sweep": _cmd_sweep,
    "report merge": _merge,
}


def _replay(report: Report) -> Report:
    prov = report.provenance
    command = prov.get("command")
    opts = prov.get("options")
    if command is None or opts is None:
        raise ValidationError("report provenance has no command/options to replay")
    if command == "simulate":
        with tempfile.TemporaryDirectory() as tmp:
            return _cmd_simulate(opts, Path(tmp))
    if command not in _REPLAYABLE:
        raise ValidationError(f"cannot replay command {command!r}")
    files = report.inputs.get("files", []) + report.inputs.get("traces", [])
    for f in files:
        if not Path(f["path"]).exists():
            raise ValidationError(f"input {f['path']} is missing")
        if file_digest(f["path"]) != f["digest"]:
            raise ValidationError(f"input {f['path']} changed since the report was written")
    return _REPLAYABLE[command](opts)


def _inspect(report: Report, digest: str) -> str:
    prov = report.provenance
    lines = [
        f"digest: {digest}",
        f"schema_version: {report.schema_version}",
        f"command: {prov.get('command')}  tool: {prov.get('tool')} {prov.get('version')}  seed: {prov.get('seed')}",
        f"resonances: {len(report.resonances)}  tls_fits: {len(report.tls_fits)}  twotone: {len(report.twotone)}",
    ]
    for r in report.resonances[:20]:
        f = r.fit
        lines.append(f"  {r.source or f.label}: f0={f.f0:.9g} Hz Q_i={f.Q_i:.5g} Q_c={f.Q_c:.5g} Q_l={f.Q_l:.5g}")
    if len(report.resonances) > 20:
        lines.append(f"  ... {len(report.resonances) - 20} more")
    for t in report.tls_fits:
        params = ", ".join(f"{k}={v:.5g}" for k, v in t["params"].items())
        lines.append(f"  tls ({t.get('kind', '?')}): {params}")
    for t in report.twotone:
        lines.append(f"  twotone: omega0={t['omega0']} t2={t['t2']} nc_eff={t['nc_eff']:.5g}")
    for k in sorted(report.tables):
        v = report.tables[k]
        lines.append(f"  table {k}: {len(v) if isinstance(v, list) else 'object'}")
    return "\n".join(lines)


# --- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sawkit", description="Simulate and fit one-port SAW resonator data.")
    parser.add_argument("--version", action="version", version=f"sawkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def out_flag(p):
        p.add_argument("--out", "-o", help="report path (default: standard output)")

    p = sub.add_parser("simulate", help="synthesise traces and ground-truth sidecars from a manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", help="directory for traces (default: the manifest's output_dir)")
    p.add_argument("--seed", type=int, help="override the manifest seed")
    p.add_argument("--format", choices=("s1p", "csv"), default="s1p")

    p = sub.add_parser("fit-resonance", help="fit resonances in Touchstone or CSV traces")
    p.add_argument("traces", nargs="+")
    p.add_argument("--multimode", action="store_true", help="find and fit every mode in each trace")
    p.add_argument("--bootstrap", type=int, default=0, metavar="N", help="residual-bootstrap refits per mode")
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    p.add_argument("--compare-truth", action="store_true", help="compare with <stem>.truth.json sidecars")
    for role in ("freq", "re", "im", "mag-db", "phase-deg"):
        p.add_argument(f"--{role}-col", metavar="NAME", help=f"CSV column holding {role.replace('-', '_')}")
    out_flag(p)

    p = sub.add_parser("fit-power", help="fit the TLS loss model to Q_i versus phonon number")
    p.add_argument("input", help="report from fit-resonance, or CSV with n and Q_i columns")
    p.add_argument("--temperature", type=float, help="bath temperature in K")
    p.add_argument("--f0", type=float, help="resonance frequency in Hz (CSV input)")
    p.add_argument("--n-col", help="CSV column of phonon numbers")
    p.add_argument("--qi-col", help="CSV column of internal Q")
    out_flag(p)

    p = sub.add_parser("fit-temperature", help="joint loss and frequency-shift fit versus temperature")
    p.add_argument("reports", nargs="+")
    p.add_argument("--t-ref", type=float, default=0.01, help="reference temperature of n_c in K")
    out_flag(p)

    p = sub.add_parser("fit-twotone", help="fit detuned-pump probe scans")
    p.add_argument("reports", nargs="+")
    p.add_argument("--tls-report", help="report whose first TLS fit supplies the loss parameters")
    p.add_argument("--q-tls", type=float)
    p.add_argument("--q-rl", type=float)
    p.add_argument("--n-c", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--t-ref", type=float)
    p.add_argument("--temperature", type=float, help="bath temperature in K (default: T_ref)")
    p.add_argument("--t1-ratio", type=float, default=0.5, help="closure T1 = ratio * T2")
    out_flag(p)

    p = sub.add_parser("sweep", help="simulate, fit and compare a whole manifest")
    p.add_argument("manifest")
    p.add_argument("--seed", type=int, help="override the manifest seed")
    out_flag(p)

    p = sub.add_parser("report", help="merge, inspect or rerun reports")
    rsub = p.add_subparsers(dest="action", required=True, metavar="ACTION")
    q = rsub.add_parser("merge", help="combine reports (ordered by path)")
    q.add_argument("reports", nargs="+")
    out_flag(q)
    q = rsub.add_parser("inspect", help="print a summary")
    q.add_argument("report")
    q = rsub.add_parser("rerun", help="replay a report's provenance and check it reproduces byte-for-byte")
    q.add_argument("report")
    out_flag(q)
    return parser


def _emit(report: Report, out: str | None) -> None:
    text = canonical_json(report.to_dict())
    if out:
        Path(out).write_bytes(text.encode("utf-8"))
        print(f"wrote {out} ({report_digest(text)})", file=sys.stderr)
    else:
        sys.stdout.write(text)


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "simulate":
        manifest = read_manifest(args.manifest)
        opts = {"manifest": manifest.to_dict(include_output=False), "seed": args.seed, "format": args.format}
        out_dir = Path(args.out_dir) if args.out_dir else Path(manifest.output_dir)
        report = _cmd_simulate(opts, out_dir)
        text = canonical_json(report.to_dict())
        (out_dir / "simulation.json").write_text(text, encoding="utf-8")
        print(f"wrote {len(report.tables['traces'])} traces to {out_dir}", file=sys.stderr)
        return 0
    if cmd == "fit-resonance":
        opts = {
            "traces": list(args.traces),
            "multimode": args.multimode,
            "bootstrap": args.bootstrap,
            "seed": args.seed,
            "compare_truth": args.compare_truth,
            "columns": _columns(args),
        }
        _emit(_cmd_fit_resonance(opts), args.out)
        return 0
    if cmd == "fit-power":
        opts = {k: getattr(args, k) for k in ("input", "temperature", "f0", "n_col", "qi_col")}
        _emit(_cmd_fit_power(opts), args.out)
        return 0
    if cmd == "fit-temperature":
        _emit(_cmd_fit_temperature({"reports": sorted(args.reports), "t_ref": args.t_ref}), args.out)
        return 0
    if cmd == "fit-twotone":
        keys = ("tls_report", "q_tls", "q_rl", "n_c", "beta", "mu", "t_ref", "temperature", "t1_ratio")
        opts = {"reports": sorted(args.reports), **{k: getattr(args, k) for k in keys}}
        _emit(_cmd_fit_twotone(opts), args.out)
        return 0
    if cmd == "sweep":
        manifest = read_manifest(args.manifest)
        _emit(_cmd_sweep({"manifest": manifest.to_dict(include_output=False), "seed": args.seed}), args.out)
        return 0
    if cmd == "report":
        if args.action == "merge":
            _emit(_merge({"reports": sorted(args.reports)}), args.out)
            return 0
        if args.action == "inspect":
            rep = read_report(args.report)
            print(_inspect(rep, file_digest(args.report)))
            return 0
        original = Path(args.report).read_bytes()
        rep = read_report(args.report)
        text = canonical_json(_replay(rep).to_dict())
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        if text.encode("utf-8") != original:
            print(f"rerun differs: {report_digest(original)} != {report_digest(text)}", file=sys.stderr)
            return 2
        print(f"reproduced {args.report} ({report_digest(original)})", file=sys.stderr)
        return 0
    raise ValidationError(f"unknown command {cmd!r}")  # pragma: no cover


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _dispatch(args)
    except SawkitError as exc:
        where = getattr(exc, "source", None)
        prefix = f"{where}: " if where else ""
        print(f"sawkit: error: {prefix}{exc}", file=sys.stderr)
        return 2 if isinstance(exc, NumericalError) else 1
    except OSError as exc:
        print(f"sawkit: I/O error: {exc}", file=sys.stderr)
        return 1


run_cli = main
