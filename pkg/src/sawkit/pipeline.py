"""Synthetic experiments and batch analysis used by the command line.

:func:`plan_traces` turns a :class:`~sawkit.io.SweepManifest` into traces
with ground-truth records.  The ``*_dataset`` and ``analyze_*`` helpers turn
fitted resonances back into loss-model inputs.  Only :func:`compare_truth`
looks at ground truth.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .com_sim import (
    SynthesisSpec,
    derive_seed,
    fit_rs_from_fsr,
    free_spectral_range,
    linewidth_grid,
    mode_comb,
    resonance_frequency,
    single_mode_comb,
    synthesize_s11,
)
from .domain import ComplexTrace, phonon_number
from .errors import NumericalError, SawkitError, ValidationError
from .io import ResonanceRecord, SweepManifest
from .loss_models import (
    TlsFit,
    TlsLossParams,
    fit_power_sweep,
    fit_temperature_sweep,
    freq_shift_temperature,
    qi_power_model,
)
from .resonance_extract import fit_modes, fit_resonance
from .twotone import DEFAULT_T1_RATIO, ProbeScan, TwoToneResult, fit_twotone, twotone_forward

__all__ = [
    "SyntheticTrace",
    "worker_count",
    "steady_state_phonons",
    "plan_traces",
    "fit_traces",
    "central_modes",
    "power_dataset",
    "analyze_power",
    "temperature_dataset",
    "analyze_temperature",
    "twotone_scans",
    "analyze_twotone",
    "geometry_table",
    "compare_truth",
]

CENTRAL_MODES = 6
DEFAULT_TEMPERATURE = 0.01


@dataclass(frozen=True)
class SyntheticTrace:
    stem: str
    trace: ComplexTrace
    truth: dict[str, Any]


def worker_count(default: int = 4) -> int:
    """Thread pool size: ``SAWKIT_THREADS`` if set, else ``min(default, cpu count)``."""
    raw = os.environ.get("SAWKIT_THREADS")
    if raw is None or raw.strip() == "":
        return max(1, min(default, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"SAWKIT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"SAWKIT_THREADS must be a positive integer, got {raw!r}")
    return n


# --- synthesis ------------------------------------------------------------------


def steady_state_phonons(P_dbm: float, f0: float, Q_c: float, qi_of_n: Callable[[float], float], max_iter: int = 200):
    """Self-consistent ``(n, Q_i)`` when Q_i itself depends on the phonon number."""
    qi = float(qi_of_n(0.0))
    n = 0.0
    for _ in range(max_iter):
        n_new = float(phonon_number(P_dbm, f0, 1.0 / (1.0 / qi + 1.0 / Q_c), Q_c))
        qi = float(qi_of_n(n_new))
        if abs(n_new - n) <= 1e-13 * max(n_new, 1e-300):
            return n_new, qi
        n = n_new
    raise NumericalError(f"phonon number at {P_dbm} dBm did not settle in {max_iter} iterations")


def _tls(manifest: SweepManifest, f0: float) -> TlsLossParams | None:
    t = manifest.tls
    if not t:
        return None
    return TlsLossParams(
        Q_TLS=float(t["Q_TLS"]),
        Q_rl=float(t["Q_rl"]),
        n_c=float(t["n_c"]),
        beta=float(t.get("beta", 1.0)),
        f0=f0,
        T_ref=float(t.get("T_ref", 0.01)),
        mu=float(t.get("mu", 0.0)),
    )


def _centre(manifest: SweepManifest) -> float:
    syn = manifest.synthesis
    return float(syn["f0"]) if "f0" in syn else resonance_frequency(manifest.geometry)


def _spec(comb, grid, syn) -> SynthesisSpec:
    return SynthesisSpec(
        comb,
        grid,
        noise_sigma=float(syn["noise_sigma"]),
        cable_delay_tau=float(syn["cable_delay_tau"]),
        background_amplitude=float(syn["background_amplitude"]),
        background_phase=float(syn["background_phase"]),
    )


def _mode_truth(f0, qi, qc) -> dict[str, float]:
    return {"f0": float(f0), "Q_i": float(qi), "Q_c": float(qc), "Q_l": 1.0 / (1.0 / qi + 1.0 / qc)}


class _Planner:
    def __init__(self, manifest: SweepManifest):
        self.m = manifest
        self.syn = manifest.synthesis
        self.out: list[SyntheticTrace] = []

    def single(self, prefix, f_centre, f0, qi, truth, *, power=None, temperature=None, extra=None):
        qc = float(self.syn["Q_c"])
        ql = 1.0 / (1.0 / qi + 1.0 / qc)
        grid = linewidth_grid(f_centre, ql, float(self.syn["span_linewidths"]), int(self.syn["points"]))
        self.emit(prefix, single_mode_comb(f0, qi, qc), grid, truth, [_mode_truth(f0, qi, qc)], power, temperature, extra)

    def emit(self, prefix, comb, grid, truth, modes, power=None, temperature=None, extra=None):
        for _ in range(int(self.syn["repeats"])):
            index = len(self.out)
            seed = derive_seed(self.m.seed, index)
            stem = f"{prefix}_{index:04d}"
            trace = synthesize_s11(
                _spec(comb, grid, self.syn), seed, label=stem, drive_power_dbm=power, temperature_K=temperature, extra=extra
            )
            t = {"kind": self.m.kind, "index": index, "seed": seed, "modes": modes, **truth}
            self.out.append(SyntheticTrace(stem, trace, t))


def plan_traces(manifest: SweepManifest) -> list[SyntheticTrace]:
    """Every trace a manifest describes, in a fixed order, each with its own derived seed."""
    pl = _Planner(manifest)
    syn = manifest.synthesis
    kind = manifest.kind
    if kind == "geometry_sweep":
        for L in manifest.grid["cavity_length_L"]:
            g = manifest.geometry.replace(cavity_length_L=float(L))
            comb = mode_comb(g, float(syn["Q_i"]), float(syn["Q_c"]))
            lws = [m.linewidth for m in comb.modes]
            f_lo = comb.modes[0].frequency - 10 * lws[0]
            f_hi = comb.modes[-1].frequency + 10 * lws[-1]
            points = int(math.ceil((f_hi - f_lo) / (min(lws) / float(syn["points_per_linewidth"])))) + 1
            modes = [_mode_truth(m.frequency, m.Q_i, m.Q_c) for m in comb.modes]
            truth = {"cavity_length_L": float(L), "fsr": comb.fsr, "stopband_center": comb.stopband_center}
            pl.emit("geometry", comb, (f_lo, f_hi, points), truth, modes, extra={"cavity_length_L": float(L)})
    elif kind == "power_sweep":
        f0 = _centre(manifest)
        p = _tls(manifest, f0)
        T = float(manifest.tls.get("T", DEFAULT_TEMPERATURE)) if p else None
        qc = float(syn["Q_c"])
        for P in manifest.grid["power_dbm"]:
            if p is None:
                qi = float(syn["Q_i"])
                n = float(phonon_number(P, f0, 1.0 / (1.0 / qi + 1.0 / qc), qc))
            else:
                n, qi = steady_state_phonons(P, f0, qc, lambda x: qi_power_model(x, T, p))
            pl.single("power", f0, f0, qi, {"power_dbm": float(P), "n": n, "temperature_K": T}, power=float(P), temperature=T)
    elif kind == "temperature_sweep":
        f0 = _centre(manifest)
        p = _tls(manifest, f0)
        qc = float(syn["Q_c"])
        for T in manifest.grid["temperature_K"]:
            f_T = f0 * (1.0 + freq_shift_temperature(T, f0, p.Q_TLS))
            for P in manifest.grid["power_dbm"]:
                n, qi = steady_state_phonons(P, f_T, qc, lambda x: qi_power_model(x, T, p))
                truth = {"power_dbm": float(P), "n": n, "temperature_K": float(T)}
                pl.single("temperature", f0, f_T, qi, truth, power=float(P), temperature=float(T))
    elif kind == "twotone_scan":
        f_pump = float(manifest.grid.get("f_pump", _centre(manifest)))
        p = _tls(manifest, f_pump)
        omega0, t2 = float(manifest.tls["omega0"]), float(manifest.tls["t2"])
        T = float(manifest.tls.get("T", p.T_ref))
        n_grid = [0.0] + [float(v) for v in manifest.grid["n_pump"] if v > 0]
        for det in manifest.grid["probe_detunings"]:
            f_probe = f_pump + float(det)
            for n in n_grid:
                if n == 0.0:
                    qi, df = float(qi_power_model(0.0, T, p.replace(f0=f_probe))), 0.0
                else:
                    qi, df = twotone_forward(n, f_pump, f_probe, p, omega0, t2, temperature=T)
                meta = {"f_pump": f_pump, "probe_detuning": float(det), "n_pump": n}
                truth = {**meta, "f_probe": f_probe, "shift": df, "temperature_K": T}
                pl.single("twotone", f_probe, f_probe + df, qi, truth, temperature=T, extra=meta)
    return pl.out


# --- fitting ------------------------------------------------------------------


def _fit_one(source: str, trace: ComplexTrace, multimode: bool, bootstrap: int, seed: int) -> list[ResonanceRecord]:
    meta = {k: v for k, v in trace.extra.items() if k not in ("rng", "seed")}
    try:
        if multimode:
            fits = fit_modes(trace, bootstrap=bootstrap, seed=seed)
            return [ResonanceRecord(f, source, {**meta, "mode_index": k}) for k, f in enumerate(fits)]
        return [ResonanceRecord(fit_resonance(trace, bootstrap=bootstrap, seed=seed), source, meta)]
    except SawkitError as exc:
        exc.source = source
        raise


def fit_traces(
    items: Sequence[tuple[str, ComplexTrace]],
    *,
    multimode: bool = False,
    bootstrap: int = 0,
    seed: int = 0,
    threads: int | None = None,
) -> list[ResonanceRecord]:
    """Fit traces on a thread pool; output order follows input order."""
    threads = worker_count() if threads is None else threads
    jobs = [(src, tr, multimode, bootstrap, derive_seed(seed, i)) for i, (src, tr) in enumerate(items)]
    if threads == 1 or len(jobs) < 2:
        results = [_fit_one(*j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda j: _fit_one(*j), jobs))
    return [r for group in results for r in group]


# --- datasets -----------------------------------------------------------------


def _unique(values: Iterable[float | None], what: str, override: float | None) -> float:
    if override is not None:
        return float(override)
    vals = {v for v in values if v is not None}
    if len(vals) != 1:
        raise ValidationError(f"{what} is {'unknown' if not vals else 'not unique'}; pass it explicitly")
    return float(vals.pop())


def power_dataset(records: Sequence[ResonanceRecord], temperature: float | None = None):
    """``(n, Q_i, Q_i_sigma, T, f0)`` from fits that carry a drive power."""
    recs = [r for r in records if r.fit.drive_power_dbm is not None]
    if not recs:
        raise ValidationError("no resonance fit carries a drive power")
    T = _unique((r.fit.temperature_K for r in recs), "temperature", temperature)
    f0 = float(np.median([r.fit.f0 for r in recs]))
    n = np.array([phonon_number(r.fit.drive_power_dbm, r.fit.f0, r.fit.Q_l, r.fit.Q_c) for r in recs])
    qi = np.array([r.fit.Q_i for r in recs])
    sig = np.array([r.fit.uncertainties.get("Q_i", math.nan) for r in recs])
    order = np.argsort(n, kind="stable")
    return n[order], qi[order], sig[order], T, f0


def _capture(fn, *args, **kwargs):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = fn(*args, **kwargs)
    for w in caught:
        warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return out, [f"{w.category.__name__}: {w.message}" for w in caught]


def analyze_power(records: Sequence[ResonanceRecord], temperature: float | None = None) -> tuple[dict, list[dict]]:
    n, qi, sig, T, f0 = power_dataset(records, temperature)
    fit, warned = _capture(fit_power_sweep, n, qi, T, f0)
    entry = {"kind": "power_sweep", "temperature_K": T, "phonon_convention": "n = 4 P Q_l^2 / (hbar w0^2 Q_c)", **fit.to_dict()}
    entry["warnings"] = warned
    rows = [{"n": float(a), "Q_i": float(b), "Q_i_sigma": _finite_or_none(c)} for a, b, c in zip(n, qi, sig)]
    return entry, rows


def _finite_or_none(x):
    return float(x) if math.isfinite(x) else None


def temperature_dataset(records: Sequence[ResonanceRecord]):
    """``(qi_data, shift_data, f0_ref, T_min)``; shifts are taken at each temperature's lowest power."""
    recs = [r for r in records if r.fit.temperature_K is not None and r.fit.drive_power_dbm is not None]
    if not recs:
        raise ValidationError("no resonance fit carries both a temperature and a drive power")
    qi_data = np.array(
        [(r.fit.temperature_K, phonon_number(r.fit.drive_power_dbm, r.fit.f0, r.fit.Q_l, r.fit.Q_c), r.fit.Q_i) for r in recs]
    )
    temps = sorted({r.fit.temperature_K for r in recs})
    if len(temps) < 3:
        raise ValidationError(f"temperature fit needs at least 3 temperatures, got {len(temps)}")
    f_at = {}
    for T in temps:
        at = [r for r in recs if r.fit.temperature_K == T]
        lowest = min(r.fit.drive_power_dbm for r in at)
        f_at[T] = float(np.mean([r.fit.f0 for r in at if r.fit.drive_power_dbm == lowest]))
    f_ref = f_at[temps[0]]
    shift = np.array([(T, f_at[T] - f_ref) for T in temps])
    return qi_data, shift, f_ref, temps[0]


def analyze_temperature(records: Sequence[ResonanceRecord], T_ref: float = 0.01) -> tuple[dict, dict]:
    qi_data, shift, f_ref, t_min = temperature_dataset(records)
    fit, warned = _capture(fit_temperature_sweep, qi_data, shift, f_ref, T_ref=T_ref, reference_temperature=t_min)
    entry = {"kind": "temperature_sweep", "reference_temperature": t_min, **fit.to_dict(), "warnings": warned}
    tables = {
        "qi_vs_temperature": [{"temperature_K": a, "n": b, "Q_i": c} for a, b, c in qi_data.tolist()],
        "shift_vs_temperature": [{"temperature_K": a, "shift_hz": b} for a, b in shift.tolist()],
    }
    return entry, tables


def twotone_scans(records: Sequence[ResonanceRecord]) -> tuple[list[ProbeScan], float]:
    """Probe scans grouped by detuning, each starting with its unpumped point.

    Shifts are relative to the unpumped fit.  Its error is common to the
    whole scan, so fit these with ``fit_offsets=True``.
    """
    recs = [r for r in records if {"f_pump", "probe_detuning", "n_pump"} <= set(r.meta)]
    if not recs:
        raise ValidationError("no resonance fit carries f_pump, probe_detuning and n_pump metadata")
    f_pump = _unique((r.meta["f_pump"] for r in recs), "pump frequency", None)
    scans = []
    for det in sorted({r.meta["probe_detuning"] for r in recs}):
        group = sorted((r for r in recs if r.meta["probe_detuning"] == det), key=lambda r: r.meta["n_pump"])
        refs = [r for r in group if r.meta["n_pump"] == 0]
        if not refs:
            raise ValidationError(f"probe at detuning {det:.9g} Hz has no unpumped (n_pump = 0) reference")
        ref = refs[0]
        pumped = [r for r in group if r.meta["n_pump"] > 0]
        if len(pumped) < 3:
            raise ValidationError(f"probe at detuning {det:.9g} Hz needs at least 3 pumped points")
        pts = [ref] + pumped
        scans.append(
            ProbeScan(
                f_probe=ref.fit.f0,
                n_pump=np.array([r.meta["n_pump"] for r in pts]),
                Q_i=np.array([r.fit.Q_i for r in pts]),
                shift=np.array([r.fit.f0 - ref.fit.f0 for r in pts]),
                Q_i_sigma=np.array([r.fit.uncertainties["Q_i"] for r in pts]),
                shift_sigma=np.array([r.fit.uncertainties["f0"] for r in pts]),
            )
        )
    return scans, f_pump


def analyze_twotone(
    records: Sequence[ResonanceRecord],
    p: TlsLossParams,
    *,
    temperature: float | None = None,
    t1_closure_ratio: float = DEFAULT_T1_RATIO,
) -> dict:
    scans, f_pump = twotone_scans(records)
    res: TwoToneResult
    res, warned = _capture(
        fit_twotone, scans, f_pump, p, temperature=temperature, t1_closure_ratio=t1_closure_ratio, fit_offsets=True
    )
    return {"f_pump": f_pump, "tls_params": p.to_dict(), **res.to_dict(), "warnings": warned}


def central_modes(fits: Sequence[Any], count: int = CENTRAL_MODES) -> list[Any]:
    """The ``count`` modes nearest the middle of a frequency-sorted comb (all if fewer)."""
    ordered = sorted(fits, key=lambda f: f.f0)
    if len(ordered) <= count:
        return ordered
    start = (len(ordered) - count) // 2
    return ordered[start : start + count]


def geometry_table(records: Sequence[ResonanceRecord], manifest_geometry) -> tuple[list[dict], dict | None]:
    """Rows ``(L, modes, fsr, Q_i mean and max over the central modes)`` and the |r_s| fit."""
    by_source: dict[str, list[ResonanceRecord]] = {}
    for r in records:
        by_source.setdefault(r.source, []).append(r)
    rows = []
    samples = []
    for source, recs in by_source.items():
        L = recs[0].meta.get("cavity_length_L")
        fits = [r.fit for r in recs]
        central = central_modes(fits)
        qis = [f.Q_i for f in central]
        f0s = sorted(f.f0 for f in fits)
        fsr = float(np.mean(np.diff(f0s))) if len(f0s) > 1 else None
        rows.append(
            {
                "source": source,
                "cavity_length_L": L,
                "modes": len(fits),
                "fsr": fsr,
                "Q_i_mean_central": float(np.mean(qis)),
                "Q_i_max_central": float(np.max(qis)),
            }
        )
        if fsr is not None and L is not None:
            samples.append((L, fsr))
    rows.sort(key=lambda r: (r["cavity_length_L"] is None, r["cavity_length_L"] or 0.0, r["source"]))
    rs_fit = None
    if len({L for L, _ in samples}) >= 2:
        f0 = resonance_frequency(manifest_geometry)
        fit = fit_rs_from_fsr(samples, f0, manifest_geometry.pitch_p)
        rs_fit = {"rs": fit.rs, "stderr": fit.stderr, "residual_rms": fit.residual_rms, "samples": len(samples)}
    return rows, rs_fit


# --- comparison ---------------------------------------------------------------


def compare_truth(records: Sequence[ResonanceRecord], truths: Mapping[str, Mapping[str, Any]]) -> list[dict]:
    """Match each fit to the nearest generated mode of its source and report relative errors."""
    rows = []
    for r in records:
        truth = truths.get(r.source)
        if truth is None:
            continue
        mode = min(truth["modes"], key=lambda m: abs(m["f0"] - r.fit.f0))
        rows.append(
            {
                "source": r.source,
                "f0_error_hz": r.fit.f0 - mode["f0"],
                "Q_i_rel_error": r.fit.Q_i / mode["Q_i"] - 1.0,
                "Q_c_rel_error": r.fit.Q_c / mode["Q_c"] - 1.0,
            }
        )
    return rows


def summarize_comparison(rows: Sequence[Mapping[str, float]]) -> dict[str, float]:
    if not rows:
        return {}
    qi = np.array([r["Q_i_rel_error"] for r in rows])
    qc = np.array([r["Q_c_rel_error"] for r in rows])
    return {
        "count": len(rows),
        "Q_i_median_rel_error": float(np.median(qi)),
        "Q_i_max_abs_rel_error": float(np.max(np.abs(qi))),
        "Q_c_max_abs_rel_error": float(np.max(np.abs(qc))),
    }


def tls_from_manifest(manifest: SweepManifest, f0: float) -> TlsLossParams | None:
    return _tls(manifest, f0)


def free_spectral_ranges(manifest: SweepManifest) -> list[float]:
    g = manifest.geometry
    f0 = resonance_frequency(g)
    return [free_spectral_range(g.replace(cavity_length_L=float(L)), f0) for L in manifest.grid["cavity_length_L"]]
