"""Run orchestration and file output for the command-line tools.

Every command writes plot-ready CSV tables plus a ``report.json`` whose
``files`` manifest lists each output with its sha256.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (UnphysicalStateError, VolumeSeries, bloch_array,
                       detect_nonmarkovianity, decoherence_rate, ellipsoid, entropy,
                       maps_from_trajectory, tomography_inputs)
from .bath import (correlation_numeric, decompose_correlation, spectral_density, spectral_peak)
from .config import RunConfig
from .heom import (HeomOperator, PropagationAbort, UnderTruncationWarning, build_hierarchy,
                   propagate)
from .model import adiabatic_frame, dressed_gap, fs_to_au

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_INVALID, EXIT_FLAGGED, EXIT_ABORT = 0, 1, 2, 3
CSV_FMT = "%.12e"
POSITIVITY_TOL = 1e-6

TRAJECTORY_COLUMNS = ("t_fs", "e_field_au", "rho11", "rho22", "re_rho12", "im_rho12",
                      "re_x1_11", "im_x1_11", "re_x1_22", "im_x1_22",
                      "ad_rho11", "ad_rho22", "re_rho12_ad", "im_rho12_ad")
ANALYSIS_COLUMNS = ("t_fs", "V", "Gamma_au", "S_bits", "x", "y", "z",
                    "ad_pop_ground", "re_rho12_ad", "im_rho12_ad")
ELLIPSOID_COLUMNS = ("t_fs", "cx", "cy", "cz", "a1", "a2", "a3",
                     "d11", "d12", "d13", "d21", "d22", "d23", "d31", "d32", "d33")


@dataclass
class RunReport:
    command: str
    config: dict
    status: int = EXIT_OK
    wall_time_s: float = 0.0
    hierarchy_size: Optional[int] = None
    flags: Dict[str, bool] = field(default_factory=dict)
    bumps: List[dict] = field(default_factory=list)
    metrics: Dict[str, object] = field(default_factory=dict)
    files: Dict[str, str] = field(default_factory=dict)
    points: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "package_version": __version__,
            "command": self.command,
            "status": self.status,
            "wall_time_s": self.wall_time_s,
            "hierarchy_size": self.hierarchy_size,
            "config": self.config,
            "flags": self.flags,
            "bumps": self.bumps,
            "metrics": self.metrics,
            "points": self.points,
            "files": self.files,
        }


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_csv(path, columns: Sequence[str], data: np.ndarray) -> None:
    np.savetxt(path, np.asarray(data, dtype=float), fmt=CSV_FMT, delimiter=",",
               header=",".join(columns), comments="")


def read_csv(path) -> Dict[str, np.ndarray]:
    arr = np.genfromtxt(path, delimiter=",", names=True)
    return {name: np.atleast_1d(arr[name]) for name in arr.dtype.names}


def _finite(x):
    """JSON-safe float (NaN/inf become None)."""
    x = float(x)
    return x if math.isfinite(x) else None


def finalize(report: RunReport, out_dir: Path, started: float) -> RunReport:
    """Hash every file in ``out_dir`` (recursively, except reports) and write report.json."""
    report.wall_time_s = time.perf_counter() - started
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "report.json":
            files[p.relative_to(out_dir).as_posix()] = sha256_file(p)
    report.files = files
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=False))
    return report


def verify_manifest(out_dir) -> bool:
    out_dir = Path(out_dir)
    data = json.loads((out_dir / "report.json").read_text())
    return all((out_dir / name).is_file() and sha256_file(out_dir / name) == digest
               for name, digest in data["files"].items())


def set_threads(n: Optional[int]) -> int:
    import numba

    cap = numba.config.NUMBA_NUM_THREADS
    n = cap if n is None else max(1, min(int(n), cap))
    numba.set_num_threads(n)
    return n


class Session:
    """Domain objects built once from a RunConfig."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.params = cfg.system_params()
        self.bath = cfg.bath_spec()
        self.expansion = decompose_correlation(self.bath)
        self.pulse = cfg.pulse_spec()
        self.prop = cfg.propagation_config()
        self.hierarchy = build_hierarchy(self.expansion.count, self.prop.l_max)
        self._op = None

    @property
    def operator(self) -> HeomOperator:
        if self._op is None:
            self._op = HeomOperator(self.hierarchy, self.expansion, self.params, self.pulse,
                                    self.prop.rescaling)
        return self._op

    def run(self, rho0):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", UnderTruncationWarning)
            traj = propagate(rho0, self.prop, self.hierarchy, self.expansion, self.params,
                             self.pulse, self.operator)
        for w in caught:
            log.warning("%s", w.message)
        return traj

    def gap_range(self, field_values) -> tuple:
        """Min and max dressed gap over the field range actually sampled."""
        lo, hi = float(np.min(field_values)), float(np.max(field_values))
        p = self.params
        # the gap is minimal where the diabatic splitting vanishes, E = delta / mu0
        e_star = p.delta / p.mu0
        cands = [dressed_gap(p, lo), dressed_gap(p, hi)]
        if lo <= e_star <= hi:
            cands.append(dressed_gap(p, e_star))
        return min(cands), max(cands)


def _state_tables(times_fs, fields_au, rho, x1, params):
    """Trajectory and single-state observable columns for one initial state."""
    u = adiabatic_frame(params)
    ad = np.einsum("ji,tjk,kl->til", u, rho, u)
    traj = np.column_stack([
        times_fs, fields_au, rho[:, 0, 0].real, rho[:, 1, 1].real, rho[:, 0, 1].real,
        rho[:, 0, 1].imag, x1[:, 0, 0].real, x1[:, 0, 0].imag, x1[:, 1, 1].real,
        x1[:, 1, 1].imag, ad[:, 0, 0].real, ad[:, 1, 1].real, ad[:, 0, 1].real, ad[:, 0, 1].imag,
    ])
    s = np.empty(times_fs.size)
    for i, r in enumerate(rho):
        try:
            s[i] = entropy(r)
        except UnphysicalStateError:
            s[i] = np.nan
    bloch = bloch_array(rho)
    return traj, s, bloch, ad


def _physicality(rho) -> dict:
    tr = np.abs(np.trace(rho, axis1=-2, axis2=-1) - 1.0).max()
    herm = np.abs(rho - np.conj(np.swapaxes(rho, -1, -2))).max()
    h = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    lam = np.linalg.eigvalsh(h)
    return {"trace_deviation_max": float(tr), "hermiticity_max": float(herm),
            "min_eigenvalue": float(lam.min()), "max_eigenvalue": float(lam.max())}


def _prepare(out_dir, cfg: RunConfig) -> Path:
    out = Path(out_dir if out_dir is not None else cfg.outputs.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg: RunConfig, out_dir=None) -> RunReport:
    """One propagation from ``cfg.initial_state``."""
    started = time.perf_counter()
    out = _prepare(out_dir, cfg)
    sess = Session(cfg)
    traj = sess.run(cfg.initial_rho())
    rho, x1 = traj.rho[:, 0], traj.x1[:, 0]
    t_fs = traj.times_fs
    table, s, bloch, ad = _state_tables(t_fs, traj.field, rho, x1, sess.params)
    if cfg.outputs.trajectory_csv:
        write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, table)
    if cfg.outputs.analysis_csv:
        cols = ("t_fs", "S_bits", "x", "y", "z", "ad_pop_ground", "re_rho12_ad", "im_rho12_ad")
        write_csv(out / "analysis.csv", cols,
                  np.column_stack([t_fs, s, bloch, ad[:, 0, 0].real, ad[:, 0, 1].real,
                                   ad[:, 0, 1].imag]))
    if cfg.outputs.checkpoint:
        from .heom import save_checkpoint

        save_checkpoint(out / "state.chk", traj.final_state, sess.hierarchy)
    phys = _physicality(rho)
    gmin, gmax = sess.gap_range(traj.field)
    report = RunReport("simulate", cfg.to_dict(), hierarchy_size=sess.hierarchy.size)
    report.metrics = dict(phys, identity_residual_max=traj.identity_residual, steps=traj.steps,
                          n_terms=sess.expansion.count, n_matsubara=sess.expansion.n_matsubara,
                          dressed_gap_min_au=gmin, dressed_gap_max_au=gmax)
    report.flags = {"positivity_ok": phys["min_eigenvalue"] >= -POSITIVITY_TOL,
                    "entropy_defined": bool(np.all(np.isfinite(s)))}
    return finalize(report, out, started)


def _map_outputs(sess: Session, traj, out: Path, n_extra: int):
    """Write analysis/ellipsoid/trajectory files for a tomography run; returns (maps, series)."""
    cfg = sess.cfg
    t_fs = traj.times_fs
    maps = maps_from_trajectory(t_fs, traj.rho[:, :5], cfg.analysis.linearity_tol)
    series = VolumeSeries(t_fs, maps.volumes)
    series.rate = decoherence_rate(series)
    series.bumps, series.non_markovian = detect_nonmarkovianity(series,
                                                                cfg.analysis.bump_prominence)
    idx = _designated_index(cfg.initial_state, n_extra)
    rho, x1 = traj.rho[:, idx], traj.x1[:, idx]
    table, s, bloch, ad = _state_tables(t_fs, traj.field, rho, x1, sess.params)
    if cfg.outputs.trajectory_csv:
        write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, table)
    if cfg.outputs.analysis_csv:
        write_csv(out / "analysis.csv", ANALYSIS_COLUMNS,
                  np.column_stack([t_fs, series.volume, series.rate, s, bloch,
                                   ad[:, 0, 0].real, ad[:, 0, 1].real, ad[:, 0, 1].imag]))
    if cfg.outputs.ellipsoid_frames:
        rows = []
        for i in range(len(maps)):
            e = ellipsoid(maps[i])
            rows.append(np.concatenate([[t_fs[i]], e.center, e.semi_axes,
                                        e.directions.reshape(-1)]))
        write_csv(out / "ellipsoids.csv", ELLIPSOID_COLUMNS, np.array(rows))
    return maps, series


def _designated_index(name: str, n_extra: int) -> int:
    order = ("diabatic_1", "diabatic_2", "plus", "plus_i")
    if name in order:
        return order.index(name)
    return 5  # custom state appended after the tomography batch


def _unit_ball_max(maps, n_states: int = 100, seed: int = 0) -> float:
    """Largest image norm of random pure states over all sampled times."""
    rng = np.random.default_rng(seed)
    r = rng.normal(size=(n_states, 3))
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    img = np.einsum("tij,sj->tsi", maps.linear, r) + maps.translation[:, None, :]
    return float(np.linalg.norm(img, axis=-1).max())


def _value_at(times_fs, values, t_fs) -> Optional[float]:
    if t_fs > times_fs[-1] + 1e-9:
        return None
    return _finite(np.interp(t_fs, times_fs, values))


def cmd_map(cfg: RunConfig, out_dir=None, reference=None) -> RunReport:
    """Tomography run: V(t), Gamma(t), bumps and ellipsoid frames.

    ``reference`` is the directory of an earlier map run (typically field
    free); a comparison block is then added to the report.
    """
    started = time.perf_counter()
    out = _prepare(out_dir, cfg)
    sess = Session(cfg)
    extra = None
    if cfg.initial_state == "custom":
        extra = cfg.initial_rho()[None]
    inputs = tomography_inputs() if extra is None else np.concatenate([tomography_inputs(), extra])
    traj = sess.run(inputs)
    maps, series = _map_outputs(sess, traj, out, 0 if extra is None else 1)
    phys = _physicality(traj.rho)
    gmin, gmax = sess.gap_range(traj.field)
    report = RunReport("map", cfg.to_dict(), hierarchy_size=sess.hierarchy.size)
    report.bumps = [{"t_fs": t, "V": v, "prominence": p} for t, v, p in series.bumps]
    v60 = _value_at(series.times_fs, series.volume, 60.0)
    report.metrics = dict(phys, identity_residual_max=traj.identity_residual, steps=traj.steps,
                          n_terms=sess.expansion.count, n_matsubara=sess.expansion.n_matsubara,
                          linearity_error=maps.linearity_error,
                          unit_ball_max_norm=_unit_ball_max(maps),
                          volume_final=_finite(series.volume[-1]), volume_60fs=v60,
                          dressed_gap_min_au=gmin, dressed_gap_max_au=gmax)
    report.flags = {"linearity_ok": maps.reliable,
                    "non_markovian": series.non_markovian,
                    "positivity_ok": phys["min_eigenvalue"] >= -POSITIVITY_TOL}
    if reference is not None:
        report.metrics["comparison"] = compare_to_reference(series, report.bumps, reference)
    report.status = EXIT_OK if maps.reliable else EXIT_FLAGGED
    return finalize(report, out, started)


def compare_to_reference(series: VolumeSeries, bumps: List[dict], reference) -> dict:
    ref = Path(reference)
    ref_report = json.loads((ref / "report.json").read_text())
    ref_tab = read_csv(ref / "analysis.csv")
    ref_bumps = ref_report.get("bumps", [])
    ratio = None
    if bumps and ref_bumps and ref_bumps[0]["V"] != 0:
        ratio = bumps[0]["V"] / ref_bumps[0]["V"]
    return {
        "reference": str(ref),
        "first_bump_ratio": ratio,
        "volume_60fs": _value_at(series.times_fs, series.volume, 60.0),
        "reference_volume_60fs": _value_at(ref_tab["t_fs"], ref_tab["V"], 60.0),
    }


def cmd_converge(cfg: RunConfig, l_values: Sequence[int], out_dir=None) -> RunReport:
    """Map runs at each L; tabulate relative volume differences between neighbours."""
    l_values = list(l_values)
    if len(l_values) < 2 or any(b < a for a, b in zip(l_values[:-1], l_values[1:])):
        raise ValueError("l_values must be ascending with at least two entries")
    started = time.perf_counter()
    out = _prepare(out_dir, cfg)
    volumes, sub_reports, times = {}, {}, None
    for L in dict.fromkeys(l_values):
        sub = _with(cfg, propagation={"l_max": L})
        sub_reports[L] = cmd_map(sub, out / f"L{L}")
        tab = read_csv(out / f"L{L}" / "analysis.csv")
        volumes[L] = tab["V"]
        times = tab["t_fs"]
    # a repeated level compares a run with itself
    columns = ["t_fs"] + [f"V_L{L}" for L in l_values]
    data = [times] + [volumes[L] for L in l_values]
    pairs = []
    for a, b in zip(l_values[:-1], l_values[1:]):
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(volumes[b] - volumes[a]) / np.abs(volumes[a])
        columns.append(f"relerr_L{a}_L{b}")
        data.append(rel)
        pairs.append({"pair": [a, b], "max_relative": _finite(np.nanmax(rel)),
                      "max_absolute": _finite(np.max(np.abs(volumes[b] - volumes[a])))})
    write_csv(out / "convergence.csv", columns, np.column_stack(data))
    maxima = [p["max_relative"] for p in pairs]
    monotone = all(x is not None and y is not None and y < x
                   for x, y in zip(maxima[:-1], maxima[1:]))
    report = RunReport("converge", cfg.to_dict(),
                       hierarchy_size=max(r.hierarchy_size for r in sub_reports.values()))
    report.metrics = {"pairs": pairs, "levels": l_values}
    linear_ok = all(r.flags.get("linearity_ok", True) for r in sub_reports.values())
    report.flags = {"monotone": monotone, "linearity_ok": linear_ok}
    report.status = EXIT_OK if linear_ok else EXIT_FLAGGED
    return finalize(report, out, started)


def _with(cfg: RunConfig, **sections) -> RunConfig:
    from .config import merge

    return merge(cfg, sections)


def _sweep_point(args):
    cfg_dict, out_dir, threads = args
    from .config import from_dict

    set_threads(threads)
    cfg = from_dict(cfg_dict)
    try:
        rep = cmd_map(cfg, out_dir)
        return {"status": rep.status, "bumps": rep.bumps, "metrics": rep.metrics, "error": None}
    except PropagationAbort as exc:
        return {"status": EXIT_ABORT, "bumps": [], "metrics": {}, "error": str(exc)}
    except Exception as exc:  # recorded per point, the sweep carries on
        return {"status": EXIT_ABORT, "bumps": [], "metrics": {}, "error": repr(exc)}


def _point_name(intensity: float, sign: int) -> str:
    return f"I{intensity:.3e}_s{'+' if sign > 0 else '-'}"


def cmd_sweep(cfg: RunConfig, intensities: Sequence[float], signs: Sequence[int],
              out_dir=None, workers: int = 1) -> RunReport:
    """Map runs over an intensity x sign grid, aggregated into one table."""
    if not intensities or not signs:
        raise ValueError("intensities and signs must be nonempty")
    started = time.perf_counter()
    out = _prepare(out_dir, cfg)
    grid = [(float(i), int(s)) for i in intensities for s in signs]
    jobs = []
    for inten, sign in grid:
        sub = _with(cfg, field={"intensity_w_cm2": inten, "sign": sign})
        jobs.append((sub.to_dict(), str(out / _point_name(inten, sign)), None))
    if workers > 1:
        per = max(1, (cfg.threads or os.cpu_count() or 1) // workers)
        jobs = [(c, o, per) for c, o, _ in jobs]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        jobs = [(c, o, cfg.threads) for c, o, _ in jobs]
        results = [_sweep_point(j) for j in jobs]

    params = cfg.system_params()
    points, curves, times = [], [], None
    for (inten, sign), res, job in zip(grid, results, jobs):
        e0 = sign * float(_amp(inten))
        first = res["bumps"][0] if res["bumps"] else None
        point = {"intensity_w_cm2": inten, "sign": sign, "e0_au": e0,
                 "dressed_gap_au": dressed_gap(params, e0), "status": res["status"],
                 "error": res["error"], "first_bump": first,
                 "volume_60fs": res["metrics"].get("volume_60fs")}
        points.append(point)
        path = Path(job[1]) / "analysis.csv"
        if res["error"] is None and path.is_file():
            tab = read_csv(path)
            times = tab["t_fs"]
            curves.append((_point_name(inten, sign), tab["V"]))
    if curves:
        write_csv(out / "sweep_volume.csv", ["t_fs"] + [f"V_{n}" for n, _ in curves],
                  np.column_stack([times] + [v for _, v in curves]))
    summary = [[p["intensity_w_cm2"], p["sign"], p["e0_au"], p["dressed_gap_au"],
                *(p["first_bump"][k] if p["first_bump"] else np.nan for k in ("t_fs", "V", "prominence")),
                p["volume_60fs"] if p["volume_60fs"] is not None else np.nan, p["status"]]
               for p in points]
    write_csv(out / "sweep_summary.csv",
              ("intensity_w_cm2", "sign", "e0_au", "dressed_gap_au", "first_bump_t_fs",
               "first_bump_V", "first_bump_prominence", "V_60fs", "status"), np.array(summary))
    report = RunReport("sweep", cfg.to_dict())
    report.points = points
    failed = [p for p in points if p["status"] == EXIT_ABORT]
    flagged = [p for p in points if p["status"] == EXIT_FLAGGED]
    report.flags = {"all_points_ok": not failed and not flagged}
    report.metrics = {"n_points": len(points), "n_failed": len(failed), "n_flagged": len(flagged)}
    report.status = EXIT_OK if not failed and not flagged else EXIT_FLAGGED
    return finalize(report, out, started)


def _amp(intensity):
    from .model import intensity_to_amplitude

    return intensity_to_amplitude(intensity)


def cmd_bath_check(cfg: RunConfig, out_dir=None, omega_max: float = 0.05, n_omega: int = 2001,
                   t_max_fs: float = 100.0, n_t: int = 201) -> RunReport:
    """J(w) table, expansion vs quadrature C(t), and the located spectral peak."""
    started = time.perf_counter()
    out = _prepare(out_dir, cfg)
    spec = cfg.bath_spec()
    exp = decompose_correlation(spec, t_max_fs=t_max_fs, n_grid=n_t)
    w = np.linspace(0.0, omega_max, n_omega)
    write_csv(out / "spectral_density.csv", ("omega_au", "J_au"),
              np.column_stack([w, spectral_density(w, spec.lorentzians)]))
    t_fs = np.linspace(0.0, t_max_fs, n_t)
    t = fs_to_au(t_fs)
    c_exp = exp(t)
    c_num = correlation_numeric(t, spec)
    err = np.abs(c_exp - c_num)
    write_csv(out / "correlation.csv",
              ("t_fs", "reC_expansion", "imC_expansion", "reC_numeric", "imC_numeric", "abs_err"),
              np.column_stack([t_fs, c_exp.real, c_exp.imag, c_num.real, c_num.imag, err]))
    c0 = abs(c_num[0])
    report = RunReport("bath-check", cfg.to_dict())
    report.metrics = {
        "omega_max_au": spectral_peak(spec.lorentzians),
        "n_matsubara": exp.n_matsubara,
        "n_terms": exp.count,
        "max_relative_error": float(err.max() / c0),
        "c0_au": float(c_num[0].real),
        "decay_ratio": _finite(np.abs(np.interp(60.0, t_fs, np.abs(c_num))) / c0)
        if t_max_fs >= 60.0 else None,
    }
    report.flags = {"expansion_within_1e-3": bool(err.max() / c0 <= 1e-3)}
    return finalize(report, out, started)
