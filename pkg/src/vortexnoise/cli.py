"""Command-line entry point ``vortexnoise``.

Exit codes: 0 success, 1 a verdict failed, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as _config
from .covariance import (
    LawSpectrumSpec,
    cutoff_spectrum,
    fgf_spectrum,
    fit_slope,
    independent_power_constant,
    kraichnan_spectrum,
    max_relative_error,
    mc_covariance,
    power_law_spectrum,
    vortex_spectrum,
    write_spectrum_csv,
)
from .eddy import check_resolution, scan_law, scan_scaling, write_scan_csv
from .fields import ConfigurationError, make_mollifier
from .jump_process import (
    ScalingParams,
    covariance_check,
    gaussianity_check,
    max_jump_stat,
    simulate_ensemble,
    write_paths_csv,
)
from .structures import Ensemble, StructureLaw, export_ensemble, validate_moments
from .transport import (
    NumericalAbort,
    ScalarField,
    SolverConfig,
    build_noise_basis,
    dissipation_experiment,
    measure_decay,
    mode_decay_rate,
    run_ensemble,
    write_timeseries_csv,
)

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "VORTEXNOISE_OUT"
log = logging.getLogger("vortexnoise")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


class Run:
    """Resolved configuration plus output conventions for one command."""

    def __init__(self, cfg: _config.ExperimentConfig, out: Path, threads: int) -> None:
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.stamp = {"config_hash": cfg.hash, "version": __version__}
        out.mkdir(parents=True, exist_ok=True)

    @property
    def d(self) -> int:
        return int(self.cfg["dimension"])

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])

    def mollifier(self):
        mc = self.cfg["mollifier"]
        return make_mollifier(mc["profile_id"], int(mc["quadrature_points"]), self.d,
                              float(mc["r_max"]))

    def law(self) -> StructureLaw:
        spec = {k: v for k, v in self.cfg["law"].items() if k != "moment_p"}
        law = StructureLaw(d=self.d, **spec)
        p = float(self.cfg["law"]["moment_p"])
        rep = validate_moments(law, p)
        if not rep.finite:
            raise ConfigurationError(
                f"moment condition fails for p={p}: integrand exponent {rep.exponent} <= -1")
        return law

    def write_json(self, name: str, obj: dict) -> Path:
        path = self.out / name
        payload = dict(obj)
        payload.update(self.stamp)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_default) + "\n")
        return path

    def stamp_csv(self, path: Path) -> Path:
        """Append constant ``config_hash`` and ``version`` columns."""
        rows = list(csv.reader(io.StringIO(path.read_text())))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        for i, row in enumerate(rows):
            w.writerow(row + (["config_hash", "version"] if i == 0 else
                              [self.stamp["config_hash"], self.stamp["version"]]))
        path.write_text(buf.getvalue())
        return path


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "__dataclass_fields__"):
        from dataclasses import asdict
        return asdict(o)
    raise TypeError(f"not serializable: {type(o)}")


def _f(x: float) -> float:
    return float(x) if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_sample(run: Run) -> dict:
    sc = run.cfg.section("sample")
    law = run.law()
    ens = Ensemble(law, run.mollifier(), int(sc["k_max"]), int(sc["n_samples"]), run.seed,
                   workers=run.threads)
    bin_path, _ = export_ensemble(ens, run.out / "ensemble.bin", extra_meta=run.stamp,
                                  batch_size=int(sc["batch_size"]))
    log.info("wrote %s", bin_path)
    return {}


def cmd_jump(run: Run) -> dict:
    jc = run.cfg.section("jump")
    law = run.law()
    m = run.mollifier()
    sp = ScalingParams(int(jc["N"]), float(jc["lam"]), float(jc["T"]))
    probes = np.asarray(jc["probes"], np.float64)
    if probes.shape[1] != run.d:
        raise ConfigurationError("probe dimension does not match 'dimension'")
    times = np.asarray(jc["out_times"], np.float64)
    if np.any(times < 0) or np.any(times > sp.T):
        raise ConfigurationError(f"jump.out_times must lie in [0, T={sp.T}]")
    k_max, n_paths = int(jc["k_max"]), int(jc["n_paths"])
    chunks = _chunks(n_paths, run.threads)

    def work(c):
        return simulate_ensemble(law, sp, probes, times, c[1] - c[0], run.seed, m, k_max,
                                 first_index=c[0])

    with ThreadPoolExecutor(run.threads) as pool:
        paths = [p for part in pool.map(work, chunks) for p in part]
    if jc["write_paths"]:
        run.stamp_csv(write_paths_csv(paths, probes, run.out / "jump_paths.csv"))
    coeffs = vortex_spectrum(law, m, k_max)
    cov = covariance_check(paths, coeffs, sp, probes)
    summary = {"N": sp.N, "lam": sp.lam, "T": sp.T, "n_paths": n_paths,
               "covariance": {"estimate": cov.estimate, "stderr": cov.stderr,
                              "analytic": cov.analytic, "max_z": cov.max_z},
               "max_jump": max_jump_stat(paths), "max_jump_h": max_jump_stat(paths, "h")}
    verdicts = {"covariance_ok": cov.passed}
    if int(jc["gaussianity_paths"]) > 0:
        direction = jc.get("direction") or [1.0] + [0.0] * (run.d - 1)
        g = gaussianity_check(law, sp, probes[0], direction, int(jc["gaussianity_paths"]),
                              run.seed + 1, m, k_max, coeffs)
        summary["gaussianity"] = g
        verdicts["ks_ok"] = bool(g.ks_statistic < g.ks_threshold)
    summary["verdicts"] = verdicts
    run.write_json("jump_summary.json", summary)
    return verdicts


def cmd_spectrum(run: Run) -> dict:
    sc = run.cfg.section("spectrum")
    d, m = run.d, run.mollifier()
    k_max, alpha, C = int(sc["k_max"]), float(sc["alpha"]), float(sc["C"])
    vortex = power_law_spectrum(LawSpectrumSpec(alpha, C), m, k_max, d)
    D = independent_power_constant(m, alpha, C)
    fgf = fgf_spectrum((3 + alpha) / 2, D, k_max, d)
    zeta = 1 + alpha if d == 2 else alpha
    kr = kraichnan_spectrum(zeta, D, k_max, d)
    lo, hi = sc["fit_range"]
    fit = fit_slope(vortex, (float(lo), float(hi)))
    run.stamp_csv(write_spectrum_csv(vortex, run.out / "spectrum.csv"))
    out = {"alpha": alpha, "C": C, "D": vortex.meta["D"], "D_independent": D,
           "slope": fit.slope, "r2": fit.r2, "fgf_max_rel_error": max_relative_error(vortex, fgf),
           "kraichnan_max_rel_error": max_relative_error(vortex, kr)}
    verdicts = {"slope_ok": bool(abs(fit.slope + 3 + alpha) <= 0.05),
                "fgf_equivalence_ok": out["fgf_max_rel_error"] < 1e-6,
                "kraichnan_ok": out["kraichnan_max_rel_error"] < 1e-6}
    if sc["k0_list"] and (d == 2 or alpha > 0):
        k0s = sorted(float(k) for k in sc["k0_list"])
        rows = []
        cp = None
        for k0 in k0s:
            r = cutoff_spectrum(LawSpectrumSpec(alpha, C, k0), m, int(8 * k0), d, c_prime=cp,
                                k0_ref=k0s[0])
            cp = r["c_prime"]
            kk = int(8 * k0) ** 2
            dev = r["coeffs"].shell(kk) / (vortex.meta["D"] * math.sqrt(kk) ** (-3 - alpha)) - 1
            rows.append({"k0": k0, "remainder": r["remainder_norm"], "bound": r["bound"],
                         "high_mode_rel_dev": dev})
        out["cutoff"] = rows
        verdicts["cutoff_ok"] = all(r["remainder"] <= r["bound"] * (1 + 1e-12)
                                    and abs(r["high_mode_rel_dev"]) < 0.02 for r in rows)
    if int(sc["mc_samples"]) > 0:
        law = run.law()
        mk = int(sc["mc_k_max"])
        ens = Ensemble(law, m, mk, int(sc["mc_samples"]), run.seed, workers=run.threads)
        mc = mc_covariance(ens)
        ana = vortex_spectrum(law, m, mk)
        z = np.abs(mc.values - ana.values) / np.maximum(mc.stderr, 1e-12 * ana.values)
        out["monte_carlo_max_z"] = float(z.max())
        verdicts["monte_carlo_ok"] = bool(z.max() <= 3.0)
    out["verdicts"] = verdicts
    run.write_json("spectrum_comparison.json", out)
    return verdicts


def cmd_eddy(run: Run) -> dict:
    ec = run.cfg.section("eddy")
    m = run.mollifier()
    law = run.law()
    ells = [float(v) for v in ec["ell_list"]]
    check_resolution(m, min(ells), int(ec["k_max"]))
    res = scan_scaling(law, ells, int(ec["k_max"]), run.d, m)
    run.stamp_csv(write_scan_csv(res, run.out / "eddy_scan.csv"))
    run.write_json("eddy_verdict.json", {"fit": res.fit, "verdicts": res.verdicts,
                                         "k_max": res.k_max, "d": res.d})
    return res.verdicts


def cmd_transport(run: Run) -> dict:
    tc = run.cfg.section("transport")
    m = run.mollifier()
    law = run.law()
    cfg = SolverConfig(kappa=float(tc["kappa"]), dt=float(tc["dt"]), steps=int(tc["steps"]),
                       scheme=tc["scheme"], n_grid=int(tc["n_grid"]),
                       k_max_T=tc.get("k_max_T"), noise_k_max=int(tc["noise_k_max"]),
                       out_every=int(tc["out_every"]))
    modes = [(tuple(k), complex(a[0], a[1])) for k, a in tc["initial_modes"]]
    kmode = max(int(np.max(np.abs(k))) for k, _ in modes)
    T0 = ScalarField.from_modes(run.d, max(kmode, 1), modes)
    spec = vortex_spectrum(law, m, int(tc["spectrum_k_max"]))
    basis = build_noise_basis(spec, cfg.noise_k_max)
    cfg.check_stability(basis.qbar)
    ells = [float(v) for v in tc["ell_list"]]
    if ells and (len(ells) < 2 or np.any(np.diff(ells) >= 0)):
        raise ConfigurationError("transport.ell_list must be strictly decreasing, length >= 2")
    ref_var = law.sigma_sq() * law.mean_duration()
    for ell in ells:
        scan = scan_law(law, ell)
        s = vortex_spectrum(scan, m, int(tc["spectrum_k_max"]))
        s = s.scaled(ref_var / (scan.sigma_sq() * scan.mean_duration()))
        cfg.check_stability(build_noise_basis(s, cfg.noise_k_max).qbar)
    ens = run_ensemble(T0, basis, cfg, int(tc["n_traj"]), run.seed)
    rep = measure_decay(ens)
    k_ref = modes[0][0]
    rate = mode_decay_rate(ens, k_ref)
    ref = (cfg.kappa + 0.5 * basis.qbar) * float(np.sum(np.square(k_ref)))
    run.stamp_csv(write_timeseries_csv(ens, rep, run.out / "transport_timeseries.csv"))
    out = {"qbar": basis.qbar, "epsilon_q": basis.epsilon_q, "tail_mass": basis.tail_mass,
           "lambda_hat": _f(rep.lambda_hat), "lambda_ref": rep.lambda_ref,
           "mode_rate": _f(rate), "mode_rate_ref": ref,
           "eigenvalue_note": "torus first eigenvalue of -(kappa + qbar/2) Lap, |D| = 1"}
    verdicts = {"bound_ok": rep.bound_ok}
    if cfg.scheme == "ito_corrected_euler":
        verdicts["mean_decay_ok"] = bool(abs(rate / ref - 1) <= 0.05)
    if ells:
        exp = dissipation_experiment(law, ells, cfg, m, T0, int(tc["n_traj"]), run.seed,
                                     int(tc["spectrum_k_max"]))
        out["dissipation"] = exp["rows"]
        verdicts.update(exp["verdicts"])
    out["verdicts"] = verdicts
    run.write_json("transport_verdict.json", out)
    return verdicts


def cmd_report(directory: Path) -> tuple[dict, int]:
    """Collect every ``verdicts`` block under ``directory``."""
    entries = {}
    if directory.is_dir():
        for p in sorted(directory.glob("*.json")):
            if p.name.startswith("report"):
                continue
            try:
                data = json.loads(p.read_text())
            except (json.JSONDecodeError, OSError):
                continue
            if isinstance(data, dict) and isinstance(data.get("verdicts"), dict):
                entries[p.name] = data["verdicts"]
    all_ok = all(bool(v) for ver in entries.values() for v in ver.values())
    report = {"sources": entries, "all_ok": all_ok, "version": __version__}
    if directory.is_dir():
        (directory / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        lines = ["# vortexnoise report", ""]
        for name, ver in entries.items():
            lines.append(f"## {name}")
            lines += [f"- {k}: {'PASS' if v else 'FAIL'}" for k, v in sorted(ver.items())]
            lines.append("")
        (directory / "report.md").write_text("\n".join(lines))
    return report, EXIT_OK if all_ok else EXIT_VERDICT


def _chunks(n: int, parts: int) -> list[tuple[int, int]]:
    size = max(1, math.ceil(n / max(parts, 1)))
    return [(s, min(s + size, n)) for s in range(0, n, size)] or [(0, 0)]


COMMANDS = {"sample": cmd_sample, "jump": cmd_jump, "spectrum": cmd_spectrum, "eddy": cmd_eddy,
            "transport": cmd_transport}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vortexnoise", description="Vortex-structure noise toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=f"run the {name} workflow")
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--out", type=Path)
    r = sub.add_parser("report", help="consolidate verdicts in a run directory")
    r.add_argument("directory", type=Path)
    sub.add_parser("schema", help="print the config JSON schema")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(_config.SCHEMA, indent=2))
        return EXIT_OK
    if args.command == "report":
        report, code = cmd_report(args.directory)
        print(json.dumps(report, indent=2, sort_keys=True))
        return code
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        cfg = _config.load(args.config, overrides)
        out = args.out or (Path(os.environ[OUT_ENV]) if os.environ.get(OUT_ENV) else
                           Path(cfg["output_dir"]))
        run = Run(cfg, out, int(cfg["threads"]))
        verdicts = COMMANDS[args.command](run)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_NUMERIC
    failed = [k for k, v in verdicts.items() if not v]
    for k, v in sorted(verdicts.items()):
        print(f"{k}: {'PASS' if v else 'FAIL'}")
    return EXIT_VERDICT if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
