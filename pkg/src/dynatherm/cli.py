"""Command-line driver: ``dynatherm <command> [--config FILE] [flags]``.

Commands chain through files in the output directory:
recompile -> noisy-run -> mitigate. Every data file carries the SHA-256 of
the effective configuration. Run timestamps live only in ``*.meta.json``, so
data files are byte-identical across reruns.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from dynatherm import __version__
from dynatherm.config import ExperimentConfig, defaults, load_config, validate
from dynatherm.errors import ConfigError, NumericalError, UnfittableError
from dynatherm.records import read_csv, write_csv, write_json

log = logging.getLogger("dynatherm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

ANSATZ_FILE = "recompile_ansatz.circ"
PARAMS_FILE = "recompile_params.csv"
OCCUPATIONS_FILE = "noisy_occupations.csv"


class MissingInputError(ConfigError):
    pass


def ascii_label(label: str) -> str:
    return label.replace("↓", "d").replace("↑", "u")


# -- shared setup ------------------------------------------------------------------


def _system(cfg):
    from dynatherm.hamiltonian import QuenchSystem

    return QuenchSystem(cfg["system"]["frequencies"], cfg["system"]["coupling_scale"])


def _times(cfg):
    from dynatherm.evolution import default_times

    return default_times(cfg["protocol"]["t_max"], cfg["protocol"]["dt"])


def _window(cfg):
    return (cfg["protocol"]["window_start"], cfg["protocol"]["window_end"])


def _state_labels(cfg, n):
    from dynatherm.hamiltonian import parse_state_label, state_label

    return [state_label(parse_state_label(s, n), n) for s in cfg["protocol"]["initial_states"]]


def _noise(cfg):
    from dynatherm.noisy import ReadoutModel, load_preset

    nz = cfg["noise"]
    preset = nz["preset"]
    if cfg.source and not Path(preset).is_absolute() and (Path(cfg.source).parent / preset).is_file():
        preset = str(Path(cfg.source).parent / preset)
    model, ro = load_preset(preset)
    eps0 = nz["eps0"] if nz["eps0"] is not None else ro.get("eps0", 0.0)
    eps1 = nz["eps1"] if nz["eps1"] is not None else ro.get("eps1", 0.0)
    try:
        readout = ReadoutModel(eps0, eps1, nz["shots"], nz["iterations"])
    except ValueError as exc:
        raise ConfigError(f"readout: {exc}") from exc
    return model, readout


def _require(out: Path, name: str, producer: str) -> Path:
    p = out / name
    if not p.is_file():
        raise MissingInputError(f"expected upstream file {str(p)!r}; run '{producer}' first")
    return p


# -- commands ------------------------------------------------------------------------
# Each command returns {filename: writer} so nothing touches disk until all work succeeded.


def cmd_dynamics(cfg, threads):
    from dynatherm.ensemble import ProtocolConfig, bootstrap, mean_min_spacing, run_protocol, window_mask
    from dynatherm.thermo import diagonal_entropy, fit_temperature, kl_thermal, solve_beta

    sysm = _system(cfg)
    pr = cfg["protocol"]
    times = _times(cfg)
    files = {}
    summary = {}
    for label in _state_labels(cfg, sysm.n_qubits):
        pc = ProtocolConfig(sysm, label, pr["realizations"], times, pr["seed"], pr["bootstrap"], _window(cfg))
        res = run_protocol(pc, threads=threads)
        e = res.basis.energies
        fit = fit_temperature(res.equilibrium_occupations, e)
        if res.realizations > 1:
            _, beta_std = bootstrap(res, lambda s: solve_beta(e, float(s.equilibrium_occupations @ e))[0],
                                    pr["bootstrap"])
        else:
            beta_std = 0.0
        kl = kl_thermal(res, fit)
        entropy = np.array([diagonal_entropy(p) for p in res.mean_occupations])
        fluct = np.sqrt(np.clip(res.mean_h0_sq - res.mean_h0**2, 0, None))
        rows = zip(times, res.mean_h0, res.mean_h0_sq, fluct, res.mean_energy, entropy, kl)
        tag = ascii_label(label)
        cols = ["t", "h0_mean", "h0_sq_mean", "h0_fluct", "energy_mean", "entropy_diag", "kl"]
        files[f"dynamics_{tag}.csv"] = (write_csv, cols, list(rows))
        level_tags = [ascii_label(x) for x in res.basis.labels]
        occ_rows = [[t, level, level_tags[level], res.mean_occupations[k, level]]
                    for k, t in enumerate(times) for level in range(res.basis.dim)]
        files[f"dynamics_{tag}_occupations.csv"] = (write_csv, ["t", "level", "label", "occupation"], occ_rows)
        if pr["per_realization"]:
            traces = res.h0_r
            cols_r = ["t"] + [f"r{r}" for r in range(res.realizations)]
            files[f"dynamics_{tag}_traces.csv"] = (write_csv, cols_r,
                                                   [[t, *traces[:, k]] for k, t in enumerate(times)])
        mask = window_mask(times, _window(cfg))
        late = window_mask(times, (5.0, times[-1]))
        summary[tag] = {
            "epsilon_in": res.epsilon_in,
            "beta": fit.beta,
            "beta_std": beta_std,
            "kl_equilibrium": fit.kl,
            "kl_mean_late": float(kl[late].mean()) if late.any() else None,
            "h0_window_std": float(res.mean_h0[mask].std()),
            "h0_trace_window_std": float(np.sqrt(res.h0_r[:, mask].var(axis=1).mean())),
            "min_spacing_mean": mean_min_spacing(res),
            "equilibrium_occupations": res.equilibrium_occupations,
            "near_infinite_temperature": fit.near_infinite_temperature,
        }
    files["dynamics.json"] = (write_json, {"states": summary, "seed": pr["seed"], "levels": res.basis.labels,
                                           "energies": res.basis.energies})
    return files


def cmd_temperature_curve(cfg, threads):
    from dynatherm.thermo import temperature_curve

    pr = cfg["protocol"]
    pts = temperature_curve(_system(cfg), pr["realizations"], pr["seed"], _times(cfg), _window(cfg),
                            pr["bootstrap"], threads)
    cols = ["level", "label", "epsilon_in", "beta", "beta_std", "entropy", "entropy_std", "thermal_entropy",
            "near_infinite_temperature", "unfittable"]
    rows = [[p.level, ascii_label(p.label), p.epsilon_in, p.beta, p.beta_std, p.entropy, p.entropy_std,
             p.thermal_entropy, p.near_infinite_temperature, p.unfittable] for p in pts]
    return {"temperature_curve.csv": (write_csv, cols, rows)}


def cmd_recompile(cfg, threads):
    from dynatherm.circuit import ansatz, dumps
    from dynatherm.evolution import spectral_propagator
    from dynatherm.hamiltonian import build_hamiltonian, sample_couplings
    from dynatherm.recompile import OptimizerSettings, RecompileProblem, basin_hopping

    sysm = _system(cfg)
    rc = cfg["recompile"]
    seed = cfg["protocol"]["seed"]
    circ = ansatz(sysm.n_qubits, rc["layers"])
    settings = OptimizerSettings(memory=rc["memory"], hops=rc["hops"], hop_sigma=rc["hop_sigma"],
                                 temperature=rc["temperature"], max_iter=rc["max_iter"],
                                 cost_tol=rc["cost_tol"], stop_cost=rc["stop_cost"], seed=seed)
    params_rows, summary_rows, target_rows, wall = [], [], [], []
    for r in range(rc["realizations"]):
        h = build_hamiltonian(sysm, sample_couplings(sysm, seed, r))
        target = spectral_propagator(h, rc["time"]).matrix
        res = basin_hopping(RecompileProblem(target, circ, settings=settings, key=r))
        log.info("realization %d: fidelity %.6f after %d hops", r, res.fidelity, len(res.hops))
        params_rows.append([r, *res.params])
        summary_rows.append([r, res.fidelity, res.cost, res.iterations, len(res.hops), res.status,
                             res.line_search_failed])
        wall.append(res.wall_time)
        for i in range(target.shape[0]):
            for j in range(target.shape[1]):
                target_rows.append([r, i, j, target[i, j].real, target[i, j].imag])
    fids = [row[1] for row in summary_rows]
    return {
        ANSATZ_FILE: (_write_text, dumps(circ)),
        PARAMS_FILE: (write_csv, ["realization"] + [f"p{k}" for k in range(circ.n_params)], params_rows),
        "recompile_summary.csv": (write_csv, ["realization", "fidelity", "cost", "iterations", "hops", "status",
                                              "line_search_failed"], summary_rows),
        "recompile_targets.csv": (write_csv, ["realization", "row", "col", "re", "im"], target_rows),
        "recompile.json": (write_json, {"time": rc["time"], "layers": rc["layers"], "cnot_count": circ.cnot_count,
                                        "n_params": circ.n_params, "fidelities": fids,
                                        "settings": settings.to_dict()}),
        "_wall": wall,
    }


def _write_text(path, text, config_hash):
    Path(path).write_text(f"# config_sha256: {config_hash}\n" + text)


def _load_recompiled(out: Path):
    from dynatherm.circuit import loads

    circ = loads(_require(out, ANSATZ_FILE, "recompile").read_text())
    _, header, rows = read_csv(_require(out, PARAMS_FILE, "recompile"))
    params = {int(r[0]): np.array([float(x) for x in r[1:]]) for r in rows}
    if any(len(p) != circ.n_params for p in params.values()):
        raise ConfigError(f"{PARAMS_FILE} does not match the ansatz in {ANSATZ_FILE}")
    return circ, params


def cmd_noisy_run(cfg, threads, out: Path, preloaded):
    from dynatherm.circuit import bind, fold_cnots
    from dynatherm.evolution import spectral_propagator
    from dynatherm.hamiltonian import build_hamiltonian, energy_basis, parse_state_label, sample_couplings
    from dynatherm.noisy import NoiseModel, RCPolicy, ReadoutModel, run_noisy

    sysm = _system(cfg)
    circ, params = preloaded["recompiled"]
    model, readout = preloaded["noise"]
    nz = cfg["noise"]
    seed = cfg["protocol"]["seed"]
    basis = energy_basis(sysm)
    policy = RCPolicy(nz["rc_samples"])
    lambdas = [int(x) for x in nz["lambdas"]]
    occ_rows, count_rows = [], []
    labels = _state_labels(cfg, sysm.n_qubits)
    for si, label in enumerate(labels):
        bits = parse_state_label(label, sysm.n_qubits)
        psi0 = basis.vectors[:, basis.level_of(bits)]
        tag = ascii_label(label)
        for r in sorted(params):
            h = build_hamiltonian(sysm, sample_couplings(sysm, seed, r))
            u = spectral_propagator(h, cfg["recompile"]["time"]).matrix
            exact = np.abs(basis.vectors.conj().T @ (u @ psi0)) ** 2
            occ_rows.append([tag, "exact", 0, r, *exact])
            bound = bind(circ, params[r])
            ideal = run_noisy(bound, NoiseModel.ideal(), ReadoutModel(shots=None), None, seed, bits, basis)
            occ_rows.append([tag, "noiseless", 0, r, *ideal.occupations])
            for li, lam in enumerate(lambdas):
                key = (si * 16 + li) * 4096 + r
                run = run_noisy(fold_cnots(bound, lam), model, readout, policy, seed, bits, basis,
                                threads=threads, key=key)
                occ_rows.append([tag, "noisy", lam, r, *run.occupations])
                for k, c in enumerate(run.counts):
                    count_rows.append([tag, lam, r, k, *c])
    n_levels = basis.dim
    files = {
        OCCUPATIONS_FILE: (write_csv, ["state", "kind", "lambda", "realization"] +
                           [f"n{k}" for k in range(n_levels)], occ_rows),
        "noisy_run.json": (write_json, {
            "preset": model.name,
            "attachments": [a.__dict__ for a in model.attachments],
            "readout": {"eps0": readout.eps0, "eps1": readout.eps1, "shots": readout.shots,
                        "iterations": readout.iterations},
            "rc_samples": policy.samples,
            "lambdas": lambdas,
            "cnot_counts": {str(lam): circ.cnot_count * lam for lam in lambdas},
            "levels": [ascii_label(x) for x in basis.labels],
        }),
    }
    if readout.shots is not None:
        files["noisy_counts.csv"] = (write_csv, ["state", "lambda", "realization", "sample"] +
                                     [f"b{k}" for k in range(basis.dim)], count_rows)
    return files


def cmd_mitigate(cfg, threads, out: Path, preloaded):
    from dynatherm.hamiltonian import energy_basis
    from dynatherm.mitigation import bootstrap_noisy_fit, extrapolate, fit_noisy_model, mitigated_observables
    from dynatherm.thermo import fit_temperature, thermal_moments

    sysm = _system(cfg)
    e = energy_basis(sysm).energies
    _, header, rows = preloaded["occupations"]
    resamples = cfg["protocol"]["bootstrap"]
    seed = cfg["protocol"]["seed"]
    data: dict = {}
    for row in rows:
        state, kind, lam = row[0], row[1], int(float(row[2]))
        data.setdefault(state, {}).setdefault((kind, lam), []).append([float(x) for x in row[4:]])
    mode_cfg = cfg["noise"]["extrapolation"]
    cols = ["state", "beta_qc", "beta_qc_std", "g_qc", "g_qc_std", "beta_qc3", "beta_qc3_std", "g_qc3",
            "g_qc3_std", "mode", "beta_zne", "beta_zne_std", "h0_mean", "h0_mean_std", "h0_fluct",
            "h0_fluct_std", "ed_h0_mean", "ed_h0_fluct", "ed_beta", "edb_h0_mean", "edb_h0_fluct",
            "noiseless_beta", "noiseless_g"]
    out_rows, payload = [], {}
    nan = float("nan")
    for state, groups in data.items():
        lams = sorted(lam for kind, lam in groups if kind == "noisy")
        if not lams:
            raise ConfigError(f"{OCCUPATIONS_FILE} holds no noisy rows for state {state}")
        fits = [bootstrap_noisy_fit(np.array(groups[("noisy", lam)]), e, resamples, seed) for lam in lams]
        if len(lams) >= 2:
            mode = mode_cfg if mode_cfg != "auto" else ("mirrored" if fits[0].beta < 0 else "plain")
            with warnings.catch_warnings():
                if mode_cfg == "auto":
                    # auto only mirrors negative-temperature data, so the sign warning cannot apply
                    warnings.simplefilter("ignore")
                ext = extrapolate(lams[:2], fits[:2], mode)
            beta0, beta0_std = ext.beta, ext.std
        else:
            log.warning("state %s: a single noise factor; reporting the fit without extrapolation", state)
            mode, beta0, beta0_std = "none", fits[0].beta, fits[0].beta_std
        obs = mitigated_observables(beta0, e, beta0_std)
        exact = np.mean(groups[("exact", 0)], axis=0)
        ed_mean = float(exact @ e)
        ed_fluct = float(np.sqrt(max(exact @ e**2 - ed_mean**2, 0.0)))
        try:
            ed_beta = fit_temperature(exact / exact.sum(), e).beta
            m_b, v_b, _ = thermal_moments(e, ed_beta)
        except UnfittableError:
            ed_beta, m_b, v_b = nan, nan, nan
        noiseless = fit_noisy_model(np.mean(groups[("noiseless", 0)], axis=0), e)
        second = fits[1] if len(fits) > 1 else None
        out_rows.append([
            state, fits[0].beta, fits[0].beta_std, fits[0].g, fits[0].g_std,
            second.beta if second else nan, second.beta_std if second else nan,
            second.g if second else nan, second.g_std if second else nan,
            mode, beta0, beta0_std, obs.mean, obs.mean_std, obs.fluctuation, obs.fluctuation_std,
            ed_mean, ed_fluct, ed_beta, m_b, float(np.sqrt(v_b)) if np.isfinite(v_b) else nan,
            noiseless.beta, noiseless.g,
        ])
        payload[state] = dict(zip(cols[1:], out_rows[-1][1:]))
        payload[state]["lambdas"] = lams
    return {"mitigation.csv": (write_csv, cols, out_rows), "mitigation.json": (write_json, {"states": payload})}


REPORT_SOURCES = ("dynamics.json", "temperature_curve.csv", "recompile.json", "noisy_run.json", "mitigation.json")


def cmd_report(cfg, threads, out: Path, preloaded):
    from dynatherm.records import read_json

    found = {name: (out / name).is_file() for name in REPORT_SOURCES}
    if not any(found.values()):
        raise MissingInputError(f"no results in {str(out)!r}; expected one of {', '.join(REPORT_SOURCES)}")
    lines = [f"results in {out}"]
    report = {"files": found}
    if found["dynamics.json"]:
        d = read_json(out / "dynamics.json")["states"]
        for label, s in d.items():
            lines.append(f"dynamics {label}: beta = {s['beta']:.4f} +- {s['beta_std']:.4f}, "
                         f"min spacing = {s['min_spacing_mean']:.4f}")
        report["dynamics"] = {k: {"beta": v["beta"], "beta_std": v["beta_std"]} for k, v in d.items()}
    if found["temperature_curve.csv"]:
        _, hdr, rows = read_csv(out / "temperature_curve.csv")
        lines.append(f"temperature curve: {len(rows)} initial states")
    if found["recompile.json"]:
        r = read_json(out / "recompile.json")
        lines.append("recompile fidelities: " + ", ".join(f"{f:.5f}" for f in r["fidelities"]))
        report["recompile"] = {"fidelities": r["fidelities"]}
    if found["mitigation.json"]:
        m = read_json(out / "mitigation.json")["states"]
        for label, s in m.items():
            lines.append(f"mitigation {label}: beta(1) = {s['beta_qc']:.4f}, extrapolated ({s['mode']}) = "
                         f"{s['beta_zne']:.4f} +- {s['beta_zne_std']:.4f}")
        report["mitigation"] = m
    print("\n".join(lines))
    return {"report.json": (write_json, report)}


COMMANDS = {
    "dynamics": cmd_dynamics,
    "temperature-curve": cmd_temperature_curve,
    "recompile": cmd_recompile,
    "noisy-run": cmd_noisy_run,
    "mitigate": cmd_mitigate,
    "report": cmd_report,
}
CHAINED = {"noisy-run", "mitigate", "report"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynatherm", description="Quench thermalization experiments.")
    p.add_argument("--version", action="version", version=f"dynatherm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="INI experiment file (defaults apply when omitted)")
        s.add_argument("--seed", type=int, help="master seed (protocol.seed)")
        s.add_argument("--out-dir", help="output directory (output.directory)")
        s.add_argument("--realizations", type=int,
                       help="coupling realizations (recompile.realizations for 'recompile', else protocol)")
        s.add_argument("--threads", type=int, default=1, help="worker threads for independent samples")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else defaults()
    if args.seed is not None:
        cfg.values["protocol"]["seed"] = args.seed
    if args.out_dir is not None:
        cfg.values["output"]["directory"] = args.out_dir
    if args.realizations is not None:
        section = "recompile" if args.command == "recompile" else "protocol"
        cfg.values[section]["realizations"] = args.realizations
    try:
        validate(cfg)
    except ConfigError as exc:
        raise ConfigError(f"after command-line overrides: {exc}") from exc
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def _preload(command, cfg, out: Path) -> dict:
    """Read and validate every input a command needs before any file is written."""
    pre = {}
    if command in ("noisy-run",):
        pre["recompiled"] = _load_recompiled(out)
        pre["noise"] = _noise(cfg)
    if command == "mitigate":
        pre["occupations"] = read_csv(_require(out, OCCUPATIONS_FILE, "noisy-run"))
    return pre


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _effective_config(args)
        out = Path(cfg["output"]["directory"])
        pre = _preload(args.command, cfg, out)
        if args.command in ("recompile",):
            _noise(cfg)  # a bad preset should fail before hours of optimization, not after
        fn = COMMANDS[args.command]
        t0 = time.perf_counter()
        if args.command in CHAINED:
            files = fn(cfg, args.threads, out, pre)
        else:
            files = fn(cfg, args.threads)
        elapsed = time.perf_counter() - t0
    except ConfigError as exc:
        print(f"dynatherm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"dynatherm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    extra = {"wall_times": files.pop("_wall")} if "_wall" in files else {}
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.sha256
    for name, (writer, *payload) in files.items():
        writer(out / name, *payload, h)
    meta = {
        "command": args.command,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "elapsed_seconds": elapsed,
        "config": cfg.canonical(),
        "outputs": sorted(files),
        **extra,
    }
    write_json(out / f"{args.command}.meta.json", meta, h)
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))
