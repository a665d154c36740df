"""Command line entry point: ``sykcode {solve,coherent-info,threshold,oracle,fit-gamma,extrapolate}``.

Configuration is a flat sectioned INI file. Curves are written as CSV with a
versioned schema comment, scalar result sets as JSON and fields as binary
checkpoints.

Exit codes: 0 success, 1 other failure, 2 partial convergence failure,
3 convention-check failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, channels, edoracle
from .contour import build_contour
from .models import ModelParams
from .solver import SolverConfig, default_grid, load_checkpoint, save_checkpoint, solve

log = logging.getLogger("sykcode")

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL, EXIT_CONVENTION = 0, 1, 2, 3
CSV_VERSION = 1
COHERENT_COLUMNS = ("beta", "rate", "s_qr", "s_q", "ic_density", "phi_star", "ssb", "converged")

DEFAULTS = {
    "model": {"model": "syk", "J": "1.0", "g": "1.0", "rank_gamma": "1.0"},
    "solver": {"mixing": "0.3", "tolerance": "1e-8", "max_iterations": "5000",
               "acceleration": "false", "M": ""},
    "solve": {"kind": "thermal", "beta": "10", "theta": "0.0", "warm_start": ""},
    "scan": {"beta": "20", "renyi": "2", "p": "0.0", "q": "0.0", "phi_max": "0.8",
             "phi_points": "25", "ssb_mode": "spontaneous", "input": ""},
    "threshold": {"epsilon": "0.01,0.05", "eta": "nan", "alpha": str(analysis.BETA_ALPHA),
                  "c": str(analysis.BETA_C)},
    "oracle": {"choi_sizes": "2,4", "choi_rate": "0.3", "draws": "100", "n_majorana": "4,6",
               "seed": "0", "beta": "2.0", "p": "0.1", "q": "0.2", "average_draws": "20"},
    "fit": {"beta": "20", "window": ",".join(map(str, analysis.DEFAULT_P_WINDOW))},
    "extrapolate": {"betas": "20,30,40,60,80", "order": "2", "input": ""},
}


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(float(x)) for x in _floats(text)]


def load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path:
        if not Path(path).exists():
            raise FileNotFoundError(f"config file {path} not found")
        cp.read(path)
    return cp


def model_params(cp) -> ModelParams:
    m = cp["model"]
    return ModelParams(m.get("model"), m.getfloat("J"), m.getfloat("g"), m.getfloat("rank_gamma"))


def solver_config(cp) -> SolverConfig:
    s = cp["solver"]
    return SolverConfig(mixing=s.getfloat("mixing"), tolerance=s.getfloat("tolerance"),
                        max_iterations=s.getint("max_iterations"),
                        acceleration=s.getboolean("acceleration"))


def _grid(cp, beta, params) -> int:
    text = cp["solver"].get("M", "").strip()
    return int(text) if text else default_grid(beta, params)


def write_csv(path: Path, columns, rows, meta: dict | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        extra = "".join(f" {k}={v}" for k, v in (meta or {}).items())
        fh.write(f"# sykcode-csv v{CSV_VERSION} columns={','.join(columns)}{extra}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns])
    return path


def read_csv(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=_jsonable))
    return path


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(type(x))


def _clean(x):
    return None if isinstance(x, float) and not np.isfinite(x) else x


# -- solve ------------------------------------------------------------------


def cmd_solve(cp, out: Path, workers: int = 1) -> int:
    params, cfg = model_params(cp), solver_config(cp)
    kind = cp["solve"].get("kind")
    betas = _floats(cp["solve"].get("beta"))
    thetas = _floats(cp["solve"].get("theta"))
    warm = cp["solve"].get("warm_start", "").strip()
    warm_field = load_checkpoint(warm)[1] if warm else None
    records = []
    for beta in betas:
        M = _grid(cp, beta, params)
        spec = build_contour(kind, beta, M)
        for theta in thetas:
            start = warm_field if warm_field is not None and warm_field.values.shape == (spec.size,) * 2 else None
            res = solve(spec, params, theta, cfg.replace(warm_start=start))
            name = f"{kind}_b{beta:g}_t{theta:g}.sykgf"
            ck = save_checkpoint(out / name, res) if res.G is not None else None
            records.append({"kind": kind, "beta": beta, "M": M, "theta": theta,
                            "action": res.action, "iterations": res.iterations,
                            "residual": res.residual, "converged": res.converged,
                            "warm_start": start is not None, "checkpoint": str(ck) if ck else None,
                            "message": res.message})
    write_json(out / "solve_summary.json", {"model": dataclasses.asdict(params), "records": records})
    n_ok = sum(r["converged"] for r in records)
    if n_ok == len(records):
        return EXIT_OK
    return EXIT_PARTIAL if n_ok else EXIT_ERROR


# -- coherent information ---------------------------------------------------


def _phi_grid(cp) -> np.ndarray:
    s = cp["scan"]
    top, pts = s.getfloat("phi_max"), s.getint("phi_points")
    return np.concatenate(([0.0], np.geomspace(top / 80, top, pts - 1)))


def _scan_beta(args):
    beta, params, cfg, M, n, ps, qs, grid, ssb_mode = args
    if len(qs) > 1 or (qs and qs[0] > 0):
        p = ps[0] if ps else 0.0
        res = channels.q_scan(beta, params, qs, n, p=p, cfg=cfg, phi_grid=grid, M=M, ssb_mode=ssb_mode)
        rates = qs
    else:
        res = channels.p_scan(beta, params, ps, n, cfg=cfg, M=M)
        rates = ps
    rows = []
    for rate, r in zip(rates, res):
        rows.append({"beta": beta, "rate": rate, "s_qr": r.s_qr, "s_q": r.s_q,
                     "ic_density": r.ic_density, "phi_star": r.phi_star,
                     "ssb": bool(r.ssb), "converged": bool(r.converged)})
    return rows


def coherent_info_rows(cp, n: int, workers: int = 1) -> list[dict]:
    params, cfg = model_params(cp), solver_config(cp)
    s = cp["scan"]
    betas = _floats(s.get("beta"))
    ps, qs = _floats(s.get("p")), _floats(s.get("q"))
    grid = _phi_grid(cp)
    jobs = [(b, params, cfg, _grid(cp, b, params), n, ps, qs, grid, s.get("ssb_mode")) for b in betas]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_scan_beta, jobs))
    else:
        chunks = [_scan_beta(j) for j in jobs]
    rows = [r for c in chunks for r in c]
    return sorted(rows, key=lambda r: (r["beta"], r["rate"]))


def cmd_coherent_info(cp, out: Path, n: int, workers: int = 1) -> int:
    rows = coherent_info_rows(cp, n, workers)
    write_csv(out / "coherent_info.csv", COHERENT_COLUMNS, rows, {"renyi": n})
    n_ok = sum(r["converged"] for r in rows)
    if n_ok == len(rows):
        return EXIT_OK
    return EXIT_PARTIAL if n_ok else EXIT_ERROR


# -- threshold --------------------------------------------------------------


def threshold_payload(rows: list[dict], epsilons, eta: float, alpha: float, c: float, n: int) -> dict:
    out = {"mapping": {"c": c, "alpha": alpha, "eta": _clean(eta)}, "renyi": n, "results": []}
    betas = sorted({float(r["beta"]) for r in rows})
    for beta in betas:
        sub = sorted((r for r in rows if float(r["beta"]) == beta), key=lambda r: float(r["rate"]))
        rates = np.array([float(r["rate"]) for r in sub])
        ic = np.array([float(r["ic_density"]) for r in sub])
        ssb = [str(r["ssb"]).lower() == "true" for r in sub]
        q_c, q_open = analysis.detect_ssb_onset(zip(rates, np.where(ssb, 1.0, 0.0)))
        for eps in epsilons:
            p_th, open_ended = analysis.epsilon_threshold(rates, ic, ic[0], eps)
            tr = analysis.ThresholdResult(q_c=q_c, p_th=p_th, epsilon=eps, eta=eta, alpha=alpha,
                                          n=n, open_ended=open_ended, c=c)
            rec = {k: _clean(v) for k, v in dataclasses.asdict(tr).items() if k != "extra"}
            rec.update(beta=beta, N=float(analysis.N_of_beta(beta, c, alpha)), q_c_open_ended=q_open)
            out["results"].append(rec)
    return out


def cmd_threshold(cp, out: Path, n: int, workers: int = 1) -> int:
    t = cp["threshold"]
    src = cp["scan"].get("input", "").strip()
    rows = read_csv(src) if src else coherent_info_rows(cp, n, workers)
    payload = threshold_payload(rows, _floats(t.get("epsilon")), t.getfloat("eta"),
                                t.getfloat("alpha"), t.getfloat("c"), n)
    write_json(out / "threshold.json", payload)
    return EXIT_OK


# -- oracle -----------------------------------------------------------------


def oracle_rows(cp, n: int) -> tuple[list[dict], bool]:
    o = cp["oracle"]
    rows, ok = [], True
    rate = o.getfloat("choi_rate")
    for N in _ints(o.get("choi_sizes")):
        for family in ("single", "pair"):
            dev = edoracle.verify_channel_choi(rate, N, family)
            passed = dev <= 1e-10
            ok &= passed
            rows.append({"check": f"choi_{family}", "n_majorana": N, "value": dev, "passed": passed})
    rng = np.random.default_rng(o.getint("seed"))
    sizes = _ints(o.get("n_majorana"))
    bounds_ok = True
    for _ in range(o.getint("draws")):
        N = int(rng.choice(sizes))
        beta = float(rng.uniform(0, 2 * o.getfloat("beta")))
        p, q = float(rng.uniform(0, 0.49)), float(rng.uniform(0, 1.0))
        H = edoracle.build_hamiltonian(N, params=model_params(cp), rng=rng)
        st = edoracle.tfd_state(H, beta)
        ic = edoracle.exact_coherent_info(st, p, q, n)
        clean = edoracle.clean_coherent_info(st, n)
        bounds_ok &= bool(-clean - 1e-12 <= ic <= clean + 1e-12)
    rows.append({"check": "bounds", "n_majorana": max(sizes), "value": o.getint("draws"), "passed": bounds_ok})
    for N in sizes:
        s = edoracle.clean_coherent_info(edoracle.tfd_state(None, 0.0, N), n)
        passed = abs(s - N / 2 * np.log(2)) < 1e-12
        ok &= passed
        rows.append({"check": "beta0_entropy", "n_majorana": N, "value": s, "passed": passed})
    N = max(sizes)
    mean, err = edoracle.disorder_average(N, o.getfloat("beta"), model_params(cp), o.getfloat("p"),
                                          o.getfloat("q"), n, o.getint("average_draws"), o.getint("seed"))
    rows.append({"check": "disorder_average_ic", "n_majorana": N, "value": mean, "passed": True})
    rows.append({"check": "disorder_average_err", "n_majorana": N, "value": err, "passed": True})
    return rows, ok and bounds_ok


def cmd_oracle(cp, out: Path, n: int, workers: int = 1) -> int:
    rows, ok = oracle_rows(cp, n)
    write_csv(out / "oracle.csv", ("check", "n_majorana", "value", "passed"), rows, {"renyi": n})
    return EXIT_OK if ok else EXIT_CONVENTION


# -- fits -------------------------------------------------------------------


def cmd_fit_gamma(cp, out: Path, n: int, workers: int = 1) -> int:
    params, cfg = model_params(cp), solver_config(cp)
    records = []
    for beta in _floats(cp["fit"].get("beta")):
        fit = analysis.fit_gamma(beta, params, n, cfg, M=_grid(cp, beta, params),
                                 window=_floats(cp["fit"].get("window")), max_residual=None)
        rec = dataclasses.asdict(fit)
        rec["gamma_difference"] = fit.gamma_difference
        records.append(rec)
    write_json(out / "fit_gamma.json", {"renyi": n, "fits": records})
    return EXIT_OK


def cmd_extrapolate(cp, out: Path, n: int, workers: int = 1) -> int:
    e = cp["extrapolate"]
    order = e.getint("order")
    src = e.get("input", "").strip()
    if src:
        rows = read_csv(src)
        pts = [(float(r["beta"]), float(r["y"])) for r in rows]
        y0, err = analysis.extrapolate_zero_T(pts, order)
        payload = {"source": src, "order": order, "value": y0, "stderr": _clean(err)}
    else:
        params = model_params(cp)
        betas = _floats(e.get("betas"))
        y0, err = analysis.zero_T_entropy(params, betas, order)
        payload = {"quantity": "s0", "model": dataclasses.asdict(params), "betas": betas,
                   "order": order, "value": y0, "stderr": _clean(err)}
    write_json(out / "extrapolate.json", payload)
    return EXIT_OK


COMMANDS = {
    "solve": lambda cp, out, n, w: cmd_solve(cp, out, w),
    "coherent-info": cmd_coherent_info,
    "threshold": cmd_threshold,
    "oracle": cmd_oracle,
    "fit-gamma": cmd_fit_gamma,
    "extrapolate": cmd_extrapolate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sykcode", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--workers", type=int, default=1, help="worker processes for independent scan points")
    ap.add_argument("--renyi", type=int, choices=(2, 3), default=None, help="Renyi index")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cp = load_config(args.config)
        n = args.renyi or cp["scan"].getint("renyi")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cp, out, n, max(1, args.workers))
    except Exception as exc:  # report and map to the generic failure code
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
