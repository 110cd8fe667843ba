"""Experiment harness: configuration, pipelines, persistence and the ``magcgo`` command."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
import traceback
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .grid import load_field, make_grid, save_field, scalar_field, set_fft_workers
from .potentials import PotentialPair, generated_pair, load_pair, mode_scalar, mode_vector, save_pair
from .reconstruct import SWEEP_COLUMNS, StabilityParams, StabilityReport

REPORT_FORMAT = "magcgo-stability-report/1"
SCHEMA_NAME = "stability_report.schema.json"


# ---------------------------------------------------------------- configuration

@dataclass
class ExperimentConfig:
    """Everything a sweep needs; ``from_dict`` accepts the nested JSON layout.

    Frequencies of the perturbation modes are in units of the lattice spacing
    ``pi / L``.  ``h_list`` (or ``"auto"``) selects the extraction convergence
    study, ``None`` skips it; the sweep itself always uses the dist-driven schedules.
    """

    L: float = 2.0
    N: int = 48
    omega_half_width: float = 0.5
    ball_inner: float | None = None
    ball_outer: float | None = None
    eps: float = 0.5
    r: object = "inf"
    M: float | None = None
    amp_A: float = 0.5
    amp_q: float = 0.5
    dA_mode: dict | None = field(default_factory=lambda: {"xi": [1, 1, 0], "direction": [0, 0, 1],
                                                          "amplitude": 0.3})
    dq_mode: dict | None = field(default_factory=lambda: {"xi": [1, 0, 0], "amplitude": 0.5})
    ts: list = field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125])
    h_list: object = "auto"
    lam: float = 1.0
    theta: float = 0.5
    besov_delta: float | None = None
    rho_scale: float = 2.0
    h_max: float = 0.5
    mode: str = "interior"
    constants: dict = field(default_factory=dict)
    calibration: dict | None = None     # {"seed": int, "ts": [...]} fits constants before the sweep
    K: int = 50
    seed: int = 0
    out_dir: str = "magcgo_out"
    figures: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        flat: dict = {}
        groups = {"grid": {"L": "L", "N": "N"},
                  "geometry": {"omega_half_width": "omega_half_width", "ball_inner": "ball_inner",
                               "ball_outer": "ball_outer"},
                  "class": {"eps": "eps", "r": "r", "M": "M"},
                  "potential": {"amp_A": "amp_A", "amp_q": "amp_q"},
                  "perturbation": {"dA": "dA_mode", "dq": "dq_mode"},
                  "schedules": {"ts": "ts", "h_list": "h_list", "lam": "lam", "theta": "theta",
                                "besov_delta": "besov_delta", "rho_scale": "rho_scale", "h_max": "h_max",
                                "mode": "mode"}}
        known = {f for f in cls.__dataclass_fields__}
        for key, val in d.items():
            if key in groups:
                for sub, v in val.items():
                    if sub not in groups[key]:
                        raise ValueError(f"unknown config key {key}.{sub}")
                    flat[groups[key][sub]] = v
            elif key in known:
                flat[key] = val
            else:
                raise ValueError(f"unknown config key {key}")
        cfg = cls(**flat)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def radii(self) -> tuple[float, float]:
        from .reconstruct import default_radii
        if self.ball_inner is not None and self.ball_outer is not None:
            return float(self.ball_inner), float(self.ball_outer)
        r_in, r_out = default_radii(self.base_pair(scale_only=True))
        return (float(self.ball_inner) if self.ball_inner is not None else r_in,
                float(self.ball_outer) if self.ball_outer is not None else r_out)

    def validate(self) -> None:
        if self.N < 16 or self.N % 2:
            raise ValueError("N must be even and at least 16")
        if self.L <= 0:
            raise ValueError("L must be positive")
        g = make_grid(self.L, self.N)
        hw = self.omega_half_width
        if not 0 < hw < self.L:
            raise ValueError("Omega half width must lie in (0, L)")
        g.node_index(hw)
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.K < 1:
            raise ValueError("K must be positive")
        if any(t < 0 for t in self.ts):
            raise ValueError("perturbation scales must be nonnegative")
        if not (self.h_list is None or self.h_list == "auto" or (isinstance(self.h_list, list) and all(0 < h <= 1 for h in self.h_list))):
            raise ValueError("h_list must be 'auto', null or a list of values in (0, 1]")
        r_in = self.ball_inner if self.ball_inner is not None else 1.05 * np.sqrt(3.0) * hw
        r_out = self.ball_outer if self.ball_outer is not None else min(1.3 * r_in, self.L - 4 * g.spacing)
        if r_in <= np.sqrt(3.0) * hw:
            raise ValueError("geometry: the closed cube Omega must lie inside B' (ball_inner > sqrt(3) hw)")
        if r_out <= r_in + 2 * g.spacing:
            raise ValueError("geometry: the closure of B' must lie inside B (ball_outer > ball_inner + 2 dx)")
        if r_out > self.L - 2 * g.spacing:
            raise ValueError("geometry: B must lie inside the periodic box")
        self.params()   # range checks on the schedule knobs

    def params(self, fitted: dict | None = None) -> StabilityParams:
        kw = dict(eps=self.eps, lam=self.lam, theta=self.theta, besov_delta=self.besov_delta, r=self.r,
                  rho_scale=self.rho_scale, h_max=self.h_max, mode=self.mode)
        kw.update(self.constants)
        kw.update(fitted or {})
        return StabilityParams(**kw)

    def grid(self):
        return make_grid(self.L, self.N)

    def base_pair(self, seed: int | None = None, scale_only: bool = False) -> PotentialPair:
        g = self.grid()
        s = self.seed if seed is None else seed
        if scale_only:
            from .potentials import zero_pair
            return zero_pair(g, half_width=self.omega_half_width)
        return generated_pair(g, self.eps, s, self.amp_A, self.amp_q, self.omega_half_width, self.M,
                              self.r, label=f"base-{s}")

    def perturbation(self):
        g = self.grid()
        u = g.freq_unit
        dA = dq = None
        if self.dA_mode:
            m = self.dA_mode
            dA = mode_vector(g, np.asarray(m["xi"], float) * u, np.asarray(m["direction"], float),
                             float(m.get("amplitude", 1.0)), self.omega_half_width)
        if self.dq_mode:
            m = self.dq_mode
            dq = mode_scalar(g, np.asarray(m["xi"], float) * u, float(m.get("amplitude", 1.0)),
                             self.omega_half_width)
        return dA, dq


# ---------------------------------------------------------------- reports

def schema_path():
    return resources.files("magcgo") / "schemas" / SCHEMA_NAME


def load_schema() -> dict:
    return json.loads(schema_path().read_text())


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def report_csv(report: StabilityReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in report.rows:
        w.writerow([_cell(row.get(c)) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def report_json(report: StabilityReport) -> dict:
    d = {"format": REPORT_FORMAT}
    d.update(report.to_dict())
    return _jsonable(d)


def write_dat(path, columns, rows) -> None:
    """Whitespace-separated table with a ``#`` header line (missing values as NaN)."""
    lines = ["# " + " ".join(columns)]
    for r in rows:
        lines.append(" ".join("nan" if v is None else repr(float(v)) for v in r))
    Path(path).write_text("\n".join(lines) + "\n")


def emit_report(report: StabilityReport, out_dir, stem: str = "sweep") -> dict:
    """Write ``<stem>.csv``, ``<stem>.json`` and ``<stem>.dat``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json", "dat": out / f"{stem}.dat"}
    paths["csv"].write_text(report_csv(report))
    paths["json"].write_text(json.dumps(report_json(report), indent=1, sort_keys=True) + "\n")
    rows = sorted(report.rows, key=lambda r: r["t"])
    write_dat(paths["dat"], SWEEP_COLUMNS, [[r.get(c) for c in SWEEP_COLUMNS] for r in rows])
    return {k: str(v) for k, v in paths.items()}


def empty_report(params: StabilityParams) -> StabilityReport:
    return StabilityReport(params.to_dict(), [], [], [])


# ---------------------------------------------------------------- experiment

class _Manifest:
    def __init__(self, out: Path, config: dict):
        self.path = out / "manifest.json"
        self.data = {"config": config, "started": time.strftime("%Y-%m-%dT%H:%M:%S"), "stages": [],
                     "summary": {}, "status": "running"}

    def stage(self, name, fn):
        t0 = time.perf_counter()
        entry = {"name": name, "status": "ok", "outputs": {}, "error": None}
        try:
            result = fn(entry["outputs"])
        except Exception as exc:     # keep going, partial outputs stay on disk
            entry["status"] = "failed"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            entry["traceback"] = traceback.format_exc()
            result = None
        entry["seconds"] = round(time.perf_counter() - t0, 3)
        self.data["stages"].append(entry)
        self.write()
        return result

    def write(self):
        self.path.write_text(json.dumps(_jsonable(self.data), indent=1) + "\n")


def _summary(report: StabilityReport) -> dict:
    out = {"rows": len(report.rows), "dist_monotone": report.dist_monotone(), "bounds_hold": report.holds()}
    for c in SWEEP_COLUMNS[1:10]:
        vals = [r[c] for r in report.rows if r.get(c) is not None]
        out["max_" + c] = max(vals) if vals else None
    return out


def _extraction_study(cfg: ExperimentConfig, base, dA, dq, out: Path, outputs: dict, workers: int) -> None:
    from .reconstruct import extract_dA_hat, extract_q_hat, gauge_repair
    from .reconstruct import perturbed
    hs = [0.5, 0.25, 0.125, 0.0625] if cfg.h_list == "auto" else list(cfg.h_list)
    t = max(cfg.ts) if cfg.ts else 1.0
    P2 = perturbed(base, dA, dq, t)
    u = base.grid.freq_unit
    cache: dict = {}
    rows = []
    G = gauge_repair(base, P2, *cfg.radii()) if dq is not None else None
    for h in hs:
        row = [h, None, None]
        if dA is not None:
            row[1] = extract_dA_hat(base, P2, np.asarray(cfg.dA_mode["xi"], float) * u, h, cache=cache).error
        if dq is not None:
            row[2] = extract_q_hat(base, P2, np.asarray(cfg.dq_mode["xi"], float) * u, h, gauge=G,
                                   cache=cache).error
        rows.append(row)
    write_dat(out / "extraction.dat", ["h", "dA_error", "q_error"], rows)
    outputs["dat"] = str(out / "extraction.dat")


def _figures(out: Path, outputs: dict) -> None:
    """Log-log figures from the .dat files (optional; needs matplotlib)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    sweep = out / "sweep.dat"
    if sweep.exists():
        cols = sweep.read_text().splitlines()[0][2:].split()
        data = np.atleast_2d(np.loadtxt(sweep))
        fig, ax = plt.subplots(figsize=(6, 4))
        x = data[:, cols.index("dist")]
        for name in ("dA_Hm1", "q_Hlambda"):
            for kind, style in (("direct", "o-"), ("bound", "s--")):
                y = data[:, cols.index(f"{name}_{kind}")]
                ok = (x > 0) & (y > 0)
                if ok.any():
                    ax.loglog(x[ok], y[ok], style, label=f"{name} {kind}")
        ax.set_xlabel("dist")
        ax.set_ylabel("norm")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "sweep.png", dpi=120)
        plt.close(fig)
        outputs["sweep"] = str(out / "sweep.png")
    ext = out / "extraction.dat"
    if ext.exists():
        data = np.atleast_2d(np.loadtxt(ext))
        fig, ax = plt.subplots(figsize=(6, 4))
        for i, name in ((1, "dA"), (2, "q")):
            ok = np.isfinite(data[:, i]) & (data[:, i] > 0)
            if ok.any():
                ax.loglog(data[ok, 0], data[ok, i], "o-", label=f"{name} extraction error")
        ax.set_xlabel("h")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "extraction.png", dpi=120)
        plt.close(fig)
        outputs["extraction"] = str(out / "extraction.png")


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1, progress=None) -> Path:
    """Run the configured pipeline into ``out_dir``; the manifest is always written."""
    from .cauchy import assemble_cauchy, save_cauchy
    from .reconstruct import fit_constants, sweep
    cfg.validate()
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = _Manifest(out, cfg.to_dict())
    state: dict = {"fitted": {}}
    try:
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")

        def potentials(o):
            state["base"] = cfg.base_pair()
            state["dA"], state["dq"] = cfg.perturbation()
            save_pair(out / "base.json", state["base"])
            o["base"] = str(out / "base.json")
            for key in ("dA", "dq"):
                if state[key] is not None:
                    save_field(out / f"{key}.cgof", state[key])
                    o[key] = str(out / f"{key}.cgof")
        man.stage("potentials", potentials)

        def cauchy(o):
            state["C1"] = assemble_cauchy(state["base"], cfg.K, label="base")
            save_cauchy(out / "cauchy_base.json", state["C1"])
            o["cauchy"] = str(out / "cauchy_base.json")
        man.stage("cauchy", cauchy)

        if cfg.calibration:
            def calibration(o):
                cal = cfg.calibration
                P = cfg.base_pair(seed=int(cal.get("seed", cfg.seed + 1)))
                rep = sweep(P, state["dA"], state["dq"], cal.get("ts", cfg.ts), cfg.params(), cfg.K,
                            workers=workers, radii=cfg.radii())
                state["fitted"] = fit_constants(rep, cfg.params())
                rep.fitted = state["fitted"]
                o.update(emit_report(rep, out, "calibration"))
                (out / "fitted.json").write_text(json.dumps(_jsonable(state["fitted"]), indent=1) + "\n")
                o["fitted"] = str(out / "fitted.json")
            man.stage("calibration", calibration)

        def run_sweep(o):
            params = cfg.params(state["fitted"])
            rep = sweep(state["base"], state["dA"], state["dq"], cfg.ts, params, cfg.K, progress=progress,
                        workers=workers, radii=cfg.radii(), C1=state.get("C1"))
            rep.fitted = state["fitted"]
            state["report"] = rep
            o.update(emit_report(rep, out, "sweep"))
            man.data["summary"] = _summary(rep)
        man.stage("sweep", run_sweep)

        if cfg.h_list is not None:
            man.stage("extraction", lambda o: _extraction_study(cfg, state["base"], state["dA"], state["dq"],
                                                                out, o, workers))
        if cfg.figures:
            man.stage("figures", lambda o: _figures(out, o))
    finally:
        failed = [s["name"] for s in man.data["stages"] if s["status"] != "ok"]
        man.data["status"] = "partial" if failed else "complete"
        man.data["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        man.write()
    return out


# ---------------------------------------------------------------- command line

def _vec(s: str) -> np.ndarray:
    v = np.array([float(x) for x in s.split(",")])
    if v.shape != (3,):
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return v


def _floats(s: str) -> list:
    return [float(x) for x in s.split(",")]


def _out(args, name) -> Path:
    p = Path(name)
    if args.out_dir and not p.is_absolute():
        p = Path(args.out_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _print(d) -> None:
    print(json.dumps(_jsonable(d), sort_keys=True))


def cmd_forward(args) -> int:
    from .forward import DirichletProblem, solve_dirichlet
    pair = load_pair(args.pair)
    f = load_field(args.boundary)
    u = solve_dirichlet(DirichletProblem(pair, f))
    path = _out(args, args.out)
    save_field(path, u)
    _print({"out": str(path), "max_abs": float(np.abs(u.values).max())})
    return 0


def cmd_cgo(args) -> int:
    from .cgo import build_cgo, equation_residual
    pair = load_pair(args.pair)
    sol = build_cgo(pair, args.xi, args.h, which=args.which)
    path = _out(args, args.out)
    save_field(path, scalar_field(pair.grid, sol.u()))
    diag = dict(sol.diagnostics)
    diag["equation_residual"] = equation_residual(pair, sol)
    if args.diag:
        _out(args, args.diag).write_text(json.dumps(_jsonable(diag), indent=1) + "\n")
    _print({"out": str(path), "converged": sol.converged, "remainder_H1scl": diag["remainder_H1scl"]})
    return 0 if sol.converged else 2


def cmd_cauchy(args) -> int:
    from .cauchy import assemble_cauchy, save_cauchy
    pair = load_pair(args.pair)
    C = assemble_cauchy(pair, args.K, label=pair.label)
    path = _out(args, args.out)
    save_cauchy(path, C)
    _print({"out": str(path), "K": C.K, "fingerprint": C.fingerprint})
    return 0


def cmd_dist(args) -> int:
    from .cauchy import dist_cauchy, load_cauchy
    d = dist_cauchy(load_cauchy(args.a), load_cauchy(args.b))
    _print({"dist": d.value, "one_way": list(d.one_way), "low_confidence": d.low_confidence})
    return 0


def hodge_check(P1: PotentialPair, P2: PotentialPair, radii=None) -> dict:
    """Decomposition of ``A1 - A2`` on the ball with the four estimate ratios."""
    from .grid import l2_norm
    from .hodge import coexact_estimate, decompose_ball, gauge_phi, helmholtz_oracle
    from .reconstruct import default_radii
    R_in, R = radii or default_radii(P1)
    u = P1.A - P2.A
    H = decompose_ball(u, R, R_in)
    est = coexact_estimate(H, u)
    _, divfree = helmholtz_oracle(u)
    oracle = l2_norm(divfree)
    G = gauge_phi(H)
    rep = G.report
    return {
        "R_inner": R_in, "R": R, "residual": H.residual, "orthogonality": H.orthogonality,
        "coexact_L2": est["coexact_L2"], "du_Hm1": est["du_Hm1"],
        "ratios": {
            "coexact_over_du": est["ratio"],
            "shell_H1_over_du": est["shell_ratio"],
            "ball_over_oracle": est["coexact_L2"] / oracle if oracle > 0 else float("nan"),
            "gauge_gradient_over_bound": rep["grad_phi_prime_shell"] / rep["bound"] if rep["bound"] > 0
            else float("nan"),
        },
        "oracle_coexact_L2": oracle, "gauge": rep,
    }


def cmd_hodge_check(args) -> int:
    rep = hodge_check(load_pair(args.pair_a), load_pair(args.pair_b))
    if args.out:
        _out(args, args.out).write_text(json.dumps(_jsonable(rep), indent=1) + "\n")
    _print(rep["ratios"])
    return 0


def cmd_besov_norm(args) -> int:
    from .besov import BesovParams, besov_report, diff_seminorm, sobolev_norm
    u = load_field(args.field)
    rep = besov_report(u, BesovParams(args.s, args.r))
    out = {"field": str(args.field), "s": args.s, "r": rep["r"], "besov": rep["value"], "j_max": rep["j_max"],
           "tail_l2": rep["tail_l2"], "sobolev": sobolev_norm(u, args.s)}
    if args.seminorm_eps is not None:
        out["seminorm_eps"] = args.seminorm_eps
        out["seminorm"] = diff_seminorm(u, args.seminorm_eps, args.r)
    _print(out)
    return 0


def _extract(args, kind) -> int:
    from .reconstruct import extract_dA_hat, extract_q_hat, gauge_repair
    P1, P2 = load_pair(args.pair_a), load_pair(args.pair_b)
    cache: dict = {}
    recs = []
    G = gauge_repair(P1, P2) if kind == "q" else None
    for h in args.h:
        if kind == "dA":
            recs.append(extract_dA_hat(P1, P2, args.xi, h, mode=args.mode, cache=cache))
        else:
            recs.append(extract_q_hat(P1, P2, args.xi, h, gauge=G, cache=cache))
    data = [r.to_dict() for r in recs]
    if args.out:
        _out(args, args.out).write_text(json.dumps(_jsonable(data), indent=1) + "\n")
    for r in recs:
        _print({"kind": r.kind, "h": r.h, "value": r.value, "error": r.error})
    return 0


def cmd_sweep(args) -> int:
    if not args.config:
        raise SystemExit("sweep needs --config")
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.figures:
        cfg.figures = True
    out = run_experiment(cfg, args.out_dir or cfg.out_dir, workers=args.threads,
                         progress=lambda row: print(json.dumps(_jsonable(row)), file=sys.stderr))
    man = json.loads((out / "manifest.json").read_text())
    _print({"out_dir": str(out), "status": man["status"], "summary": man["summary"]})
    return 0 if man["status"] == "complete" else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magcgo", description=__doc__)
    p.add_argument("--config", help="experiment configuration (JSON)")
    p.add_argument("--threads", type=int, default=1, help="FFT workers and per-frequency jobs")
    p.add_argument("--seed", type=int, default=None, help="override the configuration seed")
    p.add_argument("--out-dir", default=None, help="directory for relative output paths")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("forward", help="solve a Dirichlet problem on Omega")
    s.add_argument("--pair", required=True)
    s.add_argument("--boundary", required=True, help="CGOF scalar field supplying the boundary values")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("cgo", help="build one CGO solution")
    s.add_argument("--xi", type=_vec, required=True)
    s.add_argument("--h", type=float, required=True)
    s.add_argument("--pair", required=True)
    s.add_argument("--which", type=int, choices=(1, 2), default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--diag", default=None)
    s.set_defaults(func=cmd_cgo)

    s = sub.add_parser("cauchy", help="assemble surrogate Cauchy data")
    s.add_argument("--pair", required=True)
    s.add_argument("--K", type=int, default=50)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cauchy)

    s = sub.add_parser("dist", help="distance between two Cauchy data files")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(func=cmd_dist)

    s = sub.add_parser("hodge-check", help="ball Hodge decomposition of A1 - A2 with estimate ratios")
    s.add_argument("--pair-a", required=True)
    s.add_argument("--pair-b", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_hodge_check)

    s = sub.add_parser("besov-norm", help="Besov, Sobolev and difference norms of a CGOF field")
    s.add_argument("field")
    s.add_argument("--s", type=float, required=True)
    s.add_argument("--r", default="2")
    s.add_argument("--seminorm-eps", type=float, default=None)
    s.set_defaults(func=cmd_besov_norm)

    for name, kind in (("extract-da", "dA"), ("extract-q", "q")):
        s = sub.add_parser(name, help=f"extract the Fourier coefficient of the {kind} difference")
        s.add_argument("--pair-a", required=True)
        s.add_argument("--pair-b", required=True)
        s.add_argument("--xi", type=_vec, required=True)
        s.add_argument("--h", type=_floats, required=True, help="one or more comma-separated values")
        if kind == "dA":
            s.add_argument("--mode", choices=("interior", "boundary"), default="interior")
        s.add_argument("--out", default=None)
        s.set_defaults(func=lambda a, k=kind: _extract(a, k))

    s = sub.add_parser("sweep", help="run the configured stability sweep")
    s.add_argument("--figures", action="store_true", help="also write PNG figures (needs matplotlib)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    set_fft_workers(args.threads)
    return int(args.func(args) or 0)


if __name__ == "__main__":
    sys.exit(main())
