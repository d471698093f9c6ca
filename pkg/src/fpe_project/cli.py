"""Command-line experiment runner.

    fpe-project run --config exp.json [--out DIR] [--seed N]
    fpe-project validate --config exp.json
    fpe-project presets

Exit status: 0 on success, 2 for invalid input, 3 for a numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import platform
import sys
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy

from . import __version__
from .config import PRESETS, Experiment, build, load, resolve
from .errors import FpeProjectError, NumericFailure, ValidationError
from .expfam import ExpFamily
from .oracle import Grid1D, family_on_grid, fpe_solve, mle_error_series, moment_project
from .projection import projected_flow, residual
from .synth import SynthesizedDrift, em_bias_ou, ensemble_csv_rows, simulate_em, validate_moments

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip form, 17 significant digits at most
    return str(v)


def emit_csv(header: Sequence[str], rows: Iterable[Sequence], path) -> None:
    """Write a CSV file with ``\\n`` line endings and round-trip float formatting."""
    header = list(header)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, row in enumerate(rows):
            row = list(row)
            if len(row) != len(header):
                raise ValidationError(f"row {i} has {len(row)} fields, header has {len(header)}")
            w.writerow([_fmt(v) for v in row])


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def _nice(v: float) -> str:
    return f"{v:.4g}"


def emit_plot(series, path, title: str = "", xlabel: str = "t", ylabel: str = "") -> None:
    """Self-contained SVG line chart.

    ``series`` is a list of ``(label, xs, ys)``. Output bytes depend only on
    the input.
    """
    series = [(str(lbl), np.asarray(xs, float), np.asarray(ys, float)) for lbl, xs, ys in series]
    if not series:
        raise ValidationError("emit_plot needs at least one series")
    for lbl, xs, ys in series:
        if xs.shape != ys.shape or xs.size == 0:
            raise ValidationError(f"series {lbl!r}: x and y must be nonempty and of equal length")
    W, H, L, R, T, B = 640, 400, 70, 150, 40, 50
    allx = np.concatenate([s[1] for s in series])
    ally = np.concatenate([s[2] for s in series])
    finite = np.isfinite(ally)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = (float(ally[finite].min()), float(ally[finite].max())) if finite.any() else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = 0.5 * abs(y0) or 0.5
        y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return L + (x - x0) / (x1 - x0) * (W - L - R)

    def py(y):
        return H - B - (y - y0) / (y1 - y0) * (H - T - B)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{_esc(title)}</text>',
        f'<line x1="{L}" y1="{H - B}" x2="{W - R}" y2="{H - B}" stroke="black"/>',
        f'<line x1="{L}" y1="{T}" x2="{L}" y2="{H - B}" stroke="black"/>',
    ]
    for k in range(5):
        xv = x0 + k * (x1 - x0) / 4
        yv = y0 + k * (y1 - y0) / 4
        out.append(f'<text x="{px(xv):.2f}" y="{H - B + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{_nice(xv)}</text>')
        out.append(f'<text x="{L - 6}" y="{py(yv) + 3:.2f}" text-anchor="end" font-family="sans-serif" font-size="10">{_nice(yv)}</text>')
    out.append(f'<text x="{(L + W - R) / 2:.1f}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{(T + H - B) / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {(T + H - B) / 2:.1f})">{_esc(ylabel)}</text>')
    for i, (lbl, xs, ys) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys) if np.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = T + 14 + 18 * i
        out.append(f'<line x1="{W - R + 10}" y1="{ly}" x2="{W - R + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - R + 36}" y="{ly + 4}" font-family="sans-serif" font-size="11">{_esc(lbl)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# running


@contextlib.contextmanager
def _stage(name: str):
    """Tag numeric failures raised inside with the operation name."""
    try:
        yield
    except FpeProjectError as exc:
        if not exc.operation:
            exc.operation = name
        raise


class _Run:
    def __init__(self, exp: Experiment, out: Path, seed: int | None):
        self.exp, self.out, self.seed = exp, out, seed
        self.events: list[str] = []
        self.extra: list[str] = []

    @property
    def fam(self) -> ExpFamily:
        return self.exp.fam

    def flow(self):
        exp, t = self.exp, self.exp.time
        span = (t["t0"], t["t1"])
        if exp.preset == "eigen-mle":
            return None  # handled with the oracle
        with _stage("projected_flow"):
            traj = projected_flow(self.fam, exp.model, exp.theta0, span, t_eval=exp.times,
                                  h0=t["h0"], rtol=t["rtol"], atol=t["atol"])
        if traj.exit is not None:
            self.events.append(f"projected_flow: left the feasible set at t={traj.exit.t!r} ({traj.exit.reason})")
        return traj.times, traj.states

    def trajectory_rows(self, times, thetas):
        rows = []
        for t, th in zip(times, thetas):
            with _stage("residual"):
                eta = self.fam.mean_params(th)
                r2 = residual(self.fam, self.exp.model, th, t).r2
            rows.append([t, *th, *eta, r2])
        return rows

    def run(self) -> None:
        exp, fam = self.exp, self.fam
        n = fam.n
        self.out.mkdir(parents=True, exist_ok=True)
        oracle_rows = None

        if exp.preset == "eigen-mle" and exp.p0 is None:
            if not exp.oracle:
                raise ValidationError("oracle: required by the eigen-mle preset")
            o = exp.oracle
            exp.p0 = family_on_grid(fam, exp.theta0, Grid1D(o["lo"], o["hi"], o["m"]))
        if exp.p0 is not None:
            o = exp.oracle
            with _stage("moment_project"):
                theta0, _ = moment_project(fam, exp.p0)
            if exp.preset == "eigen-mle":
                with _stage("mle_error_series"):
                    series = mle_error_series(fam, exp.model, exp.p0, exp.times, o["dt"], theta0=theta0)
                thetas, th = [], theta0
                with _stage("natural_from_mean"):
                    for eta in series.eta_proj:
                        th = fam.natural_from_mean(eta, th)
                        thetas.append(th)
                times = series.times
                oracle_rows = [[t, *et, *ep, e] for t, et, ep, e in series.rows()]
                self.extra.append(f"spectrum: {' '.join(_fmt(v) for v in series.lam)}")
            else:
                exp.theta0 = theta0
                times, thetas = self.flow()
        else:
            times, thetas = self.flow()

        rows = self.trajectory_rows(times, thetas)
        header = ["t", *(f"theta_{i}" for i in range(1, n + 1)), *(f"eta_{i}" for i in range(1, n + 1)), "residual"]
        emit_csv(header, rows, self.out / "trajectory.csv")

        if exp.oracle and oracle_rows is None:
            oracle_rows = self.oracle_rows(times, [r[1 + n:1 + 2 * n] for r in rows], thetas[0])
        if oracle_rows is not None:
            oh = ["t", *(f"eta_true_{i}" for i in range(1, n + 1)), *(f"eta_proj_{i}" for i in range(1, n + 1)), "eps_norm"]
            emit_csv(oh, oracle_rows, self.out / "oracle.csv")

        if exp.simulation is not None:
            self.synthesize(times, np.asarray(thetas))

        if exp.output["plot"]:
            arr = np.array(rows, dtype=float)
            series = [(f"theta_{i}", arr[:, 0], arr[:, i]) for i in range(1, n + 1)]
            emit_plot(series, self.out / "trajectory.svg", title=exp.preset, ylabel="theta")
            emit_plot([("residual", arr[:, 0], arr[:, -1])], self.out / "residual.svg", title=exp.preset, ylabel="r2")
        self.write_meta()

    def oracle_rows(self, times, etas, theta0):
        o = self.exp.oracle
        grid = Grid1D(o["lo"], o["hi"], o["m"])
        p0 = self.exp.p0 if self.exp.p0 is not None else family_on_grid(self.fam, theta0, grid)
        with _stage("fpe_solve"):
            sol = fpe_solve(self.exp.model, p0, (times[0], times[-1]), o["dt"], t_out=times)
        self.events.append(f"fpe_solve: mass drift rate {sol.mass_drift_rate!r}, clipped mass {sol.clipped_mass!r}")
        out = []
        for (t, d), ep in zip(sol, etas):
            et = np.asarray(d.expect(list(self.fam.stats)))
            out.append([t, *et, *ep, float(np.max(np.abs(et - np.asarray(ep))))])
        return out

    def synthesize(self, times, thetas):
        from .ode import Trajectory

        exp, sim = self.exp, self.exp.simulation
        seed = self.seed if self.seed is not None else sim["seed"]
        g = sim["grid"]
        grid = Grid1D(g["lo"], g["hi"], g["m"])
        with _stage("modified_drift"):
            drift = SynthesizedDrift.build(exp.model, self.fam, Trajectory(np.asarray(times), thetas), grid)
        theta0 = thetas[0]
        mom0 = self.fam.moments(theta0)
        x = mom0.x

        def sampler(rng, size):
            # inverse-CDF sampling of the family member at theta0 on the quadrature grid
            nodes = np.sort(x[: mom0.rule.size])
            dens = self.fam.density(theta0, nodes)
            cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(nodes))])
            cdf /= cdf[-1]
            return np.interp(rng.random(size), cdf, nodes)

        horizons = sorted(sim["horizons"])
        t1 = horizons[-1]
        with _stage("simulate_em"):
            ens = simulate_em(drift, sampler, sim["paths"], sim["dt"], t1, seed, t0=exp.time["t0"], record=horizons)
        if ens.escaped:
            self.events.append(f"simulate_em: {ens.escaped} paths left the drift grid")
        mean0, var0 = float(mom0.expect(x)), float(mom0.expect(x * x) - mom0.expect(x) ** 2)
        for h in horizons:
            idx = int(np.argmin(np.abs(np.asarray(times) - h)))
            if abs(times[idx] - h) > 1e-9 * max(1.0, abs(h)):
                raise ValidationError(f"simulation.horizons: {h!r} is not one of the trajectory output times")
            ens_h = type(ens)(ens.seed, ens.n_paths, ens.dt, ens.snapshots[h])
            bias = _pad(em_bias_ou(sim["dt"], h - exp.time["t0"], mean0, var0), self.fam.n)
            checks = validate_moments(ens_h, self.fam, thetas[idx], bias)
            emit_csv(*_split(ensemble_csv_rows(checks)), self.out / f"ensemble_t{h!r}.csv")
            status = "pass" if all(c.passed for c in checks) else "FAIL"
            self.extra.append(f"ensemble t={h!r}: {status} (max |z| {max(abs(c.z) for c in checks):.3f})")

    def write_meta(self):
        lines = [
            f"fpe-project {__version__}",
            f"python {platform.python_version()}, numpy {np.__version__}, scipy {scipy.__version__}",
            f"preset: {self.exp.preset}",
        ]
        if self.seed is not None:
            lines.append(f"seed: {self.seed}")
        lines += self.extra
        lines.append("guard events:" + ("" if self.events else " none"))
        lines += [f"  {e}" for e in self.events]
        lines.append("config:")
        lines.append(json.dumps(self.exp.raw, indent=2, sort_keys=True))
        (self.out / "meta.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _pad(v: np.ndarray, n: int) -> np.ndarray:
    # OU calibration covers the first two moments; higher statistics reuse the largest entry
    out = np.full(n, float(np.max(v)))
    out[: min(n, v.size)] = v[:n]
    return out


def _split(rows):
    rows = list(rows)
    return rows[0], rows[1:]


def run_experiment(config_path, out: str | None = None, seed: int | None = None) -> int:
    try:
        exp = build(resolve(load(config_path)))
        out_dir = Path(out or exp.output["dir"])
        _Run(exp, out_dir, seed).run()
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericFailure as exc:
        op = exc.operation or "unknown operation"
        print(f"numeric failure in {op}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"wrote {out_dir}")
    return EXIT_OK


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fpe-project", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out")
    p_run.add_argument("--seed", type=_u64)
    sub.add_parser("presets", help="list the named presets")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("--config", required=True)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK

    if args.command == "presets":
        width = max(map(len, PRESETS))
        for name, text in PRESETS.items():
            print(f"{name:<{width}}  {text}")
        return EXIT_OK
    if args.command == "validate":
        try:
            exp = build(resolve(load(args.config)))
        except ValidationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        print(f"ok: preset {exp.preset}, {exp.fam.n} statistics")
        return EXIT_OK
    return run_experiment(args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
