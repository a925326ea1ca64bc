"""Command-line experiment driver.

Usage::

    phonon-boltzmann <experiment> --config FILE [--out DIR] [--seed N]

Every run writes ``manifest.json`` listing the produced files with their
SHA-256 hashes, the embedded checks and, on failure, a failure record.
Exit status: 0 success, 1 failed check, 2 configuration error,
3 numerical failure.  ``PHONON_THREADS`` caps the number of worker threads.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from . import collision, dispersion, invariants, kinetic, lattice
from .collision import PAIR, CostGuardError, MomentumGrid, WignerState
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config
from .dispersion import DispersionError, SingularPointError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

NUMERICAL_ERRORS = (kinetic.StiffnessError, lattice.IntegratorInstabilityError, CostGuardError,
                    SingularPointError, FloatingPointError, np.linalg.LinAlgError, RuntimeError)


def worker_count() -> int:
    n = os.cpu_count() or 1
    cap = os.environ.get("PHONON_THREADS")
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            raise ConfigError("PHONON_THREADS", f"not an integer: {cap!r}") from None
    return n


def fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass
class RunContext:
    out: Path
    seed: int
    files: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    def write_csv(self, name: str, header, rows):
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(fmt(v) for v in row) + "\n")
        self.files.append(name)

    def write_json(self, name: str, obj):
        path = self.out / name
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
        self.files.append(name)

    def check(self, name: str, ok: bool):
        self.checks[name] = bool(ok)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# shared setup

def _dispersion(cfg: ExperimentConfig):
    try:
        return dispersion.from_config(cfg.section("dispersion"))
    except DispersionError as exc:
        raise ConfigError("dispersion", str(exc)) from None


def _grid_1d(cfg, spec, N=None):
    if spec.dim != 1:
        raise ConfigError("dispersion.dim", "this experiment needs a 1D dispersion")
    return MomentumGrid.for_spec(spec, N or cfg["grid.N"])


def _kernel(cfg, grid, spec, potential=None):
    kw = dict(tol=cfg["collision.tol"], potential=potential or cfg["lattice.potential"],
              rate_scale=cfg["collision.rate_scale"])
    if cfg["collision.cache_dir"]:
        return collision.load_or_build_kernel(grid, spec, cfg["collision.cache_dir"], **kw)
    return collision.build_kernel_1d(grid, spec, **kw)


def initial_wigner(cfg, grid, spec, seed) -> np.ndarray:
    """Initial spectrum selected by ``initial.kind``.

    ``equilibrium``: ``1/(beta omega)``.  ``perturbed``: the equilibrium
    times ``exp(amplitude * xi_k)`` with standard normal ``xi_k`` drawn from
    ``seed``.  ``bump``: the equilibrium times ``1 + amplitude cos(4 pi k)``.
    """
    beta = cfg["ensemble.beta"]
    w = spec.omega(grid.points())
    if np.any(w <= 0):
        raise ConfigError("dispersion", "omega must be positive on the grid")
    base = 1.0 / (beta * w)
    kind, amp = cfg["initial.kind"], cfg["initial.amplitude"]
    if kind == "equilibrium":
        return base
    if kind == "perturbed":
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 17])))
        return base * np.exp(amp * rng.standard_normal(grid.shape))
    if amp >= 1:
        raise ConfigError("initial.amplitude", "bump amplitude must be < 1")
    return base * (1.0 + amp * np.cos(4 * np.pi * grid.points()))


# ---------------------------------------------------------------------------
# experiments

def exp_dispersion_report(cfg, ctx: RunContext):
    spec = _dispersion(cfg)
    N = cfg["grid.N"]
    grid = MomentumGrid.for_spec(spec, N) if spec.dim == 1 else MomentumGrid(1, N)
    k = grid.axis
    pts = k if spec.dim == 1 else np.stack([k] + [np.zeros_like(k)] * (spec.dim - 1), axis=-1)
    w = spec.omega(pts)
    # the velocity is undefined at conical points (omega = 0); written as nan
    smooth = w > 1e-12 if spec.kind != dispersion.NLS_QUADRATIC else np.ones(w.shape, bool)
    v = np.full(w.shape, np.nan)
    if np.any(smooth):
        g = spec.group_velocity(pts[smooth])
        v[smooth] = g if g.ndim == 1 else g[..., 0]
    ctx.write_csv("dispersion.csv", ["k", "omega", "velocity"], zip(k, w, v))
    report = {"dispersion": spec.to_config(), "omega_min": float(w.min()),
              "omega_max": float(w.max()), "max_speed": spec.max_speed(), "flat": spec.flat}
    if spec.is_torus:
        report["couplings"] = {str(o): a for o, a in spec.couplings().items()}
    ctx.write_json("dispersion.json", report)
    ctx.check("omega_finite_nonnegative", np.all(np.isfinite(w)) and np.all(w >= 0))


def exp_kinematics_scan(cfg, ctx: RunContext):
    spec = _dispersion(cfg)
    if not spec.is_torus:
        raise ConfigError("dispersion.kind", "merger scan needs a lattice dispersion")
    rep = dispersion.scan_merger_kinematics(spec, cfg["scan.samples"], seed=ctx.seed,
                                            workers=worker_count())
    ctx.write_json("scan.json", json.loads(rep.to_json()))
    if spec.kind == dispersion.OPTICAL_NN:
        # mergers are kinematically forbidden for the nearest-neighbour optical dispersion
        ctx.check("merger_manifold_empty", rep.min_residual > 0)


def exp_microscopic_run(cfg, ctx: RunContext):
    spec = _dispersion(cfg)
    if spec.dim != 1 or not spec.is_torus:
        raise ConfigError("dispersion.dim", "the microscopic chain is one-dimensional")
    L = cfg["lattice.L"]
    ens = lattice.EnsembleSpec(cfg["ensemble.beta"], cfg["ensemble.M"], ctx.seed, L)
    grid = lattice.spectrum_grid(L)
    W0 = initial_wigner(cfg, grid, spec, ctx.seed)
    res = lattice.run_microscopic_experiment(ens, cfg["lattice.lambda"], cfg["lattice.potential"],
                                             cfg["snapshots"], cfg["integrator.dt"], spec,
                                             initial_spectrum=W0)
    rows = []
    for t, W in zip(res.times, res.spectra):
        rows.extend((k, w, e, t) for k, w, e in zip(W.grid.axis, W.values, W.stderr))
    ctx.write_csv("spectrum.csv", ["k", "W", "stderr", "t"], rows)
    ctx.write_json("run_summary.json", {"times": res.times, "energies": res.energies,
                                        "energy_drift": res.energy_drift, "L": L,
                                        "M": cfg["ensemble.M"], "lambda": cfg["lattice.lambda"]})
    ctx.check("energy_drift_below_1e-3", res.energy_drift <= 1e-3)


def exp_kinetic_relaxation(cfg, ctx: RunContext):
    spec = _dispersion(cfg)
    grid = _grid_1d(cfg, spec)
    kernel = _kernel(cfg, grid, spec)
    W0 = WignerState(grid, initial_wigner(cfg, grid, spec, ctx.seed))
    tr = kinetic.solve_homogeneous(kernel, W0, cfg["kinetic.T"], cfg["kinetic.dt"],
                                   clamp=cfg["kinetic.clamp"],
                                   record_every=cfg["kinetic.record_every"])
    ctx.write_csv("trajectory.csv", ["t", "S", "energy", "number"],
                  zip(tr.times, tr.entropy, tr.energy, tr.number))
    ctx.write_csv("wigner_t.csv", ["t", "k", "W"],
                  ((t, k, w) for t, s in zip(tr.times, tr.states)
                   for k, w in zip(grid.axis, s.values)))
    summary = {"kernel": kernel.report(), "violations": tr.violations}
    if np.all(tr.final.values > 0):
        fit = invariants.fit_invariant(1.0 / tr.final.values, grid, spec)
        summary["fixed_point_fit"] = {"a": fit.a, "c": fit.c, "residual": fit.residual}
    ctx.write_json("summary.json", summary)
    ctx.check("no_invariant_violations", not tr.violations)
    if cfg["initial.kind"] == "equilibrium":
        dev = max(float(np.max(np.abs(s.values - W0.values))) for s in tr.states)
        ctx.check("equilibrium_constant", dev <= 1e-10 * float(np.max(W0.values)))


def exp_inhomogeneous_transport(cfg, ctx: RunContext):
    spec = _dispersion(cfg)
    grid = _grid_1d(cfg, spec)
    kernel = _kernel(cfg, grid, spec)
    R, Nr = cfg["space.R"], cfg["space.Nr"]
    r = np.arange(Nr) * R / Nr
    Wk = initial_wigner(cfg, grid, spec, ctx.seed)
    amp = min(cfg["initial.amplitude"], 0.99)
    state0 = kinetic.PhaseSpaceState(R, grid, np.outer(1 + amp * np.cos(2 * np.pi * r / R), Wk))
    times, states = kinetic.solve_inhomogeneous(kernel, state0, cfg["kinetic.T"],
                                                cfg["kinetic.dt"], clamp=cfg["kinetic.clamp"],
                                                record_every=cfg["kinetic.record_every"])
    ctx.write_csv("phase_t.csv", ["t", "r", "k", "W"],
                  ((t, ri, k, w) for t, s in zip(times, states)
                   for ri, row in zip(r, s.values) for k, w in zip(grid.axis, row)))
    w = spec.omega(grid.points())
    energy = [float(np.sum(s.values * w)) for s in states]
    number = [float(np.sum(s.values)) for s in states]
    drift = max(abs(e - energy[0]) for e in energy) / abs(energy[0])
    ctx.write_json("summary.json", {"energy": energy, "number": number, "energy_drift": drift,
                                    "kernel": kernel.report()})
    ctx.check("energy_conserved", drift <= 1e-6)


def exp_invariant_audit(cfg, ctx: RunContext):
    spec = _dispersion(cfg)
    grid = _grid_1d(cfg, spec)
    kernel = _kernel(cfg, grid, spec)
    samples = dispersion.sample_merger_manifold(spec, cfg["scan.samples"], seed=ctx.seed) \
        if spec.is_torus else np.zeros((0, 3))
    candidates = {
        "one": lambda k: np.ones_like(k),
        "omega": spec.omega,
        "omega_squared": lambda k: spec.omega(k) ** 2,
        "sin_2pi_k": lambda k: np.sin(2 * np.pi * k),
    }
    records = []
    for name, f in candidates.items():
        psi = invariants.InvariantCandidate(name, func=f)
        try:
            fit = invariants.fit_invariant(psi, grid, spec)
        except invariants.CollinearBasisError:
            fit = None
        pair = (invariants.pair_invariant_residual(psi, kernel)
                if np.any(kernel.channel == 0) else None)
        merger = invariants.merger_invariant_residual(psi, spec, samples)
        rec = invariants.audit_record(name, fit, pair,
                                      "empty" if isinstance(merger, str) else len(samples))
        rec["max_merger_residual"] = None if isinstance(merger, str) else merger
        records.append(rec)
    ctx.write_json("audit.json", records)
    by = {r["candidate"]: r for r in records}
    if by["one"]["max_pair_residual"] is not None:
        ctx.check("one_is_pair_invariant", by["one"]["max_pair_residual"] <= 1e-12)
        ctx.check("omega_is_pair_invariant", by["omega"]["max_pair_residual"] <= 1e-8)
    if spec.kind == dispersion.OPTICAL_NN:
        ctx.check("merger_manifold_empty", len(samples) == 0)


# ---------------------------------------------------------------------------
# micro-kinetic comparison

def _rel_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def compare_micro_kinetic(cfg: ExperimentConfig, seed: int = 0) -> dict:
    """Compare ensemble spectra of the chain with the kinetic solution.

    For each ``lambda`` the chain runs to ``t_kin / lambda``.  The kinetic
    solution uses a single ``rate_scale`` fitted on a calibration run
    (``compare.calibration_lambda``, default the smallest positive lambda)
    with an independent ensemble seed ``seed + 1``.  The report lists the
    relative L2 distance per lambda, its statistical error and whether the
    distance decreases with lambda.
    """
    spec = _dispersion(cfg)
    L = cfg["lattice.L"]
    if spec.dim != 1 or not spec.is_torus:
        raise ConfigError("dispersion.dim", "the comparison is one-dimensional")
    grid = MomentumGrid.for_spec(spec, L)
    potential = cfg["lattice.potential"]
    kernel = _kernel(cfg, grid, spec, potential)
    W0 = initial_wigner(cfg, grid, spec, seed)
    t_kin, dt_kin = cfg["compare.t_kin"], cfg["kinetic.dt"]
    lambdas = sorted(cfg["compare.lambdas"], reverse=True)
    positive = [x for x in lambdas if x > 0]
    beta, M, dt = cfg["ensemble.beta"], cfg["ensemble.M"], cfg["integrator.dt"]

    def micro(lam, ens_seed, t_micro):
        ens = lattice.EnsembleSpec(beta, M, ens_seed, L)
        res = lattice.run_microscopic_experiment(ens, lam, potential, [t_micro], dt, spec,
                                                 initial_spectrum=W0)
        return res.spectra[-1]

    def kinetic_at(scale):
        if kernel.is_empty or scale == 0:
            return W0.copy()
        T = scale * t_kin
        n = max(1, int(np.ceil(T / dt_kin)))
        W = W0.copy()
        for _ in range(n):
            W = kinetic.step_homogeneous(kernel, W, T / n)
        return W

    cal_lam = cfg.get("compare.calibration_lambda") or (min(positive) if positive else None)
    rate_scale, cal_distance = 1.0, None
    if cal_lam is not None and not kernel.is_empty and cfg["initial.kind"] != "equilibrium":
        target = micro(cal_lam, seed + 1, t_kin / cal_lam).values
        opt = minimize_scalar(lambda x: _rel_l2(target, kinetic_at(np.exp(x))),
                              bounds=(np.log(1e-2), np.log(1e2)), method="bounded",
                              options={"xatol": 1e-3})
        rate_scale, cal_distance = float(np.exp(opt.x)), float(opt.fun)
    Wk = kinetic_at(rate_scale)

    rows = []
    for lam in lambdas:
        if lam == 0:
            # static anchor: the harmonic dynamics leaves the spectrum invariant
            Wm = micro(0.0, seed, 0.0)
            ref = W0
        else:
            Wm = micro(lam, seed, t_kin / lam)
            ref = Wk
        dist = _rel_l2(Wm.values, ref)
        err = float(np.sqrt(np.sum(Wm.stderr ** 2)) / np.linalg.norm(ref))
        rows.append({"lambda": lam, "distance": dist, "stderr": err})
    dists = [r["distance"] for r in rows if r["lambda"] > 0]
    equilibrium = cfg["initial.kind"] == "equilibrium"
    if equilibrium:
        passed = all(r["distance"] <= 3 * r["stderr"] for r in rows)
    else:
        passed = all(b <= a for a, b in zip(dists, dists[1:]))
    return {"rate_scale": rate_scale, "calibration_lambda": cal_lam,
            "calibration_distance": cal_distance, "t_kin": t_kin, "rows": rows,
            "trend_decreasing": all(b <= a for a, b in zip(dists, dists[1:])),
            "equilibrium": equilibrium, "passed": bool(passed),
            "kinetic_change": _rel_l2(Wk, W0)}


def exp_micro_kinetic_compare(cfg, ctx: RunContext):
    rep = compare_micro_kinetic(cfg, ctx.seed)
    ctx.write_csv("compare.csv", ["lambda", "distance", "stderr"],
                  ((r["lambda"], r["distance"], r["stderr"]) for r in rep["rows"]))
    ctx.write_json("compare.json", rep)
    ctx.check("equilibrium_within_errors" if rep["equilibrium"] else "distance_trend",
              rep["passed"])


RUNNERS = {
    "DispersionReport": exp_dispersion_report,
    "KinematicsScan": exp_kinematics_scan,
    "MicroscopicRun": exp_microscopic_run,
    "KineticRelaxation": exp_kinetic_relaxation,
    "InhomogeneousTransport": exp_inhomogeneous_transport,
    "InvariantAudit": exp_invariant_audit,
    "MicroKineticCompare": exp_micro_kinetic_compare,
}


def run(experiment: str, cfg: ExperimentConfig, out: Path, seed: int) -> int:
    """Run one experiment and write its manifest; returns the exit status."""
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(out, seed)
    failure, status = None, EXIT_OK
    try:
        RUNNERS[experiment](cfg, ctx)
    except ConfigError as exc:
        failure, status = {"type": "config", "key": exc.key, "message": str(exc)}, EXIT_CONFIG
    except (DispersionError, ValueError) as exc:
        failure, status = {"type": "config", "message": str(exc)}, EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        failure = {"type": "numerical", "error": type(exc).__name__, "message": str(exc)}
        status = EXIT_NUMERIC
    if status == EXIT_OK and not all(ctx.checks.values()):
        status = EXIT_CHECK
    manifest = {
        "experiment": experiment, "seed": seed, "status": status, "failure": failure,
        "checks": ctx.checks, "config": {k: v for k, v in sorted(cfg.values.items())},
        "files": [{"path": f, "sha256": _sha256(out / f)} for f in ctx.files],
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phonon-boltzmann",
                                description="Phonon Boltzmann numerical experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="flat 'section.key = value' file")
    p.add_argument("--out", default=None, help="output directory (default: output_dir key)")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    try:
        cfg = load_config(args.config)
        if cfg.get("experiment") not in (None, args.experiment):
            raise ConfigError("experiment", f"config is for {cfg['experiment']}")
        worker_count()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        out = out or Path("out")
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(
            {"experiment": args.experiment, "status": EXIT_CONFIG, "files": [], "checks": {},
             "failure": {"type": "config", "key": exc.key, "message": str(exc)}},
            indent=2, sort_keys=True) + "\n")
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else cfg.values.get("ensemble.seed", cfg["seed"])
    out = out or Path(cfg["output_dir"])
    status = run(args.experiment, cfg, out, seed)
    label = {0: "ok", 1: "check failed", 2: "config error", 3: "numerical failure"}[status]
    print(f"{args.experiment}: {label} ({out / 'manifest.json'})")
    return status


if __name__ == "__main__":
    sys.exit(main())
