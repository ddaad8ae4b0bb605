"""Command-line orchestration: ``kinbm {simulate,lift,develop,estimate,verify}``.

Configuration resolves in three layers: built-in defaults, an optional YAML
file (``--config``), then command-line flags. Every resolved field goes into
the header record of the output, and re-running that header reproduces the
file byte for byte.

Exit codes: 0 ok, 1 some acceptance criterion failed, 2 invalid
configuration, 3 budget cap exceeded, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .core import NumericalError, RoughIncrement
from .ensemble import simulate_ensemble
from .geometry import Frame, develop_brownian, develop_increments, make_manifold
from .stats import (EstimationError, autocovariance, estimate_gamma_autocov, estimate_mixing_time,
                    gamma_from_endpoints, levy_area_drift)
from .velocity import MODEL_NAMES, make_model

SCHEMA = "kinbm-records/1"
SEED_ENV = "KINBM_SEED"
SUBCOMMANDS = ("simulate", "lift", "develop", "estimate", "verify")
MANIFOLDS = ("euclidean", "sphere2", "hyperbolic2", "conformal_flat")
DRIVERS = ("kinetic", "brownian", "line")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_BUDGET, EXIT_NUMERICAL = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


class BudgetError(ValueError):
    pass


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as err:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from err


@dataclass
class RunConfig:
    subcommand: str = "simulate"
    # velocity model
    model: str = "sphere"
    sigma_diag: list | None = None  # develop: isotropic in the manifold dimension; otherwise (1, 4, 9)
    dim: int | None = None
    rate: float = 1.0
    omega: float = 1.0
    law: str = "uniform"
    stay: float = 0.5
    # scaling and time grid
    sigmas: list = field(default_factory=lambda: [100.0 ** 0.25])
    horizon: float = 1.0
    step: float | None = None
    samples: int = 100
    trajectories: int = 100
    seed: int | None = None
    # manifold
    manifold: str = "sphere2"
    manifold_dim: int = 2
    switch_radius: float = 2.0
    conformal_rate: float = 0.5
    driver: str = "kinetic"
    substeps: int = 4
    # estimation
    max_lag: float = 10.0
    autocov_horizon: float = 1e4
    # acceptance
    criteria: list | None = None
    # output and limits
    output: str | None = None
    format: str = "ndjson"
    budget: float = 5e9

    def resolved(self) -> "RunConfig":
        """Fill derived defaults and validate; raises :class:`ConfigError`."""
        c = dataclasses.replace(self)
        if c.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {c.subcommand!r}")
        if c.model not in MODEL_NAMES:
            raise ConfigError(f"unknown model {c.model!r}; choose from {', '.join(MODEL_NAMES)}")
        if c.manifold not in MANIFOLDS:
            raise ConfigError(f"unknown manifold {c.manifold!r}; choose from {', '.join(MANIFOLDS)}")
        if c.driver not in DRIVERS:
            raise ConfigError(f"unknown driver {c.driver!r}; choose from {', '.join(DRIVERS)}")
        if c.format not in ("ndjson", "csv"):
            raise ConfigError("format must be ndjson or csv")
        if c.format == "csv" and c.subcommand != "simulate":
            raise ConfigError("csv output is offered for flat path dumps (simulate) only")
        c.seed = _default_seed() if c.seed is None else c.seed
        if c.sigma_diag is None:
            d_man = c.manifold_dim if c.manifold in ("euclidean", "conformal_flat") else 2
            c.sigma_diag = [1.0] * d_man if c.subcommand == "develop" else [1.0, 4.0, 9.0]
        c.sigma_diag = [float(x) for x in c.sigma_diag]
        c.sigmas = [float(x) for x in c.sigmas]
        if not c.sigmas:
            raise ConfigError("need at least one sigma")
        for name in ("rate", "omega", "horizon", "switch_radius", "max_lag", "autocov_horizon", "budget"):
            if not getattr(c, name) > 0:
                raise ConfigError(f"{name.replace('_', '-')} must be positive")
        for name in ("samples", "trajectories", "substeps", "manifold_dim"):
            if int(getattr(c, name)) != getattr(c, name) or getattr(c, name) < 1:
                raise ConfigError(f"{name.replace('_', '-')} must be a positive integer")
        if any(s <= 0 for s in c.sigmas) or any(x <= 0 for x in c.sigma_diag):
            raise ConfigError("sigmas and sigma-diag entries must be positive")
        if not 0 <= c.stay < 1:
            raise ConfigError("stay must lie in [0, 1)")
        if c.dim is not None and c.dim < 2:
            raise ConfigError("dim must be at least 2")
        if c.model == "spin2d":
            c.dim = 2
        elif c.model in ("sphere", "ou"):
            c.dim = len(c.sigma_diag)
        elif c.dim is None:
            c.dim = len(c.sigma_diag)
        try:
            mdl = build_model(c)
        except ValueError as err:
            raise ConfigError(str(err)) from err
        if c.step is None:
            c.step = mdl.default_step()
        if not c.step > 0:
            raise ConfigError("step must be positive")
        if c.criteria is not None:
            c.criteria = sorted({int(k) for k in c.criteria})
            if not set(c.criteria) <= set(range(1, 13)):
                raise ConfigError("criteria are numbered 1 to 12")
        if c.subcommand == "develop" and c.driver != "line":
            d_man = c.manifold_dim if c.manifold in ("euclidean", "conformal_flat") else 2
            if c.dim != d_man:
                raise ConfigError(f"the velocity dimension ({c.dim}) must match the manifold dimension ({d_man})")
        return c

    def cost(self) -> float:
        """Number of unit-speed velocity steps the run will take."""
        if self.subcommand == "verify":
            return 0.0
        steps = sum(s ** 4 * self.horizon / self.step for s in self.sigmas) * self.trajectories
        if self.subcommand == "develop" and self.driver != "kinetic":
            steps = self.horizon / self.step * self.trajectories
        if self.subcommand == "estimate":
            steps += self.autocov_horizon / self.step
        return steps

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
LIST_FIELDS = {"sigma_diag", "sigmas", "criteria"}


def _flatten(data: dict) -> dict:
    """Accept ``model: {name: .., sigma_diag: ..}`` and ``manifold: {name: ..}`` sections."""
    flat = {}
    for key, val in data.items():
        key = str(key).replace("-", "_")
        if key in ("model", "manifold") and isinstance(val, dict):
            val = dict(val)
            if "name" in val:
                flat[key] = val.pop("name")
            for k, v in val.items():
                k = str(k).replace("-", "_")
                if key == "manifold" and k in ("dim", "rate"):
                    k = {"dim": "manifold_dim", "rate": "conformal_rate"}[k]
                flat[k] = v
        elif isinstance(val, dict):
            flat.update(_flatten(val))
        else:
            flat[key] = val
    return flat


def load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    flat = _flatten(data)
    unknown = set(flat) - set(FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return flat


def _parse_list(text):
    if isinstance(text, (list, tuple)):
        return list(text)
    return [float(x) for x in str(text).split(",") if x.strip()]


def _coerce(name, value):
    if value is None:
        return None
    f = FIELDS[name]
    try:
        if name in LIST_FIELDS:
            vals = _parse_list(value)
            return [int(v) for v in vals] if name == "criteria" else [float(v) for v in vals]
        kind = str(f.type)
        if "int" in kind and "float" not in kind:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if "float" in kind:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid value for {name.replace('_', '-')}: {value!r}") from err


def build_model(cfg: RunConfig):
    return make_model(cfg.model, sigma_diag=cfg.sigma_diag, dim=cfg.dim, rate=cfg.rate, omega=cfg.omega,
                      law=cfg.law, stay=cfg.stay)


def build_manifold(cfg: RunConfig):
    kw = {"euclidean": {"dim": cfg.manifold_dim}, "sphere2": {"switch_radius": cfg.switch_radius},
          "hyperbolic2": {}, "conformal_flat": {"dim": cfg.manifold_dim, "rate": cfg.conformal_rate}}
    return make_manifold(cfg.manifold, **kw[cfg.manifold])


def _parser():
    p = argparse.ArgumentParser(prog="kinbm", description="Kinetic Brownian motion toolkit")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML file with RunConfig fields")
        for fname in FIELDS:
            if fname == "subcommand":
                continue
            sp.add_argument("--" + fname.replace("_", "-"), dest=fname, default=None)
    return p


def config_from_args(argv) -> RunConfig:
    args = _parser().parse_args(argv)
    values = {}
    if args.config:
        values.update(load_config_file(args.config))
        values.pop("subcommand", None)
    for name in FIELDS:
        if name != "subcommand" and getattr(args, name, None) is not None:
            values[name] = getattr(args, name)
    values = {k: _coerce(k, v) for k, v in values.items()}
    return RunConfig(subcommand=args.subcommand, **values).resolved()


# ---------------------------------------------------------------------------
# records

def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating,)):
        x = float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def run_id(cfg: RunConfig) -> str:
    payload = json.dumps(_clean({k: v for k, v in cfg.to_dict().items() if k != "output"}), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def header_record(cfg: RunConfig) -> dict:
    # the output path is not part of the run: identical runs written to different files match byte for byte
    config = {k: v for k, v in cfg.to_dict().items() if k != "output"}
    return {"kind": "header", "schema": SCHEMA, "version": __version__, "run_id": run_id(cfg),
            "config": _clean(config)}


class NDJSONWriter:
    """Single writer; callers emit records already in (trajectory, time) order."""

    def __init__(self, fh):
        self.fh = fh

    def write(self, rec: dict):
        self.fh.write(json.dumps(_clean(rec), separators=(",", ":")) + "\n")


def read_records(path: str) -> list:
    """Parse an NDJSON or CSV output file back into records."""
    with open(path) as fh:
        first = fh.readline()
        rest = fh.read()
    if first.startswith("# "):
        header = json.loads(first[2:])
        dim = len([c for c in rest.splitlines()[0].split(",") if c.startswith("x")])
        out = [header]
        for row in csv.DictReader(io.StringIO(rest)):
            out.append({"kind": "path-point", "run_id": row["run_id"], "trajectory": int(row["trajectory"]),
                        "sigma": float(row["sigma"]), "time": float(row["time"]),
                        "position": [float(row[f"x{i}"]) for i in range(dim)],
                        "velocity": [float(row[f"v{i}"]) for i in range(dim)]})
        return out
    return [json.loads(line) for line in (first + rest).splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# subcommands

def _cells(cfg, sigma):
    total = sigma ** 4 * cfg.horizon / cfg.step
    cell_steps = total / cfg.samples
    if abs(cell_steps - round(cell_steps)) > 1e-6 * max(1.0, cell_steps) or round(cell_steps) < 1:
        raise ConfigError(f"sigma^4 * horizon / step = {total:g} steps is not a multiple of samples={cfg.samples}")
    return int(round(cell_steps))


def _ensemble(cfg, si, sigma, vel_thin=None):
    model = build_model(cfg)
    cs = _cells(cfg, sigma)
    # each sigma gets its own streams so records never share randomness
    return simulate_ensemble(model, cfg.trajectories, cfg.step, cfg.samples, cs, cfg.seed + 7919 * si,
                             vel_thin=cs if vel_thin else None), model


def cmd_simulate(cfg, emit, rid):
    for si, sigma in enumerate(cfg.sigmas):
        ens, model = _ensemble(cfg, si, sigma, vel_thin=True)
        t, X = ens.rescaled_positions(sigma)
        vel = np.concatenate([ens.velocities, model.read(ens.final_states)[:, None]], axis=1)
        for i in range(ens.n):
            tid = si * cfg.trajectories + i
            for k in range(len(t)):
                emit({"kind": "path-point", "run_id": rid, "trajectory": tid, "sigma": sigma, "time": float(t[k]),
                      "position": X[i, k], "velocity": vel[i, k]})


def cmd_lift(cfg, emit, rid):
    for si, sigma in enumerate(cfg.sigmas):
        ens, _ = _ensemble(cfg, si, sigma)
        t = ens.times / sigma ** 4
        s2 = sigma ** -2
        for i in range(ens.n):
            tid = si * cfg.trajectories + i
            acc = RoughIncrement.identity(ens.dim)
            for k in range(ens.n_cells):
                w = s2 * (ens.positions[i, k + 1] - ens.positions[i, k])
                cell = RoughIncrement(w, s2 * s2 * ens.cell_second[i, k])
                acc = acc @ cell
                emit({"kind": "lift-point", "run_id": rid, "trajectory": tid, "sigma": sigma,
                      "time": float(t[k + 1]), "delta": cell.delta, "second": cell.second,
                      "levy_area": cell.levy_area, "total_delta": acc.delta, "total_levy_area": acc.levy_area})


def cmd_develop(cfg, emit, rid):
    man = build_manifold(cfg)
    d = man.dim
    q0 = {"hyperbolic2": [0.0, 1.0]}.get(cfg.manifold, [0.0] * d)
    z0 = Frame.orthonormal_at(man, q0)
    runs = []
    if cfg.driver == "brownian":
        model = build_model(cfg)
        gamma = model.exact_gamma()
        if gamma is None:
            raise ConfigError(f"model {cfg.model} has no closed-form gamma to set the Brownian covariance")
        from .core import CovarianceSpec
        times = cfg.horizon * np.arange(1, cfg.samples + 1) / cfg.samples
        n_steps = cfg.horizon / cfg.step
        if abs(n_steps - round(n_steps)) > 1e-6 or round(n_steps) % cfg.samples:
            raise ConfigError("horizon / step must be a multiple of samples")
        _, q, e, ch = develop_brownian(man, z0, CovarianceSpec(np.sqrt(np.asarray(gamma, dtype=float))),
                                       cfg.horizon, cfg.step, cfg.trajectories, cfg.seed, record_times=times)
        q = np.concatenate([np.tile(z0.q, (len(q), 1, 1)), q], axis=1)
        e = np.concatenate([np.tile(z0.e, (len(e), 1, 1, 1)), e], axis=1)
        ch = np.concatenate([np.zeros((len(ch), 1), dtype=int), ch], axis=1)
        runs.append((None, np.concatenate([[0.0], times]), q, e, ch))
    else:
        for si, sigma in enumerate(cfg.sigmas if cfg.driver == "kinetic" else [None]):
            if cfg.driver == "kinetic":
                ens, _ = _ensemble(cfg, si, sigma)
                t, X = ens.rescaled_positions(sigma)
            else:
                t = cfg.horizon * np.arange(cfg.samples + 1) / cfg.samples
                X = np.zeros((1, len(t), d))
                X[0, :, 0] = t
            w = np.diff(X, axis=1)
            q, e, ch, _ = develop_increments(man, np.tile(z0.q, (len(X), 1)), np.tile(z0.e, (len(X), 1, 1)), w,
                                             dt=np.diff(t), n_sub=cfg.substeps)
            runs.append((sigma, t, q, e, ch))
    for si, (sigma, t, q, e, ch) in enumerate(runs):
        n = len(q)
        for i in range(n):
            tid = si * n + i
            emb = man.embed(q[i], ch[i]) if cfg.manifold == "sphere2" else None
            for k in range(len(t)):
                rec = {"kind": "frame-point", "run_id": rid, "trajectory": tid, "sigma": sigma,
                       "time": float(t[k]), "chart": int(ch[i, k]), "q": q[i, k], "e": e[i, k]}
                if emb is not None:
                    rec["embedded"] = emb[k]
                emit(rec)


def cmd_estimate(cfg, emit, rid):
    model = build_model(cfg)
    ac = autocovariance(model, cfg.autocov_horizon, cfg.max_lag, seed=cfg.seed, h=cfg.step)
    ga = estimate_gamma_autocov(ac, tail=model.exponential_tail)
    emit({"kind": "report", "run_id": rid, "trajectory": -1, "time": 0.0, "report": "autocovariance",
          "payload": {"lags": ac.lags, "values": ac.values, "se": ac.se}})
    emit({"kind": "report", "run_id": rid, "trajectory": -1, "time": 0.0, "report": "gamma-autocov",
          "payload": {"gamma": ga.gamma, "se": ga.se, "ci95": ga.ci, "exact": model.exact_gamma(),
                      **ga.extras}})
    try:
        mf = estimate_mixing_time(ac, method="envelope" if cfg.model == "spin2d" else "log")
        mix = dataclasses.asdict(mf) if dataclasses.is_dataclass(mf) else vars(mf)
    except EstimationError as err:
        mix = {"error": str(err)}
    emit({"kind": "report", "run_id": rid, "trajectory": -1, "time": 0.0, "report": "mixing-time", "payload": mix})
    for si, sigma in enumerate(cfg.sigmas):
        ens, _ = _ensemble(cfg, si, sigma)
        ge = gamma_from_endpoints(ens.positions[:, -1] / sigma ** 2 / math.sqrt(cfg.horizon))
        emit({"kind": "report", "run_id": rid, "trajectory": -1, "time": cfg.horizon, "report": "gamma-ensemble",
              "payload": {"sigma": sigma, "gamma": ge.gamma, "se": ge.se, "ci95": ge.ci,
                          "cov": ge.extras["cov"], "cov_se": ge.extras["cov_se"],
                          "agrees_with_autocov": ga.agrees_with(ge)}})
        dr = levy_area_drift(ens, sigma, cfg.horizon)
        emit({"kind": "report", "run_id": rid, "trajectory": -1, "time": cfg.horizon, "report": "levy-drift",
              "payload": {"sigma": sigma, "mean": dr["mean"], "se": dr["se"], "n": dr["n"]}})


def cmd_verify(cfg, emit, rid):
    from . import acceptance
    # progress lines go to stderr so that stdout stays a clean record stream
    results = acceptance.run(cfg.criteria, echo=lambda line: print(line, file=sys.stderr, flush=True))
    for r in results:
        emit({"kind": "report", "run_id": rid, "trajectory": -1, "time": 0.0, "report": "acceptance",
              "payload": r.to_record()})
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed", file=sys.stderr, flush=True)
    emit({"kind": "report", "run_id": rid, "trajectory": -1, "time": 0.0, "report": "acceptance-summary",
          "payload": {"passed": passed, "total": len(results),
                      "failed": [r.number for r in results if not r.passed]}})
    return EXIT_OK if passed == len(results) else EXIT_FAILED


COMMANDS = {"simulate": cmd_simulate, "lift": cmd_lift, "develop": cmd_develop, "estimate": cmd_estimate,
            "verify": cmd_verify}


def _write_csv(fh, header, records):
    fh.write("# " + json.dumps(_clean(header), separators=(",", ":")) + "\n")
    d = len(records[0]["position"]) if records else 0
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["run_id", "trajectory", "sigma", "time"] + [f"x{i}" for i in range(d)] + [f"v{i}" for i in range(d)])
    for r in records:
        w.writerow([r["run_id"], r["trajectory"], repr(float(r["sigma"])), repr(float(r["time"]))]
                   + [repr(float(x)) for x in r["position"]] + [repr(float(x)) for x in r["velocity"]])


def execute(cfg: RunConfig, out=None) -> int:
    """Run a resolved config, writing to ``cfg.output`` (or ``out`` / stdout)."""
    if cfg.cost() > cfg.budget:
        raise BudgetError(f"run needs {cfg.cost():.3g} velocity steps, over the budget of {cfg.budget:.3g}")
    rid = run_id(cfg)
    header = header_record(cfg)
    own = cfg.output is not None
    fh = open(cfg.output, "w", newline="") if own else (out or sys.stdout)
    try:
        if cfg.format == "csv":
            recs = []
            status = COMMANDS[cfg.subcommand](cfg, recs.append, rid)
            _write_csv(fh, header, recs)
        else:
            writer = NDJSONWriter(fh)
            writer.write(header)
            try:
                status = COMMANDS[cfg.subcommand](cfg, writer.write, rid)
            except (NumericalError, EstimationError) as err:
                writer.write({"kind": "report", "run_id": rid, "trajectory": -1, "time": 0.0,
                              "report": "numerical-failure",
                              "payload": {"error": str(err), "diagnostics": getattr(err, "diagnostics", {})}})
                raise
    finally:
        if own:
            fh.close()
    return status or EXIT_OK


def main(argv=None) -> int:
    try:
        cfg = config_from_args(sys.argv[1:] if argv is None else argv)
        return execute(cfg)
    except ConfigError as err:
        print(f"kinbm: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as err:
        print(f"kinbm: {err}", file=sys.stderr)
        return EXIT_BUDGET
    except (NumericalError, EstimationError) as err:
        diag = getattr(err, "diagnostics", {})
        print(f"kinbm: numerical failure: {err} {json.dumps(_clean(diag))}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
