"""Declarative experiments from flat ``key = value`` files.

One key per line, ``#`` starts a comment, blank lines are ignored.  Keys:

``name``              label for the report (default: file stem)
``out_dir``           output directory, relative to the config file
                      (default: ``<name>_out``)
``n``, ``dim``        grid points per side and dimension (64, 2)
``init``              comma list of ``stripes:K``, ``checker:K``, ``random:SEED``
``cutoff``            band limit of random initial fields (4)
``observables``       comma list from ``norms``, ``D``, evaluated on each init
``expect.<q>``        expected value of observable ``q`` (hminus1, bv, variance,
                      gl_energy, D) on every init
``tolerance``         relative tolerance for the expectations (1e-9)
``protocol``          ``sine:A,PERIOD,SEED``; simulates every init when set
``T``, ``dt``         final time and step; ``dt`` may be written ``0.5h``
``observe_every``     steps between trace observations (16)
``ot_solver``         ``exact``, ``sinkhorn:REG`` or ``off`` for the D observer
``ot_cap``            atom cap before cell aggregation (4096)
``verify``            comma list from ``sandwich``, ``theorem1``, ``theorem2``,
                      ``uniformity``
``budget_p``          comma list of budget exponents for the decay checks (2)
``decay_slack``       domination slack of the decay checks (0.1)
``uniformity_tol``    relative agreement required of fitted rates (0.3)
``sandwich.corpus``   ``standard`` or a comma list of corpus members
``sandwich.n``        grid of the sandwich check (64)
``sandwich.upper_factor``  allowed D / hminus1 (1.05)
``sandwich.refine``   also measure at twice the resolution (true)

Outputs go to ``out_dir``: ``observables.csv``, one ``trace_<init>.csv`` per
simulated init, ``sandwich.csv`` and a flat ``report.json`` holding every
number and check flag.
"""

from __future__ import annotations

import itertools
import json
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from .advect import MixingTrace, OTConfig, simulate, sine_shear_protocol
from .field import PeriodicGrid, ScalarField, make_checkerboard, make_random_binary, make_stripes
from .norms import bv_seminorm, gl_energy, hminus1, variance
from .transport import EXACT_ATOM_CAP
from .verify import (
    DECAY_SLACK,
    UNIFORMITY_TOL,
    parse_corpus,
    rates_agree,
    verify_sandwich,
    verify_theorem1,
    verify_theorem2,
)

KNOWN_KEYS = {
    "name", "out_dir", "n", "dim", "init", "cutoff", "observables", "tolerance", "protocol", "T", "dt",
    "observe_every", "ot_solver", "ot_cap", "verify", "budget_p", "decay_slack", "uniformity_tol",
    "sandwich.corpus", "sandwich.n", "sandwich.upper_factor", "sandwich.refine",
}
OBSERVABLES = ("hminus1", "bv", "variance", "gl_energy", "D")
CHECKS = ("sandwich", "theorem1", "theorem2", "uniformity")


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    path: Path
    values: dict[str, str]
    lines: dict[str, int]

    def get(self, key: str, default=None) -> str | None:
        return self.values.get(key, default)

    def error(self, key: str, msg: str) -> ConfigError:
        line = self.lines.get(key)
        where = f"{self.path}:{line}" if line else str(self.path)
        return ConfigError(f"{where}: {key}: {msg}")

    def number(self, key: str, default: float, kind=float) -> float:
        raw = self.get(key)
        if raw is None:
            return default
        try:
            return kind(raw)
        except ValueError:
            raise self.error(key, f"expected {kind.__name__}, got {raw!r}") from None

    def flag(self, key: str, default: bool) -> bool:
        raw = self.get(key)
        if raw is None:
            return default
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise self.error(key, f"expected true/false, got {raw!r}")

    def items(self, key: str) -> list[str]:
        raw = self.get(key, "")
        return [t.strip() for t in raw.split(",") if t.strip()]


def parse_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc.strerror}") from None
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} (first set on line {lines[key]})")
        if key not in KNOWN_KEYS and not key.startswith("expect."):
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key.startswith("expect.") and key[7:] not in OBSERVABLES:
            raise ConfigError(f"{path}:{lineno}: cannot expect {key[7:]!r}; choose from {', '.join(OBSERVABLES)}")
        values[key] = value
        lines[key] = lineno
    cfg = Config(path, values, lines)
    _validate(cfg)
    return cfg


def _validate(cfg: Config) -> None:
    for key in ("n", "dim", "cutoff", "observe_every", "ot_cap", "sandwich.n"):
        cfg.number(key, 0, int)
    for key in ("tolerance", "T", "decay_slack", "uniformity_tol", "sandwich.upper_factor"):
        cfg.number(key, 0.0)
    cfg.flag("sandwich.refine", True)
    for item in cfg.items("init"):
        if not re.fullmatch(r"(stripes|checker|random):\d+", item):
            raise cfg.error("init", f"bad initial field {item!r}")
    for item in cfg.items("observables"):
        if item not in ("norms", "D"):
            raise cfg.error("observables", f"unknown observable {item!r}")
    for item in cfg.items("verify"):
        if item not in CHECKS:
            raise cfg.error("verify", f"unknown check {item!r}; choose from {', '.join(CHECKS)}")
    for item in cfg.items("budget_p"):
        if item not in ("2", "inf"):
            raise cfg.error("budget_p", f"budgets are recorded for p=2 and p=inf only, got {item!r}")
    if cfg.get("protocol") is not None:
        parse_protocol(cfg.get("protocol"), cfg)
        if cfg.get("T") is None:
            raise cfg.error("protocol", "a protocol needs T")
    if cfg.get("dt") is not None:
        parse_dt(cfg.get("dt"), 1.0 / 64, cfg)
    if cfg.get("ot_solver") is not None:
        parse_solver(cfg.get("ot_solver"), cfg)
    if cfg.get("sandwich.corpus") is not None:
        try:
            parse_corpus(cfg.get("sandwich.corpus"))
        except ValueError as exc:
            raise cfg.error("sandwich.corpus", str(exc)) from None
    needs_trace = {"theorem1", "theorem2", "uniformity"} & set(cfg.items("verify"))
    if needs_trace and cfg.get("protocol") is None:
        raise cfg.error("verify", f"{', '.join(sorted(needs_trace))} need a protocol")
    if "uniformity" in cfg.items("verify") and len(cfg.items("init")) < 2:
        raise cfg.error("verify", "uniformity needs at least two inits")


def parse_protocol(text: str, cfg: Config | None = None):
    m = re.fullmatch(r"sine:([^,]+),([^,]+),(\d+)", text.strip())
    try:
        if not m:
            raise ValueError
        return sine_shear_protocol(float(m.group(1)), float(m.group(2)), int(m.group(3)))
    except ValueError:
        msg = f"expected sine:A,PERIOD,SEED, got {text!r}"
        raise (cfg.error("protocol", msg) if cfg else ValueError(msg)) from None


def parse_dt(text: str, h: float, cfg: Config | None = None) -> float:
    """A number, or a multiple of the grid spacing such as ``0.5h``."""
    s = text.strip()
    try:
        dt = float(s[:-1] or 1) * h if s.endswith("h") else float(s)
    except ValueError:
        dt = math.nan
    if not dt > 0:
        msg = f"expected a positive step or a multiple of h, got {text!r}"
        raise (cfg.error("dt", msg) if cfg else ValueError(msg))
    return dt


def parse_solver(text: str, cfg: Config | None = None) -> tuple[str, float, bool]:
    """``exact``, ``sinkhorn:REG`` or ``off`` as (solver, reg, enabled)."""
    s = text.strip()
    if s == "exact":
        return "exact", 1e-3, True
    if s == "off":
        return "exact", 1e-3, False
    if s.startswith("sinkhorn:"):
        try:
            reg = float(s[9:])
            if reg > 0:
                return "entropic", reg, True
        except ValueError:
            pass
    msg = f"expected exact, off or sinkhorn:REG, got {text!r}"
    raise (cfg.error("ot_solver", msg) if cfg else ValueError(msg))


def build_init(spec: str, grid: PeriodicGrid, cutoff: int = 4) -> ScalarField:
    kind, _, param = spec.partition(":")
    k = int(param)
    if kind == "stripes":
        return make_stripes(grid, k)
    if kind == "checker":
        return make_checkerboard(grid, k)
    if kind == "random":
        return make_random_binary(grid, k, cutoff)
    raise ValueError(f"unknown initial field {spec!r}")


def _observe(rho: ScalarField, which: list[str], ot_config: OTConfig) -> dict[str, float | str]:
    out: dict[str, float | str] = {}
    if "norms" in which:
        out["hminus1"] = hminus1(rho)
        out["bv"] = bv_seminorm(rho)
        out["variance"] = variance(rho)
        try:
            out["gl_energy"] = gl_energy(rho)
        except ValueError:
            out["gl_energy"] = math.nan
    if "D" in which:
        out["D"], out["D_solver"] = ot_config.measure(rho)
    return out


def _pf(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def run_config(path: str | Path, log=None) -> int:
    """Run the experiment in ``path``; 0 iff every check passes, 1 on failures, 2 on bad input."""
    log = log or (lambda msg: print(msg, file=sys.stderr))
    try:
        cfg = parse_config(path)
    except ConfigError as exc:
        log(f"error: {exc}")
        return 2
    try:
        report = execute(cfg, log)
    except (ValueError, RuntimeError) as exc:
        log(f"error: {exc}")
        return 2
    checks = {k: v for k, v in report.items() if k.startswith("check.")}
    for k, v in checks.items():
        log(f"{v} {k[6:]}")
    return 0 if all(v == "PASS" for v in checks.values()) else 1


def execute(cfg: Config, log) -> dict:
    name = cfg.get("name", cfg.path.stem)
    out_dir = cfg.path.parent / cfg.get("out_dir", f"{name}_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    dim = cfg.number("dim", 2, int)
    n = cfg.number("n", 64, int)
    grid = PeriodicGrid(dim, n)
    cutoff = cfg.number("cutoff", 4, int)
    solver, reg, enabled = parse_solver(cfg.get("ot_solver", "exact"))
    ot_config = OTConfig(solver=solver, reg=reg, cap=cfg.number("ot_cap", EXACT_ATOM_CAP, int), enabled=enabled)
    inits = cfg.items("init")
    checks = cfg.items("verify")
    report: dict = {"name": name, "n": n, "dim": dim}

    # observables at t = 0
    which = cfg.items("observables")
    expects = {k[7:]: cfg.number(k, 0.0) for k in cfg.values if k.startswith("expect.")}
    if expects and not which:
        which = ["norms"] + (["D"] if "D" in expects else [])
    tol = cfg.number("tolerance", 1e-9)
    fields = {spec: build_init(spec, grid, cutoff) for spec in inits}
    if which:
        cols = [c for c in OBSERVABLES if (c == "D" and "D" in which) or (c != "D" and "norms" in which)]
        rows = ["init," + ",".join(cols)]
        for spec, rho in fields.items():
            obs = _observe(rho, which, ot_config)
            rows.append(spec + "," + ",".join(repr(float(obs[c])) for c in cols))
            for c in cols:
                report[f"{spec}.{c}"] = float(obs[c])
            for q, want in expects.items():
                if q not in obs:
                    raise cfg.error(f"expect.{q}", "observable not computed; add it to observables")
                got = float(obs[q])
                ok = abs(got - want) <= tol * max(abs(want), 1e-300) or got == want
                report[f"check.expect.{spec}.{q}"] = _pf(ok)
        (out_dir / "observables.csv").write_text("\n".join(rows) + "\n")

    # simulations
    traces: dict[str, MixingTrace] = {}
    if cfg.get("protocol") is not None:
        protocol = parse_protocol(cfg.get("protocol"))
        T = cfg.number("T", 0.0)
        dt = parse_dt(cfg.get("dt", "0.5h"), grid.h)
        every = cfg.number("observe_every", 16, int)
        for spec, rho in fields.items():
            log(f"simulating {spec} to T={T:g} (dt={dt:g}, n={n})")
            trace, _ = simulate(rho, protocol, T, dt, every, ot_config)
            trace.to_csv(out_dir / f"trace_{spec.replace(':', '')}.csv")
            traces[spec] = trace
            report[f"{spec}.hminus1_final"] = trace.hminus1[-1]
            report[f"{spec}.D_final"] = trace.D[-1]

    slack = cfg.number("decay_slack", DECAY_SLACK)
    ps = [math.inf if p == "inf" else 2.0 for p in (cfg.items("budget_p") or ["2"])]
    fits: dict[tuple[str, str, float], float] = {}
    for spec, trace in traces.items():
        for p in ps:
            tag = f"p{'inf' if p == math.inf else 2}"
            if "theorem1" in checks or "uniformity" in checks:
                if not enabled:
                    raise cfg.error("ot_solver", "the mixing-measure checks need the D observer")
                fit = verify_theorem1(trace, p, slack)
                fits[(spec, "D", p)] = fit.c_fit
                _put_fit(report, f"theorem1.{spec}.{tag}", fit, "theorem1" in checks)
            if "theorem2" in checks or "uniformity" in checks:
                fit = verify_theorem2(trace, trace.bv[0], p, slack)
                fits[(spec, "hminus1", p)] = fit.c_fit
                _put_fit(report, f"theorem2.{spec}.{tag}", fit, "theorem2" in checks)
    if "uniformity" in checks:
        utol = cfg.number("uniformity_tol", UNIFORMITY_TOL)
        for q, p in itertools.product(("D", "hminus1"), ps):
            rates = [fits[(s, q, p)] for s in traces]
            ok = all(rates_agree(a, b, utol) for a, b in itertools.combinations(rates, 2))
            report[f"check.uniformity.{q}.p{'inf' if p == math.inf else 2}"] = _pf(ok)

    if "sandwich" in checks:
        corpus = parse_corpus(cfg.get("sandwich.corpus", "standard"))
        log(f"sandwich check on {len(corpus)} fields")
        rep = verify_sandwich(
            corpus,
            cfg.number("sandwich.n", 64, int),
            ot_config,
            cfg.number("sandwich.upper_factor", 1.05),
            cfg.flag("sandwich.refine", True),
            cutoff,
        )
        (out_dir / "sandwich.csv").write_text(rep.records_csv())
        for k, v in rep.summary().items():
            if k not in ("corpus", "pass", "upper_pass", "lower_pass"):
                report[f"sandwich.{k}"] = v
        report["check.sandwich.upper"] = _pf(rep.upper_pass)
        report["check.sandwich.lower"] = _pf(rep.lower_pass)
        report["check.sandwich.complete"] = _pf(all(r.ok for r in rep.records + rep.refined))

    (out_dir / "report.json").write_text(flat_json(report) + "\n")
    return report


def _put_fit(report: dict, prefix: str, fit, is_check: bool) -> None:
    for k, v in fit.to_dict().items():
        if k not in ("quantity", "pass"):
            report[f"{prefix}.{k}"] = v
    if is_check:
        report[f"check.{prefix}"] = _pf(fit.passed)


def flat_json(record: dict) -> str:
    """JSON text of a flat record; non-finite floats become the strings ``inf``/``nan``."""
    clean = {}
    for k, v in record.items():
        if isinstance(v, float) and not math.isfinite(v):
            v = str(v)
        clean[k] = v
    return json.dumps(clean, indent=1)
