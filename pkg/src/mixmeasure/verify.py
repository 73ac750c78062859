"""Empirical checks of the mixing inequalities.

Two kinds of check live here.  The sandwich check evaluates the mixing
measure against the negative Sobolev norm and the perimeter on a corpus of
binary fields.  The decay checks take a recorded mixing trace and test
whether the observed decay is at most exponential in the stirring budget.
Every pass flag is recomputed from the stored numbers, so a saved report can
be re-evaluated without rerunning anything.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .advect import MixingTrace, OTConfig
from .field import PeriodicGrid, ScalarField, make_checkerboard, make_random_binary, make_stripes
from .norms import bv_seminorm, hminus1

MIN_BUDGET_SPACING = 1e-3
DECAY_SLACK = 0.10
UNIFORMITY_TOL = 0.30


# corpus


@dataclass(frozen=True)
class CorpusMember:
    kind: str
    param: int

    @property
    def name(self) -> str:
        return f"{self.kind}:{self.param}"

    def build(self, grid: PeriodicGrid, cutoff: int = 4) -> ScalarField:
        if self.kind == "stripes":
            return make_stripes(grid, self.param)
        if self.kind == "checker":
            return make_checkerboard(grid, self.param)
        if self.kind == "random":
            return make_random_binary(grid, self.param, cutoff)
        raise ValueError(f"unknown corpus kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> CorpusMember:
        kind, _, param = text.strip().partition(":")
        if kind not in ("stripes", "checker", "random") or not param:
            raise ValueError(f"bad corpus member {text!r}; expected stripes:K, checker:K or random:SEED")
        return cls(kind, int(param))


def standard_corpus() -> list[CorpusMember]:
    """Stripes and checkerboards with k in {1, 2, 4, 8}, plus 12 seeded random binaries."""
    ks = (1, 2, 4, 8)
    return [CorpusMember("stripes", k) for k in ks] + [CorpusMember("checker", k) for k in ks] + [
        CorpusMember("random", s) for s in range(12)
    ]


def parse_corpus(text: str) -> list[CorpusMember]:
    if text.strip() == "standard":
        return standard_corpus()
    return [CorpusMember.parse(t) for t in text.split(",") if t.strip()]


# sandwich


@dataclass
class FieldRecord:
    name: str
    n: int
    hminus1: float
    bv: float
    D: float
    D_solver: str
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error and math.isfinite(self.D)


@dataclass
class VerifyReport:
    """Sandwich results on one corpus, optionally with a refined rerun.

    ``upper_factor`` is the allowed ratio D / hminus1; ``c_low`` is the
    smallest D * bv over the corpus and ``headroom`` the smallest hminus1 / D.
    """

    corpus: str
    n: int
    records: list[FieldRecord]
    upper_factor: float = 1.05
    refined: list[FieldRecord] = field(default_factory=list)
    stability_tol: float = 0.20

    @property
    def c_low(self) -> float:
        return _c_low(self.records)

    @property
    def c_low_refined(self) -> float:
        return _c_low(self.refined) if self.refined else math.nan

    @property
    def headroom(self) -> float:
        vals = [r.hminus1 / r.D for r in self.records if r.ok]
        return min(vals) if vals else math.nan

    @property
    def upper_pass(self) -> bool:
        good = [r for r in self.records + self.refined if r.ok]
        return bool(good) and all(r.D <= self.upper_factor * r.hminus1 for r in good)

    @property
    def lower_pass(self) -> bool:
        if not self.c_low > 0:
            return False
        if self.refined:
            return self.c_low_refined > 0 and abs(self.c_low_refined / self.c_low - 1) <= self.stability_tol
        return True

    @property
    def passed(self) -> bool:
        return self.upper_pass and self.lower_pass and all(r.ok for r in self.records + self.refined)

    def worst_upper(self) -> FieldRecord:
        return max((r for r in self.records + self.refined if r.ok), key=lambda r: r.D / r.hminus1)

    def summary(self) -> dict:
        return {
            "corpus": self.corpus,
            "n": self.n,
            "members": len(self.records),
            "upper_factor": self.upper_factor,
            "headroom": self.headroom,
            "c_low": self.c_low,
            "c_low_refined": self.c_low_refined,
            "upper_pass": self.upper_pass,
            "lower_pass": self.lower_pass,
            "pass": self.passed,
        }

    def records_csv(self) -> str:
        lines = ["name,n,hminus1,bv,D,D_solver,D_over_hminus1,D_times_bv,error"]
        for r in self.records + self.refined:
            ratio = r.D / r.hminus1 if r.ok else math.nan
            lines.append(f"{r.name},{r.n},{r.hminus1!r},{r.bv!r},{r.D!r},{r.D_solver},{ratio!r},{r.D * r.bv!r},{r.error}")
        return "\n".join(lines) + "\n"


def _c_low(records: list[FieldRecord]) -> float:
    vals = [r.D * r.bv for r in records if r.ok]
    return min(vals) if vals else math.nan


def measure_member(member: CorpusMember, grid: PeriodicGrid, ot_config: OTConfig, cutoff: int = 4) -> FieldRecord:
    """Norms and mixing measure of one corpus member; failures are recorded, not raised."""
    try:
        rho = member.build(grid, cutoff)
    except ValueError as exc:
        return FieldRecord(member.name, grid.n, math.nan, math.nan, math.nan, "none", str(exc))
    if not rho.is_binary() or abs(rho.mean()) > 1e-12:
        return FieldRecord(member.name, grid.n, math.nan, math.nan, math.nan, "none", "not binary mean-zero")
    h, bv = hminus1(rho), bv_seminorm(rho)
    try:
        D, tag = ot_config.measure(rho)
    except (ValueError, RuntimeError) as exc:
        return FieldRecord(member.name, grid.n, h, bv, math.nan, "failed", str(exc))
    return FieldRecord(member.name, grid.n, h, bv, D, tag)


def verify_sandwich(
    corpus: list[CorpusMember],
    n: int = 64,
    ot_config: OTConfig | None = None,
    upper_factor: float = 1.05,
    refine: bool = True,
    cutoff: int = 4,
) -> VerifyReport:
    """Check ``c / bv <= D <= hminus1`` across ``corpus`` on the ``n x n`` torus.

    With ``refine`` the corpus is measured again at ``2n`` and ``c_low`` must
    be stable within 20%.  The refined mixing measure goes through the same
    cell-aggregation cap as any other observation.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    ot_config = ot_config or OTConfig()
    grid = PeriodicGrid(2, n)
    records = [measure_member(m, grid, ot_config, cutoff) for m in corpus]
    refined = []
    if refine:
        fine = PeriodicGrid(2, 2 * n)
        refined = [measure_member(m, fine, ot_config, cutoff) for m in corpus]
    name = ",".join(m.name for m in corpus)
    return VerifyReport(name, n, records, upper_factor, refined)


# decay in the stirring budget


@dataclass
class FitRecord:
    """Exponential-decay fit of one trace quantity against the budget.

    ``y(t) = -log(q(t) / q(0))`` is regressed on the budget ``B(t)`` over all
    observation pairs whose budget spacing is at least ``min_spacing``.
    ``c_fit`` is the least-squares slope through the origin of the pair
    decrements and ``residual`` their RMS misfit.

    Domination is tested out of sample: ``c_dom`` is the largest pair rate
    among pairs inside the first half of the budget, and every pair in the
    whole trace must satisfy ``dy <= (1 + slack) * c_dom * dB``.  A decay that
    accelerates beyond exponential (in the limit, mixing in finite time) breaks
    this; an exponential or slower decay does not.
    """

    quantity: str
    p: float
    c_fit: float
    residual: float
    c_dom: float
    violation: float
    slack: float
    pairs: int
    positive: bool = True

    @property
    def passed(self) -> bool:
        return math.isfinite(self.c_dom) and self.violation <= 0.0 and self.positive

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = self.passed
        return d


def _decay_fit(
    values, budget, quantity: str, p: float, slack: float = DECAY_SLACK, min_spacing: float = MIN_BUDGET_SPACING
) -> FitRecord:
    q = np.asarray(values, dtype=float)
    B = np.asarray(budget, dtype=float)
    if q.size < 10:
        raise ValueError(f"need at least 10 observations, got {q.size}")
    if np.any(~np.isfinite(q)):
        raise ValueError(f"{quantity} series has non-finite entries")
    positive = bool(np.all(q > 0))
    if not positive:
        return FitRecord(quantity, p, math.inf, math.inf, math.inf, math.inf, slack, 0, False)
    y = -np.log(q / q[0])
    if B[-1] - B[0] <= 0:
        # no stirring: only a constant series is consistent with any finite rate
        if np.allclose(y, 0.0, atol=1e-12):
            return FitRecord(quantity, p, 0.0, 0.0, 0.0, 0.0, slack, 0)
        raise ValueError("degenerate budget: the series changes without any stirring")
    i, j = np.triu_indices(q.size, 1)
    dB = B[j] - B[i]
    keep = dB >= min_spacing
    i, j, dB = i[keep], j[keep], dB[keep]
    dy = y[j] - y[i]
    c_fit = float(np.sum(dy * dB) / np.sum(dB * dB))
    residual = float(np.sqrt(np.mean((dy - c_fit * dB) ** 2)))
    calib = B[j] - B[0] <= (B[-1] - B[0]) / 2
    if not np.any(calib):
        calib = np.ones_like(dB, dtype=bool)
    c_dom = max(0.0, float(np.max(dy[calib] / dB[calib])))
    violation = float(np.max(dy - (1 + slack) * c_dom * dB))
    return FitRecord(quantity, p, c_fit, residual, c_dom, violation, slack, int(dB.size))


def verify_theorem1(trace: MixingTrace, p: float = 2, slack: float = DECAY_SLACK) -> FitRecord:
    """Is the decay of the mixing measure at most exponential in the p-budget?"""
    return _decay_fit(trace.D, trace.budget(p), "D", p, slack)


def verify_theorem2(trace: MixingTrace, bv0: float, p: float = 2, slack: float = DECAY_SLACK) -> FitRecord:
    """Same test for ``bv0 * hminus1(t)``; also fails if the norm reaches zero."""
    if not bv0 > 0:
        raise ValueError("bv0 must be positive")
    return _decay_fit(bv0 * np.asarray(trace.hminus1), trace.budget(p), "bv0*hminus1", p, slack)


def rates_agree(a: float, b: float, tol: float = UNIFORMITY_TOL) -> bool:
    """Relative agreement ``|a - b| <= tol * max(|a|, |b|)``; two zero rates agree."""
    scale = max(abs(a), abs(b))
    return scale == 0.0 or abs(a - b) <= tol * scale
