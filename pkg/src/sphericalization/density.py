"""Metric densities rho: (0, inf) -> (0, inf) and their classification.

A density is one of three families:

* ``PowLog(alpha, beta)``:  rho(t) = (t+2)**alpha * log(t+2)**beta
* ``Exponential(k)``:       rho(t) = exp(-k t)
* ``Tabulated(knots)``:     piecewise power law through the knots (log rho is
  linear in log t), extended past either end by the end segment's slope.

Everything is evaluated in log space so that rapidly decaying densities
(``Exponential`` at t ~ 1e6) keep finite ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import DivergenceError, DomainError, PrereqError

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"

DEFAULT_FLOOR = 1e-6
ANALYTIC_TOL = 1e-10
TABULATED_TOL = 1e-8

# stabilization / growth thresholds for grid-based sup estimates
STABLE_REL = 0.01
GROWTH_REL = 0.01
DECEL_RATIO = 0.8
GRID_LO, GRID_HI, GRID_PER_DECADE = 1e-3, 1e6, 20


def geometric_grid(lo: float = GRID_LO, hi: float = GRID_HI, per_decade: int = GRID_PER_DECADE) -> np.ndarray:
    """Geometric grid whose points include every exact power of ten in range."""
    k0 = math.floor(round(math.log10(lo) * per_decade, 9))
    k1 = math.ceil(round(math.log10(hi) * per_decade, 9))
    exps = np.arange(k0, k1 + 1) / per_decade
    grid = np.power(10.0, exps)
    grid[0], grid[-1] = lo, hi
    return grid


@dataclass(frozen=True)
class DensityFn:
    family: str
    params: tuple[float, ...] = ()
    knots: tuple[tuple[float, float], ...] = ()
    domain_floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if self.family not in ("powlog", "exponential", "tabulated"):
            raise ValueError(f"unknown density family {self.family!r}")
        if self.domain_floor <= 0:
            raise ValueError("domain_floor must be positive")
        if self.family == "exponential" and not self.params[0] > 0:
            raise ValueError("exponential rate must be positive")
        if self.family == "tabulated":
            if not self.knots:
                raise ValueError("tabulated density needs at least one knot")
            ts = [k[0] for k in self.knots]
            if any(t <= 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("knots must have strictly increasing t > 0")
            if any(v <= 0 for _, v in self.knots):
                raise ValueError("tabulated density values must be positive")

    @property
    def name(self) -> str:
        if self.family == "powlog":
            return f"PowLog({self.params[0]:g}, {self.params[1]:g})"
        if self.family == "exponential":
            return f"Exponential({self.params[0]:g})"
        return f"Tabulated({len(self.knots)} knots)"

    @property
    def tol(self) -> float:
        return TABULATED_TOL if self.family == "tabulated" else ANALYTIC_TOL

    # -- tabulated helpers -------------------------------------------------
    @cached_property
    def _log_knots(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lt = np.log([k[0] for k in self.knots])
        lv = np.log([k[1] for k in self.knots])
        if len(lt) == 1:
            slopes = np.zeros(1)
        else:
            slopes = np.diff(lv) / np.diff(lt)
        return lt, lv, slopes

    def _tab_log_rho(self, t: np.ndarray) -> np.ndarray:
        lt, lv, slopes = self._log_knots
        x = np.log(t)
        out = np.interp(x, lt, lv)
        lo, hi = x < lt[0], x > lt[-1]
        out[lo] = lv[0] + slopes[0] * (x[lo] - lt[0])
        out[hi] = lv[-1] + slopes[-1] * (x[hi] - lt[-1])
        return out

    # -- evaluation --------------------------------------------------------
    def _check(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(~(t > 0)) or np.any(t < self.domain_floor):
            raise DomainError(f"{self.name} evaluated below domain floor {self.domain_floor:g}")
        return t

    def log_rho(self, t):
        t = self._check(t)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if self.family == "powlog":
            a, b = self.params
            u = t + 2.0
            out = a * np.log(u) + (b * np.log(np.log(u)) if b != 0 else 0.0)
        elif self.family == "exponential":
            out = -self.params[0] * t
        else:
            out = self._tab_log_rho(t)
        out = np.asarray(out, dtype=float)
        return float(out[0]) if scalar else out

    def __call__(self, t):
        return np.exp(self.log_rho(t))

    def log_rho_at_log(self, x: float) -> float:
        """log rho(e^x), finite for arbitrarily large x where e^x overflows."""
        if x < 700.0:
            return float(self.log_rho(math.exp(x)))
        if self.family == "powlog":
            a, b = self.params
            return a * x + (b * math.log(x) if b != 0 else 0.0)
        if self.family == "exponential":
            return -math.inf
        lt, lv, slopes = self._log_knots
        return float(lv[-1] + slopes[-1] * (x - lt[-1]))

    # -- integrability -----------------------------------------------------
    def is_integrable(self) -> bool:
        if self.family == "powlog":
            a, b = self.params
            return a < -1 or (a == -1 and b < -1)
        if self.family == "exponential":
            return True
        _, _, slopes = self._log_knots
        return len(self.knots) > 1 and slopes[-1] < -1

    def _require_integrable(self):
        if not self.is_integrable():
            raise DivergenceError(f"{self.name} is not integrable on (0, inf)")

    # -- tail integrals ----------------------------------------------------
    def log_tail(self, r, method: str = "auto", tol: float | None = None):
        """log of T(r) = int_r^inf rho(t) dt."""
        self._require_integrable()
        r = self._check(r)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        tol = self.tol if tol is None else tol
        if method == "auto":
            out = self._log_tail_closed(r)
            if out is None:
                out = self._log_tail_quad(r, tol)
        elif method == "quad":
            out = self._log_tail_quad(r, tol)
        elif method == "closed":
            out = self._log_tail_closed(r)
            if out is None:
                raise ValueError(f"no closed form tail for {self.name}")
        else:
            raise ValueError(f"unknown method {method!r}")
        return float(out[0]) if scalar else out

    def tail(self, r, method: str = "auto", tol: float | None = None):
        return np.exp(self.log_tail(r, method=method, tol=tol))

    def _log_tail_closed(self, r: np.ndarray):
        if self.family == "exponential":
            k = self.params[0]
            return -k * r - math.log(k)
        if self.family == "powlog":
            a, b = self.params
            u = r + 2.0
            if b == 0:
                return (a + 1) * np.log(u) - math.log(-a - 1)
            if a == -1:
                return (b + 1) * np.log(np.log(u)) - math.log(-b - 1)
            return None
        return self._log_tail_tabulated(r)

    def _log_tail_tabulated(self, r: np.ndarray) -> np.ndarray:
        lt, lv, slopes = self._log_knots
        t_k = np.exp(lt)
        n = len(t_k)

        def seg(a, b, la, s):
            # int_a^b exp(la) * (t/a)**s dt
            if abs(s + 1) < 1e-12:
                return math.exp(la) * a * math.log(b / a)
            return math.exp(la) * a * ((b / a) ** (s + 1) - 1) / (s + 1)

        # suffix[k] = int_{t_k}^inf rho
        suffix = np.empty(n)
        s_last = slopes[-1]
        suffix[-1] = math.exp(lv[-1]) * t_k[-1] / (-s_last - 1)
        for k in range(n - 2, -1, -1):
            suffix[k] = suffix[k + 1] + seg(t_k[k], t_k[k + 1], lv[k], slopes[k])
        out = np.empty_like(r)
        for i, ri in enumerate(r):
            lri = math.log(ri)
            lrho = float(self._tab_log_rho(np.array([ri]))[0])
            if lri >= lt[-1]:
                out[i] = lrho + lri - math.log(-s_last - 1)
                continue
            if lri < lt[0]:
                val = seg(ri, t_k[0], lrho, slopes[0]) + suffix[0]
            else:
                k = min(int(np.searchsorted(lt, lri, side="right")) - 1, n - 2)
                val = seg(ri, t_k[k + 1], lrho, slopes[k]) + suffix[k + 1]
            out[i] = math.log(val)
        return out

    def _log_tail_quad(self, r: np.ndarray, tol: float) -> np.ndarray:
        out = np.empty_like(r)
        if self.family == "powlog":
            a, b = self.params
            for i, ri in enumerate(r):
                # u = log(t+2) = L + v turns the power tail into exp decay
                L = math.log(ri + 2.0)
                scale = (a + 1) * L + b * math.log(L)

                def integrand(v, L=L):
                    return math.exp((a + 1) * v) * (1.0 + v / L) ** b

                val, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=tol * math.exp(-scale) * 1e-2,
                                        epsrel=1e-12, limit=500)
                out[i] = scale + math.log(val)
            return out
        if self.family == "exponential":
            k = self.params[0]
            for i, ri in enumerate(r):
                val, _ = integrate.quad(lambda w: math.exp(-k * w), 0.0, np.inf, epsabs=1e-14, epsrel=1e-12)
                out[i] = -k * ri + math.log(val)
            return out
        lt, _, _ = self._log_knots
        for i, ri in enumerate(r):
            lr = math.log(ri)
            lrho = float(self._tab_log_rho(np.array([ri]))[0])

            def integrand(x, lr=lr, lrho=lrho):
                if x > 700.0:
                    return 0.0
                return math.exp(x - lr + float(self._tab_log_rho(np.array([math.exp(x)]))[0]) - lrho)

            inner = [p for p in lt if p > lr]
            total = 0.0
            if inner:
                pts = inner[:-1] if len(inner) > 1 else None
                v, _ = integrate.quad(integrand, lr, inner[-1], points=pts, epsabs=1e-13, epsrel=1e-11, limit=500)
                total += v
                start = inner[-1]
            else:
                start = lr
            v, _ = integrate.quad(integrand, start, np.inf, epsabs=1e-13, epsrel=1e-11, limit=500)
            total += v
            out[i] = lrho + lr + math.log(total)
        return out


def PowLog(alpha: float, beta: float = 0.0, domain_floor: float = DEFAULT_FLOOR) -> DensityFn:
    return DensityFn("powlog", (float(alpha), float(beta)), domain_floor=domain_floor)


def Exponential(rate: float = 1.0, domain_floor: float = DEFAULT_FLOOR) -> DensityFn:
    return DensityFn("exponential", (float(rate),), domain_floor=domain_floor)


def Tabulated(knots: Sequence[tuple[float, float]], domain_floor: float = DEFAULT_FLOOR) -> DensityFn:
    return DensityFn("tabulated", knots=tuple((float(t), float(v)) for t, v in knots), domain_floor=domain_floor)


def eval_rho(f: DensityFn, t):
    return f(t)


def tail_integral(f: DensityFn, r, tol: float | None = None, method: str = "auto"):
    """T(r) = int_r^inf rho; closed form when available, adaptive quadrature otherwise."""
    return f.tail(r, method=method, tol=tol)


# ---------------------------------------------------------------------------
# grid-based sup estimates


@dataclass
class ConditionCheck:
    verdict: str
    constant: float
    witness: tuple | float | None
    refined_constant: float = math.nan
    decade_max: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.verdict, self.constant, self.witness))


def _decade_maxima(grid: np.ndarray, log_vals: np.ndarray) -> dict[int, float]:
    dec = np.floor(np.log10(grid) + 1e-9).astype(int)
    out = {}
    for d in np.unique(dec):
        sel = dec == d
        if sel.sum() >= 2:
            out[int(d)] = float(np.max(log_vals[sel]))
    return out


def _grows(decade_max: dict[int, float]) -> bool:
    """Sustained growth of the per-decade maxima (log values) over the top three decades.

    Each step must exceed GROWTH_REL and the growth must not decelerate:
    the second linear increment is at least DECEL_RATIO of the first.  A
    ratio converging like 1 - c/log r has increments shrinking like
    k/(k+2) and is not flagged; log-type growth has constant increments.
    """
    keys = sorted(decade_max)[-3:]
    if len(keys) < 3:
        return False
    v = [decade_max[k] for k in keys]
    if not all(b - a > math.log1p(GROWTH_REL) for a, b in zip(v, v[1:])):
        return False
    if v[2] > 700:
        return True
    lin = [math.exp(x) for x in v]
    return lin[2] - lin[1] >= DECEL_RATIO * (lin[1] - lin[0])


def _verdict(log_c: float, log_c_refined: float, decade_max: dict) -> str:
    """fail on sustained growth, pass on a refinement-stable sup, else inconclusive."""
    if _grows(decade_max):
        return FAIL
    if not (math.isfinite(log_c) and math.isfinite(log_c_refined)):
        return INCONCLUSIVE
    if abs(math.expm1(log_c - log_c_refined)) < STABLE_REL:
        return PASS
    return INCONCLUSIVE


def _grid_from(grid, per_decade_mult: int = 1):
    if grid is None:
        return geometric_grid(per_decade=GRID_PER_DECADE * per_decade_mult)
    grid = np.asarray(grid, dtype=float)
    if per_decade_mult == 1:
        return grid
    # refine by inserting geometric midpoints
    mids = np.sqrt(grid[:-1] * grid[1:])
    return np.sort(np.concatenate([grid, mids]))


def _log_ratio_A(f: DensityFn, grid: np.ndarray, window: int):
    lo = np.maximum((grid - 1.0) / 2.0, f.domain_floor)
    lo = np.maximum(lo, f.domain_floor)
    hi = 2.0 * grid + 1.0
    frac = np.linspace(0.0, 1.0, window)
    s = lo[:, None] * (hi / lo)[:, None] ** frac[None, :]
    s = np.concatenate([s, grid[:, None]], axis=1)
    lr = f.log_rho(grid)
    ls = f.log_rho(s)
    j = np.argmin(ls, axis=1)
    vals = lr - ls[np.arange(len(grid)), j]
    return vals, s[np.arange(len(grid)), j]


def check_condition_A(f: DensityFn, grid=None, safety: float = 1.0, window: int = 65) -> ConditionCheck:
    """sup of rho(r)/rho(s) over 0 < r <= 2s+1, 0 < s <= 2r+1."""
    g1 = _grid_from(grid)
    g2 = _grid_from(grid, 2)
    v1, s1 = _log_ratio_A(f, g1, window)
    v2, _ = _log_ratio_A(f, g2, 2 * window - 1)
    i = int(np.argmax(v1))
    log_c, log_c2 = float(v1[i]), float(np.max(v2))
    dmax = _decade_maxima(g1, v1)
    verdict = _verdict(log_c, log_c2, dmax)
    # an integrable density cannot satisfy (A) with a constant <= 2
    if verdict == PASS and not log_c > math.log(2.0):
        verdict = INCONCLUSIVE
    const = safety * _safe_exp(log_c)
    return ConditionCheck(verdict, const, (float(g1[i]), float(s1[i])), safety * _safe_exp(log_c2), dmax)


def _log_ratio_B(f: DensityFn, grid: np.ndarray) -> np.ndarray:
    return f.log_tail(grid) - np.log1p(grid) - f.log_rho(grid)


def check_condition_B(f: DensityFn, grid=None, safety: float = 1.0) -> ConditionCheck:
    """sup of T(r) / ((r+1) rho(r))."""
    f._require_integrable()
    g1 = _grid_from(grid)
    g2 = _grid_from(grid, 2)
    v1 = _log_ratio_B(f, g1)
    v2 = _log_ratio_B(f, g2)
    i = int(np.argmax(v1))
    log_c, log_c2 = float(v1[i]), float(np.max(v2))
    dmax = _decade_maxima(g1, v1)
    verdict = _verdict(log_c, log_c2, dmax)
    return ConditionCheck(verdict, safety * _safe_exp(log_c), float(g1[i]), safety * _safe_exp(log_c2), dmax)


def check_equivalence(f: DensityFn, grid=None) -> ConditionCheck:
    """Smallest sampled C with (1/C)(r+1)rho(r) <= T(r) <= C(r+1)rho(r)."""
    f._require_integrable()
    g1 = _grid_from(grid)
    g2 = _grid_from(grid, 2)
    v1 = np.abs(_log_ratio_B(f, g1))
    v2 = np.abs(_log_ratio_B(f, g2))
    i = int(np.argmax(v1))
    log_c, log_c2 = float(v1[i]), float(np.max(v2))
    dmax = _decade_maxima(g1, v1)
    verdict = _verdict(log_c, log_c2, dmax)
    return ConditionCheck(verdict, _safe_exp(log_c), float(g1[i]), _safe_exp(log_c2), dmax)


def quasidecreasing_constant(f: DensityFn, grid=None) -> float:
    """sup over s <= t of rho(t)/rho(s), sampled from the domain floor up."""
    g = _grid_from(grid)
    g = np.concatenate([[f.domain_floor], g[g > f.domain_floor]])
    lr = f.log_rho(g)
    running_min = np.minimum.accumulate(lr)
    return _safe_exp(float(np.max(lr - running_min)))


def _safe_exp(x: float) -> float:
    return math.inf if x > 709 else math.exp(x)


# ---------------------------------------------------------------------------
# report


@dataclass
class DensityReport:
    C_A_hat: float
    C_B_hat: float
    C_qd_hat: float
    epsilon_hat: float | None
    tau1_hat: float | None
    verdict_A: str
    verdict_B: str
    witness_A: tuple | None
    witness_B: float | None

    @property
    def passes(self) -> bool:
        return self.verdict_A == PASS and self.verdict_B == PASS

    def require_pass(self):
        if not self.passes:
            raise PrereqError(f"density verdicts (A, B) = ({self.verdict_A}, {self.verdict_B}); both must pass")

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, float) and not math.isfinite(v):
                return "inf" if v > 0 else "nan"
            if isinstance(v, tuple):
                return [enc(x) for x in v]
            return v

        return {k: enc(v) for k, v in self.__dict__.items()}


def classify(f: DensityFn, grid=None) -> DensityReport:
    """Estimate the (A)/(B) constants and verdicts; refuses non-integrable densities."""
    f._require_integrable()
    a = check_condition_A(f, grid)
    b = check_condition_B(f, grid)
    both = a.verdict == PASS and b.verdict == PASS
    eps = 1.0 / (a.constant * b.constant) if both else None
    tau1 = float(f(1.0)) / a.constant if math.isfinite(a.constant) else None
    return DensityReport(
        C_A_hat=a.constant,
        C_B_hat=b.constant,
        C_qd_hat=quasidecreasing_constant(f, grid),
        epsilon_hat=eps,
        tau1_hat=tau1,
        verdict_A=a.verdict,
        verdict_B=b.verdict,
        witness_A=a.witness,
        witness_B=b.witness,
    )


# ---------------------------------------------------------------------------
# consequences of (A) + (B)


@dataclass
class DecayCheck:
    epsilon: float
    holds: bool
    worst_log_slack: float
    witness: tuple[float, float]


def decay_exponent(f: DensityFn, report: DensityReport, grid=None) -> DecayCheck:
    """eps = 1/(C_A C_B) and a sweep of (s+1)^(eps+1) rho(s) <= C_A C_B (r+1)^(eps+1) rho(r), r <= s."""
    report.require_pass()
    g = _grid_from(grid)
    cc = report.C_A_hat * report.C_B_hat
    eps = 1.0 / cc
    q = (eps + 1.0) * np.log1p(g) + f.log_rho(g)
    # slack[i, j] for r = g[i] <= s = g[j]
    slack = math.log(cc) + q[:, None] - q[None, :]
    slack = np.where(np.triu(np.ones_like(slack, dtype=bool)), slack, np.inf)
    i, j = np.unravel_index(np.argmin(slack), slack.shape)
    worst = float(slack[i, j])
    return DecayCheck(eps, worst >= -1e-12, worst, (float(g[i]), float(g[j])))


@dataclass
class HTable:
    t: np.ndarray
    h: np.ndarray

    def inverse(self, tau):
        """inf{t : h(t) <= tau} on the grid, with the bracketing lower neighbour.

        Returns (t_hat, t_below); t_hat is inf when no grid point qualifies and
        t_below is None when the infimum saturates at the first grid point.
        """
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        ok = self.h[None, :] <= tau[:, None] * (1 + 1e-12)
        found = ok.any(axis=1)
        idx = np.argmax(ok, axis=1)
        t_hat = np.where(found, self.t[idx], np.inf)
        below = [None if (not f or i == 0) else float(self.t[i - 1]) for f, i in zip(found, idx)]
        if t_hat.size == 1:
            return float(t_hat[0]), below[0]
        return t_hat, below


def h_and_inverse(f: DensityFn, grid=None, report: DensityReport | None = None) -> HTable:
    """Tabulate h(t) = (t+1) rho(t) from the domain floor up."""
    report = classify(f, grid) if report is None else report
    report.require_pass()
    hi = GRID_HI if grid is None else float(np.max(grid))
    t = geometric_grid(f.domain_floor, hi, GRID_PER_DECADE)
    return HTable(t, (t + 1.0) * f(t))


def h_inverse_doubling_bound(C_A: float, C_B: float) -> float:
    """K with h^-1(tau/2) <= K h^-1(tau) for tau in (0, tau1]."""
    eps = 1.0 / (C_A * C_B)
    return 2.0 * (2.0 * C_A * C_B) ** (1.0 / eps)


@dataclass
class HInverseCheck:
    worst_ratio: float
    bound: float
    monotone: bool
    holds: bool
    witness_tau: float


def check_h_inverse_doubling(table: HTable, report: DensityReport, taus) -> HInverseCheck:
    taus = np.asarray(taus, dtype=float)
    a, _ = table.inverse(taus)
    b, _ = table.inverse(taus / 2)
    ok = np.isfinite(a) & np.isfinite(b)
    ratio = np.where(ok, b / a, np.nan)
    k = int(np.nanargmax(ratio))
    bound = h_inverse_doubling_bound(report.C_A_hat, report.C_B_hat)
    mono = bool(np.all(a[ok] <= b[ok]))
    return HInverseCheck(float(ratio[k]), bound, mono, mono and float(ratio[k]) <= bound, float(taus[k]))
