"""Checkable bound pipelines against measured walk data.

Each pipeline produces a :class:`BoundReport`: per-n rows with the measured
quantity, the bound value and the slack ratio.  Where a bound is a theorem
(the tail inequalities), any violation fails the run; where the underlying
constant is unspecified, reports show the measured ratio and check its
boundedness over the grid instead of asserting a constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    HypothesisViolationError,
    OutOfRangeError,
    TheoremInapplicableError,
    UsageError,
)
from .groups import Group, ball
from .spectral import ProfileCurve, dirichlet_lambda, dirichlet_problem
from .walk import Distribution, StepMeasure, WalkObservables, convolve, delta_distribution

__all__ = [
    "DecayModel",
    "BoundRow",
    "BoundReport",
    "entropy_scale",
    "tail_set_index",
    "tail_bound_report",
    "max_tail_bound_report",
    "stay_probability_curve",
    "enumerate_max_exit_probability",
    "EigenDecayModel",
    "eigen_decay_model",
    "doubling_constant",
    "max_displacement_bound",
    "comparison_profile_bound",
    "entropy_bound_report",
    "rho_tilde",
]


class DecayModel:
    """Monotone decay-rate model gamma(n) = -ln mu^(2n)(id), with inverse.

    Either a closed form C * n^beta * ln(n+1)^kappa or a monotone table
    interpolated log-log. Table models extrapolate beyond the last point by
    extending the final log-log slope; ``value`` flags that region via
    ``extrapolated(n)``.
    """

    def __init__(self, kind, **kw):
        self.kind = kind
        self.__dict__.update(kw)
        if kind == "closed":
            if not (self.C > 0 and self.beta > 0):
                raise UsageError("closed form needs C > 0, beta > 0")
        elif kind == "table":
            ns, gs = np.asarray(self.ns, float), np.asarray(self.gammas, float)
            if len(ns) < 2 or np.any(np.diff(ns) <= 0):
                raise UsageError("table needs >= 2 strictly increasing n")
            if np.any(np.diff(gs) <= 0):
                raise HypothesisViolationError("gamma table is not increasing")
            if np.any(gs <= 0):
                raise UsageError("gamma values must be positive")
            self._ln_n, self._ln_g = np.log(ns), np.log(gs)
        else:
            raise UsageError(f"unknown decay model kind {kind!r}")

    @classmethod
    def closed(cls, C: float, beta: float, kappa: float = 0.0):
        return cls("closed", C=C, beta=beta, kappa=kappa)

    @classmethod
    def from_table(cls, ns, gammas):
        return cls("table", ns=list(ns), gammas=list(gammas))

    @classmethod
    def from_observables(cls, obs: WalkObservables, n_min: int = 1):
        """Certified rates from the return-probability upper interval ends.

        gamma(n) = -ln(returnProb + prunedMass) keeps the hypothesis
        direction: mu^(2n)(id) >= exp(-gamma(n)) for the true walk.
        """
        ns, gs = [], []
        for n in range(n_min, obs.n_steps // 2 + 1):
            upper = obs.return_prob_upper(n)
            if upper <= 0:
                break
            g = -math.log(min(upper, 1.0))
            if gs and g <= gs[-1]:
                continue  # keep the table strictly increasing
            ns.append(n)
            gs.append(g)
        return cls.from_table(ns, gs)

    def value(self, n: float) -> float:
        if n < 1:
            raise UsageError("gamma is defined on [1, infinity)")
        if self.kind == "closed":
            return self.C * n**self.beta * math.log(n + 1.0) ** self.kappa
        ln = math.log(n)
        i = np.searchsorted(self._ln_n, ln)
        if i == 0:
            i = 1
        if i >= len(self._ln_n):
            i = len(self._ln_n) - 1
        x0, x1 = self._ln_n[i - 1], self._ln_n[i]
        y0, y1 = self._ln_g[i - 1], self._ln_g[i]
        return math.exp(y0 + (y1 - y0) * (ln - x0) / (x1 - x0))

    def extrapolated(self, n: float) -> bool:
        return self.kind == "table" and math.log(n) > self._ln_n[-1]

    def __call__(self, n):
        return self.value(n)

    def inverse(self, y: float) -> float:
        """Smallest n >= 1 with gamma(n) = y, by monotone bracketing."""
        g1 = self.value(1.0)
        if y <= g1:
            return 1.0
        lo, hi = 1.0, 2.0
        for _ in range(600):
            if self.value(hi) >= y:
                break
            lo, hi = hi, hi * 2.0
        else:
            raise OutOfRangeError(f"gamma never reaches {y}")
        for _ in range(200):
            mid = math.sqrt(lo * hi)
            if self.value(mid) < y:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-13 * hi:
                break
        return hi

    def check_power_hypothesis(self, beta: float, grid) -> None:
        """Require n^beta / gamma(n) non-decreasing on the grid."""
        vals = [n**beta / self.value(n) for n in grid]
        for a, b in zip(vals, vals[1:]):
            if b < a * (1 - 1e-9):
                raise HypothesisViolationError(
                    f"n^{beta}/gamma(n) decreases on the evaluation grid"
                )


def entropy_scale(gamma: DecayModel, n: float, rel_tol: float = 1e-9) -> float:
    """inf over x of the threshold where inverse-decay outruns time.

    Solves inf{x : gamma^-1(x/2)/x > n} by monotone bisection; the driving
    function is checked for monotonicity on the bracketing trajectory.
    """

    def h(x):
        return gamma.inverse(x / 2.0) / x

    lo = 2.0 * gamma.value(1.0)
    if h(lo) > n:
        return lo
    hi = lo * 2.0
    prev = h(lo)
    for _ in range(300):
        cur = h(hi)
        if cur < prev * (1 - 1e-9):
            raise HypothesisViolationError(
                "gamma^-1(x/2)/x is not increasing on the search range"
            )
        if cur > n:
            break
        prev = cur
        lo, hi = hi, hi * 2.0
    else:
        raise OutOfRangeError("threshold never satisfied on the search range")
    while hi - lo > rel_tol * lo:
        mid = 0.5 * (lo + hi)
        if h(mid) > n:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def tail_set_index(gamma: DecayModel, n: float, k_cap: int = 400) -> int:
    """Smallest integer k with e^k sqrt(phi(e^k / 2)) >= n, by scan.

    phi(x) = gamma^-1(x) / x^2; phi must be non-decreasing along the scan
    (this is the slow-decay hypothesis), else the scan aborts.
    """
    g1 = gamma.value(1.0)
    k = math.ceil(math.log(max(2.0 * g1, 1e-300)))
    prev_phi = None
    for _ in range(k_cap):
        x = math.exp(k) / 2.0
        phi = gamma.inverse(x) / x**2
        if prev_phi is not None and phi < prev_phi * (1 - 1e-9):
            raise HypothesisViolationError(
                "phi(x) = gamma^-1(x)/x^2 decreases on the scan grid"
            )
        prev_phi = phi
        if math.exp(k) * math.sqrt(phi) >= n:
            return k
        k += 1
    raise OutOfRangeError(f"no k <= {k_cap} satisfies the tail-set condition")


@dataclass
class BoundRow:
    n: int
    measured: float
    bound: float
    extra: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        if self.measured <= 0.0:
            return math.inf
        return self.bound / self.measured

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound


@dataclass
class BoundReport:
    kind: str
    inputs: dict
    rows: list
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        return all(r.holds for r in self.rows)

    def to_dict(self):
        return {
            "schema_version": 1,
            "theorem": self.kind,
            "inputs": self.inputs,
            "grid": [
                {"n": r.n, "measured": r.measured, "bound": r.bound,
                 "slack": None if math.isinf(r.slack) else r.slack,
                 "holds": r.holds, **r.extra}
                for r in self.rows
            ],
            "verdict": "pass" if self.verdict else "FAIL",
            "notes": self.notes,
        }


def _product_set(group: Group, elements) -> set:
    """U^-1 U formed explicitly, iterating in canonical order."""
    inv = group.inverse
    mul = group.multiply
    elems = sorted(elements)
    invs = [inv(u) for u in elems]
    out = set()
    for ui in invs:
        for v in elems:
            out.add(mul(ui, v))
    return out


def tail_bound_report(
    group: Group,
    step: StepMeasure,
    radii,
    n_max: int,
    prune_eps: float = 0.0,
    eig_tol: float = 1e-10,
    product_cap: int = 5_000_000,
) -> BoundReport:
    """Exact time-n exit probabilities against n * lambda(U), U = balls.

    One convolution sweep is shared across all radii; membership uses the
    nesting of the product sets.  With pruning, the reported exit
    probability is the certified upper end 1 - (stored mass inside), so the
    checked inequality is conservative.
    """
    radii = sorted(set(radii))
    cache = ball(group, max(radii))
    layers = cache.layers
    u_sets, lambdas, prod_sets = [], [], []
    running: set = set()
    next_layer = 0
    for r in radii:
        while next_layer <= r:
            running |= layers[next_layer]
            next_layer += 1
        u = sorted(running)
        if len(u) ** 2 > product_cap:
            raise UsageError(
                f"|U|^2 = {len(u)**2} exceeds the product cap at radius {r}"
            )
        u_sets.append(u)
        lam = dirichlet_lambda(dirichlet_problem(group, step, u), tol=eig_tol).lam
        lambdas.append(lam)
        prod_sets.append(_product_set(group, u))
    # nested product sets: find the smallest radius index containing g
    rows = []
    dist = delta_distribution(group)
    for n in range(1, n_max + 1):
        dist = convolve(dist, step, prune_eps)
        inside = [0.0] * len(radii)
        for g, p in dist.probs.items():
            for i, ps in enumerate(prod_sets):
                if g in ps:
                    inside[i] += p
                    break
        # suffix-accumulate: membership in a larger product set includes all
        # mass already attributed to smaller ones
        total = 0.0
        for i in range(len(radii)):
            total += inside[i]
            inside[i] = total
        for i, r in enumerate(radii):
            measured = 1.0 - inside[i]
            rows.append(BoundRow(
                n, measured, n * lambdas[i],
                extra={"radius": r, "set_size": len(u_sets[i]),
                       "lambda": lambdas[i], "pruned_mass": dist.pruned_mass},
            ))
    return BoundReport(
        "tail-bound",
        {"group": group.describe(), "radii": radii, "n_max": n_max,
         "prune_eps": prune_eps},
        rows,
    )


def stay_probability_curve(group: Group, step: StepMeasure, allowed: set,
                           n_max: int) -> np.ndarray:
    """Exact P(exists k <= n with W_k outside ``allowed``), n = 0..n_max.

    Killed-walk dynamic programming: the distribution restricted to the
    allowed set is convolved stepwise with no pruning, so this aggregates
    every step tuple exactly (the literal enumeration oracle agrees on
    small cases; see the tests).
    """
    ident = group.identity()
    if ident not in allowed:
        raise UsageError("identity must lie in the allowed set")
    mul = group.multiply
    cur = {ident: 1.0}
    out = np.zeros(n_max + 1)
    step_items = list(step.probs.items())
    alive = 1.0
    for n in range(1, n_max + 1):
        nxt: dict = {}
        for g, pg in cur.items():
            for s, ps in step_items:
                h = mul(g, s)
                if h in allowed:
                    nxt[h] = nxt.get(h, 0.0) + pg * ps
        cur = nxt
        alive = sum(cur.values())
        out[n] = 1.0 - alive
    return out


def enumerate_max_exit_probability(group: Group, step: StepMeasure,
                                   allowed: set, n: int) -> float:
    """Brute-force oracle: walk every step tuple of length n."""
    mul = group.multiply
    step_items = list(step.probs.items())
    total_exit = 0.0
    stack = [(group.identity(), 1.0, 0)]
    while stack:
        g, p, depth = stack.pop()
        if depth == n:
            continue
        for s, ps in step_items:
            h = mul(g, s)
            if h in allowed:
                stack.append((h, p * ps, depth + 1))
            else:
                total_exit += p * ps
    return total_exit


def max_tail_bound_report(group: Group, step: StepMeasure, radii, n_max: int,
                          eig_tol: float = 1e-10) -> BoundReport:
    """Exact max-exit probabilities against (32 n + 1) lambda(U)."""
    radii = sorted(set(radii))
    cache = ball(group, max(radii))
    rows = []
    running: set = set()
    next_layer = 0
    for r in radii:
        while next_layer <= r:
            running |= cache.layers[next_layer]
            next_layer += 1
        u = sorted(running)
        lam = dirichlet_lambda(dirichlet_problem(group, step, u), tol=eig_tol).lam
        prod = _product_set(group, u)
        pout = stay_probability_curve(group, step, prod, n_max)
        for n in range(0, n_max + 1):
            rows.append(BoundRow(
                n, float(pout[n]), (32 * n + 1) * lam,
                extra={"radius": r, "lambda": lam, "set_size": len(u)},
            ))
    return BoundReport(
        "max-tail-bound",
        {"group": group.describe(), "radii": radii, "n_max": n_max},
        rows,
    )


class EigenDecayModel:
    """Non-increasing bound r -> f(r) built from computed ball eigenvalues.

    The max of (a) step values at integer radii on the computed range and
    (b) a power tail lam_last * (1 + 1/(r_max+1)) * ((r+1)/(r_max+1))^-theta.
    The headroom factor keeps the tail above the next-order correction of
    interval-type spectra (checked for Z in the tests); beyond the computed
    grid the tail is an extrapolation and the doubling certificate is only
    measured on the grid (use :func:`doubling_constant`).
    """

    def __init__(self, lambdas, theta: float):
        lam = list(lambdas)
        if any(b > a * (1 + 1e-12) for a, b in zip(lam, lam[1:])):
            raise HypothesisViolationError("ball eigenvalues not non-increasing")
        self.lambdas = lam
        self.r_max = len(lam) - 1
        self.theta = theta
        self._tail_c = lam[-1] * (1.0 + 1.0 / (self.r_max + 1.0))

    def _tail(self, r: float) -> float:
        return self._tail_c * ((r + 1.0) / (self.r_max + 1.0)) ** (-self.theta)

    def value(self, r: float) -> float:
        if r < 0:
            raise UsageError("radius must be >= 0")
        if r <= self.r_max:
            return max(self.lambdas[int(math.floor(r))], self._tail(r))
        return self._tail(r)

    def __call__(self, r):
        return self.value(r)


def eigen_decay_model(group: Group, step: StepMeasure, r_max: int,
                      theta: float, eig_cap: int = 20_000,
                      tol: float = 1e-10) -> EigenDecayModel:
    cache = ball(group, r_max, cap=eig_cap * 4)
    lams = []
    running: set = set()
    for r in range(r_max + 1):
        running |= cache.layers[r]
        if len(running) > eig_cap:
            break
        u = sorted(running)
        lams.append(dirichlet_lambda(dirichlet_problem(group, step, u), tol=tol).lam)
    return EigenDecayModel(lams, theta)


def doubling_constant(f, theta: float, r_grid) -> float:
    """Smallest C0 with f(r)/f(s) <= C0 (r/s)^-theta on the grid pairs."""
    rs = sorted(r_grid)
    c0 = 1.0
    for i, s in enumerate(rs):
        fs = f(s)
        for r in rs[i:]:
            c0 = max(c0, (f(r) / fs) * (r / s) ** theta)
    return c0


def max_displacement_bound(f, c0: float, theta: float, alpha: float, n: int,
                           cert_grid=None) -> tuple[float, float]:
    """Time-n displacement-moment bound (scale, value).

    Needs alpha in (0, theta) and the doubling certificate (c0, theta).
    The scale is inf{r > 0 : f(r) < 1/n}; the bound constant follows the
    explicit proof chain: C = e^alpha + c0 e^(2 alpha)/(1 - e^-(theta-alpha)).
    """
    if not 0 < alpha < theta:
        raise TheoremInapplicableError(
            f"alpha={alpha} outside (0, theta={theta})"
        )
    if cert_grid is not None:
        measured = doubling_constant(f, theta, cert_grid)
        if measured > c0 * (1 + 1e-9):
            raise HypothesisViolationError(
                f"doubling constant {measured:.4g} exceeds certified {c0}"
            )
    target = 1.0 / n
    lo, hi = 1e-9, 1.0
    if f(lo) < target:
        raise HypothesisViolationError("f already below 1/n at r -> 0")
    for _ in range(400):
        if f(hi) < target:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise OutOfRangeError("f never drops below 1/n")
    while hi - lo > 1e-9 * hi:
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            hi = mid
        else:
            lo = mid
    rho = hi
    const = math.exp(alpha) + c0 * math.exp(2 * alpha) / (1 - math.exp(-(theta - alpha)))
    return rho, const * rho**alpha


def comparison_profile_bound(eta: StepMeasure, n_generators: int, r: float,
                             C: float, cache) -> dict:
    """Profile bound for eta at volume e^r by comparison with a uniform
    generating measure whose profile satisfies Lambda(e^r) <= C / r^2.

    Returns the truncated-moment term, the tail term and their sum; the
    caller supplies word lengths through a ball cache covering the support.
    """
    moment = 0.0
    tail = 0.0
    for g, p in eta.probs.items():
        length = cache.word_length(g)
        if length <= r:
            moment += length**2 * p
        if length >= r:
            tail += p
    moment_term = C * n_generators * moment / r**2
    return {
        "r": r,
        "volume": math.exp(r) if r < 700 else math.inf,
        "moment_term": moment_term,
        "tail_term": tail,
        "bound": moment_term + tail,
    }


def rho_tilde(profile: ProfileCurve, n: float) -> float:
    """inf{x : profile upper bound at volume e^x is <= 1/n}."""
    target = 1.0 / n
    for p in profile.points:
        if p.lam <= target:
            return math.log(p.volume)
    raise OutOfRangeError(
        f"profile never reaches {target:.3e}; extend the candidate ladder"
    )


def entropy_bound_report(
    ns,
    entropies,
    gamma: DecayModel,
    beta: float,
    profile: ProfileCurve | None = None,
    ratio_band: float = 4.0,
) -> BoundReport:
    """Measured (or reference) entropy against the decay-driven scale.

    Rows carry H(n), the scale rho(n), optionally the profile form
    rho~(n), and the ratio H(n)/(rho(n)+1).  The verdict checks that the
    ratio stays within a factor band over the grid (constants are not
    specified by the theory, so boundedness is the checkable claim).
    """
    if not 0 < beta < 0.5:
        raise TheoremInapplicableError(f"beta={beta} outside (0, 1/2)")
    gamma.check_power_hypothesis(beta, ns)
    rows = []
    ratios = []
    for n, H in zip(ns, entropies):
        rho = entropy_scale(gamma, n)
        extra = {"rho": rho}
        if profile is not None:
            extra["rho_tilde"] = rho_tilde(profile, n)
        ratio = H / (rho + 1.0)
        ratios.append(ratio)
        extra["ratio"] = ratio
        rows.append(BoundRow(n, H, math.inf, extra=extra))
    rmax, rmin = max(ratios), min(ratios)
    bounded = rmax <= ratio_band * rmin
    rep = BoundReport(
        "entropy-upper",
        {"beta": beta, "gamma": gamma.kind, "ratio_band": ratio_band},
        rows,
        notes=[f"ratio range [{rmin:.4g}, {rmax:.4g}]",
               "bounded" if bounded else "RATIO BAND EXCEEDED"],
    )
    rep.ratio_bounded = bounded
    return rep
