"""Dirichlet eigenvalues of killed walks, spectral-profile upper bounds
from candidate set families, and the implicit inversion that turns a
profile into a return-probability upper envelope.

The true profile (infimum over all sets) is not computable; every curve
produced here is an upper bound from a named candidate family and carries
that family tag through to serialized output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import (
    BoundVacuousError,
    ConvergenceError,
    OutOfRangeError,
    UsageError,
)
from .groups import Group, Lamplighter, ball
from .walk import StepMeasure

DENSE_THRESHOLD = 2000
ITER_CAP = 10_000

__all__ = [
    "DirichletProblem",
    "SpectralResult",
    "ProfilePoint",
    "ProfileCurve",
    "dirichlet_problem",
    "dirichlet_lambda",
    "dirichlet_lambda_set",
    "rayleigh_quotient",
    "profile_upper",
    "rectangle_rayleigh",
    "coulhon_psi",
    "return_upper_from_profile",
    "profile_point_from_return",
    "test_sets",
]


@dataclass
class DirichletProblem:
    """Finite set Omega with the restricted kernel K(x,y) = mu(x^-1 y)."""

    omega: list
    kernel: sp.csr_matrix

    @property
    def size(self):
        return len(self.omega)


def dirichlet_problem(group: Group, step: StepMeasure, omega) -> DirichletProblem:
    """Build the killed-walk kernel on ``omega`` (order is canonicalized)."""
    group.check_same(step.group)
    om = sorted(omega)
    if not om:
        raise UsageError("need a nonempty set")
    index = {g: i for i, g in enumerate(om)}
    rows, cols, vals = [], [], []
    mul = group.multiply
    for i, g in enumerate(om):
        for s, p in step.probs.items():
            j = index.get(mul(g, s))
            if j is not None:
                rows.append(i)
                cols.append(j)
                vals.append(p)
    kernel = sp.csr_matrix((vals, (rows, cols)), shape=(len(om), len(om)))
    return DirichletProblem(om, kernel)


@dataclass
class SpectralResult:
    lam: float
    residual: float
    size: int
    method: str
    vector: np.ndarray | None = None


def rayleigh_quotient(kernel: sp.csr_matrix, f: np.ndarray) -> float:
    """Dirichlet energy over squared norm for a vector supported on Omega."""
    nrm2 = float(f @ f)
    return float(f @ f - f @ (kernel @ f)) / nrm2


def dirichlet_lambda(
    prob: DirichletProblem,
    tol: float = 1e-10,
    dense_threshold: int = DENSE_THRESHOLD,
    max_iter: int = ITER_CAP,
) -> SpectralResult:
    """Smallest eigenvalue of I - K: dense solver up to the threshold,
    shifted inverse power iteration (shift 0) above it."""
    n = prob.size
    K = prob.kernel
    if n == 1:
        lam = 1.0 - float(K[0, 0])
        return SpectralResult(lam, 0.0, 1, "dense", np.ones(1))
    A = sp.identity(n, format="csr") - K
    if n <= dense_threshold:
        w, v = scipy.linalg.eigh(A.toarray(), subset_by_index=[0, 0])
        lam = float(w[0])
        vec = v[:, 0]
        res = float(np.linalg.norm(A @ vec - lam * vec))
        return SpectralResult(lam, res, n, "dense", vec)
    lu = spla.splu(A.tocsc())
    x = np.ones(n) / math.sqrt(n)
    lam, res = None, None
    for _ in range(max_iter):
        y = lu.solve(x)
        y /= np.linalg.norm(y)
        lam = float(y @ (A @ y))
        res = float(np.linalg.norm(A @ y - lam * y))
        x = y
        if res <= tol:
            return SpectralResult(lam, res, n, "iterative", x)
    raise ConvergenceError(
        f"inverse power iteration: residual {res:.3e} > {tol:.1e} "
        f"after {max_iter} iterations",
        best=SpectralResult(lam, res, n, "iterative", x),
    )


def dirichlet_lambda_set(group, step, omega, **kw) -> SpectralResult:
    return dirichlet_lambda(dirichlet_problem(group, step, omega), **kw)


@dataclass
class ProfilePoint:
    volume: float
    lam: float
    descriptor: str
    method: str
    set_elements: list | None = None


@dataclass
class ProfileCurve:
    """Upper bound on the spectral profile from one candidate family."""

    family: str
    points: list = field(default_factory=list)

    def cleaned(self) -> "ProfileCurve":
        """Lower envelope: sorted by volume, lambda non-increasing."""
        pts = sorted(self.points, key=lambda p: (p.volume, p.lam))
        out, best = [], math.inf
        for p in pts:
            if p.lam < best:
                best = p.lam
                out.append(p)
        return ProfileCurve(self.family, out)

    def value(self, v: float) -> float:
        """Step-function upper bound at volume v (constant beyond range)."""
        pts = self.points
        if not pts:
            raise UsageError("empty profile")
        best = None
        for p in pts:
            if p.volume <= v:
                best = p.lam
            else:
                break
        if best is None:
            # below the smallest computed volume nothing smaller is known
            return pts[0].lam if v >= pts[0].volume else 2.0
        return best

    def breakpoints(self):
        return [(p.volume, p.lam) for p in self.points]

    def rows(self):
        for p in self.points:
            yield {
                "volume": p.volume,
                "lambda_upper": p.lam,
                "family": self.family,
                "set_descriptor": p.descriptor,
                "method": p.method,
            }


def _ball_ladder(group, step, v_max, eig_cap, tol, keep_sets):
    pts = []
    ident = group.identity()
    mu_id = step.probs.get(ident, 0.0)
    pts.append(ProfilePoint(1, 1.0 - mu_id, "singleton", "exact",
                            [ident] if keep_sets else None))
    r = 0
    cache = None
    while True:
        r += 1
        cache = ball(group, r, cap=max(4 * eig_cap, 100_000))
        vol = len(cache)
        if vol > v_max:
            break
        if vol > eig_cap:
            break
        omega = list(cache.index.keys())
        res = dirichlet_lambda(dirichlet_problem(group, step, omega), tol=tol)
        pts.append(ProfilePoint(vol, res.lam, f"ball(r={r})", res.method,
                                omega if keep_sets else None))
        if vol == len(cache.index) and not cache.layers[-1]:
            break  # finite group exhausted
    return pts


def rectangle_rayleigh(group: Lamplighter, eta: dict, nu: dict,
                       r: int, h: int | None):
    """Certified Rayleigh upper bound for lamplighter rectangles.

    The set is {positions in [-r, r], lamp support in [-r, r], values in
    [-h, h]} (h=None: all of a finite lamp group).  The test function is a
    product of discrete cosine tents, so every sum below is finite and the
    quotient is an exact upper bound for the switch-walk-switch measure
    eta * nu * eta.  Validated against the dense eigensolver on small sets.
    """
    if group.d != 1:
        raise UsageError("rectangle family is defined over a line base")
    T = np.cos(np.pi * np.arange(-r, r + 1) / (2 * r + 2))
    if h is None:
        if group.m is None:
            raise UsageError("Z lamps need a finite value box h")
        vals = np.arange(group.m)
        S = np.ones(group.m)
        Sstar = np.zeros(group.m)
        for z, p in eta.items():
            Sstar += p * S[(vals + z) % group.m]
        n_lamp_states = group.m
    else:
        vals = np.arange(-h, h + 1)
        S = np.cos(np.pi * vals / (2 * h + 2))
        Sstar = np.zeros(len(vals))
        for z, p in eta.items():
            shifted = vals + z
            ok = np.abs(shifted) <= h
            Sstar[ok] += p * S[shifted[ok] + h]
        n_lamp_states = 2 * h + 1
    A = float(S @ S)
    B = float(S @ Sstar)
    C = float(Sstar @ Sstar)
    T2 = float(T @ T)
    cross = 0.0
    lazy = 0.0
    for delta, p in nu.items():
        if delta == 0:
            lazy += p
            continue
        d = abs(int(delta))
        if d <= 2 * r:
            cross += p * float(T[:-d] @ T[d:]) if d else 0.0
    lam = 1.0 - ((B / A) ** 2 * cross / T2 + lazy * C / A)
    log_volume = math.log(2 * r + 1) + (2 * r + 1) * math.log(n_lamp_states)
    return lam, log_volume


def _rectangle_ladder(group, eta, nu, v_max, r_max=200):
    pts = []
    log_vmax = math.log(v_max)
    for r in range(1, r_max + 1):
        if group.m is not None:
            lam, logv = rectangle_rayleigh(group, eta, nu, r, None)
            if logv > log_vmax:
                break
            pts.append(ProfilePoint(math.exp(logv), lam,
                                    f"rect(r={r},lamps=all)", "rayleigh"))
        else:
            lam, logv = rectangle_rayleigh(group, eta, nu, r, r)
            if logv > log_vmax:
                break
            pts.append(ProfilePoint(math.exp(logv), lam,
                                    f"rect(r={r},h={r})", "rayleigh"))
    return pts


def profile_upper(
    group: Group,
    step: StepMeasure,
    family: str,
    v_max: float,
    tol: float = 1e-10,
    eig_cap: int = 20_000,
    sws: tuple | None = None,
    keep_sets: bool = False,
) -> ProfileCurve:
    """Candidate-family profile upper bound; lower envelope of the ladder."""
    if family == "balls":
        pts = _ball_ladder(group, step, v_max, eig_cap, tol, keep_sets)
    elif family == "rectangles":
        if not isinstance(group, Lamplighter):
            raise UsageError("rectangle family needs a lamplighter group")
        if sws is None:
            raise UsageError(
                "rectangle family needs the switch-walk-switch pair (eta, nu)"
            )
        eta, nu = sws
        pts = _rectangle_ladder(group, eta, nu, v_max)
    else:
        raise UsageError(f"unknown candidate family {family!r}")
    return ProfileCurve(family, pts).cleaned()


def _psi_from_breakpoints(breakpoints, t, log_v_cap):
    """Exact inversion for a non-increasing step profile.

    t = integral_{s=1}^{V} ds / (2 s Lam(4s)); on u = ln s the integrand is
    piecewise constant with breaks where 4 e^u crosses a profile volume.
    """
    if t < 0:
        raise UsageError("t must be >= 0")
    if t == 0:
        return 1.0
    vols = [v for v, _ in breakpoints]
    lams = [l for _, l in breakpoints]

    def lam_at(v):
        out = lams[0] if v >= vols[0] else 2.0
        for vv, ll in zip(vols, lams):
            if vv <= v:
                out = ll
            else:
                break
        return out

    breaks = sorted({math.log(v / 4.0) for v in vols if v > 4.0})
    u, acc = 0.0, 0.0
    for ub in breaks + [log_v_cap]:
        if ub <= u:
            continue
        lam = lam_at(4.0 * math.exp(u) * (1 + 1e-15))
        if lam <= 0:
            raise BoundVacuousError("profile hit zero before reaching t")
        seg = (ub - u) / (2.0 * lam)
        if acc + seg >= t:
            u_star = u + (t - acc) * 2.0 * lam
            return math.exp(-u_star)
        acc += seg
        u = ub
    raise BoundVacuousError(
        f"inversion exceeded the volume cap e^{log_v_cap:.1f} (bound vacuous)"
    )


def coulhon_psi(profile, t: float, v_cap: float = 1e60,
                quad_rel_tol: float = 1e-10) -> float:
    """psi(t) in (0,1] solving t = integral_1^{1/psi} ds/(2 s Lam(4s)).

    ``profile`` is a ProfileCurve (exact piecewise inversion) or a positive
    non-increasing callable (adaptive quadrature on u = ln s plus monotone
    root bracketing).  Raises BoundVacuousError past ``v_cap``.
    """
    log_cap = math.log(v_cap)
    if isinstance(profile, ProfileCurve):
        return _psi_from_breakpoints(profile.breakpoints(), t, log_cap)
    if t < 0:
        raise UsageError("t must be >= 0")
    if t == 0:
        return 1.0

    def integrand(u):
        lam = profile(4.0 * math.exp(u))
        if lam <= 0:
            raise BoundVacuousError("profile not positive")
        return 1.0 / (2.0 * lam)

    def F(U):
        val, _ = quad(integrand, 0.0, U, epsrel=quad_rel_tol, limit=400)
        return val

    hi = 1.0
    while F(hi) < t:
        hi *= 2.0
        if hi > log_cap:
            raise BoundVacuousError(
                f"inversion exceeded the volume cap e^{log_cap:.1f} (bound vacuous)"
            )
    u_star = brentq(lambda U: F(U) - t, 0.0, hi, xtol=1e-14, rtol=8.9e-16)
    return math.exp(-u_star)


def return_upper_from_profile(profile, n: int, **kw) -> float:
    """Upper envelope 2 psi(2n) for the return probability after 2n+2 steps."""
    return 2.0 * coulhon_psi(profile, 2.0 * n, **kw)


def profile_point_from_return(gamma, n: int) -> tuple[float, float]:
    """Certified profile point from a return-probability decay rate.

    Given gamma increasing and unbounded with mu^(2n)(id) >= exp(-gamma(n)),
    the profile at volume 8 e^gamma(n) is at most (gamma(n) + ln 8)/(2n).
    Returns (volume, bound).
    """
    g = gamma(n) if callable(gamma) else gamma.value(n)
    return 8.0 * math.exp(g), (g + math.log(8.0)) / (2.0 * n)


def test_sets(profile: ProfileCurve, k: int) -> ProfilePoint:
    """Family member of volume <= ceil(e^(e^k)) with the smallest lambda."""
    log_cap = math.exp(k)
    best = None
    for p in profile.points:
        if log_cap < 700:
            admissible = p.volume <= math.ceil(math.exp(log_cap))
        else:
            admissible = math.log(p.volume) <= log_cap
        if admissible and (best is None or p.lam < best.lam):
            best = p
    if best is None:
        raise OutOfRangeError(
            f"no candidate set of volume <= e^(e^{k}) in this family"
        )
    return best
