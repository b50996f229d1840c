"""Minimum relative entropy posteriors and time-and-state conditioning.

The posterior closest in Kullback-Leibler divergence to a prior, subject to
linear views ``A_eq p = b_eq`` and ``A_ineq p <= b_ineq``, has the form
``p_t ∝ prior_t * exp(l . v_t)``. The multipliers ``l`` minimise the convex
dual

    h(l) = log sum_t prior_t exp(l . (v_t - b))

with inequality multipliers confined to ``l <= 0``. We minimise ``h`` by a
projected Newton method on standardised constraint rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from hsfp.errors import DataError, NumericalError
from hsfp.flexprob import CrispResult, check_probabilities, crisp, exp_decay

__all__ = [
    "ViewConstraintSet",
    "EntropySolution",
    "kl_divergence",
    "dual_objective",
    "min_rel_entropy",
    "moment_views",
    "time_state_condition",
]

MAX_ITER = 1000
GRAD_TOL = 1e-10


@dataclass
class ViewConstraintSet:
    """Linear views on a probability vector of length ``n``.

    Rows of ``a_eq`` / ``a_ineq`` hold per-date coefficients.
    """

    a_eq: np.ndarray
    b_eq: np.ndarray
    a_ineq: np.ndarray
    b_ineq: np.ndarray

    def __post_init__(self):
        self.a_eq = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
        self.a_ineq = np.atleast_2d(np.asarray(self.a_ineq, dtype=float))
        self.b_eq = np.atleast_1d(np.asarray(self.b_eq, dtype=float))
        self.b_ineq = np.atleast_1d(np.asarray(self.b_ineq, dtype=float))
        if self.a_eq.shape[0] != self.b_eq.size or self.a_ineq.shape[0] != self.b_ineq.size:
            raise DataError("each view row needs exactly one target")
        if self.a_eq.size and self.a_ineq.size and self.a_eq.shape[1] != self.a_ineq.shape[1]:
            raise DataError("equality and inequality rows have different lengths")

    @classmethod
    def empty(cls, n: int) -> "ViewConstraintSet":
        return cls(np.empty((0, n)), np.empty(0), np.empty((0, n)), np.empty(0))

    @classmethod
    def build(cls, n: int, eq=(), ineq=()) -> "ViewConstraintSet":
        """Assemble from lists of ``(coefficients, target)`` pairs."""
        a_eq = np.array([a for a, _ in eq], dtype=float).reshape(len(eq), n)
        a_in = np.array([a for a, _ in ineq], dtype=float).reshape(len(ineq), n)
        return cls(a_eq, [b for _, b in eq], a_in, [b for _, b in ineq])

    @property
    def n_eq(self) -> int:
        return self.b_eq.size

    @property
    def n_ineq(self) -> int:
        return self.b_ineq.size

    def check_length(self, n: int) -> None:
        for a in (self.a_eq, self.a_ineq):
            if a.shape[0] and a.shape[1] != n:
                raise DataError(f"view rows have length {a.shape[1]}, prior has {n}")


@dataclass
class EntropySolution:
    posterior: np.ndarray
    prior: np.ndarray
    kl_divergence: float
    dual_eq: np.ndarray
    dual_ineq: np.ndarray
    iterations: int
    converged: bool
    flags: list[str] = field(default_factory=list)
    crisp: CrispResult | None = None

    @property
    def dual_variables(self) -> np.ndarray:
        return np.concatenate([self.dual_eq, self.dual_ineq])

    def summary(self) -> dict:
        return {
            "kl_divergence": float(self.kl_divergence),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "dual_eq": [float(x) for x in self.dual_eq],
            "dual_ineq": [float(x) for x in self.dual_ineq],
            "flags": list(self.flags),
        }


def kl_divergence(p, q) -> float:
    """``sum p log(p / q)`` with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    m = p > 0
    if np.any(q[m] <= 0):
        return float("inf")
    return float(np.sum(p[m] * (np.log(p[m]) - np.log(q[m]))))


def dual_objective(l, log_prior: np.ndarray, g: np.ndarray):
    """Value, gradient and Hessian of ``h(l)`` with ``g[t, j] = v_{j,t} - b_j``.

    Also returns the tilted probabilities ``p(l)``.
    """
    x = log_prior + g @ l
    lse = logsumexp(x)
    p = np.exp(x - lse)
    grad = g.T @ p
    centred = g - grad
    hess = centred.T @ (centred * p[:, None])
    return lse, grad, hess, p


def _projected_grad(grad: np.ndarray, l: np.ndarray, n_eq: int) -> np.ndarray:
    pg = grad.copy()
    at_bound = l[n_eq:] >= 0.0
    pg[n_eq:][at_bound] = np.maximum(grad[n_eq:][at_bound], 0.0)
    return pg


def _project(l: np.ndarray, n_eq: int) -> np.ndarray:
    out = l.copy()
    out[n_eq:] = np.minimum(out[n_eq:], 0.0)
    return out


def _newton(log_prior, g, n_eq, max_iter=MAX_ITER, tol=GRAD_TOL):
    k = g.shape[1]
    l = np.zeros(k)
    h, grad, hess, p = dual_objective(l, log_prior, g)
    pg = _projected_grad(grad, l, n_eq)
    for it in range(max_iter + 1):
        res = float(np.max(np.abs(pg))) if k else 0.0
        if res < tol:
            return l, p, it, True, res
        if it == max_iter:
            break
        # variables pinned at l_i = 0 whose descent direction points outside the orthant
        pinned = np.zeros(k, dtype=bool)
        pinned[n_eq:] = (l[n_eq:] >= -1e-14) & (grad[n_eq:] < 0.0)
        free = ~pinned
        d = np.zeros(k)
        if free.any():
            hf = hess[np.ix_(free, free)]
            damp = 1e-12 * max(np.trace(hf) / hf.shape[0], 1e-300)
            try:
                d[free] = np.linalg.solve(hf + damp * np.eye(hf.shape[0]), -grad[free])
            except np.linalg.LinAlgError:
                d[free] = np.linalg.lstsq(hf, -grad[free], rcond=None)[0]
        if not np.all(np.isfinite(d)) or grad @ d >= 0:
            d = -pg
        t = 1.0
        accepted = False
        for _ in range(60):
            l_new = _project(l + t * d, n_eq)
            h_new, grad_new, hess_new, p_new = dual_objective(l_new, log_prior, g)
            pg_new = _projected_grad(grad_new, l_new, n_eq)
            armijo = h_new <= h + 1e-4 * grad @ (l_new - l)
            # near the optimum h is flat to rounding; fall back on gradient decrease
            if armijo or np.max(np.abs(pg_new)) < 0.5 * res:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        l, h, grad, hess, p, pg = l_new, h_new, grad_new, hess_new, p_new, pg_new
    return l, p, it, False, float(np.max(np.abs(pg)))


def _restrict_boundary(rows, targets, n_eq, support, flags):
    """Shrink the support when a target sits exactly at the edge of its row's range.

    Such views force all mass onto the extremal dates and the dual multiplier
    diverges, so these rows are met by support restriction instead. Returns
    the new support and a mask of rows handled this way.
    """
    at_edge = np.zeros(len(targets), dtype=bool)
    changed = True
    while changed:
        changed = False
        for j in np.flatnonzero(~at_edge):
            is_eq = j < n_eq
            a = rows[j, support]
            lo, hi = a.min(), a.max()
            tol = 1e-12 * (1.0 + abs(lo) + abs(hi))
            b = targets[j]
            if b < lo - tol or (is_eq and b > hi + tol):
                raise DataError(
                    f"infeasible {'equality' if is_eq else 'inequality'} view row {j}: "
                    f"target {b} outside attainable range [{lo}, {hi}]"
                )
            if hi - lo <= tol:
                continue
            if abs(b - lo) <= tol:
                edge = lo
            elif is_eq and abs(b - hi) <= tol:
                edge = hi
            else:
                continue
            keep = support.copy()
            keep[support] = np.abs(a - edge) <= tol
            support = keep
            at_edge[j] = True
            flags.append(f"row-{j}-at-boundary")
            changed = True
    return support, at_edge


def min_rel_entropy(prior, views: ViewConstraintSet | None = None,
                    max_iter: int = MAX_ITER, tol: float = GRAD_TOL) -> EntropySolution:
    """Posterior minimising KL divergence to ``prior`` subject to ``views``.

    Dates with zero prior weight stay at zero. Row indices in flags and errors
    count equality rows first, then inequality rows. Raises ``DataError`` for
    views that cannot be met and ``NumericalError`` if Newton stalls.
    """
    prior = check_probabilities(prior, "prior")
    n = prior.size
    views = views if views is not None else ViewConstraintSet.empty(n)
    views.check_length(n)
    flags: list[str] = []
    n_eq = views.n_eq
    a_all = np.vstack([views.a_eq.reshape(n_eq, n), views.a_ineq.reshape(views.n_ineq, n)])
    b_all = np.concatenate([views.b_eq, views.b_ineq])

    support, at_edge = _restrict_boundary(a_all, b_all, n_eq, prior > 0, flags)

    # standardise each row over the support; constant rows drop out of the dual
    active = ~at_edge
    rows = a_all[:, support].copy()
    targets = b_all.copy()
    scale = np.ones(len(b_all))
    for j in np.flatnonzero(active):
        mean, std = rows[j].mean(), rows[j].std()
        if std <= 1e-14 * (1.0 + abs(mean)):
            gap = mean - targets[j]
            ok = abs(gap) if j < n_eq else gap
            if ok > 1e-12 * (1.0 + abs(mean)):
                raise DataError(f"infeasible view row {j}: constant coefficient {mean} vs target {targets[j]}")
            active[j] = False
            flags.append(f"row-{j}-constant")
            continue
        rows[j] = (rows[j] - mean) / std
        targets[j] = (targets[j] - mean) / std
        scale[j] = std

    q = prior[support] / prior[support].sum()
    act = np.flatnonzero(active)
    g = (rows[act] - targets[act, None]).T
    l_std, p_sub, iters, converged, res = _newton(np.log(q), g, int(np.sum(act < n_eq)), max_iter, tol)
    if not converged:
        raise NumericalError(f"entropy dual did not converge in {iters} iterations; last residual {res:.3e}")

    posterior = np.zeros(n)
    posterior[support] = p_sub
    duals = np.zeros(len(b_all))
    duals[act] = l_std / scale[act]
    duals[at_edge] = np.nan

    sol = EntropySolution(
        posterior=posterior,
        prior=prior,
        kl_divergence=kl_divergence(posterior, prior),
        dual_eq=duals[:n_eq],
        dual_ineq=duals[n_eq:],
        iterations=iters,
        converged=True,
        flags=flags,
    )
    _verify(sol, a_all, b_all, n_eq)
    return sol


def _verify(sol: EntropySolution, a_all, b_all, n_eq: int, tol: float = 1e-8) -> None:
    resid = a_all @ sol.posterior - b_all
    for j, r in enumerate(resid):
        bad = abs(r) if j < n_eq else r
        if bad > tol * max(1.0, abs(b_all[j])):
            kind = "equality" if j < n_eq else "inequality"
            raise NumericalError(f"{kind} view row {j} violated by {r:.3e} after convergence")


def moment_views(z, p_crisp) -> tuple[ViewConstraintSet, float, float]:
    """Views matching the crisp mean (equality) and second moment (upper bound).

    Returns the view set with the crisp mean and standard deviation.
    """
    z = np.asarray(z, dtype=float)
    mu = float(z @ p_crisp)
    var = max(float((z * z) @ p_crisp) - mu * mu, 0.0)
    views = ViewConstraintSet.build(z.size, eq=[(z, mu)], ineq=[(z * z, mu * mu + var)])
    return views, mu, float(np.sqrt(var))


def _two_point_posterior(z, prior, band_values, mu):
    """KL-optimal posterior when the band holds at most two distinct values.

    No other sample value lies between them, so matching the mean while not
    exceeding the band variance forces all mass onto the band values.
    """
    post = np.zeros_like(prior)
    if band_values.size == 1:
        m = z == band_values[0]
        post[m] = prior[m] / prior[m].sum()
        return post
    lo, hi = band_values
    w_hi = (mu - lo) / (hi - lo)
    for v, w in ((lo, 1.0 - w_hi), (hi, w_hi)):
        m = z == v
        post[m] = w * prior[m] / prior[m].sum()
    return post


def time_state_condition(z, target: float, alpha: float, prior_hl: float) -> EntropySolution:
    """Exponential-decay prior tilted to match crisp state-conditioned moments."""
    z = np.asarray(z, dtype=float)
    cr = crisp(z, target, alpha)
    views, mu, sigma = moment_views(z, cr.p)
    prior = exp_decay(z.size, prior_hl)
    band = np.unique(z[cr.p > 0])
    if band.size <= 2:
        post = _two_point_posterior(z, prior, band, mu)
        return EntropySolution(
            posterior=post,
            prior=prior,
            kl_divergence=kl_divergence(post, prior),
            dual_eq=np.array([np.nan]),
            dual_ineq=np.array([np.nan]),
            iterations=0,
            converged=True,
            flags=["degenerate-band"],
            crisp=cr,
        )
    sol = min_rel_entropy(prior, views)
    sol.crisp = cr
    return sol
