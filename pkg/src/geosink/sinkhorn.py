"""The k-scaled Sinkhorn iteration on potentials, generic over kernel backends.

Everything here works on a pair of potential vectors (u on the source
support, v on the target support) through a backend object that knows how
to apply the kernel. The backend contract is structural; any object with

    k, p, q, log_p, log_q          (floats / weight vectors / their logs)
    softmin_to_target(u) -> v      k^-1 log sum_i e^{-k(c_ij + u_i)} p_i
    softmin_to_source(v) -> u      k^-1 log sum_j e^{-k(c_ij + v_j)} q_j
    cost_row(i) -> c(x_i, .)
    describe() -> dict

works: the dense matrix class below, the torus lattice backends, and the
sphere backends all satisfy it.

One step maps u_m to u_{m+1} = u[v_{m+1}] with v_{m+1} = v[u_m]. Because
the u-update runs last, the source marginal of the induced plan is exact
after every full step; the target marginal error is the quantity that
decays along the run, and it is what the stopping rule watches. Energy
bookkeeping uses F(u) = <p, u> + <q, v[u]>, which never increases.

Iterates are kept raw during the run (the dynamic-in-m comparisons need
unnormalized values); normalization to u(base) = 0 happens at readout,
with the compensating shift applied to v so the plan is untouched.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "NumericalAbortError",
    "Potential",
    "TraceRecord",
    "SinkhornState",
    "DenseApplicator",
    "initial_state",
    "softmin_update",
    "sinkhorn_step",
    "run_until",
    "marginal_errors",
    "rho_density",
    "energy_diagnostics",
    "plan_entry",
    "plan_row",
    "entropic_cost",
    "hilbert_distance",
    "normalized_potentials",
]

STAGNATION_EPS = 1e-15
STAGNATION_RUNS = 5


class NumericalAbortError(RuntimeError):
    """Iteration produced a non-finite value; carries a diagnostic dict."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class Potential:
    """A potential vector tied to a support, with a distinguished base point."""

    values: np.ndarray
    k: float
    base_index: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def normalized(self):
        """Same potential shifted so values[base_index] = 0."""
        return Potential(
            self.values - self.values[self.base_index], self.k, self.base_index
        )

    def copy(self):
        return Potential(self.values.copy(), self.k, self.base_index)


@dataclass
class TraceRecord:
    m: int
    F: float
    I_mu: float
    e_row: float
    e_col: float
    sup_change: float
    wall_time_ms: float


@dataclass
class SinkhornState:
    k: float
    m: int
    u: Potential
    v: Potential
    trace: list = field(default_factory=list)
    stop_reason: str | None = None
    cost_warning: bool = False


def initial_state(kern, u0=None, base_index=0):
    """Fresh state at m = 0; u0 defaults to zero (the standard start)."""
    n_x, n_y = len(kern.p), len(kern.q)
    u = np.zeros(n_x) if u0 is None else np.asarray(u0, dtype=float).copy()
    if u.shape != (n_x,):
        raise ValueError(f"u0 must have shape ({n_x},)")
    if not np.all(np.isfinite(u)):
        raise ValueError("u0 must be finite")
    return SinkhornState(
        k=float(kern.k),
        m=0,
        u=Potential(u, kern.k, base_index),
        v=Potential(np.zeros(n_y), kern.k, base_index),
    )


def softmin_update(pot, direction, kern):
    """One softmin application, either source-to-target or target-to-source.

    direction "x_to_y" maps a potential on X to v(y) =
    k^-1 log sum_i e^{-k(c(x_i,y)+u(x_i))} p_i; "y_to_x" is symmetric.
    """
    values = pot.values if isinstance(pot, Potential) else np.asarray(pot, float)
    if not np.all(np.isfinite(values)):
        raise ValueError("potential contains non-finite entries")
    if direction == "x_to_y":
        out = kern.softmin_to_target(values)
    elif direction == "y_to_x":
        out = kern.softmin_to_source(values)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return Potential(out, kern.k, getattr(pot, "base_index", 0))


def _check_finite(arr, stage, m):
    if not np.all(np.isfinite(arr)):
        bad = int(np.count_nonzero(~np.isfinite(arr)))
        raise NumericalAbortError(
            f"non-finite values after {stage} at iteration {m}",
            {"stage": stage, "m": m, "bad_entries": bad},
        )


def _traced_advance(u_values, v_next, kern, m_next, t0):
    """Core of one step given v_{m+1}; returns (u_next, w, record).

    w = v[u_{m+1}] is the following step's v-update, returned so callers
    can reuse it. The target-marginal error comes from comparing w with
    v_{m+1}; the source marginal is exact by construction (the u-update
    is the final softmin of the step), so e_row is recorded as 0.
    """
    u_next = kern.softmin_to_source(v_next)
    _check_finite(u_next, "u-update", m_next)
    w = kern.softmin_to_target(u_next)
    _check_finite(w, "trace softmin", m_next)
    e_col = float(np.abs(kern.q * np.expm1(kern.k * (w - v_next))).sum())
    I_mu = float(kern.p @ u_next)
    F = I_mu + float(kern.q @ w)
    record = TraceRecord(
        m=m_next,
        F=F,
        I_mu=I_mu,
        e_row=0.0,
        e_col=e_col,
        sup_change=float(np.max(np.abs(u_next - u_values))),
        wall_time_ms=(time.perf_counter() - t0) * 1e3,
    )
    return u_next, w, record


def sinkhorn_step(state, kern):
    """Advance one full step: v_{m+1} = v[u_m], then u_{m+1} = u[v_{m+1}]."""
    t0 = time.perf_counter()
    v_next = kern.softmin_to_target(state.u.values)
    _check_finite(v_next, "v-update", state.m + 1)
    u_next, _, record = _traced_advance(
        state.u.values, v_next, kern, state.m + 1, t0
    )
    return SinkhornState(
        k=state.k,
        m=state.m + 1,
        u=Potential(u_next, state.k, state.u.base_index),
        v=Potential(v_next, state.k, state.v.base_index),
        trace=state.trace + [record],
        stop_reason=state.stop_reason,
        cost_warning=state.cost_warning,
    )


def run_until(state, kern, tol, A=2.0, m_max=None, trace=True):
    """Iterate until the target-marginal L1 error drops to tol.

    Stops at the first step with error <= tol, at m_max (default the
    schedule ceil(A k ln k)), or when the sup-change stays below 1e-15
    for five consecutive steps ("stagnated"). Pass tol=None to run a
    fixed number of steps regardless of the error. The returned state
    records the reason under .stop_reason.

    Each step costs two kernel applications plus one shared with the
    trace bookkeeping: the trailing softmin that measures the marginal
    error is exactly the next step's v-update, so it is reused.
    """
    if m_max is None:
        k = float(kern.k)
        m_max = max(1, int(np.ceil(A * k * np.log(k))))
    if m_max < 1:
        raise ValueError(f"m_max must be >= 1, got {m_max}")
    if state.m >= m_max:
        return state

    u = state.u.values.copy()
    v_cur = state.v.values
    v_next = None
    trace_list = list(state.trace)
    m = state.m
    flat = 0
    reason = "m_max"
    while m < m_max:
        t0 = time.perf_counter()
        if v_next is None:
            v_next = kern.softmin_to_target(u)
            _check_finite(v_next, "v-update", m + 1)
        u_next, w, record = _traced_advance(u, v_next, kern, m + 1, t0)
        m += 1
        if trace:
            trace_list.append(record)
        v_cur = v_next
        u, v_next = u_next, w
        if tol is not None and record.e_col <= tol:
            reason = "tol"
            break
        flat = flat + 1 if record.sup_change < STAGNATION_EPS else 0
        if flat >= STAGNATION_RUNS:
            reason = "stagnated"
            break

    return SinkhornState(
        k=state.k,
        m=m,
        u=Potential(u, state.k, state.u.base_index),
        v=Potential(v_cur, state.k, state.v.base_index),
        trace=trace_list,
        stop_reason=reason,
        cost_warning=state.cost_warning,
    )


def marginal_errors(state, kern):
    """L1 distances of the plan marginals from (p, q), via two softmins.

    Never materializes the plan: the row sums of e^{-k(u+c+v)} p q^T are
    p_i e^{k(u[v]_i - u_i)} and symmetrically for columns.
    """
    u, v = state.u.values, state.v.values
    u_star = kern.softmin_to_source(v)
    v_star = kern.softmin_to_target(u)
    e_row = float(np.abs(kern.p * np.expm1(kern.k * (u_star - u))).sum())
    e_col = float(np.abs(kern.q * np.expm1(kern.k * (v_star - v))).sum())
    return e_row, e_col


def rho_density(u, kern):
    """Density of the once-iterated measure against mu: rho = e^{k(S(u)-u)}.

    S(u) = u[v[u]] is the one-step map. The weighted sum <p, rho> is 1 up
    to rounding because the inner v-update makes the target marginal
    exact.
    """
    values = u.values if isinstance(u, Potential) else np.asarray(u, float)
    su = kern.softmin_to_source(kern.softmin_to_target(values))
    return np.exp(kern.k * (su - values))


def _c_transform_from_rows(u_values, kern, n_target):
    """Exact c-transform u^c(y) = max_i (-c(x_i, y) - u_i) by row sweeps."""
    out = np.full(n_target, -np.inf)
    for i in range(len(u_values)):
        np.maximum(out, -kern.cost_row(i) - u_values[i], out=out)
    return out


def energy_diagnostics(u, kern):
    """Energy record {F, I_mu, L_nu, J} at a potential u on the source.

    F = I_mu - L_nu with I_mu = <p, u> and L_nu = -<q, v[u]>; J replaces
    the softmin by the exact c-transform. The softmin never exceeds the
    exact maximum, so F <= J always, with equality in the k -> infinity
    limit. J costs a full O(N^2) sweep over cost rows; the others are
    single kernel applications.
    """
    values = u.values if isinstance(u, Potential) else np.asarray(u, float)
    v = kern.softmin_to_target(values)
    I_mu = float(kern.p @ values)
    L_nu = -float(kern.q @ v)
    uc = _c_transform_from_rows(values, kern, len(kern.q))
    J = I_mu + float(kern.q @ uc)
    return {"F": I_mu - L_nu, "I_mu": I_mu, "L_nu": L_nu, "J": J}


def plan_entry(state, i, j, kern):
    """One plan entry gamma_ij = e^{-k(c_ij + u_i + v_j)} p_i q_j."""
    c_ij = kern.cost_row(i)[j]
    expo = -state.k * (c_ij + state.u.values[i] + state.v.values[j])
    return float(np.exp(expo) * kern.p[i] * kern.q[j])


def plan_row(state, kern, i):
    """Row i of the plan, shape (N_target,)."""
    expo = -state.k * (kern.cost_row(i) + state.u.values[i] + state.v.values)
    return np.exp(expo) * kern.p[i] * kern.q


def entropic_cost(state, kern):
    """Duality closed form -(<p,u> + <q,v>) of the regularized cost.

    Valid at (approximate) fixed points. When the marginal error exceeds
    1e-6 the state's cost_warning flag is set and the value should be
    treated as indicative only.
    """
    e_row, e_col = marginal_errors(state, kern)
    if max(e_row, e_col) > 1e-6:
        state.cost_warning = True
    return -(float(kern.p @ state.u.values) + float(kern.q @ state.v.values))


def hilbert_distance(u1, u2):
    """Oscillation of the difference: sup(u1-u2) - inf(u1-u2).

    Zero exactly when the two potentials differ by a constant, which is
    the right notion of distance for objects defined modulo R.
    """
    a = u1.values if isinstance(u1, Potential) else np.asarray(u1, float)
    b = u2.values if isinstance(u2, Potential) else np.asarray(u2, float)
    if a.shape != b.shape:
        raise ValueError("potentials live on different supports")
    d = a - b
    return float(d.max() - d.min())


def normalized_potentials(state):
    """(u, v) shifted so u(base) = 0, with the plan left invariant."""
    shift = state.u.values[state.u.base_index]
    return state.u.values - shift, state.v.values + shift


class DenseApplicator:
    """Exact log-domain backend from an explicit finite cost matrix.

    The reference backend: O(N^2) per application, log-sum-exp with the
    max shift built into scipy's reduction. Also the workhorse for tiny
    hand-checkable instances.
    """

    def __init__(self, k, p, q, cost):
        cost = np.asarray(cost, dtype=float)
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if cost.shape != (p.size, q.size):
            raise ValueError("cost matrix shape must be (len(p), len(q))")
        if not np.all(np.isfinite(cost)):
            raise ValueError("cost matrix must be finite")
        self.k = float(k)
        self.p, self.q = p, q
        self.log_p, self.log_q = np.log(p), np.log(q)
        self._cost = cost

    @property
    def size(self):
        return self.p.size

    def softmin_to_target(self, u):
        s = -self.k * (self._cost + np.asarray(u, float)[:, None]) + self.log_p[:, None]
        return logsumexp(s, axis=0) / self.k

    def softmin_to_source(self, v):
        s = -self.k * (self._cost + np.asarray(v, float)[None, :]) + self.log_q[None, :]
        return logsumexp(s, axis=1) / self.k

    def cost_row(self, i):
        return self._cost[i]

    def describe(self):
        return {
            "manifold": "generic",
            "backend": "dense",
            "k": self.k,
            "points": int(self.p.size),
        }
