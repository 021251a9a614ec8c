"""Flat-torus grids, costs, and kernel application backends.

The torus is [0,1)^n with opposite faces identified. Grids are the uniform
lattices with k points per axis, and the transport cost is half the squared
periodic distance,

    c(x, y) = min over integer shifts m of |x + m - y|^2 / 2,

which decouples per axis. Kernel application (the inner loop of the scaling
iteration) comes in two flavours: an exact log-domain evaluation with
max-shifted log-sum-exp, quadratic in the number of points, and an FFT
circular convolution in the linear domain that exploits the translation
invariance of the kernel. The FFT route checks its own output and falls
back to the exact route when underflow produces nonpositive values.

Kernels: the Gaussian profile exp(-k c) for sharpness k, or the periodized
heat kernel at time t (an image sum over integer shifts), used through the
cost -log(K_t)/k so both fit the same exp(-k cost) shape.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "TorusGrid",
    "TorusKernelSpec",
    "torus_cost",
    "torus_cost_matrix",
    "torus_heat_kernel",
    "direct_softmin_apply",
    "fft_apply",
    "FFTUnderflowError",
    "TorusLatticeApplicator",
    "TorusPointsApplicator",
]

# dense (quadratic-memory) paths refuse to run past this many support points
DENSE_POINT_CAP = 4096

_LATTICE_POINT_CAP = 10_000_000


class FFTUnderflowError(FloatingPointError):
    """FFT convolution produced a nonpositive or non-finite value."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform lattice with k points per axis on the n-torus.

    Points are ordered lexicographically (C order over the per-axis index
    arrays), so index i corresponds to the multi-index unravel of i.
    """

    n: int
    k: int

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"torus dimension must be 1, 2 or 3, got {self.n}")
        if self.k < 2:
            raise ValueError(f"need at least 2 points per axis, got k={self.k}")
        if self.k ** self.n > _LATTICE_POINT_CAP:
            raise ValueError(
                f"lattice k^n = {self.k ** self.n} exceeds the "
                f"{_LATTICE_POINT_CAP} point capacity"
            )

    @property
    def size(self):
        return self.k ** self.n

    @property
    def spacing(self):
        return 1.0 / self.k

    @property
    def shape(self):
        return (self.k,) * self.n

    @property
    def axis(self):
        return np.arange(self.k) / self.k

    def points(self):
        """All lattice points, shape (k^n, n), lexicographic order."""
        axes = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack(axes, axis=-1).reshape(-1, self.n)

    def displacements(self):
        """Displacement lattice delta_j = x_j - x_0, shape (k,)*n + (n,)."""
        axes = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack(axes, axis=-1)

    def index_of(self, coords):
        """Lattice index of a point that lies exactly on the grid."""
        coords = np.atleast_1d(np.asarray(coords, dtype=float))
        idx = np.rint(coords * self.k).astype(int) % self.k
        if not np.allclose(idx / self.k, coords % 1.0, atol=1e-12):
            raise ValueError(f"{coords} is not a lattice point for k={self.k}")
        return int(np.ravel_multi_index(tuple(idx), (self.k,) * self.n))


def torus_cost(x, y):
    """Half squared periodic distance between point arrays of shape (..., n)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.abs(x - y) % 1.0
    d = np.minimum(d, 1.0 - d)
    return 0.5 * np.sum(d * d, axis=-1)


def torus_cost_matrix(xs, ys):
    """Cost matrix c(xs_i, ys_j), shape (len(xs), len(ys)). Dense; small inputs."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    return torus_cost(xs[:, None, :], ys[None, :, :])


def torus_heat_kernel(delta, t, images=3):
    """Periodized heat kernel on the n-torus by image sum.

    Evaluates (4 pi t)^(-n/2) * sum over |m|_inf <= images of
    exp(-|delta + m|^2 / (4 t)) for displacement arrays of shape (..., n).
    The cutoff default images=3 is far below 1e-12 relative truncation for
    t <= 0.05; larger times may need a larger cutoff (the spectral sum in
    the tests provides the cross-check).
    """
    if t <= 0:
        raise ValueError(f"heat time must be positive, got t={t}")
    delta = np.asarray(delta, dtype=float)
    n = delta.shape[-1]
    log_val = _log_heat_image_sum(delta, t, images, n)
    return np.exp(log_val)


def _log_heat_image_sum(delta, t, images, n):
    """log of the image sum, computed stably for small t."""
    offsets = np.array(
        list(itertools.product(range(-images, images + 1), repeat=n)), dtype=float
    )
    # shape (..., P): exponent for each image offset
    sq = np.sum((delta[..., None, :] + offsets) ** 2, axis=-1)
    exponents = -sq / (4.0 * t)
    return logsumexp(exponents, axis=-1) - 0.5 * n * np.log(4.0 * np.pi * t)


@dataclass(frozen=True)
class TorusKernelSpec:
    """Kernel choice for a torus instance.

    kind "gaussian" is exp(-k c) with c the half squared periodic distance;
    kind "heat" is the periodized heat kernel at time t (default 2/k),
    normalized by its value at zero displacement so the profile lies in
    (0, 1]. The normalization adds a constant to the effective cost, which
    the scaling iteration does not see.
    """

    kind: str
    k: int
    t: float | None = None
    images: int = 3

    def __post_init__(self):
        if self.kind not in ("gaussian", "heat"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.k < 2:
            raise ValueError(f"sharpness k must be >= 2, got {self.k}")
        if self.kind == "heat":
            t = self.heat_time
            if t <= 0:
                raise ValueError(f"heat time must be positive, got {t}")

    @property
    def heat_time(self):
        if self.kind != "heat":
            return None
        return 2.0 / self.k if self.t is None else self.t

    def log_cost_profile(self, grid):
        """-k * cost on the displacement lattice, shape (k,)*n.

        This is the log of the kernel profile; for the heat kernel the
        profile is normalized to 1 at zero displacement.
        """
        if grid.k != self.k:
            raise ValueError(
                f"grid resolution {grid.k} does not match kernel sharpness {self.k}"
            )
        deltas = grid.displacements()
        if self.kind == "gaussian":
            return -self.k * torus_cost(deltas, np.zeros(grid.n))
        log_k = _log_heat_image_sum(deltas, self.heat_time, self.images, grid.n)
        origin = (0,) * grid.n
        return log_k - log_k[origin]

    def cost_profile(self, grid):
        """Effective cost on the displacement lattice: -log(profile)/k."""
        return -self.log_cost_profile(grid) / self.k


# ---------------------------------------------------------------------------
# kernel application
# ---------------------------------------------------------------------------


def _softmin_blocked(log_profile, grid, s, k):
    """Exact log-domain apply: out_j = logsumexp_i(log_profile[j-i] + s_i) / k.

    log_profile has shape (k,)*n; s is the source log-vector (log of the
    scaled weights). Works in target blocks so memory stays O(block * N).
    """
    N = grid.size
    kk = grid.k
    n = grid.n
    idx = np.unravel_index(np.arange(N), (kk,) * n)
    idx = np.stack(idx, axis=-1)  # (N, n) integer multi-indices
    out = np.empty(N)
    block = max(1, min(N, (1 << 22) // N))
    for start in range(0, N, block):
        j = idx[start : start + block]  # (B, n)
        delta = (j[:, None, :] - idx[None, :, :]) % kk  # (B, N, n)
        rows = log_profile[tuple(delta[..., a] for a in range(n))]  # (B, N)
        out[start : start + block] = logsumexp(rows + s[None, :], axis=1)
    return out / k


def direct_softmin_apply(grid, spec, values, log_weights):
    """Reference softmin: out_j = log(sum_i K_ji exp(-k values_i) w_i) / k.

    values is the potential on the source copy of the lattice, log_weights
    the log of the source measure weights. Exact log-sum-exp with max
    shift; quadratic cost, so refuses to run past DENSE_POINT_CAP points.
    """
    if grid.size > DENSE_POINT_CAP:
        raise ValueError(
            f"direct apply is quadratic; {grid.size} points exceeds the "
            f"{DENSE_POINT_CAP} point cap, use the fft backend"
        )
    s = -spec.k * np.asarray(values, dtype=float) + log_weights
    return _softmin_blocked(spec.log_cost_profile(grid), grid, s, spec.k)


def fft_apply(profile, vec):
    """Circular convolution sum_i profile[j - i] vec_i via the real FFT.

    profile has shape (k,)*n, vec is flat of length k^n in lexicographic
    order. Raises FFTUnderflowError when the result has a nonpositive or
    non-finite entry, so the caller can fall back to the exact route.
    """
    if profile.ndim == 1:
        profile_hat = np.fft.rfft(profile)
    else:
        profile_hat = np.fft.rfftn(profile)
    return _fft_apply_hat(profile_hat, profile.shape, vec)


def _fft_apply_hat(profile_hat, shape, vec):
    if len(shape) == 1:
        out = np.fft.irfft(np.fft.rfft(vec) * profile_hat, n=shape[0])
    else:
        axes = tuple(range(len(shape)))
        out = np.fft.irfftn(
            np.fft.rfftn(vec.reshape(shape)) * profile_hat, s=shape, axes=axes
        ).ravel()
    lo = out.min()
    if not lo > 0.0:  # catches nonpositive values and NaN in one pass
        raise FFTUnderflowError(
            "fft kernel application produced nonpositive values"
        )
    return out


class _TorusApplicatorBase:
    """Shared state for the lattice applicators: weights, profiles, costs."""

    def __init__(self, grid, spec, p, q):
        if grid.k != spec.k:
            raise ValueError(
                f"grid resolution {grid.k} does not match kernel sharpness {spec.k}"
            )
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if p.shape != (grid.size,) or q.shape != (grid.size,):
            raise ValueError("weight vectors must match the lattice size")
        self.grid = grid
        self.spec = spec
        self.k = float(spec.k)
        self.p = p
        self.q = q
        self.log_p = np.log(p)
        self.log_q = np.log(q)
        self._log_profile = spec.log_cost_profile(grid)
        self._cost_profile = -self._log_profile / self.k

    @property
    def size(self):
        return self.grid.size

    def cost_row(self, i):
        """Cost row c(x_i, .) over the target lattice, shape (N,)."""
        multi = tuple(int(m) for m in np.unravel_index(i, (self.grid.k,) * self.grid.n))
        rolled = np.roll(self._cost_profile, shift=multi, axis=tuple(range(self.grid.n)))
        return rolled.ravel()

    def describe(self):
        return {
            "manifold": "torus",
            "n": self.grid.n,
            "k": self.spec.k,
            "kernel": self.spec.kind,
            "heat_time": self.spec.heat_time,
            "points": self.grid.size,
        }


class TorusLatticeApplicator(_TorusApplicatorBase):
    """Kernel application on the common lattice, direct or FFT mode.

    mode "direct" always takes the exact log-domain route. mode "fft"
    converts to the linear domain with a shift by the running minimum of
    the potential (so the largest scaled entry is exactly 1), convolves by
    FFT, and falls back to the direct route on underflow, counting the
    fallbacks in .fallbacks.
    """

    def __init__(self, grid, spec, p, q, mode="direct"):
        super().__init__(grid, spec, p, q)
        if mode not in ("direct", "fft"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "direct" and grid.size > DENSE_POINT_CAP:
            raise ValueError(
                f"direct mode is quadratic; {grid.size} points exceeds the "
                f"{DENSE_POINT_CAP} point cap"
            )
        self.mode = mode
        self.fallbacks = 0
        if mode == "fft":
            self._profile = np.exp(self._log_profile)
            self._profile_hat = np.fft.rfftn(self._profile)
        else:
            self._profile = None
            self._profile_hat = None

    def _apply(self, values, log_weights):
        values = np.asarray(values, dtype=float)
        if self.mode == "direct":
            s = -self.k * values + log_weights
            return _softmin_blocked(self._log_profile, self.grid, s, self.k)
        shift = values.min()
        w = np.exp(-self.k * (values - shift) + log_weights)
        try:
            conv = _fft_apply_hat(self._profile_hat, self._profile.shape, w)
            return np.log(conv) / self.k - shift
        except FFTUnderflowError:
            self.fallbacks += 1
            s = -self.k * values + log_weights
            return _softmin_blocked(self._log_profile, self.grid, s, self.k)

    def softmin_to_target(self, u):
        """v(y_j) = log(sum_i exp(-k(c_ij + u_i)) p_i) / k."""
        return self._apply(u, self.log_p)

    def softmin_to_source(self, v):
        """u(x_i) = log(sum_j exp(-k(c_ij + v_j)) q_j) / k."""
        return self._apply(v, self.log_q)

    def describe(self):
        d = super().describe()
        d["backend"] = self.mode
        d["fft_fallbacks"] = self.fallbacks
        return d


class TorusPointsApplicator:
    """Exact log-domain applicator for measures on arbitrary torus points.

    Used for point-cloud inputs, where the supports need not coincide or
    lie on a lattice. Quadratic in the support sizes, capped at
    DENSE_POINT_CAP points per side. Gaussian or heat-kernel cost.
    """

    def __init__(self, xs, ys, spec, p, q):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        if max(len(xs), len(ys)) > DENSE_POINT_CAP:
            raise ValueError(
                f"point applicator is quadratic; supports exceed the "
                f"{DENSE_POINT_CAP} point cap"
            )
        if xs.shape[1] != ys.shape[1]:
            raise ValueError("source and target dimensions differ")
        self.spec = spec
        self.k = float(spec.k)
        self.p = np.asarray(p, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.log_p = np.log(self.p)
        self.log_q = np.log(self.q)
        if spec.kind == "gaussian":
            cost = torus_cost_matrix(xs, ys)
        else:
            n = xs.shape[1]
            delta = xs[:, None, :] - ys[None, :, :]
            log_k = _log_heat_image_sum(delta, spec.heat_time, spec.images, n)
            log_0 = _log_heat_image_sum(np.zeros(n), spec.heat_time, spec.images, n)
            cost = -(log_k - log_0) / self.k
        self._cost = cost
        self.fallbacks = 0

    @property
    def size(self):
        return self._cost.shape[0]

    def softmin_to_target(self, u):
        a = -self.k * (self._cost + np.asarray(u, dtype=float)[:, None])
        return logsumexp(a + self.log_p[:, None], axis=0) / self.k

    def softmin_to_source(self, v):
        a = -self.k * (self._cost + np.asarray(v, dtype=float)[None, :])
        return logsumexp(a + self.log_q[None, :], axis=1) / self.k

    def cost_row(self, i):
        return self._cost[i].copy()

    def describe(self):
        return {
            "manifold": "torus",
            "kernel": self.spec.kind,
            "k": self.spec.k,
            "heat_time": self.spec.heat_time,
            "points": self._cost.shape,
            "backend": "points-direct",
        }
