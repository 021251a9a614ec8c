"""Round-sphere grids, spherical harmonic transforms, and kernel backends.

Grids are pole-free equiangular: for bandwidth W there are 2(W+1) colatitude
rings at theta_i = pi (i + 1/2) / (2(W+1)) and as many equispaced longitudes.
The colatitudes are Chebyshev angles, so the classical Fejer quadrature
weights integrate polynomials in cos(theta) up to degree 2W+1 exactly, which
makes analysis of degree-W fields exact: the sampled Gram matrix of the
orthonormal harmonics is the identity to rounding.

Conventions. The surface measure is normalized to total mass 1. Harmonics
are Y_lm(phi, theta) = Pbar_l^m(cos theta) e^{i m phi} with Pbar the fully
normalized associated Legendre function (Condon-Shortley phase included),
so the Y_lm are orthonormal and sum_m Y_lm(x) conj(Y_lm(y)) =
(2l+1) P_l(x.y). The Laplacian eigenvalue at degree l is l(l+1).

Two transform flavours exist on purpose:

- sht_forward / sht_inverse: quadrature-weighted analysis and synthesis,
  the exact inverse pair for band-limited data.
- sht_adjoint: the plain (unweighted) sum over nodes against conj(Y_lm).
  Applying a zonal kernel matrix K_ij = sum_l mult_l (2l+1) P_l(x_i.x_j)
  to a vector is, exactly, synthesis of mult * adjoint; this identity is
  algebraic and holds for any vector, which is what the scaling iteration
  needs.

Both run in O(W^3) by separating the longitude FFT from a dense Legendre
contraction per order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander, legval
from scipy.special import logsumexp

from .torus import DENSE_POINT_CAP

__all__ = [
    "SphericalGrid",
    "HarmonicCoeffs",
    "assoc_legendre",
    "sht_forward",
    "sht_inverse",
    "sht_adjoint",
    "bandlimited_heat_apply",
    "bandlimited_heat_matrix",
    "antenna_legendre_coeffs",
    "antenna_kernel_apply",
    "antenna_kernel_matrix",
    "antenna_height",
    "reflector_map",
    "zonal_profile_min",
    "SphereKernelSpec",
    "SphereDenseApplicator",
    "SphereSHTApplicator",
]


def assoc_legendre(l, m, x):
    """Associated Legendre function P_l^m (Ferrers, Condon-Shortley phase).

    Upward recurrence in l seeded at the diagonal; stable in double
    precision through degree ~64 (the raw diagonal values overflow well
    past that). Requires 0 <= m <= l.
    """
    if m < 0 or l < 0 or m > l:
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    pmm = np.ones_like(x)
    for i in range(1, m + 1):
        pmm = pmm * (-(2 * i - 1)) * s
    if l == m:
        return pmm
    pm1 = x * (2 * m + 1) * pmm
    if l == m + 1:
        return pm1
    for ll in range(m + 2, l + 1):
        pm1, pmm = ((2 * ll - 1) * x * pm1 - (ll + m - 1) * pmm) / (ll - m), pm1
    return pm1


def _fejer_weights(n):
    """Fejer (first kind) weights for nodes cos(pi (i+1/2)/n), i = 0..n-1.

    Exact for polynomials of degree <= n-1 against dx on [-1, 1].
    """
    i = np.arange(n)
    theta = np.pi * (i + 0.5) / n
    m = np.arange(1, n // 2 + 1)
    terms = np.cos(2.0 * np.outer(theta, m)) / (4.0 * m * m - 1.0)
    return (2.0 / n) * (1.0 - 2.0 * terms.sum(axis=1))


def _normalized_legendre_table(L, mu):
    """Fully normalized associated Legendre values, shape (L+1, L+1, len(mu)).

    Entry [l, m, :] holds Pbar_l^m(mu) for 0 <= m <= l (zero above the
    diagonal). Normalization: integral of Pbar^2 over mu in [-1,1] is 2,
    so that Pbar_l^m(cos theta) e^{i m phi} has unit norm against the
    mass-one surface measure. Condon-Shortley phase included.
    """
    mu = np.asarray(mu, dtype=float)
    s = np.sqrt(np.maximum(0.0, 1.0 - mu * mu))
    out = np.zeros((L + 1, L + 1, mu.size))
    out[0, 0] = 1.0
    for m in range(1, L + 1):
        out[m, m] = -np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * out[m - 1, m - 1]
    for m in range(0, L + 1):
        if m + 1 <= L:
            out[m + 1, m] = np.sqrt(2.0 * m + 3.0) * mu * out[m, m]
        for l in range(m + 2, L + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(
                ((2.0 * l + 1.0) * ((l - 1.0) ** 2 - m * m))
                / ((2.0 * l - 3.0) * (l * l - m * m))
            )
            out[l, m] = a * mu * out[l - 1, m] - b * out[l - 2, m]
    return out


class SphericalGrid:
    """Pole-free equiangular grid carrying exact quadrature to degree 2W+1.

    Nodes are indexed ring-major: node i*n_phi + j sits at colatitude
    theta_i and longitude phi_j. Angle arrays follow the (phi, theta)
    coordinate order used for sphere points everywhere in this package.
    """

    def __init__(self, W):
        if W < 1:
            raise ValueError(f"bandwidth must be >= 1, got {W}")
        if W > 128:
            raise ValueError(f"bandwidth {W} is out of the supported range (<= 128)")
        self.W = int(W)
        self.n_theta = 2 * (self.W + 1)
        self.n_phi = 2 * (self.W + 1)
        self.thetas = np.pi * (np.arange(self.n_theta) + 0.5) / self.n_theta
        self.phis = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        self.mu = np.cos(self.thetas)
        # ring weights against the normalized measure (sum over rings = 1)
        self.ring_weights = _fejer_weights(self.n_theta) / 2.0
        self.node_weights = np.repeat(self.ring_weights / self.n_phi, self.n_phi)
        self._table = None

    @property
    def size(self):
        return self.n_theta * self.n_phi

    def angles(self):
        """(N, 2) array of (phi, theta) per node, ring-major order."""
        phi, theta = np.meshgrid(self.phis, self.thetas, indexing="xy")
        return np.column_stack([phi.ravel(), theta.ravel()])

    def embed(self):
        """(N, 3) unit vectors for all nodes."""
        ang = self.angles()
        return sphere_embed(ang[:, 0], ang[:, 1])

    def legendre_table(self):
        """Normalized associated Legendre table up to degree W, cached."""
        if self._table is None:
            self._table = _normalized_legendre_table(self.W, self.mu)
        return self._table


def sphere_embed(phi, theta):
    """Unit vectors from (phi, theta); stacks along the last axis."""
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


@dataclass
class HarmonicCoeffs:
    """Triangular table of harmonic coefficients up to degree W.

    data[l, m + W] is the coefficient of Y_lm; entries with |m| > l are
    identically zero.
    """

    W: int
    data: np.ndarray

    @classmethod
    def zeros(cls, W):
        return cls(W, np.zeros((W + 1, 2 * W + 1), dtype=complex))

    def get(self, l, m):
        return self.data[l, m + self.W]

    def set(self, l, m, value):
        if abs(m) > l:
            raise ValueError(f"|m| <= l required, got l={l}, m={m}")
        self.data[l, m + self.W] = value

    def copy(self):
        return HarmonicCoeffs(self.W, self.data.copy())

    def mask_violation(self):
        """Largest |coefficient| sitting outside the triangle |m| <= l."""
        L = self.W
        ls = np.arange(L + 1)[:, None]
        ms = np.abs(np.arange(-L, L + 1))[None, :]
        return float(np.max(np.abs(self.data * (ms > ls))))


def _signed_tables(grid, L):
    """Legendre tables for both m signs: shape (L+1, 2L+1, n_theta).

    Column m + L corresponds to order m; negative orders pick up the
    parity factor (-1)^|m| relating Pbar_l^{-|m|} to Pbar_l^{|m|}.
    """
    table = grid.legendre_table()[: L + 1, : L + 1, :]
    ms = np.arange(-L, L + 1)
    signed = table[:, np.abs(ms), :].astype(float).copy()
    neg = ms < 0
    signs = np.where(neg, (-1.0) ** np.abs(ms), 1.0)
    return signed * signs[None, :, None], ms


def _analysis(grid, values, L, ring_factor):
    """Shared core of sht_forward (quadrature weights) and sht_adjoint (ones)."""
    vals = np.asarray(values).reshape(grid.n_theta, grid.n_phi)
    F = np.fft.fft(vals, axis=1)
    signed, ms = _signed_tables(grid, L)
    cols = F[:, ms % grid.n_phi] * ring_factor[:, None]
    out = HarmonicCoeffs(L, np.einsum("lmt,tm->lm", signed, cols))
    return out


def sht_forward(grid, values):
    """Harmonic analysis: coefficients of the band-limited interpolant.

    Exact (to rounding) through degree W for data sampled from a field of
    bandwidth <= W, by the quadrature exactness of the grid.
    """
    ring = grid.ring_weights / grid.n_phi
    return _analysis(grid, values, grid.W, ring)


def sht_adjoint(grid, values, L=None):
    """Unweighted sums beta_lm = sum_nodes values conj(Y_lm), up to degree L."""
    if L is None:
        L = grid.W
    if L > grid.W:
        raise ValueError(f"degree {L} exceeds grid bandwidth {grid.W}")
    return _analysis(grid, values, L, np.ones(grid.n_theta))


def sht_inverse(grid, coeffs):
    """Harmonic synthesis at the grid nodes; returns a complex array.

    Real data come back with imaginary parts at rounding level whenever
    the coefficients satisfy the conjugate symmetry of a real field.
    """
    L = coeffs.W
    if L > grid.W:
        raise ValueError(f"coefficient degree {L} exceeds grid bandwidth {grid.W}")
    signed, ms = _signed_tables(grid, L)
    rings = np.einsum("lmt,lm->tm", signed, coeffs.data)
    buf = np.zeros((grid.n_theta, grid.n_phi), dtype=complex)
    buf[:, ms % grid.n_phi] += rings
    vals = np.fft.ifft(buf, axis=1) * grid.n_phi
    return vals.ravel()


# ---------------------------------------------------------------------------
# zonal kernels (heat, antenna)
# ---------------------------------------------------------------------------


def _apply_zonal(grid, values, multipliers):
    """Apply K_ij = sum_l mult_l (2l+1) P_l(x_i . x_j) to a real vector."""
    L = len(multipliers) - 1
    beta = sht_adjoint(grid, values, L)
    beta.data *= np.asarray(multipliers, dtype=float)[:, None]
    return sht_inverse(grid, beta).real


def bandlimited_heat_apply(grid, t, values, W=None):
    """Heat semigroup e^{-t Laplacian} truncated at degree W, acting on fields.

    Quadrature-weighted analysis, multipliers e^{-t l(l+1)}, synthesis:
    the discretization of the integral operator against the mass-one
    surface measure. Constants are fixed for every t, and t = 0 is allowed
    and gives the plain band-limiting projection. Matches dense application
    of the kernel matrix to the quadrature-weighted field.
    """
    if t < 0:
        raise ValueError(f"heat time must be nonnegative, got t={t}")
    if W is None:
        W = grid.W
    if W > grid.W:
        raise ValueError(f"degree {W} exceeds grid bandwidth {grid.W}")
    coeffs = sht_forward(grid, values)
    l = np.arange(grid.W + 1, dtype=float)
    mult = np.where(l <= W, np.exp(-t * l * (l + 1.0)), 0.0)
    coeffs.data *= mult[:, None]
    return sht_inverse(grid, coeffs).real


def heat_multipliers(t, W):
    l = np.arange(W + 1)
    return np.exp(-t * l * (l + 1.0))


def bandlimited_heat_matrix(grid, t, W=None):
    """Dense band-limited heat kernel matrix (for checks and small runs)."""
    if W is None:
        W = grid.W
    if grid.size > DENSE_POINT_CAP:
        raise ValueError(
            f"{grid.size} nodes exceeds the {DENSE_POINT_CAP} cap for dense kernels"
        )
    return _zonal_matrix(grid, heat_multipliers(t, W))


def _zonal_matrix(grid, multipliers):
    l = np.arange(len(multipliers))
    series = (2.0 * l + 1.0) * np.asarray(multipliers, dtype=float)
    xyz = grid.embed()
    gram = np.clip(xyz @ xyz.T, -1.0, 1.0)
    return legval(gram, series)


def zonal_profile_min(multipliers, samples=20001):
    """Minimum over [-1, 1] of the kernel profile sum mult_l (2l+1) P_l(s).

    Positivity of the profile implies positivity of the whole kernel
    matrix for any node placement.
    """
    l = np.arange(len(multipliers))
    series = (2.0 * l + 1.0) * np.asarray(multipliers, dtype=float)
    s = np.linspace(-1.0, 1.0, samples)
    return float(legval(s, series).min())


def antenna_legendre_coeffs(k):
    """Legendre coefficients of s -> 2^k (1 - s)^k, exact by Gauss quadrature.

    The integrand against P_l has degree at most 2k, so k+1 Gauss nodes
    integrate it exactly. Returns c_0..c_k with
    2^k (1-s)^k = sum_l c_l P_l(s).
    """
    if k < 1:
        raise ValueError(f"power must be >= 1, got {k}")
    nodes, weights = leggauss(k + 1)
    vander = legvander(nodes, k)
    integrand = weights * (2.0 ** k) * (1.0 - nodes) ** k
    l = np.arange(k + 1)
    return (2.0 * l + 1.0) / 2.0 * (integrand @ vander)


def antenna_multipliers(k, degree=None):
    """Per-degree multipliers of the antenna kernel, zero above degree k."""
    if degree is None:
        degree = k
    if degree < k:
        raise ValueError(f"expansion degree {degree} below kernel degree {k}")
    c = antenna_legendre_coeffs(k)
    mult = np.zeros(degree + 1)
    mult[: k + 1] = c / (2.0 * np.arange(k + 1) + 1.0)
    return mult


def antenna_kernel_apply(grid, values, k, degree=None):
    """Apply the kernel 2^k (1 - x.y)^k through its harmonic expansion.

    The kernel is a degree-k polynomial in x.y, hence exactly band-limited
    at degree k: raising the expansion degree past k changes nothing.
    Requires grid bandwidth >= the expansion degree.
    """
    mult = antenna_multipliers(k, degree)
    if len(mult) - 1 > grid.W:
        raise ValueError(
            f"expansion degree {len(mult) - 1} exceeds grid bandwidth {grid.W}"
        )
    return _apply_zonal(grid, values, mult)


def antenna_kernel_matrix(grid, k):
    """Dense antenna kernel matrix 2^k (1 - x_i . x_j)^k."""
    if grid.size > DENSE_POINT_CAP:
        raise ValueError(
            f"{grid.size} nodes exceeds the {DENSE_POINT_CAP} cap for dense kernels"
        )
    xyz = grid.embed()
    gram = np.clip(xyz @ xyz.T, -1.0, 1.0)
    return (2.0 ** k) * (1.0 - gram) ** k


def antenna_height(a, k):
    """Radial height h = a^(1/k) from a positive scaling vector."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0) or not np.all(np.isfinite(a)):
        raise ValueError("scaling vector must be positive and finite")
    return a ** (1.0 / k)


def reflector_map(grid, h):
    """Outgoing directions after reflection off the radial graph h(x) x.

    Rays leave the origin along each node direction, hit the surface, and
    reflect specularly. Normals come from finite differences of h on the
    grid (centered in longitude with wraparound, one-sided at the extreme
    colatitude rings). Returns (directions, ok) where ok flags nodes whose
    normal was well defined. For h constant every ray returns to the
    origin: directions = -x.
    """
    h = np.asarray(h, dtype=float).reshape(grid.n_theta, grid.n_phi)
    if np.any(h <= 0):
        raise ValueError("heights must be positive")
    dtheta = np.pi / grid.n_theta
    dphi = 2.0 * np.pi / grid.n_phi

    h_th = np.empty_like(h)
    h_th[1:-1] = (h[2:] - h[:-2]) / (2.0 * dtheta)
    h_th[0] = (-3.0 * h[0] + 4.0 * h[1] - h[2]) / (2.0 * dtheta)
    h_th[-1] = (3.0 * h[-1] - 4.0 * h[-2] + h[-3]) / (2.0 * dtheta)
    h_ph = (np.roll(h, -1, axis=1) - np.roll(h, 1, axis=1)) / (2.0 * dphi)

    theta = grid.thetas[:, None]
    phi = grid.phis[None, :]
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    ones = np.ones_like(h)
    xhat = np.stack([st * cp * ones, st * sp * ones, ct * ones], axis=-1)
    xhat_th = np.stack([ct * cp * ones, ct * sp * ones, -st * ones], axis=-1)
    xhat_ph = np.stack([-st * sp * ones, st * cp * ones, np.zeros_like(h)], axis=-1)

    t_th = h_th[..., None] * xhat + h[..., None] * xhat_th
    t_ph = h_ph[..., None] * xhat + h[..., None] * xhat_ph
    normal = np.cross(t_th, t_ph)
    norm = np.linalg.norm(normal, axis=-1)
    scale = np.linalg.norm(t_th, axis=-1) * np.linalg.norm(t_ph, axis=-1)
    ok = norm > 1e-12 * np.maximum(scale, 1e-300)

    with np.errstate(invalid="ignore", divide="ignore"):
        nhat = normal / norm[..., None]
    # orient outward
    flip = np.sum(nhat * xhat, axis=-1) < 0
    nhat[flip] *= -1.0
    cos_in = np.sum(xhat * nhat, axis=-1, keepdims=True)
    directions = xhat - 2.0 * cos_in * nhat
    directions[~ok] = np.nan
    return directions.reshape(-1, 3), ok.ravel()


# ---------------------------------------------------------------------------
# applicators for the scaling iteration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SphereKernelSpec:
    """Kernel choice for a sphere instance.

    kind "heat": degree-W truncated heat kernel at time t (default 2/k).
    kind "antenna": 2^k (1 - x.y)^k, band-limited at degree k.
    """

    kind: str
    k: int
    t: float | None = None
    degree: int | None = None

    def __post_init__(self):
        if self.kind not in ("heat", "antenna"):
            raise ValueError(f"unknown sphere kernel kind {self.kind!r}")
        if self.k < 1:
            raise ValueError(f"sharpness k must be >= 1, got {self.k}")

    @property
    def heat_time(self):
        if self.kind != "heat":
            return None
        return 2.0 / self.k if self.t is None else self.t

    def multipliers(self, grid):
        if self.kind == "heat":
            W = grid.W if self.degree is None else self.degree
            return heat_multipliers(self.heat_time, W)
        return antenna_multipliers(self.k, self.degree)


class _SphereApplicatorBase:
    def __init__(self, grid, spec, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if p.shape != (grid.size,) or q.shape != (grid.size,):
            raise ValueError("weight vectors must match the grid size")
        mult = spec.multipliers(grid)
        if len(mult) - 1 > grid.W:
            raise ValueError(
                f"kernel degree {len(mult) - 1} exceeds grid bandwidth {grid.W}"
            )
        if spec.kind == "heat" and zonal_profile_min(mult) <= 0.0:
            raise ValueError(
                "truncated heat kernel is not positive at this (t, W); "
                "decrease t or raise the bandwidth"
            )
        self.grid = grid
        self.spec = spec
        self.k = float(spec.k)
        self.p = p
        self.q = q
        self.log_p = np.log(p)
        self.log_q = np.log(q)
        self._mult = mult

    @property
    def size(self):
        return self.grid.size

    def describe(self):
        return {
            "manifold": "sphere",
            "W": self.grid.W,
            "k": self.spec.k,
            "kernel": self.spec.kind,
            "heat_time": self.spec.heat_time,
            "points": self.grid.size,
        }


class SphereDenseApplicator(_SphereApplicatorBase):
    """Exact log-domain softmin against the materialized kernel matrix.

    The antenna kernel vanishes on the diagonal; its log-kernel entries
    there are -inf, which the log-sum-exp reduction handles (the off
    diagonal keeps every output finite).
    """

    def __init__(self, grid, spec, p, q):
        super().__init__(grid, spec, p, q)
        if grid.size > DENSE_POINT_CAP:
            raise ValueError(
                f"dense applicator needs at most {DENSE_POINT_CAP} nodes, "
                f"got {grid.size}"
            )
        K = _zonal_matrix(grid, self._mult)
        with np.errstate(divide="ignore"):
            self._log_K = np.log(np.maximum(K, 0.0))
        self.fallbacks = 0

    def _softmin(self, values, log_weights):
        s = -self.k * np.asarray(values, dtype=float) + log_weights
        N = self.size
        out = np.empty(N)
        block = max(1, min(N, (1 << 22) // N))
        for start in range(0, N, block):
            cols = self._log_K[:, start : start + block]
            out[start : start + block] = logsumexp(cols + s[:, None], axis=0)
        return out / self.k

    def softmin_to_target(self, u):
        return self._softmin(u, self.log_p)

    def softmin_to_source(self, v):
        # kernel matrices here are symmetric (same nodes on both sides)
        return self._softmin(v, self.log_q)

    def cost_row(self, i):
        with np.errstate(divide="ignore"):
            return -self._log_K[i] / self.k

    def describe(self):
        d = super().describe()
        d["backend"] = "dense"
        return d


class SphereSHTApplicator(_SphereApplicatorBase):
    """Accelerated linear-domain softmin through the harmonic expansion.

    Each application shifts by the running minimum of the potential (the
    largest scaled entry is then exactly 1), applies the zonal kernel in
    O(W^3), and checks the output. Nonpositive or non-finite results fall
    back to the dense log-domain route when the grid is small enough,
    counting fallbacks; larger grids raise.
    """

    def __init__(self, grid, spec, p, q):
        super().__init__(grid, spec, p, q)
        self.fallbacks = 0
        self._dense = None

    def _fallback(self):
        if self.grid.size > DENSE_POINT_CAP:
            raise FloatingPointError(
                "kernel application underflowed and the grid is too large "
                "for the dense fallback; lower k or raise the bandwidth"
            )
        if self._dense is None:
            self._dense = SphereDenseApplicator(
                self.grid, self.spec, self.p, self.q
            )
        self.fallbacks += 1
        return self._dense

    def _softmin(self, values, log_weights, direction):
        values = np.asarray(values, dtype=float)
        shift = values.min()
        w = np.exp(-self.k * (values - shift) + log_weights)
        out = _apply_zonal(self.grid, w, self._mult)
        if not np.all(np.isfinite(out)) or np.any(out <= 0.0):
            dense = self._fallback()
            if direction == "target":
                return dense.softmin_to_target(values)
            return dense.softmin_to_source(values)
        return np.log(out) / self.k - shift

    def softmin_to_target(self, u):
        return self._softmin(u, self.log_p, "target")

    def softmin_to_source(self, v):
        return self._softmin(v, self.log_q, "source")

    def cost_row(self, i):
        e = np.zeros(self.size)
        e[i] = 1.0
        col = _apply_zonal(self.grid, e, self._mult)
        with np.errstate(divide="ignore", invalid="ignore"):
            return -np.log(np.maximum(col, 0.0)) / self.k

    def describe(self):
        d = super().describe()
        d["backend"] = "sht"
        d["sht_fallbacks"] = self.fallbacks
        return d
