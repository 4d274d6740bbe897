"""Collision kernels and operators.

Provides the random hard-potential cutoff kernel, the collision frequency,
the linearized operator L = K - Lambda as dense velocity matrices, the
symmetrized bilinear operator, the full quadratic operator for entropy
diagnostics, plus linear relaxation and linear Fokker-Planck models, and a
numerical audit of the structural assumptions the decay theory rests on.

Discretization notes.  Binary-collision kinds need dv_dim == 2; the sphere
is a circle discretized by uniform angles.  Post-collisional velocities are
off-grid: gain terms interpolate the ratio h / sqrt(M) bilinearly, which
keeps the Maxwellian collision identity pointwise exact, and contributions
leaving the truncated grid are dropped (fields there are below 1e-12).
Assembled linear operators are symmetrized in the weighted inner product
and sandwiched with the orthogonal complement of the discrete null space,
so conservation, self-adjointness and null-space annihilation hold to
machine precision rather than to interpolation accuracy; the bilinear
operator is post-projected onto the orthogonal complement for the same
reason.  The gain quadrature itself is the direct (v*, sigma) sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from functools import cached_property

import numpy as np

from .phase import PhaseGrid, orthonormalize

KINDS = ("relaxation", "fokker_planck", "linearized_boltzmann", "boltzmann_full")
LINEAR_KINDS = ("relaxation", "fokker_planck", "linearized_boltzmann")
BOLTZMANN_KINDS = ("linearized_boltzmann", "boltzmann_full")


def _as_angular(fn_or_const):
    if callable(fn_or_const):
        return fn_or_const
    value = float(fn_or_const)
    return lambda c: np.full_like(np.asarray(c, dtype=float), value)


@dataclass
class KernelSpec:
    """Random hard-potential cutoff kernel B = C_phi |u|^gamma (b0 + b1 z).

    b0, b1 are angular factors of cos(theta), callables or constants; xi
    bounds |d_z b| = |b1|, cb bounds |b|, cb_star bounds |b1|.  m_sigma is
    the angular quadrature count on the circle.
    """

    gamma: float = 0.0
    c_phi: float = 1.0
    b0: object = 1.0 / (2.0 * np.pi)
    b1: object = 0.0
    xi: float = 0.0
    cb: float | None = None
    cb_star: float | None = None
    m_sigma: int = 16

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.c_phi <= 0:
            raise ValueError("C_phi must be positive")
        self._b0 = _as_angular(self.b0)
        self._b1 = _as_angular(self.b1)
        c = np.linspace(-1.0, 1.0, 201)
        z = np.linspace(-1.0, 1.0, 41)
        b0v, b1v = self._b0(c), self._b1(c)
        bmax = np.max(np.abs(b0v[:, None] + np.outer(b1v, z)))
        b1max = float(np.max(np.abs(b1v)))
        if self.cb is None:
            self.cb = float(bmax)
        if self.cb_star is None:
            self.cb_star = b1max
        if self.xi == 0.0 and b1max > 0:
            self.xi = b1max
        if bmax > self.cb + 1e-12:
            raise ValueError(f"|b| reaches {bmax:.3g} > declared C_b={self.cb:.3g}")
        if b1max > self.cb_star + 1e-12:
            raise ValueError("|b1| exceeds declared C_b*")
        if b1max > self.xi + 1e-12:
            raise ValueError("|d_z b| = |b1| exceeds declared xi")
        if np.min(b0v[:, None] + np.outer(b1v, z)) < -1e-12:
            raise ValueError("kernel b0 + b1 z is negative somewhere on I_z")

    def phi(self, umag):
        return self.c_phi * umag ** self.gamma

    def b0_at(self, c):
        return self._b0(np.asarray(c, dtype=float))

    def b1_at(self, c):
        return self._b1(np.asarray(c, dtype=float))

    def angular_mass(self):
        """(int b0 dsigma, int b1 dsigma) over the circle."""
        th = 2.0 * np.pi * np.arange(self.m_sigma) / self.m_sigma
        w = 2.0 * np.pi / self.m_sigma
        return float(np.sum(w * self.b0_at(np.cos(th)))), \
            float(np.sum(w * self.b1_at(np.cos(th))))


def hard_potential_kernel(gamma=0.0, c_phi=1.0, z_amplitude=0.0, strength=1.0,
                          m_sigma=16):
    """Kernel with unit angular mass scaled by `strength`.

    b(c, z) = (strength / 2 pi) * (1 + z_amplitude * z * (1 + c) / 2), so
    the z-perturbation has relative size z_amplitude and the kernel stays
    nonnegative for z_amplitude < 1.
    """
    if not 0.0 <= z_amplitude < 1.0:
        raise ValueError("z_amplitude must lie in [0, 1)")
    base = strength / (2.0 * np.pi)
    return KernelSpec(
        gamma=gamma, c_phi=c_phi,
        b0=base,
        b1=(lambda c, _b=base, _a=z_amplitude: _b * _a * (1.0 + c) / 2.0),
        m_sigma=m_sigma)


# ---------------------------------------------------------------------------
# velocity-pair geometry (dv_dim == 2)


class _PairGeometry:
    """Cached pairwise quantities shared by assembly and matrix-free applies."""

    def __init__(self, grid):
        if grid.dv_dim != 2:
            raise ValueError("binary collisions need dv_dim == 2")
        self.grid = grid
        n = grid.n_v
        vx = grid.v_coord(0).ravel()
        vy = grid.v_coord(1).ravel()
        self.nodes = np.stack([vx, vy], axis=1)          # (n, 2)
        du = self.nodes[:, None, :] - self.nodes[None, :, :]
        self.umag = np.sqrt(np.sum(du * du, axis=2))     # (n, n)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.uhat = np.where(self.umag[..., None] > 0, du / self.umag[..., None], 0.0)
        self.mid = 0.5 * (self.nodes[:, None, :] + self.nodes[None, :, :])
        self.wv_flat = grid.wv.ravel()
        self.maxw_flat = grid.maxwellian.ravel()
        self.msqrt_flat = grid.msqrt.ravel()
        self.n = n

    def sigma_angles(self, m_sigma):
        th = 2.0 * np.pi * np.arange(m_sigma) / m_sigma
        return np.stack([np.cos(th), np.sin(th)], axis=1), 2.0 * np.pi / m_sigma

    def post_collisional(self, sigma):
        """v' and v*' for one unit sigma, each (n, n, 2)."""
        half = 0.5 * self.umag[..., None] * sigma
        return self.mid + half, self.mid - half

    def interp(self, pts):
        """Bilinear corner indices and weights for points (..., 2).

        Out-of-grid corners get zero weight (velocity truncation drops
        those contributions).
        """
        grid = self.grid
        t = (pts + grid.lv) / grid.dv
        i0 = np.floor(t).astype(np.int64)
        frac = t - i0
        nv = grid.nv
        valid = (i0[..., 0] >= 0) & (i0[..., 0] <= nv - 2) & \
                (i0[..., 1] >= 0) & (i0[..., 1] <= nv - 2)
        i0c = np.clip(i0, 0, nv - 2)
        fx, fy = frac[..., 0], frac[..., 1]
        w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                      (1 - fx) * fy, fx * fy], axis=-1)
        w = np.where(valid[..., None], w, 0.0)
        base = i0c[..., 0] * nv + i0c[..., 1]
        idx = np.stack([base, base + nv, base + 1, base + nv + 1], axis=-1)
        return idx, w


# ---------------------------------------------------------------------------
# collision frequency


def collision_frequency_parts(grid, kernel):
    """nu0(v), nu1(v) with nu(v, z) = nu0 + z nu1 (flattened velocity)."""
    geo = _PairGeometry(grid)
    conv = (kernel.phi(geo.umag) * (geo.wv_flat * geo.maxw_flat)).sum(axis=1)
    m0, m1 = kernel.angular_mass()
    return m0 * conv, m1 * conv


def collision_frequency(grid, kernel, z):
    """nu(v, z) table on the velocity grid for a fixed z."""
    nu0, nu1 = collision_frequency_parts(grid, kernel)
    return (nu0 + z * nu1).reshape(grid.vshape)


# ---------------------------------------------------------------------------
# models


@dataclass
class CollisionModel:
    """A collision operator discretized on a PhaseGrid.

    The linear(ized) part is affine in the random variable, L(z) = L0 + z L1,
    stored as dense matrices over the flattened velocity grid.  nu0/nu1 are
    the diagonal collision-frequency parts of Lambda.  `null` holds the
    grid-orthonormal kernel of L, and `gamma` sets the coercivity weight
    (1 + |v|)^(gamma/2); the Fokker-Planck kind replaces that weight by the
    norm ||v h||^2 + ||grad_v h||^2.
    """

    kind: str
    grid: PhaseGrid
    L0: np.ndarray
    L1: np.ndarray
    nu0: np.ndarray
    nu1: np.ndarray
    null: np.ndarray
    gamma: float = 0.0
    kernel: KernelSpec | None = None
    nonlinear: bool = False
    _geo: object = dataclass_field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")

    # -- structure ----------------------------------------------------

    @property
    def n_v(self):
        return self.grid.n_v

    @cached_property
    def null_flat(self):
        return self.null.reshape(len(self.null), -1)

    def l_matrix(self, z):
        return self.L0 + z * self.L1

    def k_matrix(self, z):
        """Gain part K = L + Lambda at fixed z."""
        return self.l_matrix(z) + np.diag(self.nu0 + z * self.nu1)

    def nu_at(self, z):
        return self.nu0 + z * self.nu1

    # -- projections and norms ------------------------------------------

    def project_null(self, h):
        """Pi_L h against this model's null space; h has trailing v-axes."""
        lead = h.shape[:-self.grid.dv_dim]
        flat = h.reshape(lead + (self.n_v,))
        coef = flat @ (self.null_flat * self.grid.wv.ravel()).T
        return (coef @ self.null_flat).reshape(h.shape)

    def micro(self, h):
        return h - self.project_null(h)

    def lambda_norm_sq(self, h, with_x=False):
        """Squared coercivity norm; sums all axes (dx weight if with_x)."""
        grid = self.grid
        wx = grid.dx if with_x else 1.0
        if self.kind == "fokker_planck":
            total = np.sum(grid.wv * (grid.vmag * h) ** 2)
            for a in range(grid.dv_dim):
                total += np.sum(grid.wv * grid.grad_v(h, a) ** 2)
            return float(wx * total)
        w = (1.0 + grid.vmag) ** (self.gamma / 2)
        return float(wx * np.sum(grid.wv * (w * h) ** 2))

    # -- application ----------------------------------------------------

    def apply_l(self, h, z=0.0):
        """L(h) at fixed z; h has trailing velocity axes."""
        lead = h.shape[:-self.grid.dv_dim]
        flat = h.reshape(lead + (self.n_v,))
        out = flat @ self.l_matrix(z).T
        return out.reshape(h.shape)


def relaxation_model(grid, rate0=1.0, rate1=0.0):
    """Linear relaxation toward the local equilibrium: L = rate(z) (Pi_L - I)."""
    if rate0 <= abs(rate1):
        raise ValueError("need rate0 > |rate1| so the rate stays positive on I_z")
    phi = grid.null_basis
    phi_flat = phi.reshape(len(phi), -1)
    proj = phi_flat.T @ (phi_flat * grid.wv.ravel())
    base = proj - np.eye(grid.n_v)
    ones = np.ones(grid.n_v)
    return CollisionModel(
        kind="relaxation", grid=grid, L0=rate0 * base, L1=rate1 * base,
        nu0=rate0 * ones, nu1=rate1 * ones, null=phi, gamma=0.0)


def fokker_planck_model(grid, sigma0=1.0, sigma1=0.0):
    """Linear Fokker-Planck with random diffusion sigma(z) = sigma0 + sigma1 z.

    Symmetrized h-form L h = sigma(z) M^-1 div(M^2 grad(h/M)) with M^2 the
    Maxwellian, discretized as a flux form with geometric-mean face weights:
    L = D_{1/w} D_{1/M} A D_{1/M} with A = -G^T diag(M_face/dv^2) G, which is
    self-adjoint and dissipative in the weighted inner product, annihilates
    M exactly, and conserves mass exactly.  Its kernel is span{M} only.
    """
    if sigma0 <= abs(sigma1):
        raise ValueError("need sigma0 > |sigma1|")
    n = grid.n_v
    nv, dv = grid.nv, grid.dv
    ms_flat = grid.msqrt.ravel()
    w_flat = grid.wv.ravel()
    a_mat = np.zeros((n, n))
    idx = np.arange(n).reshape(grid.vshape)
    for axis in range(grid.dv_dim):
        sl_lo = [slice(None)] * grid.dv_dim
        sl_hi = list(sl_lo)
        sl_lo[axis] = slice(0, nv - 1)
        sl_hi[axis] = slice(1, nv)
        lo = idx[tuple(sl_lo)].ravel()
        hi = idx[tuple(sl_hi)].ravel()
        coeff = ms_flat[lo] * ms_flat[hi] / dv**2  # geometric-mean face weight
        np.add.at(a_mat, (lo, lo), -coeff)
        np.add.at(a_mat, (hi, hi), -coeff)
        np.add.at(a_mat, (lo, hi), coeff)
        np.add.at(a_mat, (hi, lo), coeff)
    # D_{1/(wM)} (dv^d A) D_{1/M}: pointwise-consistent in the interior and
    # exactly self-adjoint in the weighted inner product; the factor-2 slip
    # at the half-weighted boundary rows sits on e^-32 tails.
    a_mat *= dv ** grid.dv_dim
    base = (a_mat / ms_flat[None, :]) / (ms_flat * w_flat)[:, None]
    phi = orthonormalize(grid, [grid.msqrt])
    nu = -np.diag(base)
    return CollisionModel(
        kind="fokker_planck", grid=grid, L0=sigma0 * base, L1=sigma1 * base,
        nu0=sigma0 * nu, nu1=sigma1 * nu, null=phi, gamma=2.0)


# ---------------------------------------------------------------------------
# linearized Boltzmann assembly


def _gain_matrix(geo, kernel, which):
    """Dense gain matrix for one angular factor ('b0' or 'b1').

    Row a: M_a * sum_{b, sigma} w_b w_s phi_ab b(c) Mx_b [r(v') + r(v*')]
    acting on the ratio r = h / M, scattered onto bilinear corners; the
    column scaling folds the ratio back to h.
    """
    grid = geo.grid
    n = geo.n
    bfun = kernel.b0_at if which == "b0" else kernel.b1_at
    phi_ab = kernel.phi(geo.umag)
    base_w = phi_ab * (geo.wv_flat * geo.maxw_flat)[None, :]   # (n, n)
    sigmas, w_sig = geo.sigma_angles(kernel.m_sigma)
    rows = np.broadcast_to(np.arange(n)[:, None], (n, n)).ravel()
    gain = np.zeros(n * n)
    for sigma in sigmas:
        cosw = geo.uhat @ sigma                                # (n, n)
        atom = (w_sig * base_w * bfun(cosw)).ravel()
        vp, vps = geo.post_collisional(sigma)
        for pts in (vp, vps):
            idx, w = geo.interp(pts.reshape(-1, 2))
            flat = (rows[:, None] * n + idx).ravel()
            vals = (atom[:, None] * w).ravel()
            gain += np.bincount(flat, weights=vals, minlength=n * n)
    mat = gain.reshape(n, n)
    return (mat * (geo.msqrt_flat[:, None] / geo.msqrt_flat[None, :]))


def _symmetrize_project(grid, mat, null_flat):
    """Weighted symmetrization then null-space sandwich (I-P) mat (I-P)."""
    w = grid.wv.ravel()
    sym = 0.5 * (mat + (mat.T * w[None, :]) / w[:, None])  # (M + D^-1 M^T D)/2
    proj = null_flat.T @ (null_flat * w)
    icomp = np.eye(grid.n_v) - proj
    return icomp @ sym @ icomp


def linearized_boltzmann_model(grid, kernel, nonlinear=False):
    """Assemble L(z) = L0 + z L1 for the cutoff kernel; dv_dim must be 2.

    Each part is gain - convolution - frequency in the ratio-interpolated
    quadrature, then symmetrized and null-projected (see module docstring).
    With nonlinear=True the model also exposes the bilinear operator and
    represents the full perturbative collision dynamics.
    """
    geo = _PairGeometry(grid)
    phi = grid.null_basis
    phi_flat = phi.reshape(len(phi), -1)
    nu0, nu1 = collision_frequency_parts(grid, kernel)
    m0, m1 = kernel.angular_mass()
    phi_ab = kernel.phi(geo.umag)
    conv = phi_ab * (geo.msqrt_flat[:, None] * geo.msqrt_flat[None, :]) * \
        geo.wv_flat[None, :]
    parts = []
    for which, mmass, nu in (("b0", m0, nu0), ("b1", m1, nu1)):
        raw = _gain_matrix(geo, kernel, which) - mmass * conv - np.diag(nu)
        parts.append(_symmetrize_project(grid, raw, phi_flat))
    kind = "boltzmann_full" if nonlinear else "linearized_boltzmann"
    model = CollisionModel(
        kind=kind, grid=grid, L0=parts[0], L1=parts[1], nu0=nu0, nu1=nu1,
        null=phi, gamma=kernel.gamma, kernel=kernel, nonlinear=nonlinear)
    model._geo = geo
    return model


def boltzmann_model(grid, kernel):
    """Full perturbative Boltzmann collision model (linearized L plus F)."""
    return linearized_boltzmann_model(grid, kernel, nonlinear=True)


def _require_boltzmann(model):
    if model.kind not in BOLTZMANN_KINDS:
        raise ValueError(f"operation needs a Boltzmann kind, got {model.kind!r}")
    if model._geo is None:
        model._geo = _PairGeometry(model.grid)
    return model._geo


def apply_l_direct(model, h, z=0.0):
    """L(h) by direct quadrature, bypassing the assembled matrix.

    Evaluates the same symmetrized, null-projected operator with the
    (v*, sigma) sums and scatter/gather interpolation applied matrix-free;
    agreement with the dense matrix is an assembly correctness check.
    """
    geo = _require_boltzmann(model)
    grid, kernel = model.grid, model.kernel
    n = geo.n
    w_flat = grid.wv.ravel()
    lead = h.shape[:-grid.dv_dim]
    hf = np.ascontiguousarray(h.reshape(lead + (n,)))
    u = hf - (hf @ (model.null_flat * w_flat).T) @ model.null_flat
    nu0, nu1 = model.nu0, model.nu1
    m0, m1 = kernel.angular_mass()
    phi_ab = kernel.phi(geo.umag)
    base_w = phi_ab * (geo.wv_flat * geo.maxw_flat)[None, :]
    sigmas, w_sig = geo.sigma_angles(kernel.m_sigma)
    r = u / geo.msqrt_flat
    gain = np.zeros_like(u)
    gain_adj = np.zeros_like(u)
    du = (u * w_flat) * geo.msqrt_flat            # for the adjoint pass
    for sigma in sigmas:
        cosw = geo.uhat @ sigma
        atom = w_sig * base_w * (kernel.b0_at(cosw) + z * kernel.b1_at(cosw))
        vp, vps = geo.post_collisional(sigma)
        for pts in (vp, vps):
            idx, w = geo.interp(pts.reshape(-1, 2))
            idx = idx.reshape(n, n, 4)
            w = w.reshape(n, n, 4)
            # forward: gather the ratio at the primed point
            vals = np.take(r, idx, axis=-1)       # (..., n, n, 4)
            rp = np.einsum("...abe,abe->...ab", vals, w)
            gain += np.einsum("ab,...ab->...a", atom, rp)
            # adjoint: scatter row values onto the corners
            contrib = np.einsum("...a,ab,abe->...abe", du, atom, w)
            flatidx = idx.reshape(-1)
            add = contrib.reshape(lead + (-1,))
            if lead:
                for j in np.ndindex(*lead):
                    gain_adj[j] += np.bincount(flatidx, weights=add[j], minlength=n)
            else:
                gain_adj += np.bincount(flatidx, weights=add, minlength=n)
    gain = gain * geo.msqrt_flat
    gain_adj = gain_adj / geo.msqrt_flat / w_flat
    conv = phi_ab * (geo.msqrt_flat[:, None] * geo.msqrt_flat[None, :]) * \
        geo.wv_flat[None, :]
    mmass = m0 + z * m1
    nu = nu0 + z * nu1
    out = 0.5 * (gain + gain_adj) - mmass * (u @ conv.T) - nu * u
    out = out - (out @ (model.null_flat * w_flat).T) @ model.null_flat
    return out.reshape(h.shape)


# ---------------------------------------------------------------------------
# bilinear and quadratic operators


def _bilinear_halves(model, g, h, z, b0_scale=None, b1_scale=None):
    """Unsymmetrized F~(g, h) by direct quadrature in ratio form.

    Optional (b0_scale, b1_scale) replace (b0 + z b1) by the pair of angular
    factors scaled independently; used by the chaos contraction.
    """
    geo = _require_boltzmann(model)
    grid, kernel = model.grid, model.kernel
    n = geo.n
    lead = g.shape[:-grid.dv_dim]
    gf = g.reshape(lead + (n,)) / geo.msqrt_flat
    hf = h.reshape(lead + (n,)) / geo.msqrt_flat
    phi_ab = kernel.phi(geo.umag)
    base_w = phi_ab * (geo.wv_flat * geo.maxw_flat)[None, :]
    sigmas, w_sig = geo.sigma_angles(kernel.m_sigma)
    out = np.zeros_like(gf)
    loss_pair = np.einsum("...a,...b->...ab", gf, hf)
    for sigma in sigmas:
        cosw = geo.uhat @ sigma
        if b0_scale is None:
            bval = kernel.b0_at(cosw) + z * kernel.b1_at(cosw)
        else:
            bval = b0_scale * kernel.b0_at(cosw) + b1_scale * kernel.b1_at(cosw)
        atom = w_sig * base_w * bval
        vp, vps = geo.post_collisional(sigma)
        idx_p, w_p = geo.interp(vp.reshape(-1, 2))
        idx_s, w_s = geo.interp(vps.reshape(-1, 2))
        gp = np.einsum("...pe,pe->...p", np.take(gf, idx_p, axis=-1), w_p)
        hs = np.einsum("...pe,pe->...p", np.take(hf, idx_s, axis=-1), w_s)
        gain_pair = (gp * hs).reshape(lead + (n, n))
        out += np.einsum("ab,...ab->...a", atom, gain_pair - loss_pair)
    return (out * geo.msqrt_flat).reshape(g.shape)


def apply_f(model, g, h, z=0.0, project=True, b0_scale=None, b1_scale=None):
    """Symmetrized bilinear collision operator F(g, h) at fixed z.

    F = (F~(g,h) + F~(h,g))/2 with direct (v*, sigma) quadrature and
    bilinear interpolation of the Maxwellian-weighted ratios at the
    post-collisional velocities, post-projected onto the orthogonal
    complement of the collision invariants.
    """
    half = 0.5 * (_bilinear_halves(model, g, h, z, b0_scale, b1_scale)
                  + _bilinear_halves(model, h, g, z, b0_scale, b1_scale))
    if not project:
        return half
    grid = model.grid
    w_flat = grid.wv.ravel()
    lead = half.shape[:-grid.dv_dim]
    flat = half.reshape(lead + (model.n_v,))
    flat = flat - (flat @ (model.null_flat * w_flat).T) @ model.null_flat
    return flat.reshape(half.shape)


_INVARIANT_POWERS = ("1", "v1", "v2", "vsq")


def _collision_invariants(grid):
    e = [np.ones(grid.vshape)]
    for a in range(grid.dv_dim):
        e.append(grid.v_coord(a) * np.ones(grid.vshape))
    e.append(grid.vsq)
    return np.array([x.ravel() for x in e])


def apply_q(model, f, z=0.0):
    """Full collision operator Q(f, f) for a nonnegative distribution f.

    Direct quadrature on the ratio f / M with a conservation correction:
    the Maxwellian-weighted moment defect is removed by a least-squares
    update along {M, v M, |v|^2 M}, so mass, momentum and energy moments
    vanish identically.
    """
    geo = _require_boltzmann(model)
    grid, kernel = model.grid, model.kernel
    if np.min(f) < 0:
        raise ValueError("apply_q needs a nonnegative distribution")
    n = geo.n
    lead = f.shape[:-grid.dv_dim]
    rho = f.reshape(lead + (n,)) / geo.maxw_flat
    phi_ab = kernel.phi(geo.umag)
    base_w = phi_ab * geo.wv_flat[None, :] * \
        (geo.maxw_flat[:, None] * geo.maxw_flat[None, :])
    sigmas, w_sig = geo.sigma_angles(kernel.m_sigma)
    out = np.zeros_like(rho)
    loss_pair = np.einsum("...a,...b->...ab", rho, rho)
    for sigma in sigmas:
        cosw = geo.uhat @ sigma
        atom = w_sig * base_w * (kernel.b0_at(cosw) + z * kernel.b1_at(cosw))
        vp, vps = geo.post_collisional(sigma)
        idx_p, w_p = geo.interp(vp.reshape(-1, 2))
        idx_s, w_s = geo.interp(vps.reshape(-1, 2))
        rp = np.einsum("...pe,pe->...p", np.take(rho, idx_p, axis=-1), w_p)
        rs = np.einsum("...pe,pe->...p", np.take(rho, idx_s, axis=-1), w_s)
        gain_pair = (rp * rs).reshape(lead + (n, n))
        out += np.einsum("ab,...ab->...a", atom, gain_pair - loss_pair)
    # conservation correction along Maxwellian-weighted invariants
    e = _collision_invariants(grid)
    w_flat = grid.wv.ravel()
    basis = e * geo.maxw_flat
    gram = (basis * w_flat) @ e.T                 # G_ij = <basis_i, e_j>
    defect = out @ (e * w_flat).T                 # (..., n_inv)
    coef = defect @ np.linalg.inv(gram)
    out = out - np.tensordot(coef, basis, axes=(-1, 0))
    return out.reshape(f.shape)


def entropy_production(model, f, z=0.0):
    """-int Q(f,f) log f dv; requires strictly positive f."""
    if np.min(f) <= 0:
        raise ValueError("entropy diagnostics need strictly positive f")
    q = apply_q(model, f, z)
    return float(-np.sum(model.grid.wv * q * np.log(f)))


# ---------------------------------------------------------------------------
# assumption audits


@dataclass
class AuditItem:
    assumption: str
    fitted_constant: float
    tolerance: float
    passed: bool
    detail: str = ""

    def as_dict(self):
        return {"assumption": self.assumption,
                "fitted_constant": self.fitted_constant,
                "tolerance": self.tolerance,
                "pass": bool(self.passed),
                "detail": self.detail}


@dataclass
class AuditReport:
    kind: str
    items: list

    @property
    def passed(self):
        return all(item.passed for item in self.items)

    def __getitem__(self, name):
        for item in self.items:
            if item.assumption == name:
                return item
        raise KeyError(name)

    def as_dicts(self):
        return [item.as_dict() for item in self.items]


DEFAULT_AUDIT_TOLERANCES = {
    "null_annihilation": 1e-8,
    "self_adjoint": 1e-8,
    "dissipative": 1e-12,
    "h1_nu0": 0.0,
    "h2_sv_ratio": 0.1,
    "h3_lambda": 0.0,
    "h4_leakage": 1e-6,
    "h5_cf": 0.0,
}


def audit_assumptions(model, n_samples=1000, n_bilinear=24, seed=0, z=0.0,
                      tolerances=None):
    """Numerical audit of the structural assumptions behind the decay theory.

    Random velocity fields probe: the collision-frequency bounds (H1), a
    compactness indicator for the gain part via singular-value decay (H2
    proxy), the local coercivity constant (H3) as a minimum Rayleigh-type
    ratio over fields with nonzero microscopic part, orthogonality of the
    bilinear operator to the collision invariants (H4), and a fitted
    bilinear continuity constant (H5 proxy).  Exact structural identities
    (annihilation, self-adjointness, dissipativity) are checked alongside.
    """
    tol = dict(DEFAULT_AUDIT_TOLERANCES)
    if tolerances:
        tol.update(tolerances)
    rng = np.random.default_rng(seed)
    grid = model.grid
    n = model.n_v
    w_flat = grid.wv.ravel()
    lmat = model.l_matrix(z)
    nu = model.nu_at(z)
    items = []

    def ip(a, b):
        return float(np.sum(w_flat * a * b))

    # null-space annihilation
    worst = max(np.sqrt(ip(lmat @ p, lmat @ p)) for p in model.null_flat)
    items.append(AuditItem("null_annihilation", worst, tol["null_annihilation"],
                           worst <= tol["null_annihilation"],
                           "max ||L(phi_i)|| over unit null functions"))

    samples = rng.standard_normal((n_samples, n))
    # H1: coercivity bounds of Lambda against the coercivity norm
    lam_sq = np.array([model.lambda_norm_sq(s.reshape(grid.vshape))
                       for s in samples])
    quad = np.einsum("sn,n,sn->s", samples, w_flat * nu, samples)
    l2_sq = np.einsum("sn,n,sn->s", samples, w_flat, samples)
    nu0_fit = float(np.min(quad / l2_sq))
    nu1_fit = float(np.min(quad / lam_sq))
    nu2_fit = float(np.max(quad / lam_sq))
    items.append(AuditItem("h1_nu0", nu0_fit, tol["h1_nu0"],
                           nu0_fit > tol["h1_nu0"],
                           f"nu1={nu1_fit:.6g} nu2={nu2_fit:.6g}"))

    # H2 proxy: singular-value decay of the gain part
    sv = np.linalg.svd(model.k_matrix(z), compute_uv=False)
    ratios = sv / sv[0] if sv[0] > 0 else sv
    rank = int(np.sum(ratios > tol["h2_sv_ratio"]))
    beyond = float(ratios[rank]) if rank < n else 0.0
    items.append(AuditItem("h2_sv_ratio", beyond, tol["h2_sv_ratio"],
                           beyond <= tol["h2_sv_ratio"],
                           f"reported rank {rank} of {n}"))

    # self-adjointness and dissipativity on random pairs
    ls = samples @ lmat.T
    scale = np.sqrt(l2_sq)
    sa = 0.0
    for i in range(0, n_samples - 1, 2):
        g, h = samples[i], samples[i + 1]
        val = abs(ip(ls[i], h) - ip(g, ls[i + 1])) / (scale[i] * scale[i + 1])
        sa = max(sa, val)
    items.append(AuditItem("self_adjoint", sa, tol["self_adjoint"],
                           sa <= tol["self_adjoint"]))
    quad_l = np.einsum("sn,n,sn->s", ls, w_flat, samples)
    worst_diss = float(np.max(quad_l / l2_sq))
    items.append(AuditItem("dissipative", worst_diss, tol["dissipative"],
                           worst_diss <= tol["dissipative"],
                           "max <Lh,h>/||h||^2 over samples"))

    # H3: local coercivity constant
    micro = samples - (samples @ (model.null_flat * w_flat).T) @ model.null_flat
    micro_lam = np.array([model.lambda_norm_sq(m.reshape(grid.vshape))
                          for m in micro])
    keep = micro_lam > 1e-16 * lam_sq
    lam_fit = float(np.min(-quad_l[keep] / micro_lam[keep]))
    items.append(AuditItem("h3_lambda", lam_fit, tol["h3_lambda"],
                           lam_fit > tol["h3_lambda"],
                           "min <-Lh,h>/||h_perp||_Lambda^2"))

    # bilinear items for Boltzmann kinds
    if model.kind in BOLTZMANN_KINDS:
        leak = 0.0
        cf = 0.0
        fields = rng.standard_normal((n_bilinear, n))
        tests = rng.standard_normal((n_bilinear, n))
        for hvec, fvec in zip(fields, tests):
            hh = hvec.reshape(grid.vshape)
            fq = apply_f(model, hh, hh, z).ravel()
            h_l2 = np.sqrt(ip(hvec, hvec))
            leak = max(leak, max(abs(ip(fq, p)) for p in model.null_flat)
                       / h_l2**2)
            h_lam = np.sqrt(model.lambda_norm_sq(hh))
            f_lam = np.sqrt(model.lambda_norm_sq(fvec.reshape(grid.vshape)))
            cf = max(cf, abs(ip(fq, fvec)) / (h_l2 * h_lam * f_lam))
        items.append(AuditItem("h4_leakage", leak, tol["h4_leakage"],
                               leak <= tol["h4_leakage"],
                               "max |<F(h,h), phi_i>| / ||h||^2"))
        items.append(AuditItem("h5_cf", cf, tol["h5_cf"], cf > tol["h5_cf"],
                               "fitted C in |<F(h,h),f>| <= C ||h|| ||h||_L ||f||_L"))
    return AuditReport(model.kind, items)
