"""Phase-space discretization, projections, and the norm/energy diagnostics.

The spatial domain is the periodic interval [0, 2pi) resolved by an FFT
grid; velocity space is a truncated uniform grid on [-L_v, L_v]^d with
trapezoidal quadrature, d in {1, 2}.  Perturbation fields h live on the
tensor grid with x as the leading axis.  All inner products are the
discrete L^2_{x,v} pairing with those weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi


def _is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


class PhaseGrid:
    """Tensor discretization of (x, v) with periodic x and truncated v.

    Parameters
    ----------
    nx : FFT points on the torus [0, 2pi); must be a power of two.
    nv : points per velocity axis (endpoints included).
    dv_dim : velocity dimension, 1 or 2.
    lv : velocity truncation half-width.

    Construction enforces dv <= lv/8 and that the trapezoidal Maxwellian
    mass lies in [1 - 1e-10, 1]; coarse grids fail the upper bound through
    the Poisson-summation excess of the trapezoid rule.
    """

    def __init__(self, nx=32, nv=33, dv_dim=1, lv=8.0):
        if not _is_power_of_two(nx):
            raise ValueError(f"nx={nx} must be a power of two")
        if dv_dim not in (1, 2):
            raise ValueError("dv_dim must be 1 or 2")
        if nv < 2:
            raise ValueError("nv too small")
        self.nx = int(nx)
        self.nv = int(nv)
        self.dv_dim = int(dv_dim)
        self.lv = float(lv)
        self.dx = TWO_PI / nx
        self.x = np.arange(nx) * self.dx
        self.v_axis = np.linspace(-lv, lv, nv)
        self.dv = self.v_axis[1] - self.v_axis[0]
        if self.dv > lv / 8 + 1e-12:
            raise ValueError(
                f"velocity spacing {self.dv:.4f} exceeds lv/8={lv / 8:.4f}; "
                "raise nv")
        mass = float(np.sum(self.wv * self.maxwellian))
        if not (1.0 - 1e-10 <= mass <= 1.0):
            raise ValueError(
                f"truncated Maxwellian mass {mass!r} outside [1-1e-10, 1]; "
                "adjust lv/nv")
        self._mass = mass

    # -- geometry ---------------------------------------------------------

    @property
    def vshape(self):
        return (self.nv,) * self.dv_dim

    @property
    def shape(self):
        return (self.nx,) + self.vshape

    @property
    def n_v(self):
        """Total velocity nodes."""
        return self.nv ** self.dv_dim

    @cached_property
    def wv1(self):
        w = np.full(self.nv, self.dv)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    @cached_property
    def wv(self):
        """Trapezoidal quadrature weights over the velocity grid."""
        if self.dv_dim == 1:
            return self.wv1
        return np.multiply.outer(self.wv1, self.wv1)

    def v_coord(self, axis):
        """Velocity coordinate array broadcast over vshape."""
        if self.dv_dim == 1:
            return self.v_axis
        if axis == 0:
            return self.v_axis[:, None] * np.ones(self.nv)
        return np.ones(self.nv)[:, None] * self.v_axis

    @cached_property
    def vsq(self):
        out = self.v_coord(0) ** 2
        if self.dv_dim == 2:
            out = out + self.v_coord(1) ** 2
        return out

    @cached_property
    def vmag(self):
        return np.sqrt(self.vsq)

    # -- equilibrium ------------------------------------------------------

    @cached_property
    def maxwellian(self):
        """Global equilibrium (2pi)^(-d/2) exp(-|v|^2/2) on the velocity grid."""
        return (TWO_PI) ** (-self.dv_dim / 2) * np.exp(-self.vsq / 2)

    @cached_property
    def msqrt(self):
        return np.sqrt(self.maxwellian)

    @cached_property
    def null_basis(self):
        """Grid-orthonormalized span of {M, v_1 M, ..., v_d M, |v|^2 M}.

        Gram-Schmidt under the grid weights absorbs velocity-truncation
        error so the projection identities hold to near machine precision.
        """
        M = self.msqrt
        cand = [M] + [self.v_coord(a) * M for a in range(self.dv_dim)] + [self.vsq * M]
        return orthonormalize(self, cand)

    # -- inner products ---------------------------------------------------

    def inner_v(self, a, b):
        """<a, b> over velocity only; broadcasts over leading axes."""
        axes = tuple(range(-self.dv_dim, 0))
        return np.sum(a * b * self.wv, axis=axes)

    def inner_xv(self, a, b):
        return float(np.sum(a * b * (self.dx * self.wv)))

    def l2(self, h):
        return float(np.sqrt(np.sum(np.abs(h) ** 2 * (self.dx * self.wv))))

    def l2_v(self, h):
        """Velocity-only L2 norm; broadcasts over a leading x axis."""
        axes = tuple(range(-self.dv_dim, 0))
        return np.sqrt(np.sum(np.abs(h) ** 2 * self.wv, axis=axes))

    # -- derivatives ------------------------------------------------------

    def grad_x(self, h):
        """Spectral x-derivative along the leading axis."""
        k = np.fft.rfftfreq(self.nx, d=1.0 / self.nx)
        hh = np.fft.rfft(h, axis=0)
        shape = (-1,) + (1,) * (h.ndim - 1)
        return np.fft.irfft(hh * (1j * k).reshape(shape), n=self.nx, axis=0)

    def grad_v(self, h, axis):
        """4th-order central difference along velocity axis (0-based).

        Fields carry Gaussian decay at the truncation, so the stencil uses
        zero extension outside the grid.
        """
        ax = h.ndim - self.dv_dim + axis
        pad = [(0, 0)] * h.ndim
        pad[ax] = (2, 2)
        hp = np.pad(h, pad)
        sl = [slice(None)] * h.ndim

        def shifted(offset):
            s = list(sl)
            s[ax] = slice(2 + offset, 2 + offset + h.shape[ax])
            return hp[tuple(s)]

        return (-shifted(2) + 8 * shifted(1) - 8 * shifted(-1) + shifted(-2)) / (
            12 * self.dv)


def orthonormalize(grid, candidates):
    """Gram-Schmidt a list of velocity-grid functions under the grid weights."""
    out = []
    for c in candidates:
        c = np.array(c, dtype=float)
        for q in out:
            c -= grid.inner_v(q, c) * q
        nrm = np.sqrt(grid.inner_v(c, c))
        out.append(c / nrm)
    return np.array(out)


def maxwellian(grid):
    """Global equilibrium and its square root on the velocity grid."""
    return grid.maxwellian, grid.msqrt


# ---------------------------------------------------------------------------
# fields


@dataclass
class Field:
    """One real-valued sample h(x, v) (or a distribution f) on a PhaseGrid."""

    grid: PhaseGrid
    values: np.ndarray
    rep: str = "h"  # "h" perturbation | "f" distribution

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} != grid shape {self.grid.shape}")
        if self.rep not in ("h", "f"):
            raise ValueError("rep must be 'h' or 'f'")

    def copy(self):
        return Field(self.grid, self.values.copy(), self.rep)


def to_distribution(grid, h, eps):
    """f = M + eps*sqrt(M)*h."""
    return grid.maxwellian + eps * grid.msqrt * h


def to_perturbation(grid, f, eps):
    """Invert f = M + eps*sqrt(M)*h for h."""
    return (f - grid.maxwellian) / (eps * grid.msqrt)


# ---------------------------------------------------------------------------
# projections


def pi_l(grid, h, basis=None):
    """Per-x orthogonal projection onto the local equilibrium manifold."""
    phi = grid.null_basis if basis is None else basis
    coef = np.tensordot(h, phi * grid.wv, axes=(tuple(range(-grid.dv_dim, 0)),
                                                tuple(range(1, phi.ndim))))
    return np.tensordot(coef, phi, axes=([-1], [0]))


def micro_part(grid, h, basis=None):
    """Microscopic remainder h - Pi_L(h)."""
    return h - pi_l(grid, h, basis)


def pi_g(grid, h, basis=None):
    """Projection onto the global equilibrium directions (constant in x).

    Orthogonal in L^2_{x,v}: the projected field is x-independent, so the
    x-average carries a 1/(2 pi) normalization.
    """
    phi = grid.null_basis if basis is None else basis
    coef = global_moments(grid, h, phi) / TWO_PI
    out = np.tensordot(coef, phi, axes=(0, 0))
    return np.broadcast_to(out, h.shape).copy()


def global_moments(grid, h, basis=None):
    """<h, phi_i>_{x,v} for the global null-space directions."""
    phi = grid.null_basis if basis is None else basis
    w = grid.dx * grid.wv
    return np.array([np.sum(h * (p * w)) for p in phi])


# ---------------------------------------------------------------------------
# norms


def multi_indices(grid, s):
    """Derivative multi-indices (lx, jv-tuple) with 1 <= lx+|jv| <= s."""
    out = []
    dv = grid.dv_dim
    for total in range(1, s + 1):
        for lx in range(total, -1, -1):
            rem = total - lx
            if dv == 1:
                out.append((lx, (rem,)))
            else:
                for j1 in range(rem, -1, -1):
                    out.append((lx, (j1, rem - j1)))
    return out


def apply_derivative(grid, h, lx, jv):
    out = h
    for _ in range(lx):
        out = grid.grad_x(out)
    for axis, order in enumerate(jv):
        for _ in range(order):
            out = grid.grad_v(out, axis)
    return out


def norms(grid, h, s=1, gamma=0.0, weights=None):
    """Sobolev and coercivity norms of a perturbation field.

    Returns a dict with keys l2, hs, lam, hs_lam.  x-derivatives are
    spectral, v-derivatives 4th-order central differences; the coercivity
    weight is (1+|v|)^(gamma/2).
    """
    if s > 2:
        raise ValueError("Sobolev order s > 2 is unsupported")
    lam_w = (1.0 + grid.vmag) ** (gamma / 2)
    l2_sq = grid.l2(h) ** 2
    lam_sq = grid.l2(h * lam_w) ** 2
    hs_sq, hs_lam_sq = l2_sq, lam_sq
    for lx, jv in multi_indices(grid, s):
        d = apply_derivative(grid, h, lx, jv)
        hs_sq += grid.l2(d) ** 2
        hs_lam_sq += grid.l2(d * lam_w) ** 2
    return {
        "l2": np.sqrt(l2_sq),
        "hs": np.sqrt(hs_sq),
        "lam": np.sqrt(lam_sq),
        "hs_lam": np.sqrt(hs_lam_sq),
    }


# ---------------------------------------------------------------------------
# hypocoercivity functional


@dataclass
class FunctionalWeights:
    """Coefficients of the s=1 hypocoercivity functional and energy settings.

    The functional is A ||h||^2 + alpha_w ||dx h||^2 + b_w ||dv h_perp||^2
    + a_w * eps * <dx h, dv1 h>.  q is the mode-weight exponent of the
    chaos energy, s the Sobolev order of the diagnostics, gamma the
    coercivity-norm exponent.
    """

    A: float = 1.0
    alpha_w: float = 1.0
    b_w: float = 1.0
    a_w: float = 0.5
    q: float = 3.0
    s: int = 1
    gamma: float = 0.0

    def validate(self, eps):
        if self.a_w ** 2 * eps ** 2 >= 4.0 * self.alpha_w * self.b_w:
            raise ValueError(
                "functional weights not positive definite for eps="
                f"{eps}: need a_w^2 eps^2 < 4 alpha_w b_w")
        return self


def projection_gradient_constant(grid, basis=None):
    """C with ||grad_v Pi_L h||_{L2_v} <= C ||h||_{L2_v} on the grid."""
    phi = grid.null_basis if basis is None else basis
    g = np.zeros((len(phi), len(phi)))
    grads = [[grid.grad_v(p, a) for a in range(grid.dv_dim)] for p in phi]
    for i in range(len(phi)):
        for j in range(len(phi)):
            g[i, j] = sum(grid.inner_v(grads[i][a], grads[j][a])
                          for a in range(grid.dv_dim))
    return float(np.sqrt(np.linalg.eigvalsh(g).max()))


def equivalence_constants(grid, weights, eps, c_pi=None):
    """Constants (kappa1, kappa2) with kappa1 ||h||_H1^2 <= eta[h] <= kappa2 ||h||_H1^2.

    Conservative closed-form bounds: the gradient of the fluid projection
    is controlled by c_pi ||h||, and Young's inequality splits the mixing
    term.  kappa1 > 0 requires the weights to dominate the mixing at this
    eps.
    """
    if c_pi is None:
        c_pi = projection_gradient_constant(grid)
    A, al, b, a = weights.A, weights.alpha_w, weights.b_w, weights.a_w
    ae = a * eps
    kappa2 = max(A + 2 * b * c_pi ** 2, al + ae / 2, 2 * b + ae / 2)
    if ae == 0:
        return min(A / (1 + 2 * c_pi ** 2), al, b / 2), kappa2
    t1 = ae / b
    t2 = ae * c_pi ** 2 / A
    cu = A / 2
    cx = al - ae * (t1 + t2) / 2
    cy = b / 2
    kappa1 = min(cu / (1 + 2 * c_pi ** 2), cx, cy / 2)
    return float(kappa1), float(kappa2)


def hypo_functional(grid, h, eps, weights, basis=None):
    """Value of the s=1 hypocoercivity functional eta[h]."""
    weights.validate(eps)
    hperp = micro_part(grid, h, basis)
    dxh = grid.grad_x(h)
    val = (weights.A * grid.l2(h) ** 2
           + weights.alpha_w * grid.l2(dxh) ** 2
           + weights.b_w * sum(grid.l2(grid.grad_v(hperp, a)) ** 2
                               for a in range(grid.dv_dim))
           + weights.a_w * eps * grid.inner_xv(dxh, grid.grad_v(h, 0)))
    return float(val)


# ---------------------------------------------------------------------------
# chaos fields


@dataclass
class GpcField:
    """K coefficient fields h_k on a shared grid, h^K = sum_k h_k psi_k(z)."""

    grid: PhaseGrid
    basis: object
    coeffs: np.ndarray  # (K, nx, *vshape)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        expect = (self.basis.modes,) + self.grid.shape
        if self.coeffs.shape != expect:
            raise ValueError(f"coeffs shape {self.coeffs.shape} != {expect}")

    def copy(self):
        return GpcField(self.grid, self.basis, self.coeffs.copy())

    def reconstruct(self, z):
        """Pointwise sum h_k psi_k(z) for scalar z in [-1, 1]."""
        if not -1.0 <= z <= 1.0:
            raise ValueError(f"z={z} outside [-1, 1]")
        psi = self.basis.eval_all(np.array([z]))[:, 0]
        return np.tensordot(psi, self.coeffs, axes=(0, 0))


def energy_ek(grid, field, q=3.0, s=1, gamma=0.0, basis_growth_p=None):
    """Weighted chaos energy sum_k (k^q ||h_k||_{H^s})^2, 1-based modes."""
    import warnings

    if basis_growth_p is not None and q <= basis_growth_p + 2:
        warnings.warn(
            f"energy exponent q={q} <= p+2={basis_growth_p + 2}: outside the "
            "K-uniform decay hypothesis", stacklevel=2)
    total = 0.0
    for k0, hk in enumerate(field.coeffs):
        nk = norms(grid, hk, s=s, gamma=gamma)["hs"]
        total += (k0 + 1.0) ** (2 * q) * nk ** 2
    return float(total)


CHEB_EXTREMA_POINTS = 257


def z_sample_grid(n=CHEB_EXTREMA_POINTS):
    """Chebyshev-extrema grid on [-1, 1]: dense, clustered sampling of I_z."""
    return np.cos(np.arange(n) * np.pi / (n - 1))[::-1]


def sup_norms(field, s=1, gamma=0.0):
    """Sup-in-z and quadrature L2-in-z norms of a chaos field.

    Returns dict with hs_sup (max over the 257-point extrema grid),
    hs_l2z (quadrature z-integral), and the Parseval sum over modes.
    """
    grid, basis = field.grid, field.basis
    zs = z_sample_grid()
    tab = basis.eval_all(zs)
    sup = 0.0
    for j in range(zs.size):
        hz = np.tensordot(tab[:, j], field.coeffs, axes=(0, 0))
        sup = max(sup, norms(grid, hz, s=s, gamma=gamma)["hs"])
    mode_sq = sum(norms(grid, hk, s=s, gamma=gamma)["hs"] ** 2
                  for hk in field.coeffs)
    node_tab = basis.node_table
    l2z_sq = 0.0
    for j, w in enumerate(basis.quad_weights):
        hz = np.tensordot(node_tab[:, j], field.coeffs, axes=(0, 0))
        l2z_sq += w * norms(grid, hz, s=s, gamma=gamma)["hs"] ** 2
    return {"hs_sup": sup, "hs_l2z": np.sqrt(l2z_sq),
            "hs_parseval": np.sqrt(mode_sq)}


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"SGKF"


def save_field(path, field):
    """Flat binary snapshot: magic, version, rep flag, dims, row-major payload."""
    arr = np.ascontiguousarray(field.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BBB", 1, 0 if field.rep == "h" else 1, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def load_field(path, grid):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a field snapshot")
        version, repflag, ndim = struct.unpack("<BBB", fh.read(3))
        if version != 1:
            raise ValueError(f"unsupported snapshot version {version}")
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
    return Field(grid, data.copy(), "h" if repflag == 0 else "f")


def field_to_csv(path, field, max_entries=100_000):
    """CSV export with grid coordinates; intended for small grids."""
    grid = field.grid
    if field.values.size > max_entries:
        raise ValueError(
            f"{field.values.size} entries exceed the CSV export cap "
            f"{max_entries}")
    cols = ["x"] + [f"v{a + 1}" for a in range(grid.dv_dim)] + ["value"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        it = np.ndindex(*field.values.shape)
        for idx in it:
            coords = [grid.x[idx[0]]] + [grid.v_axis[i] for i in idx[1:]]
            row = coords + [field.values[idx]]
            fh.write(",".join(f"{val:.17g}" for val in row) + "\n")
