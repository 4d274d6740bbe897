"""Orthonormal polynomial chaos bases on [-1, 1] and their Galerkin coupling tensors.

Two families are supported: Legendre (uniform density 1/2) and Chebyshev
(first-kind density 1/(pi*sqrt(1-z^2))).  Both densities integrate to one,
so psi_1 = 1 and the quadrature rules below are probabilists' Gauss rules.
Mode numbering follows the usual chaos convention: psi_k has polynomial
degree k-1, k = 1..K.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

FAMILIES = ("legendre", "chebyshev")

# nominal sup-norm growth |psi_k|_inf <= C k^p per family
SUP_GROWTH = {"legendre": (np.sqrt(2.0), 0.5), "chebyshev": (np.sqrt(2.0), 0.0)}


def recurrence_offdiag(family, n):
    """Off-diagonal Jacobi coefficients b_1..b_n of the orthonormal recurrence.

    Both weights are even, so the diagonal coefficients vanish and
    z*p_k = b_{k+1} p_{k+1} + b_k p_{k-1}.
    """
    k = np.arange(1, n + 1, dtype=float)
    if family == "legendre":
        return k / np.sqrt(4.0 * k * k - 1.0)
    if family == "chebyshev":
        b = np.full(n, 0.5)
        if n >= 1:
            b[0] = 1.0 / np.sqrt(2.0)
        return b
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def gauss_rule(family, n):
    """n-point Gauss rule for the family weight via Golub-Welsch."""
    if n < 1:
        raise ValueError("quadrature needs at least one node")
    b = recurrence_offdiag(family, n - 1) if n > 1 else np.empty(0)
    nodes, vecs = eigh_tridiagonal(np.zeros(n), b)
    weights = vecs[0] ** 2  # total mass 1: probability weight
    return nodes, weights


@dataclass
class GpcBasis:
    """Orthonormal chaos basis: family, K retained modes, Gauss quadrature."""

    family: str
    modes: int
    quad_nodes: np.ndarray
    quad_weights: np.ndarray
    offdiag: np.ndarray = field(repr=False)  # b_1..b_{modes-1}

    def weight_density(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == "legendre":
            return np.full_like(z, 0.5)
        return 1.0 / (np.pi * np.sqrt(1.0 - z * z))

    def eval_all(self, z):
        """Table psi_k(z) for k = 1..K, shape (K, len(z))."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        K = self.modes
        tab = np.empty((K, z.size))
        tab[0] = 1.0
        if K > 1:
            b = recurrence_offdiag(self.family, K - 1)
            tab[1] = z / b[0]
            for k in range(2, K):
                tab[k] = (z * tab[k - 1] - b[k - 2] * tab[k - 2]) / b[k - 1]
        return tab

    def eval_mode(self, k, z):
        """psi_k(z) with 1-based mode index k."""
        if not 1 <= k <= self.modes:
            raise ValueError(f"mode {k} outside 1..{self.modes}")
        return self.eval_all(z)[k - 1]

    @property
    def node_table(self):
        """psi_k at the quadrature nodes, cached, shape (K, n_quad)."""
        tab = getattr(self, "_node_table", None)
        if tab is None:
            tab = self.eval_all(self.quad_nodes)
            self._node_table = tab
        return tab

    def gram(self):
        """Quadrature Gram matrix <psi_j, psi_k>_pi."""
        t = self.node_table
        return (t * self.quad_weights) @ t.T

    def project(self, g):
        """Chaos coefficients of a callable g(z) by quadrature."""
        vals = np.asarray(g(self.quad_nodes), dtype=float)
        return self.project_values(vals)

    def project_values(self, values):
        """Chaos coefficients of values given at the quadrature nodes.

        The trailing axis convention: values[..., j] at node z_j; returns
        coefficients with mode axis first, shape (K, ...).
        """
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.node_table * self.quad_weights, values,
                            axes=([1], [-1]))


def build_basis(family, modes, quad_count=None):
    """Construct a GpcBasis; quadrature defaults to 4K nodes."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if modes < 1:
        raise ValueError("need at least one retained mode")
    if quad_count is None:
        quad_count = 4 * modes
    if quad_count < 2 * modes:
        raise ValueError(
            f"quad_count={quad_count} cannot certify orthonormality of "
            f"{modes} modes; need at least {2 * modes}")
    nodes, weights = gauss_rule(family, quad_count)
    off = recurrence_offdiag(family, max(modes - 1, 0))
    return GpcBasis(family, modes, nodes, weights, off)


def jacobi_matrix(basis):
    """G_ki = int z psi_k psi_i pi dz via quadrature (tridiagonal, zero diagonal)."""
    t = basis.node_table
    return (t * (basis.quad_nodes * basis.quad_weights)) @ t.T


def triple_tensors(basis):
    """T0_kij = int psi_k psi_i psi_j pi dz and T1 with an extra factor z.

    The T1 integrand has degree 3(K-1)+1; the node count is raised so the
    rule is exact for it.
    """
    K = basis.modes
    need = int(np.ceil((3 * (K - 1) + 2) / 2))
    if basis.quad_nodes.size >= need:
        nodes, weights, tab = basis.quad_nodes, basis.quad_weights, basis.node_table
    else:
        nodes, weights = gauss_rule(basis.family, need)
        tab = basis.eval_all(nodes)
    t0 = np.einsum("kq,iq,jq,q->kij", tab, tab, tab, weights)
    t1 = np.einsum("kq,iq,jq,q->kij", tab, tab, tab, weights * nodes)
    return t0, t1


def sup_norm_growth(basis, modes=None, grid_points=10_000):
    """Per-mode sup norms on a dense z-grid and the fitted growth exponent.

    Returns (sups, p) where sups[k-1] = max |psi_k| over the grid and p is
    the log-log least-squares slope over the upper half of the mode range,
    which estimates the asymptotic exponent without low-order transients.
    """
    K = basis.modes if modes is None else min(modes, basis.modes)
    z = np.linspace(-1.0, 1.0, grid_points)
    sups = np.abs(basis.eval_all(z)[:K]).max(axis=1)
    k = np.arange(1, K + 1)
    lo = max((K + 1) // 2, 1)
    x, y = np.log(k[lo - 1:]), np.log(sups[lo - 1:])
    if x.size < 2:
        return sups, 0.0
    design = np.vstack([x, np.ones_like(x)]).T
    slope = np.linalg.lstsq(design, y, rcond=None)[0][0]
    return sups, float(slope)


def triple_sparsity_mask(K, degree_budget):
    """Boolean (K,K,K) mask of entries allowed to be nonzero.

    With psi_k of degree k-1 and an extra polynomial factor of degree
    `degree_budget`, the triple integral vanishes unless each index obeys
    the pairwise bound deg_k <= deg_i + deg_j + budget, in 1-based modes
    i + j >= k + 1 - budget (and its permutations).
    """
    idx = np.arange(1, K + 1)
    m, n, k = np.meshgrid(idx, idx, idx, indexing="ij")
    b = degree_budget
    return (n + k >= m + 1 - b) & (m + k >= n + 1 - b) & (m + n >= k + 1 - b)


def pair_sparsity_mask(K, degree_budget=1):
    """Boolean (K,K) mask: pair integrals with a degree-`budget` factor."""
    idx = np.arange(1, K + 1)
    k, i = np.meshgrid(idx, idx, indexing="ij")
    return np.abs(k - i) <= degree_budget


@dataclass
class CouplingTensors:
    """Factorized Galerkin coupling: pair matrix G and triple tensors T0, T1.

    The angular kernel factors multiply at assembly time: the pair coupling
    at angle cosine c is b0(c) I + b1(c) G and the triple coupling is
    b0(c) T0 + b1(c) T1.  This factorization is exact because the kernel is
    affine in z, so the z-integrals are angle independent.
    """

    g: np.ndarray
    t0: np.ndarray
    t1: np.ndarray

    @classmethod
    def from_basis(cls, basis):
        t0, t1 = triple_tensors(basis)
        return cls(jacobi_matrix(basis), t0, t1)

    @property
    def modes(self):
        return self.g.shape[0]

    def pair_coupling(self, b0_value, b1_value):
        """S~_ki at one angle: b0 delta_ki + b1 G_ki."""
        return b0_value * np.eye(self.modes) + b1_value * self.g

    def triple_coupling(self, b0_value, b1_value):
        """S_kij at one angle: b0 T0 + b1 T1."""
        return b0_value * self.t0 + b1_value * self.t1
