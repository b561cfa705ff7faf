"""Tensor Fourier x Hermite spectral basis on a torus, orthonormal in L2(mu).

The reference measure is mu(dq dp) = nu(dq) kappa(dp) with nu the Gibbs
measure e^{-beta V(q)} dq / Z on a d-dimensional torus and kappa a centred
Gaussian with variance mass/beta per momentum coordinate.  An optional extra
scalar coordinate xi carries a centred Gaussian with variance 1/beta.

Position functions are handled in "flat" coordinates: the orthonormal family
used for the q-dependence is

    psi_k(q) = chi_k(q) / sqrt(rho(q)),

where chi_k are the real trigonometric functions {1, sqrt2 cos, sqrt2 sin}
(orthonormal for the uniform probability measure) and rho is the density of
nu relative to the uniform measure.  Dividing by sqrt(rho) makes the family
exactly orthonormal in L2(nu) and keeps all assembled matrix entries exact
integrals of trigonometric polynomials, so a modest uniform quadrature grid
is exact for band-limited potentials.

The constant function is removed structurally: the coefficient vector of
sqrt(rho) in the trigonometric family is computed once and the basis is
rotated (one Householder reflection) so that its orthogonal complement spans
the working space.  Every represented function therefore has exactly zero
mean against mu, which keeps the generators invertible on the working space.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NumericalFailure

TWO_PI = 2.0 * math.pi

#: default ceiling on the total basis dimension; the environment variable
#: HYPOCO_MAX_DIM overrides it.
DEFAULT_MAX_DIM = 50_000

#: default absolute tolerance on max-entry residuals of exact identities.
DEFAULT_TOL_IDENTITY = 1e-10


def max_dim_default() -> int:
    env = os.environ.get("HYPOCO_MAX_DIM")
    if env is None:
        return DEFAULT_MAX_DIM
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError([f"HYPOCO_MAX_DIM is not an integer: {env!r}"]) from exc


# ---------------------------------------------------------------------------
# potential
# ---------------------------------------------------------------------------


class Potential:
    """Real band-limited potential V(q) = sum_k v_k exp(i w k.q) on the torus.

    Coefficients are stored for integer wavenumber multi-indices k with the
    reality constraint v_{-k} = conj(v_k); the missing half of a conjugate
    pair is filled in automatically, and contradictory pairs are rejected.
    """

    def __init__(self, coeffs, d, torus_length=TWO_PI):
        if d < 1:
            raise ConfigError(["potential dimension must be >= 1"])
        self.d = int(d)
        self.torus_length = float(torus_length)
        closed: dict[tuple, complex] = {}
        problems = []
        for k, v in coeffs.items():
            k = tuple(int(ki) for ki in (k if isinstance(k, (tuple, list)) else (k,)))
            if len(k) != self.d:
                problems.append(f"potential mode {k} has {len(k)} components, expected d={self.d}")
                continue
            closed[k] = closed.get(k, 0.0) + complex(v)
        for k in list(closed):
            mk = tuple(-ki for ki in k)
            if mk in closed:
                if abs(closed[mk] - np.conj(closed[k])) > 1e-12 * max(1.0, abs(closed[k])):
                    problems.append(
                        f"potential coefficients at {k} and {mk} are not complex conjugates"
                    )
            else:
                closed[mk] = complex(np.conj(closed[k]))
        zero = (0,) * self.d
        if zero in closed and abs(closed[zero].imag) > 1e-14 * max(1.0, abs(closed[zero])):
            problems.append("constant potential coefficient must be real")
        if problems:
            raise ConfigError(problems)
        closed = {k: v for k, v in closed.items() if abs(v) > 0.0}
        self.coeffs = closed

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, d, torus_length=TWO_PI):
        return cls({}, d, torus_length)

    @classmethod
    def from_string(cls, text, d, torus_length=TWO_PI):
        """Parse 'k1 .. kd:re[,im]' entries separated by ';'.

        Example for d=1: "1:0.5,0" is v_1 = 1/2 (+ the implied v_{-1}),
        i.e. V(q) = cos q on the default torus.
        """
        text = text.strip()
        if not text or text == "0":
            return cls.zero(d, torus_length)
        coeffs: dict[tuple, complex] = {}
        problems = []
        for raw in text.split(";"):
            entry = raw.strip()
            if not entry:
                continue
            head, sep, tail = entry.partition(":")
            if not sep:
                problems.append(f"potential entry {entry!r} is missing ':'")
                continue
            try:
                k = tuple(int(t) for t in head.replace(",", " ").split())
            except ValueError:
                problems.append(f"potential entry {entry!r} has a non-integer wavenumber")
                continue
            if len(k) != d:
                problems.append(
                    f"potential entry {entry!r} has {len(k)} wavenumber components, expected {d}"
                )
                continue
            parts = tail.split(",")
            try:
                re_part = float(parts[0])
                im_part = float(parts[1]) if len(parts) > 1 else 0.0
                if len(parts) > 2:
                    raise ValueError
            except (ValueError, IndexError):
                problems.append(f"potential entry {entry!r} has a malformed coefficient")
                continue
            coeffs[k] = coeffs.get(k, 0.0) + complex(re_part, im_part)
        if problems:
            raise ConfigError(problems)
        return cls(coeffs, d, torus_length)

    # -- queries -----------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    @property
    def degrees(self) -> tuple:
        """Per-coordinate maximal |k_i| over the stored modes."""
        if not self.coeffs:
            return (0,) * self.d
        return tuple(max(abs(k[i]) for k in self.coeffs) for i in range(self.d))

    def _pos_reps(self):
        """One representative per conjugate pair (lexicographically positive)."""
        reps = []
        for k in self.coeffs:
            if k == (0,) * self.d:
                continue
            nz = next(ki for ki in k if ki != 0)
            if nz > 0:
                reps.append(k)
        return reps

    # -- evaluation on tensor grids ----------------------------------------

    def _phase(self, k, axes):
        """k.q on the tensor grid spanned by the 1-D arrays in `axes`."""
        w = TWO_PI / self.torus_length
        shape = [len(a) for a in axes]
        out = np.zeros(shape)
        for i, a in enumerate(axes):
            sl = [None] * self.d
            sl[i] = slice(None)
            out = out + (w * k[i]) * a[tuple(sl)]
        return out

    def value_grid(self, axes):
        shape = [len(a) for a in axes]
        out = np.zeros(shape)
        zero = (0,) * self.d
        if zero in self.coeffs:
            out += self.coeffs[zero].real
        for k in self._pos_reps():
            v = self.coeffs[k]
            ph = self._phase(k, axes)
            out += 2.0 * (v.real * np.cos(ph) - v.imag * np.sin(ph))
        return out

    def grad_grid(self, axes):
        """Gradient, shape (d, n1, ..., nd)."""
        w = TWO_PI / self.torus_length
        shape = [self.d] + [len(a) for a in axes]
        out = np.zeros(shape)
        for k in self._pos_reps():
            v = self.coeffs[k]
            ph = self._phase(k, axes)
            # d/dq_i of 2 Re(v e^{i ph}) = 2 Re(i w k_i v e^{i ph})
            common = -2.0 * (v.real * np.sin(ph) + v.imag * np.cos(ph))
            for i in range(self.d):
                out[i] += (w * k[i]) * common
        return out

    def hessian_grid(self, axes):
        """Hessian, shape (d, d, n1, ..., nd)."""
        w = TWO_PI / self.torus_length
        shape = [self.d, self.d] + [len(a) for a in axes]
        out = np.zeros(shape)
        for k in self._pos_reps():
            v = self.coeffs[k]
            ph = self._phase(k, axes)
            common = -2.0 * (v.real * np.cos(ph) - v.imag * np.sin(ph))
            for i in range(self.d):
                for j in range(self.d):
                    out[i, j] += (w * k[i]) * (w * k[j]) * common
        return out

    def laplacian_grid(self, axes):
        hess = self.hessian_grid(axes)
        return np.einsum("ii...->...", hess)

    def to_string(self):
        parts = []
        zero = (0,) * self.d
        if zero in self.coeffs:
            parts.append(
                " ".join("0" for _ in range(self.d)) + f":{self.coeffs[zero].real!r},0"
            )
        for k in sorted(self._pos_reps()):
            v = self.coeffs[k]
            parts.append(" ".join(str(ki) for ki in k) + f":{v.real!r},{v.imag!r}")
        return ";".join(parts)

    def __repr__(self):
        return f"Potential(d={self.d}, coeffs={self.coeffs!r})"


# ---------------------------------------------------------------------------
# basis specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BasisSpec:
    """Cutoffs and physical parameters fixing the discrete space."""

    d: int
    n_q: int
    n_p: int
    beta: float = 1.0
    mass: float = 1.0
    torus_length: float = TWO_PI
    has_xi: bool = False
    n_xi: int = 0

    def __post_init__(self):
        problems = []
        if self.d < 1:
            problems.append("d must be >= 1")
        if self.n_q < 0 or self.n_p < 0:
            problems.append("n_q and n_p must be >= 0")
        if self.beta <= 0:
            problems.append("beta must be > 0")
        if self.mass <= 0:
            problems.append("mass must be > 0")
        if self.torus_length <= 0:
            problems.append("torus_length must be > 0")
        if self.has_xi and self.n_xi < 1:
            problems.append("n_xi must be >= 1 when the xi coordinate is enabled")
        if not self.has_xi and self.n_xi != 0:
            problems.append("n_xi must be 0 without the xi coordinate")
        if problems:
            raise ConfigError(problems)

    @property
    def n_pos_1d(self) -> int:
        return 2 * self.n_q + 1

    @property
    def n_pos(self) -> int:
        return self.n_pos_1d**self.d

    @property
    def n_herm(self) -> int:
        return (self.n_p + 1) ** self.d

    @property
    def n_xi_tot(self) -> int:
        return self.n_xi + 1 if self.has_xi else 1

    @property
    def dim_span(self) -> int:
        return self.n_pos * self.n_herm * self.n_xi_tot

    @property
    def dimension(self) -> int:
        """Dimension of the working (mean-zero) space."""
        return self.dim_span - 1


# ---------------------------------------------------------------------------
# 1-D building blocks
# ---------------------------------------------------------------------------


def hermite_value_table(y, n_max):
    """Orthonormal Hermite values h_0..h_{n_max} at standardised points y.

    h_n is the degree-n polynomial family orthonormal for the standard
    Gaussian; the stable three-term recurrence is used.
    """
    y = np.asarray(y, dtype=float)
    table = np.zeros((n_max + 1,) + y.shape)
    table[0] = 1.0
    if n_max >= 1:
        table[1] = y
    for n in range(1, n_max):
        table[n + 1] = (y * table[n] - math.sqrt(n) * table[n - 1]) / math.sqrt(n + 1)
    return table


def gauss_hermite_rule(order, variance):
    """Nodes/probability-weights integrating exactly against N(0, variance)."""
    y, w = np.polynomial.hermite_e.hermegauss(order)
    return y * math.sqrt(variance), w / math.sqrt(TWO_PI)


@dataclass
class HermiteOps:
    """Matrices of the elementary one-coordinate Gaussian operators.

    All matrices act on coefficients in the orthonormal Hermite family for
    N(0, variance) truncated at degree n; `lower` is d/dp, its transpose is
    the weighted adjoint, `anti` the exactly antisymmetric half-difference,
    `mult` multiplication by p and `mult2` multiplication by p^2.
    """

    variance: float
    n: int
    mult: np.ndarray = field(init=False)
    mult2: np.ndarray = field(init=False)
    lower: np.ndarray = field(init=False)
    anti: np.ndarray = field(init=False)
    number: np.ndarray = field(init=False)

    def __post_init__(self):
        sigma = math.sqrt(self.variance)
        n1 = self.n + 1
        mult = np.zeros((n1, n1))
        lower = np.zeros((n1, n1))
        mult2 = np.zeros((n1, n1))
        for k in range(self.n):
            c = sigma * math.sqrt(k + 1)
            mult[k + 1, k] = c
            mult[k, k + 1] = c
            lower[k, k + 1] = math.sqrt(k + 1) / sigma
        for k in range(n1):
            mult2[k, k] = (2 * k + 1) * self.variance
            if k + 2 <= self.n:
                c = self.variance * math.sqrt((k + 1) * (k + 2))
                mult2[k + 2, k] = c
                mult2[k, k + 2] = c
        self.mult = mult
        self.mult2 = mult2
        self.lower = lower
        self.anti = 0.5 * (lower - lower.T)
        self.number = np.diag(np.arange(n1, dtype=float))


def fourier_deriv_1d(n_q, torus_length):
    """d/dq on the real family {1, sqrt2 cos(w k q), sqrt2 sin(w k q)}."""
    w = TWO_PI / torus_length
    n = 2 * n_q + 1
    D = np.zeros((n, n))
    for k in range(1, n_q + 1):
        c, s = 2 * k - 1, 2 * k
        D[s, c] = -w * k
        D[c, s] = w * k
    return D


def fourier_value_table(q, n_q, torus_length):
    """Values of the real trigonometric family at points q, shape (len(q), 2n_q+1)."""
    w = TWO_PI / torus_length
    q = np.asarray(q, dtype=float)
    out = np.zeros((q.size, 2 * n_q + 1))
    out[:, 0] = 1.0
    root2 = math.sqrt(2.0)
    for k in range(1, n_q + 1):
        out[:, 2 * k - 1] = root2 * np.cos(w * k * q)
        out[:, 2 * k] = root2 * np.sin(w * k * q)
    return out


# ---------------------------------------------------------------------------
# assembled basis
# ---------------------------------------------------------------------------


class BasisSet:
    """Concrete discretisation: quadratures, index maps and the mean-zero map.

    Attributes of note:

    ``U``
        sparse (dim_span x dimension) isometry whose columns are the working
        basis expressed in span coordinates; restricting an operator to the
        working space is ``U.T @ M @ U``.
    ``p_degree, xi_degree, parity``
        integer arrays over working-space columns; parity is the sign picked
        up under momentum (and xi) reversal.
    """

    def __init__(self, spec: BasisSpec, potential: Potential | None = None,
                 tol_identity: float = DEFAULT_TOL_IDENTITY, max_dim: int | None = None):
        if potential is None:
            potential = Potential.zero(spec.d, spec.torus_length)
        if potential.d != spec.d:
            raise ConfigError([f"potential dimension {potential.d} != basis dimension {spec.d}"])
        if abs(potential.torus_length - spec.torus_length) > 1e-12 * spec.torus_length:
            raise ConfigError(["potential and basis disagree on the torus length"])
        limit = max_dim if max_dim is not None else max_dim_default()
        if spec.dim_span > limit:
            raise NumericalFailure(
                f"problem too large: basis dimension {spec.dim_span} exceeds max_dim={limit}"
            )
        self.spec = spec
        self.potential = potential
        self.tol_identity = tol_identity

        d, n_q = spec.d, spec.n_q
        deg = max(potential.degrees) if not potential.is_zero else 0
        # Uniform grid: exact for every assembled trig-polynomial entry and
        # fine enough to resolve exp(-beta V / 2) to machine precision for
        # moderate potentials.
        self.n_grid = max(4 * n_q + 4, 2 * (2 * n_q + deg) + 2, 64)
        self.pos_axis = np.arange(self.n_grid) * (spec.torus_length / self.n_grid)
        axes = [self.pos_axis] * d

        vgrid = potential.value_grid(axes)
        boltz = np.exp(-spec.beta * vgrid)
        self.z_nu = float(boltz.mean())
        self.rho_grid = (boltz / self.z_nu).reshape(-1)
        self.sqrt_rho = np.sqrt(self.rho_grid)
        self.v_grid = vgrid.reshape(-1)

        # position basis values on the tensor grid
        table1d = fourier_value_table(self.pos_axis, n_q, spec.torus_length)
        phi = table1d
        for _ in range(1, d):
            phi = np.einsum("ga,hb->ghab", phi.reshape(phi.shape[0], -1), table1d)
            phi = phi.reshape(phi.shape[0] * table1d.shape[0], -1)
        self.phi = phi  # (n_grid^d, n_pos)

        self.deriv_1d = fourier_deriv_1d(n_q, spec.torus_length)

        # momentum and xi blocks
        self.herm = HermiteOps(spec.mass / spec.beta, spec.n_p)
        self.gh_p = gauss_hermite_rule(2 * spec.n_p + 4, spec.mass / spec.beta)
        if spec.has_xi:
            self.xi = HermiteOps(1.0 / spec.beta, spec.n_xi)
            self.gh_xi = gauss_hermite_rule(2 * spec.n_xi + 4, 1.0 / spec.beta)
        else:
            self.xi = None
            self.gh_xi = None

        self._build_mean_zero_map()
        self._build_index_arrays()
        self.gram_residual = self._gram_residual()
        if self.gram_residual > tol_identity:
            raise NumericalFailure(
                f"quadrature failure: Gram residual {self.gram_residual:.3e} "
                f"exceeds {tol_identity:.1e}"
            )

    # -- geometry of the working space --------------------------------------

    def _build_mean_zero_map(self):
        spec = self.spec
        n_pos = spec.n_pos
        # coefficients of sqrt(rho) in the trigonometric family
        c = self.phi.T @ self.sqrt_rho / self.n_grid**spec.d
        c_norm = float(np.linalg.norm(c))
        c = c / c_norm
        self.c_pos = c
        v = c.copy()
        v[0] -= 1.0
        if np.linalg.norm(v) < 1e-13:
            T = np.eye(n_pos)[:, 1:]
        else:
            H = np.eye(n_pos) - 2.0 * np.outer(v, v) / float(v @ v)
            T = H[:, 1:]
        self.T = T

        inner = spec.n_herm * spec.n_xi_tot
        self.inner = inner
        dim_span = spec.dim_span
        block_rows = np.arange(n_pos) * inner  # span rows of (pos, 0, 0)

        cols = []
        rows = []
        vals = []
        for j in range(n_pos - 1):
            rows.append(block_rows)
            cols.append(np.full(n_pos, j))
            vals.append(T[:, j])
        keep = np.setdiff1d(np.arange(dim_span), block_rows, assume_unique=False)
        rows.append(keep)
        cols.append(np.arange(keep.size) + (n_pos - 1))
        vals.append(np.ones(keep.size))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        self.U = sp.csr_matrix((vals, (rows, cols)), shape=(dim_span, dim_span - 1))
        self._keep_span = keep

    def _build_index_arrays(self):
        spec = self.spec
        inner = self.inner
        dim_h = spec.dimension
        n_t = spec.n_pos - 1

        p_degree = np.zeros(dim_h, dtype=int)
        xi_degree = np.zeros(dim_h, dtype=int)
        # remaining columns: decode the span index they select
        rem = self._keep_span
        r = rem % inner
        nxi_tot = spec.n_xi_tot
        herm_part = r // nxi_tot
        xi_part = r % nxi_tot
        digits = np.zeros((spec.d, rem.size), dtype=int)
        h = herm_part.copy()
        for i in range(spec.d - 1, -1, -1):
            digits[i] = h % (spec.n_p + 1)
            h //= spec.n_p + 1
        p_degree[n_t:] = digits.sum(axis=0)
        xi_degree[n_t:] = xi_part
        self.p_degree = p_degree
        self.xi_degree = xi_degree
        self.parity = np.where((p_degree + xi_degree) % 2 == 0, 1, -1)

    # -- assembly helpers ----------------------------------------------------

    def position_mult(self, f_grid) -> np.ndarray:
        """Multiplication by the grid-sampled function, in trig coordinates."""
        f = np.asarray(f_grid).reshape(-1)
        M = self.phi.T @ (f[:, None] * self.phi) / self.n_grid**self.spec.d
        return 0.5 * (M + M.T)

    def position_deriv(self, i) -> np.ndarray:
        """Plain d/dq_i on the tensor trigonometric family."""
        mats = [np.eye(self.spec.n_pos_1d)] * self.spec.d
        mats[i] = self.deriv_1d
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    def witten_deriv(self, i) -> np.ndarray:
        """d/dq_i + (beta/2) dV/dq_i, the flat image of the nu-derivative."""
        axes = [self.pos_axis] * self.spec.d
        dv = self.potential.grad_grid(axes)[i].reshape(-1)
        return self.position_deriv(i) + 0.5 * self.spec.beta * self.position_mult(dv)

    def span_kron(self, pos_mat=None, herm_mats=None, xi_mat=None) -> sp.csr_matrix:
        """Kronecker assembly pos x p_1 x ... x p_d x xi on the full span."""
        spec = self.spec
        factors = []
        factors.append(sp.identity(spec.n_pos, format="csr") if pos_mat is None
                       else sp.csr_matrix(pos_mat))
        herm_mats = herm_mats or {}
        eye_h = sp.identity(spec.n_p + 1, format="csr")
        for i in range(spec.d):
            m = herm_mats.get(i)
            factors.append(eye_h if m is None else sp.csr_matrix(m))
        if spec.has_xi:
            factors.append(sp.identity(spec.n_xi + 1, format="csr") if xi_mat is None
                           else sp.csr_matrix(xi_mat))
        elif xi_mat is not None:
            raise ConfigError(["xi operator requested on a basis without xi"])
        out = factors[0]
        for f in factors[1:]:
            out = sp.kron(out, f, format="csr")
        return out

    def to_h(self, m_span) -> sp.csr_matrix:
        """Restrict a span operator to the mean-zero working space."""
        return sp.csr_matrix(self.U.T @ (sp.csr_matrix(m_span) @ self.U))

    # -- quadrature ----------------------------------------------------------

    def _gram_residual(self) -> float:
        spec = self.spec
        # position factor: weighted basis against the measured density
        psiw = self.phi / self.sqrt_rho[:, None]
        g_pos = psiw.T @ (self.rho_grid[:, None] * psiw) / self.n_grid**spec.d
        res = float(np.max(np.abs(g_pos - np.eye(spec.n_pos))))
        # momentum factor (one coordinate; all coordinates share the rule)
        y, w = self.gh_p
        table = hermite_value_table(y / math.sqrt(self.herm.variance), spec.n_p)
        g_h = np.einsum("ng,g,mg->nm", table, w, table)
        res = max(res, float(np.max(np.abs(g_h - np.eye(spec.n_p + 1)))))
        if spec.has_xi:
            y, w = self.gh_xi
            table = hermite_value_table(y / math.sqrt(self.xi.variance), spec.n_xi)
            g_x = np.einsum("ng,g,mg->nm", table, w, table)
            res = max(res, float(np.max(np.abs(g_x - np.eye(spec.n_xi + 1)))))
        return res

    def quadrature_points(self):
        """Flattened tensor quadrature nodes (q, p[, xi]) and mu-weights."""
        spec = self.spec
        pos_mesh = np.meshgrid(*([self.pos_axis] * spec.d), indexing="ij")
        q = np.stack([m.reshape(-1) for m in pos_mesh], axis=-1)  # (Nq, d)
        wq = self.rho_grid / self.n_grid**spec.d

        yp, wp = self.gh_p
        p_mesh = np.meshgrid(*([yp] * spec.d), indexing="ij")
        p = np.stack([m.reshape(-1) for m in p_mesh], axis=-1)  # (Np, d)
        wp_full = np.ones(p.shape[0])
        for i, m in enumerate(np.meshgrid(*([wp] * spec.d), indexing="ij")):
            wp_full *= m.reshape(-1)

        if spec.has_xi:
            yx, wx = self.gh_xi
        else:
            yx, wx = np.zeros(1), np.ones(1)
        return (q, wq), (p, wp_full), (yx, wx)

    def expand_function(self, fn):
        """Quadrature expansion of a callable on the working basis.

        `fn(q, p, xi)` receives arrays of shape (M, d), (M, d), (M,) and
        must return shape (M,).  Returns (coefficients, residual) where the
        residual is the L2(mu) norm of the part of `fn` outside the working
        space (constants included).
        """
        spec = self.spec
        (q, wq), (p, wp), (yx, wx) = self.quadrature_points()
        n_qpts, n_ppts, n_xpts = q.shape[0], p.shape[0], yx.shape[0]
        if n_qpts * n_ppts * n_xpts > 5_000_000:
            raise NumericalFailure("problem too large: expansion grid exceeds 5e6 points")

        qq = np.repeat(np.repeat(q, n_ppts, axis=0), n_xpts, axis=0)
        pp = np.tile(np.repeat(p, n_xpts, axis=0), (n_qpts, 1))
        xx = np.tile(yx, n_qpts * n_ppts)
        raw = np.asarray(fn(qq, pp, xx), dtype=float).reshape(n_qpts, n_ppts, n_xpts)
        norm2 = float(np.einsum("qpx,q,p,x->", raw**2, wq, wp, wx))

        # contract xi
        if spec.has_xi:
            table_x = hermite_value_table(yx / math.sqrt(self.xi.variance), spec.n_xi)
            vals = np.einsum("qpx,nx,x->qpn", raw, table_x, wx)
        else:
            vals = raw[..., 0:1] * wx[0]
        # contract momentum coordinates one at a time
        yp, wp1 = self.gh_p
        table_p = hermite_value_table(yp / math.sqrt(self.herm.variance), spec.n_p)
        n_gh = yp.size
        vals = vals.reshape((n_qpts,) + (n_gh,) * spec.d + (vals.shape[-1],))
        for _ in range(spec.d):
            # tensordot appends the new Hermite axis at the end; the next
            # momentum grid axis slides back to position 1.
            vals = np.tensordot(vals, table_p * wp1[None, :], axes=([1], [1]))
        # axes now: (q, xi_or_1, n_1, ..., n_d) -> reorder to (q, n..., xi)
        vals = np.moveaxis(vals, 1, -1)
        # psi_j = chi_j / sqrt(rho) and the nu-weight is rho / N^d, so the
        # position contraction carries chi_j sqrt(rho) / N^d.
        coeff = np.tensordot(self.phi * self.sqrt_rho[:, None], vals, axes=([0], [0]))
        coeff /= self.n_grid**spec.d
        coeff = coeff.reshape(-1)
        h_vec = np.asarray(self.U.T @ coeff)
        residual = math.sqrt(max(norm2 - float(h_vec @ h_vec), 0.0))
        return h_vec, residual

    def inner_product(self, u, v) -> float:
        """L2(mu) pairing of two working-space coefficient vectors."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.shape != (self.spec.dimension,) or v.shape != (self.spec.dimension,):
            raise ConfigError(["coefficient vectors do not match the basis dimension"])
        return float(u @ v)


def build_basis(spec: BasisSpec, potential: Potential | None = None,
                tol_identity: float = DEFAULT_TOL_IDENTITY,
                max_dim: int | None = None) -> BasisSet:
    """Validate, build quadratures and index maps, and check orthonormality."""
    return BasisSet(spec, potential, tol_identity=tol_identity, max_dim=max_dim)
