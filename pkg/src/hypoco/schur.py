"""Saddle-point decomposition of the generator and resolvent bounds.

The working space splits as H0 (ker S) plus its orthogonal complement H+,
and H+ splits further into H1 = ran(A from H0) and H2.  In these coordinates
the generator has a saddle-point block structure whose Schur complement on H0
yields an explicit inverse; the module builds the decomposition, evaluates
the closed-form resolvent bound, and provides brute-force oracles (dense SVD
and inverse power iteration) for the exact resolvent norm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import DEFAULT_TOL_IDENTITY, BasisSpec, Potential, build_basis
from .errors import ConfigError, InvariantViolation, NumericalFailure
from .operators import ModelOperators, ModelSpec, assemble_model, verify_structural_assumptions

#: dense SVD is used for exact norms below this dimension, iteration above
DENSE_THRESHOLD = 4000

#: relative change under cutoff doubling below which a value counts as converged
CONVERGENCE_RTOL = 0.01


def operator_norm(mat) -> float:
    """Spectral norm of a dense block; zero-size blocks have norm 0."""
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return 0.0
    return float(sla.svdvals(mat)[0])


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------


@dataclass
class Decomposition:
    """Orthonormal H0/H1/H2 bases and the generator blocks in them.

    P0, P1, P2 are stored as columns in the full working space; Q1 and Q2
    hold the H1/H2 bases in H+ coordinates for block computations.  A10 is
    square (dim0 = dim1) and invertible whenever the build succeeded.
    """

    ops: ModelOperators
    idx0: np.ndarray
    idx_plus: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    A10: np.ndarray
    L11: np.ndarray
    L12: np.ndarray
    L21: np.ndarray
    L22: np.ndarray
    S11: np.ndarray
    R22: np.ndarray
    pi1_idempotency_residual: float
    pi1_range_residual: float
    l11_symmetry_residual: float
    _apl0: np.ndarray
    _lu_pp: object = field(default=None, repr=False)
    _schur: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.ops.dim

    @property
    def dim0(self) -> int:
        return len(self.idx0)

    @property
    def dim1(self) -> int:
        return self.Q1.shape[1]

    @property
    def dim2(self) -> int:
        return self.Q2.shape[1]

    def _embed_plus(self, q: np.ndarray) -> np.ndarray:
        out = np.zeros((self.dim, q.shape[1]))
        out[self.idx_plus] = q
        return out

    @property
    def P0(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim0))
        out[self.idx0, np.arange(self.dim0)] = 1.0
        return out

    @property
    def P1(self) -> np.ndarray:
        return self._embed_plus(self.Q1)

    @property
    def P2(self) -> np.ndarray:
        return self._embed_plus(self.Q2)

    @property
    def A01(self) -> np.ndarray:
        return -self.A10.T

    def lu_pp(self):
        """Cached sparse LU factorization of the H+ block of the generator."""
        if self._lu_pp is None:
            lpp = self.ops.L[self.idx_plus][:, self.idx_plus].tocsc()
            try:
                self._lu_pp = spla.splu(lpp)
            except RuntimeError as exc:
                raise NumericalFailure(f"H+ block is numerically singular: {exc}") from exc
        return self._lu_pp


def build_decomposition(ops: ModelOperators,
                        rank_tol: float = 1e-12,
                        tol_identity: float = DEFAULT_TOL_IDENTITY) -> Decomposition:
    """Split H+ into ran(A_{+0}) and its complement by pivoted QR.

    ``rank_tol`` multiplies the leading R diagonal of the pivoted QR; any
    trailing diagonal below that threshold means A_{+0} lost rank, i.e. the
    coarse-grained transport has a flat direction.
    """
    idx0, idx_plus = ops.idx0, ops.idx_plus
    apl0 = np.asarray(ops.A.matrix[idx_plus][:, idx0].todense())
    dim0 = len(idx0)
    q_full, r, _piv = sla.qr(apl0, mode="full", pivoting=True)
    diag = np.abs(np.diag(r[:dim0, :dim0]))
    rank = int(np.sum(diag > rank_tol * diag[0])) if diag.size else 0
    if rank < dim0:
        raise InvariantViolation(
            f"macroscopic coercivity failure: rank(A10) = {rank} < dim H0 = {dim0}"
        )
    q1, q2 = q_full[:, :dim0], q_full[:, dim0:]
    del q_full

    pi1_apl0 = q1 @ (q1.T @ apl0)
    scale = max(operator_norm_upper(apl0), 1.0)
    pi1_range = float(np.max(np.abs(pi1_apl0 - apl0))) / scale
    pi1_idem = float(np.max(np.abs(q1.T @ q1 - np.eye(dim0))))
    if max(pi1_range, pi1_idem) > tol_identity:
        raise InvariantViolation(
            f"H1 projector residuals exceed tolerance: range {pi1_range:.3e}, "
            f"idempotency {pi1_idem:.3e}"
        )

    lpp = ops.L[idx_plus][:, idx_plus]
    spp = ops.S.matrix[idx_plus][:, idx_plus]
    rpp = ops.reversal.matrix[idx_plus][:, idx_plus]
    lq1 = np.asarray((lpp @ q1))
    l11 = q1.T @ lq1
    l21 = q2.T @ lq1
    lq2 = np.asarray((lpp @ q2))
    l12 = q1.T @ lq2
    l22 = q2.T @ lq2
    s11 = q1.T @ np.asarray(spp @ q1)
    r22 = q2.T @ np.asarray(rpp @ q2)
    a10 = q1.T @ apl0

    l11_sym = float(np.max(np.abs(l11 - l11.T))) if l11.size else 0.0
    if ops.model.model != "adaptive_langevin" and l11_sym > tol_identity:
        raise InvariantViolation(
            f"L11 symmetry residual {l11_sym:.3e} exceeds tolerance {tol_identity:g}"
        )
    return Decomposition(
        ops=ops, idx0=idx0, idx_plus=idx_plus, Q1=q1, Q2=q2,
        A10=a10, L11=l11, L12=l12, L21=l21, L22=l22, S11=s11, R22=r22,
        pi1_idempotency_residual=pi1_idem, pi1_range_residual=pi1_range,
        l11_symmetry_residual=l11_sym, _apl0=apl0,
    )


def operator_norm_upper(mat: np.ndarray) -> float:
    """Cheap upper estimate sqrt(norm_1 * norm_inf) used only for scaling."""
    if mat.size == 0:
        return 0.0
    a = np.abs(mat)
    return float(np.sqrt(a.sum(axis=0).max() * a.sum(axis=1).max()))


def macroscopic_coercivity(dec: Decomposition,
                           analytic_bound: float | None = None,
                           tol: float = 1e-8) -> float:
    """Smallest singular value a of A10, i.e. the coarse transport gap.

    When an analytic lower bound for a is supplied (from the measure's
    spectral gap), the numerically computed gap must not undercut it.
    """
    a = float(sla.svdvals(dec.A10)[-1])
    if analytic_bound is not None and a < analytic_bound - tol:
        raise InvariantViolation(
            f"macroscopic coercivity constant {a:.6e} below analytic bound "
            f"{analytic_bound:.6e}"
        )
    return a


# ---------------------------------------------------------------------------
# Schur complement and block resolvent
# ---------------------------------------------------------------------------


def schur_complement(dec: Decomposition,
                     check: bool = True,
                     route_rtol: float = 1e-8,
                     tol_identity: float = DEFAULT_TOL_IDENTITY) -> np.ndarray:
    """The Schur complement on H0, computed through two routes.

    Route one factors the full H+ block; route two eliminates H2 first and
    passes through the square invertible A10.  Both are algebraically equal,
    so disagreement flags a conditioning problem rather than a modelling one.
    Symmetry and negative definiteness are asserted except for the
    thermostated model, whose extended reversal fixes ker S only up to a sign.
    """
    if dec._schur is not None and not check:
        return dec._schur
    lu = dec.lu_pp()
    route1 = dec._apl0.T @ lu.solve(dec._apl0)
    if check:
        sym_l22 = 0.5 * (dec.L22 + dec.L22.T)
        if sym_l22.size:
            top = float(np.linalg.eigvalsh(sym_l22)[-1])
            if top >= 0.0:
                raise NumericalFailure(
                    f"dissipation failure on H2: symmetric part of L22 reaches {top:.3e}"
                )
        try:
            s1 = dec.L11 - dec.L12 @ np.linalg.solve(dec.L22, dec.L21) \
                if dec.dim2 else dec.L11
            route2 = dec.A10.T @ np.linalg.solve(s1, dec.A10)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"dissipation failure on H2: {exc}") from exc
        denom = max(float(np.linalg.norm(route1)), np.finfo(float).tiny)
        rel = float(np.linalg.norm(route1 - route2)) / denom
        if rel > route_rtol:
            raise NumericalFailure(
                f"Schur complement routes disagree: relative gap {rel:.3e}"
            )
        if dec.ops.model.model != "adaptive_langevin":
            sym_res = float(np.max(np.abs(route1 - route1.T)))
            scale = max(float(np.max(np.abs(route1))), 1.0)
            if sym_res / scale > tol_identity:
                raise InvariantViolation(
                    f"Schur complement symmetry residual {sym_res:.3e}"
                )
            top = float(np.linalg.eigvalsh(0.5 * (route1 + route1.T))[-1])
            if top >= 0.0:
                raise InvariantViolation(
                    f"Schur complement not negative definite: max eigenvalue {top:.3e}"
                )
    dec._schur = route1
    return route1


def block_resolvent(dec: Decomposition, rhs) -> tuple[np.ndarray, np.ndarray]:
    """Solve L u = phi through the explicit block inverse.

    ``rhs`` is either a full working-space vector or a pair (phi0, phi_plus)
    in H0 / H+ coordinates.  Returns (u0, u_plus); the assembled solution is
    validated against the original system to 1e-8 relative.
    """
    if isinstance(rhs, tuple):
        phi0, phip = np.asarray(rhs[0], float), np.asarray(rhs[1], float)
    else:
        rhs = np.asarray(rhs, float)
        phi0, phip = rhs[dec.idx0], rhs[dec.idx_plus]
    if phi0.shape != (dec.dim0,) or phip.shape != (len(dec.idx_plus),):
        raise ConfigError(["right-hand side has wrong block dimensions"])
    lu = dec.lu_pp()
    s0 = schur_complement(dec, check=False)
    # u0 = S0^{-1} (phi0 - A_{0+} Lpp^{-1} phi+)   with A_{0+} = -A_{+0}^T
    rhs0 = phi0 + dec._apl0.T @ lu.solve(phip)
    try:
        u0 = np.linalg.solve(s0, rhs0)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"Schur singular: {exc}") from exc
    uplus = lu.solve(phip - dec._apl0 @ u0)
    full_u = np.zeros(dec.dim)
    full_u[dec.idx0] = u0
    full_u[dec.idx_plus] = uplus
    full_phi = np.zeros(dec.dim)
    full_phi[dec.idx0] = phi0
    full_phi[dec.idx_plus] = phip
    res = np.linalg.norm(dec.ops.L @ full_u - full_phi)
    if res > 1e-8 * max(np.linalg.norm(full_phi), np.finfo(float).tiny):
        raise NumericalFailure(f"block resolvent residual too large: {res:.3e}")
    return u0, uplus


def scatter_blocks(dec: Decomposition, u0: np.ndarray, uplus: np.ndarray) -> np.ndarray:
    """Reassemble a full working-space vector from (H0, H+) parts."""
    out = np.zeros(dec.dim)
    out[dec.idx0] = u0
    out[dec.idx_plus] = uplus
    return out


# ---------------------------------------------------------------------------
# exact resolvent norm
# ---------------------------------------------------------------------------


def exact_resolvent_norm(L, method: str = "auto",
                         dense_threshold: int = DENSE_THRESHOLD,
                         tol: float = 1e-12, max_iter: int = 20000,
                         seed: int = 0) -> float:
    """Operator norm of L^{-1}, i.e. 1/sigma_min(L).

    ``method`` is "dense" (full SVD), "iterative" (power iteration on the
    inverse normal operator via sparse LU), or "auto" to pick by dimension.
    """
    if method not in ("auto", "dense", "iterative"):
        raise ConfigError([f"unknown method {method!r}"])
    mat = sp.csr_matrix(L)
    n = mat.shape[0]
    if method == "auto":
        method = "dense" if n < dense_threshold else "iterative"
    if method == "dense":
        sv = sla.svdvals(mat.toarray())
        smin, smax = float(sv[-1]), float(sv[0])
        if smin <= 64 * n * np.finfo(float).eps * smax:
            ratio = smin / smax if smax > 0 else 0.0
            raise NumericalFailure(
                f"numerically singular: sigma_min/sigma_max = {ratio:.3e}"
            )
        return 1.0 / smin
    try:
        lu = spla.splu(mat.tocsc())
    except RuntimeError as exc:
        raise NumericalFailure(f"numerically singular: {exc}") from exc
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        # one application of (L^T L)^{-1} = L^{-1} L^{-T}
        z = lu.solve(lu.solve(v, trans="T"), trans="N")
        new_lam = float(np.linalg.norm(z))
        if not np.isfinite(new_lam) or new_lam > 1e28:
            raise NumericalFailure("numerically singular: inverse iteration diverged")
        v = z / new_lam
        if abs(new_lam - lam) <= tol * new_lam:
            lam = new_lam
            break
        lam = new_lam
    return float(np.sqrt(lam))


# ---------------------------------------------------------------------------
# Theorem bound and its ingredients
# ---------------------------------------------------------------------------


def theorem_bound(s: float, a: float, norm_S11: float,
                  norm_R22: float, norm_X21: float) -> float:
    """Closed-form resolvent bound 2(|S11|/a^2 + |R22||X21|^2/s) + 3/s."""
    problems = []
    if not s > 0:
        problems.append(f"s = {s!r} must be positive")
    if not a > 0:
        problems.append(f"a = {a!r} must be positive")
    for name, val in (("norm_S11", norm_S11), ("norm_R22", norm_R22),
                      ("norm_X21", norm_X21)):
        if val < 0 or not np.isfinite(val):
            problems.append(f"{name} = {val!r} must be finite and nonnegative")
    if problems:
        raise ConfigError(["assumption constants invalid: " + p for p in problems])
    return 2.0 * (norm_S11 / a**2 + norm_R22 * norm_X21**2 / s) + 3.0 / s


def intermediate_norms(dec: Decomposition, check_t3: bool = True,
                       t3_rtol: float = 1e-8) -> dict:
    """Operator norms entering the resolvent bound, plus proof diagnostics.

    The X21 block L21 A10 (A*A)^{-1} is evaluated as L21 A10^{-T}, using that
    A10 is square: A10 (A10^T A10)^{-1} = A10^{-T}.  When ``check_t3`` is on,
    the factorization identity T3* T3 = -(S on H+)^{-1} behind the 3/s term
    is verified against a dense inverse.
    """
    a = float(sla.svdvals(dec.A10)[-1])
    x21 = np.linalg.solve(dec.A10, dec.L21.T).T if dec.dim2 else np.zeros((0, dec.dim1))
    out = {
        "a": a,
        "norm_S11": operator_norm(dec.S11),
        "norm_L11": operator_norm(dec.L11),
        "norm_R22": operator_norm(dec.R22),
        "norm_L21A10inv": operator_norm(x21),
        "norm_A10inv": 1.0 / a,
        "l11_symmetry_residual": dec.l11_symmetry_residual,
        "pi1_idempotency_residual": dec.pi1_idempotency_residual,
        "pi1_range_residual": dec.pi1_range_residual,
    }
    if check_t3:
        lpp = dec.ops.L[dec.idx_plus][:, dec.idx_plus].toarray()
        spp = dec.ops.S.matrix[dec.idx_plus][:, dec.idx_plus].toarray()
        linv = np.linalg.inv(lpp)
        sym = -0.5 * (linv + linv.T)
        t3t3 = linv.T @ np.linalg.solve(sym, linv)
        target = np.linalg.inv(-spp)
        rel = float(np.linalg.norm(t3t3 - target) / np.linalg.norm(target))
        out["t3_identity_rel_residual"] = rel
        if rel > t3_rtol:
            raise NumericalFailure(
                f"factorization identity for the 3/s term fails: {rel:.3e}"
            )
    return out


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------

BOUND_JSON_KEYS = ("s", "a", "norm_S11", "norm_R22", "norm_L21A10inv",
                   "bound", "exact", "margin", "converged")


@dataclass
class BoundReport:
    """Everything needed to compare the closed-form bound with the truth."""

    model: str
    gamma: float
    n_q: int
    n_p: int
    n_xi: int
    s: float
    a: float
    norm_S11: float
    norm_R22: float
    norm_L21A10inv: float
    bound: float
    exact: float
    converged: bool
    converged_q: bool
    converged_p: bool
    details: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.bound / self.exact

    def to_json_dict(self) -> dict:
        return {
            "s": self.s,
            "a": self.a,
            "norm_S11": self.norm_S11,
            "norm_R22": self.norm_R22,
            "norm_L21A10inv": self.norm_L21A10inv,
            "bound": self.bound,
            "exact": self.exact,
            "margin": self.margin,
            "converged": self.converged,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True,
                          separators=(",", ":"))


def _bound_and_exact(model: ModelSpec, spec: BasisSpec,
                     potential: Potential | None,
                     check_t3: bool, tol_identity: float,
                     norm_method: str):
    basis = build_basis(spec, potential=potential, tol_identity=tol_identity)
    ops = assemble_model(basis, model)
    rep = verify_structural_assumptions(ops, tol=tol_identity)
    if not rep.passed:
        raise InvariantViolation(
            "structural assumptions failed before decomposition:\n" + rep.table()
        )
    dec = build_decomposition(ops, tol_identity=tol_identity)
    schur_complement(dec, check=True, tol_identity=tol_identity)
    norms = intermediate_norms(dec, check_t3=check_t3)
    bound = theorem_bound(rep.s_numeric, norms["a"], norms["norm_S11"],
                          norms["norm_R22"], norms["norm_L21A10inv"])
    exact = exact_resolvent_norm(ops.L, method=norm_method)
    return rep, norms, bound, exact


def bound_report(model: ModelSpec, spec: BasisSpec,
                 potential: Potential | None = None, *,
                 check_convergence: bool = True,
                 rel_tol: float = CONVERGENCE_RTOL,
                 check_t3: bool = True,
                 tol_identity: float = DEFAULT_TOL_IDENTITY,
                 norm_method: str = "auto") -> BoundReport:
    """Assemble, decompose, bound and cross-check one configuration.

    The convergence flag doubles n_q and n_p separately and requires both the
    bound and the exact norm to move by less than ``rel_tol`` relatively.
    """
    rep, norms, bound, exact = _bound_and_exact(
        model, spec, potential, check_t3, tol_identity, norm_method)
    converged_q = converged_p = True
    if check_convergence:
        flags = []
        for name in ("n_q", "n_p"):
            doubled = replace(spec, **{name: 2 * getattr(spec, name)})
            _, _, b2, e2 = _bound_and_exact(
                model, doubled, potential, False, tol_identity, norm_method)
            ok = (abs(b2 - bound) < rel_tol * abs(bound)
                  and abs(e2 - exact) < rel_tol * abs(exact))
            flags.append(ok)
        converged_q, converged_p = flags
    details = dict(norms)
    details["structural_residuals"] = rep.residuals
    return BoundReport(
        model=model.model, gamma=model.gamma,
        n_q=spec.n_q, n_p=spec.n_p, n_xi=spec.n_xi if spec.has_xi else 0,
        s=rep.s_numeric, a=norms["a"], norm_S11=norms["norm_S11"],
        norm_R22=norms["norm_R22"], norm_L21A10inv=norms["norm_L21A10inv"],
        bound=bound, exact=exact,
        converged=converged_q and converged_p,
        converged_q=converged_q, converged_p=converged_p,
        details=details,
    )
