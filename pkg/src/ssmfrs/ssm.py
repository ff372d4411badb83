"""Autonomous SSM parameterization and the leading-order forced correction.

The invariance equation ``B DW(p) R(p) = A W(p) + F(W(p))`` is solved order
by order in the normal-form style: monomials whose composite eigenvalue lies in
the resonance window of a master eigenvalue are kept in the reduced dynamics
``R``; all others are removed from ``R`` by solving a cohomological equation
for the corresponding coefficient of ``W``.

Polynomials are stored in ``m`` conjugate variable pairs ``(q_i, qbar_i)``.
``R`` has ``2m`` output rows ordered ``(q_1, qbar_1, ..., q_m, qbar_m)``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .mech import FirstOrderSystem, SpectralData, eigenpairs
from .poly import MultiIndexPoly, compose

log = logging.getLogger(__name__)

DENSE_LIMIT = 400


class SSMError(RuntimeError):
    """Raised when a cohomological equation cannot be solved reliably."""


@dataclass(frozen=True)
class SSMModel:
    """Reduced-order model on a 2m-dimensional spectral submanifold.

    Attributes
    ----------
    m : int
        Number of master conjugate pairs.
    lambda_E : ndarray, shape (m,)
        Master eigenvalues with positive imaginary part.
    r : tuple of Fraction
        External resonance vector, ``Im(lambda_i) ~ r_i * Omega``.
    W : MultiIndexPoly
        Parameterization ``z = W(q, qbar)`` (``m`` pairs, ``N`` outputs).
    R : MultiIndexPoly
        Reduced dynamics (``m`` pairs, ``2m`` outputs), resonant terms only.
    f : ndarray, shape (m,)
        Modal forcing ``u_i^H Fa``.
    order : int
        Truncation order of ``W`` and ``R``.
    V_E, U_E : ndarray or None
        Master right/left eigenvectors (columns for ``q_i`` only).
    W_modal : MultiIndexPoly or None
        ``W`` expressed in the full eigenbasis (``W = V W_modal``); kept when
        the modal solver is used, not serialized.
    """

    m: int
    N: int
    order: int
    lambda_E: np.ndarray
    r: tuple
    W: MultiIndexPoly
    R: MultiIndexPoly
    f: np.ndarray
    V_E: np.ndarray | None = None
    U_E: np.ndarray | None = None
    W_modal: MultiIndexPoly | None = field(default=None, compare=False, repr=False)
    basis: SpectralData | None = field(default=None, compare=False, repr=False)

    @cached_property
    def r_float(self) -> np.ndarray:
        return np.array([float(x) for x in self.r])

    @cached_property
    def forced_modes(self) -> np.ndarray:
        """Boolean mask of master pairs resonant with the forcing (``r_i = 1``)."""
        return np.array([x == 1 for x in self.r])

    def harmonic_of(self, c, d) -> Fraction:
        return sum((Fraction(ci) - Fraction(di)) * ri for ci, di, ri in zip(c, d, self.r))

    @cached_property
    def slow_poly(self) -> MultiIndexPoly:
        """Terms of the q-rows of ``R`` that survive averaging: ``(c - d) . r = r_i``."""
        terms = []
        for (c, d), w in self.R:
            coeff = np.zeros(self.m, dtype=complex)
            for i in range(self.m):
                if self.harmonic_of(c, d) == self.r[i]:
                    coeff[i] = w[2 * i]
            terms.append(((c, d), coeff))
        return MultiIndexPoly(self.m, self.m, terms)

    @cached_property
    def harmonic_groups(self) -> dict[Fraction, MultiIndexPoly]:
        """``W`` split by output harmonic ``(c - d) . r`` (sorted keys)."""
        groups: dict = {}
        for (c, d), w in self.W:
            groups.setdefault(self.harmonic_of(c, d), []).append(((c, d), w))
        return {k: MultiIndexPoly(self.m, self.N, groups[k]) for k in sorted(groups)}

    def validate(self, tol: float = 1e-10) -> None:
        """Check reality of ``W`` and ``R`` and resonance of ``R``'s monomials."""
        check_reality(self.W, self.R, tol)
        mu = p_eigenvalues(self.lambda_E)
        for (c, d), w in self.R:
            lam_cd = composite_eigenvalue(self.lambda_E, c, d)
            for j in np.flatnonzero(np.abs(w) > 0):
                if sum(c) + sum(d) == 1:
                    continue
                if abs(lam_cd - mu[j]) > resonance_window(mu[j]) * 1.0000001:
                    raise ValueError(f"R_terms: monomial c={c}, d={d} in row {j} is not near-resonant")


# ---------------------------------------------------------------- utilities
def p_eigenvalues(lambda_E) -> np.ndarray:
    """Eigenvalues attached to ``(q_1, qbar_1, ..., q_m, qbar_m)``."""
    lam = np.asarray(lambda_E, dtype=complex)
    return np.column_stack([lam, lam.conj()]).reshape(-1)


def composite_eigenvalue(lambda_E, c, d) -> complex:
    lam = np.asarray(lambda_E, dtype=complex)
    return complex(np.dot(c, lam) + np.dot(d, lam.conj()))


def resonance_window(lam: complex, res_tol: float | None = None) -> float:
    """Half-width of the near-resonance window around ``lam``.

    Default: ``max(10 |Re lam|, 1e-8 |lam|)`` capped at ``|Im lam| / 2`` so a
    heavily damped mode cannot absorb a different harmonic into the window.
    """
    if res_tol is not None:
        return res_tol * abs(lam)
    width = max(10 * abs(lam.real), 1e-8 * abs(lam))
    if abs(lam.imag) > 0:
        width = min(width, 0.5 * abs(lam.imag))
    return width


def multi_indices(m: int, k: int):
    """All ``(c, d)`` pairs of total degree ``k`` in ``m`` pairs."""
    for combo in itertools.combinations_with_replacement(range(2 * m), k):
        e = [0] * (2 * m)
        for idx in combo:
            e[idx] += 1
        yield tuple(e[0::2]), tuple(e[1::2])


def check_reality(W: MultiIndexPoly, R: MultiIndexPoly, tol: float = 1e-10) -> None:
    """Raise if conjugate monomials lack conjugate coefficients."""
    scale = max(np.abs(W._w).max() if len(W) else 1.0, 1.0)
    for (c, d), w in W:
        if not np.allclose(W.coeff(d, c), w.conj(), atol=tol * scale):
            raise ValueError(f"W_terms: coefficient of c={c}, d={d} lacks its conjugate partner")
    m = R.num_vars
    swap = np.arange(2 * m).reshape(m, 2)[:, ::-1].reshape(-1)
    scale = max(np.abs(R._w).max() if len(R) else 1.0, 1.0)
    for (c, d), w in R:
        if not np.allclose(R.coeff(d, c)[swap], w.conj(), atol=tol * scale):
            raise ValueError(f"R_terms: coefficient of c={c}, d={d} lacks its conjugate partner")


def _dw_times_r(Wl: dict, Rs: dict, m: int, dim: int, target: dict) -> None:
    """Accumulate ``DW_l . R_s`` (both as coefficient dicts) into ``target``."""
    for (c, d), w in Wl.items():
        for (c2, d2), r in Rs.items():
            for j in range(m):
                if c[j] and r[2 * j] != 0:
                    key = (tuple(c[i] - (i == j) + c2[i] for i in range(m)), tuple(d[i] + d2[i] for i in range(m)))
                    target.setdefault(key, np.zeros(dim, complex))
                    target[key] += c[j] * r[2 * j] * w
                if d[j] and r[2 * j + 1] != 0:
                    key = (tuple(c[i] + c2[i] for i in range(m)), tuple(d[i] - (i == j) + d2[i] for i in range(m)))
                    target.setdefault(key, np.zeros(dim, complex))
                    target[key] += d[j] * r[2 * j + 1] * w


def _master_pairs(spec: SpectralData, master_indices) -> list[int]:
    idx = sorted(set(int(i) for i in master_indices))
    lam = spec.eigenvalues
    pos = []
    for i in idx:
        if i >= lam.size:
            raise ValueError(f"master index {i} out of range")
        if abs(lam[i].imag) == 0:
            raise ValueError("master modes must be complex conjugate pairs")
        if lam[i].imag > 0:
            partner = [j for j in idx if j != i and np.isclose(lam[j], np.conj(lam[i]))]
            if not partner:
                raise ValueError(f"master index {i} lacks its conjugate partner")
            pos.append(i)
    if 2 * len(pos) != len(idx):
        raise ValueError("master indices must select complete conjugate pairs")
    return pos


def compute_autonomous_ssm(fos: FirstOrderSystem, master_indices=(0, 1), order: int = 5,
                           res_tol: float | None = None, r=None, solver: str = "auto",
                           spec: SpectralData | None = None, sing_tol: float = 1e-10) -> SSMModel:
    """Order-by-order normal-form parameterization of the autonomous SSM.

    Parameters
    ----------
    fos : FirstOrderSystem
    master_indices : sequence of int
        Indices (in the descending-real-part ordering) of the master modes;
        must contain complete conjugate pairs.
    order : int
        Truncation order (>= 1).
    res_tol : float, optional
        Relative resonance tolerance; the damping-based default window is used
        when omitted.
    r : sequence, optional
        External resonance vector, default all ones.
    solver : {'auto', 'modal', 'bordered'}
        ``modal`` diagonalizes with the full spectrum (exact cancellation of
        the linear terms, dense systems only); ``bordered`` solves
        ``(A - Lambda B) w = rhs`` with resonant directions bordered out.
    spec : SpectralData, optional
        Precomputed spectrum (full spectrum required for the modal solver).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    N = fos.N
    if solver == "auto":
        solver = "modal" if N <= DENSE_LIMIT else "bordered"
    if solver not in ("modal", "bordered"):
        raise ValueError(f"unknown solver {solver!r}")
    if spec is None or (solver == "modal" and len(spec) < N):
        k = N if solver == "modal" else max(master_indices) + 2
        spec = eigenpairs(fos, min(k, N))
    pos = _master_pairs(spec, master_indices)
    m = len(pos)
    lam_E = spec.eigenvalues[pos]
    V_E = spec.V[:, pos]
    U_E = spec.U[:, pos]
    mu = p_eigenvalues(lam_E)
    V_p = np.column_stack([V_E, V_E.conj()])[:, np.arange(2 * m).reshape(2, m).T.reshape(-1)]
    U_p = np.column_stack([U_E, U_E.conj()])[:, np.arange(2 * m).reshape(2, m).T.reshape(-1)]
    r = tuple(Fraction(x).limit_denominator(1000) for x in (r if r is not None else [1] * m))
    if len(r) != m:
        raise ValueError("resonance vector length must equal the number of master pairs")

    if solver == "modal":
        full_lam = spec.eigenvalues
        # positions of p-variables in the full eigenbasis
        master_full = []
        for i in pos:
            j = int(np.argmin(np.abs(full_lam - np.conj(full_lam[i])) + (np.arange(N) == i) * 1e300))
            master_full += [i, j]
        basis_V, basis_U = spec.V, spec.U
        # conjugation in the eigenbasis swaps each mode with its partner
        conj_perm = np.array([int(np.argmin(np.abs(basis_V - basis_V[:, [i]].conj()).max(axis=0)))
                              for i in range(N)])
        dim = N
        lin_vecs = np.eye(N)[:, master_full]
    else:
        master_full = None
        conj_perm = np.arange(N)
        dim = N
        lin_vecs = V_p

    W: dict = {}
    R: dict = {}
    for j in range(m):
        e = tuple(int(i == j) for i in range(m))
        z = (0,) * m
        W[(e, z)] = lin_vecs[:, 2 * j].astype(complex)
        W[(z, e)] = lin_vecs[:, 2 * j + 1].astype(complex)
        rq = np.zeros(2 * m, complex)
        rq[2 * j] = mu[2 * j]
        rb = np.zeros(2 * m, complex)
        rb[2 * j + 1] = mu[2 * j + 1]
        R[(e, z)] = rq
        R[(z, e)] = rb

    by_order_W = {1: dict(W)}
    by_order_R = {1: dict(R)}
    swap = np.arange(2 * m).reshape(m, 2)[:, ::-1].reshape(-1)
    bordered_lu: dict = {}
    for k in range(2, order + 1):
        W_phys = _to_physical(W, basis_V if solver == "modal" else None, m, N)
        Fk = compose(fos.F, W_phys, k).homogeneous(k) if len(fos.F) else MultiIndexPoly(m, N)
        mixed: dict = {}
        for l in range(2, k):
            _dw_times_r(by_order_W[l], by_order_R[k - l + 1], m, dim, mixed)
        Wk, Rk = {}, {}
        for c, d in multi_indices(m, k):
            if (c, d) < (d, c):
                continue
            Lam = composite_eigenvalue(lam_E, c, d)
            res_set = [j for j in range(2 * m) if abs(Lam - mu[j]) <= resonance_window(mu[j], res_tol)]
            Fcd = Fk.coeff(c, d)
            mix = mixed.get((c, d), np.zeros(dim, complex))
            rvec = np.zeros(2 * m, complex)
            if solver == "modal":
                h = mix - basis_U.conj().T @ Fcd
                gaps = full_lam - Lam
                mask = np.ones(N, bool)
                for j in res_set:
                    mask[master_full[j]] = False
                    rvec[j] = -h[master_full[j]]
                bad = mask & (np.abs(gaps) < sing_tol * max(abs(Lam), 1.0))
                if bad.any():
                    i = int(np.flatnonzero(bad)[0])
                    raise SSMError(f"near-singular cohomological equation for monomial c={c}, d={d}: "
                                   f"|Lambda - lambda_{i}| = {abs(gaps[i]):.3e}")
                w = np.zeros(N, complex)
                w[mask] = h[mask] / gaps[mask]
            else:
                h = fos.B @ mix - Fcd
                w, rj = _bordered_solve(fos, Lam, V_p[:, res_set], U_p[:, res_set], h, (c, d), sing_tol, bordered_lu)
                rvec[res_set] = rj
            Wk[(c, d)] = w
            Wk[(d, c)] = w[conj_perm].conj()
            if np.any(rvec != 0):
                Rk[(c, d)] = rvec
                Rk[(d, c)] = rvec[swap].conj()
        by_order_W[k] = Wk
        by_order_R[k] = Rk
        W.update(Wk)
        R.update(Rk)

    if solver == "modal":
        W_modal = MultiIndexPoly(m, N, W.items())
        W_poly = _to_physical(W, basis_V, m, N)
    else:
        W_modal = None
        W_poly = MultiIndexPoly(m, N, W.items())
    R_poly = MultiIndexPoly(m, 2 * m, R.items())
    f = U_E.conj().T @ fos.Fa
    return SSMModel(m=m, N=N, order=order, lambda_E=lam_E, r=r, W=W_poly, R=R_poly, f=f,
                    V_E=V_E, U_E=U_E, W_modal=W_modal, basis=spec if solver == "modal" else None)


def _to_physical(W: dict, V, m: int, N: int) -> MultiIndexPoly:
    if V is None:
        return MultiIndexPoly(m, N, W.items())
    return MultiIndexPoly(m, N, [(k, V @ w) for k, w in W.items()])


def _bordered_solve(fos, Lam, V_J, U_J, h, key, sing_tol, cache):
    """Solve ``[[A - Lam B, -B V_J], [U_J^H B, 0]] [w; r] = [h; 0]``."""
    N = fos.N
    nJ = V_J.shape[1]
    ck = (complex(Lam), nJ, V_J.tobytes())
    if ck not in cache:
        mat = np.zeros((N + nJ, N + nJ), complex)
        mat[:N, :N] = fos.A - Lam * fos.B
        mat[:N, N:] = -fos.B @ V_J
        mat[N:, :N] = U_J.conj().T @ fos.B
        lu = sla.lu_factor(mat, check_finite=False)
        rcond = np.abs(np.diag(lu[0])).min() / np.abs(np.diag(lu[0])).max()
        if rcond < sing_tol:
            raise SSMError(f"near-singular cohomological equation for monomial c={key[0]}, d={key[1]}: "
                           f"pivot ratio {rcond:.3e}")
        cache[ck] = lu
    sol = sla.lu_solve(cache[ck], np.concatenate([h, np.zeros(nJ, complex)]))
    return sol[:N], sol[N:]


# ------------------------------------------------------------- diagnostics
def invariance_residual_poly(fos: FirstOrderSystem, ssm: SSMModel, modal: bool | None = None) -> MultiIndexPoly:
    """Coefficients of ``B DW R - A W - F(W)`` (all orders, no truncation).

    With ``modal=True`` (default when modal data exist) the residual is
    expressed in the eigenbasis, ``U^H (...)``, which equals
    ``DW~ R - diag(lambda) W~ - U^H F(W)`` and avoids the cancellation of
    stiff terms that swamps a float64 evaluation in physical coordinates.
    """
    m, N = ssm.m, ssm.N
    if modal is None:
        modal = ssm.W_modal is not None
    Wcoef = dict(ssm.W_modal if modal else ssm.W)
    if modal and ssm.W_modal is None:
        raise ValueError("modal residual requires a model built with the modal solver")
    dwr: dict = {}
    _dw_times_r(Wcoef, dict(ssm.R), m, N, dwr)
    max_deg = ssm.order * max(fos.F.max_degree, 1)
    FW = compose(fos.F, ssm.W, max_deg) if len(fos.F) else MultiIndexPoly(m, N)
    terms = []
    if modal:
        lam = ssm.basis.eigenvalues
        Uh = ssm.basis.U.conj().T
        terms += list(dwr.items())
        terms += [(k, -lam * w) for k, w in Wcoef.items()]
        terms += [(k, -(Uh @ w)) for k, w in FW]
    else:
        terms += [(k, fos.B @ w) for k, w in dwr.items()]
        terms += [(k, -(fos.A @ w)) for k, w in Wcoef.items()]
        terms += [(k, -w) for k, w in FW]
    return MultiIndexPoly(m, N, terms)


def invariance_residual(fos: FirstOrderSystem, ssm: SSMModel, q: np.ndarray, modal: bool | None = None,
                        pointwise: bool = False) -> np.ndarray:
    """Norm of the invariance residual at points ``q`` (shape (..., m)).

    By default the residual polynomial is assembled coefficient-wise and
    evaluated; ``pointwise=True`` evaluates each term of the equation at the
    point in physical coordinates instead.
    """
    q = np.asarray(q, dtype=complex)
    if pointwise:
        Wp = ssm.W
        val = Wp.eval(q, q.conj())
        dq, dqb = Wp.partials(q, q.conj())
        Rv = ssm.R.eval(q, q.conj())
        dwr = np.einsum("...ij,...j->...i", dq, Rv[..., 0::2]) + np.einsum("...ij,...j->...i", dqb, Rv[..., 1::2])
        F = fos.F.eval(val, val) if len(fos.F) else 0.0
        res = dwr @ fos.B.T - val @ fos.A.T - F
        return np.linalg.norm(res, axis=-1)
    poly = invariance_residual_poly(fos, ssm, modal)
    if not len(poly):
        return np.zeros(q.shape[:-1])
    return np.linalg.norm(poly.eval(q, q.conj()), axis=-1)


@dataclass(frozen=True)
class NonAutoCorrection:
    """Leading-order forced correction ``x0`` at frequency ``Omega``.

    ``dx0`` and ``d2x0`` are the first and second derivatives in ``Omega``.
    """

    Omega: float
    x0: np.ndarray
    dx0: np.ndarray | None = None
    d2x0: np.ndarray | None = None
    residual: float = 0.0


def compute_nonautonomous_correction(fos: FirstOrderSystem, ssm: SSMModel, Omega: float,
                                     derivatives: bool = True) -> NonAutoCorrection:
    """Solve ``[[A - i Omega B, -B V_res], [U_res^H B, 0]] (x0; s) = (-Fa; 0)``.

    ``V_res`` collects the master eigenvectors of the pairs resonant with the
    forcing (``r_i = 1``).  The solution has no component along those
    directions, so the solve stays well conditioned at resonance.  The
    derivatives follow from differentiating the same bordered system.
    """
    if ssm.V_E is None or ssm.U_E is None:
        raise ValueError("master eigenvectors are required for the forced correction")
    N = fos.N
    V_res = ssm.V_E[:, ssm.forced_modes]
    U_res = ssm.U_E[:, ssm.forced_modes]
    nJ = V_res.shape[1]
    mat = np.zeros((N + nJ, N + nJ), complex)
    mat[:N, :N] = fos.A - 1j * Omega * fos.B
    mat[:N, N:] = -fos.B @ V_res
    mat[N:, :N] = U_res.conj().T @ fos.B
    try:
        lu = sla.lu_factor(mat, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SSMError(f"singular bordered operator at Omega={Omega}") from exc
    piv = np.abs(np.diag(lu[0]))
    if piv.min() <= 1e-14 * piv.max():
        raise SSMError(f"singular bordered operator at Omega={Omega}: check the master set")
    rhs = np.concatenate([-fos.Fa, np.zeros(nJ)])
    sol = sla.lu_solve(lu, rhs)
    x0 = sol[:N]
    res = np.linalg.norm(mat @ sol - rhs) / max(np.linalg.norm(fos.Fa), 1e-300)
    dx0 = d2x0 = None
    if derivatives:
        # d/dOmega of the bordered system: M sol' = (i B x0; 0), s-block unchanged
        rhs1 = np.concatenate([1j * fos.B @ x0, np.zeros(nJ)])
        sol1 = sla.lu_solve(lu, rhs1)
        dx0 = sol1[:N]
        rhs2 = np.concatenate([2j * fos.B @ dx0, np.zeros(nJ)])
        d2x0 = sla.lu_solve(lu, rhs2)[:N]
    return NonAutoCorrection(Omega=float(Omega), x0=x0, dx0=dx0, d2x0=d2x0, residual=float(res))


def check_spectral_quotient(spec: SpectralData, master_indices, order: int = 5, tol: float = 1e-3) -> dict:
    """Absolute spectral quotient and low-order outer-resonance scan (advisory)."""
    lam = spec.eigenvalues
    idx = set(int(i) for i in master_indices)
    master = np.array([lam[i] for i in sorted(idx)])
    outer = np.array([lam[i] for i in range(lam.size) if i not in idx])
    report = {"sigma": None, "hits": [], "clean": True}
    if outer.size == 0:
        return report
    ratio = lam.real.min() / master.real.max()
    sigma = int(np.floor(ratio)) if np.isfinite(ratio) else None
    report["sigma"] = sigma
    max_deg = order if sigma is None else min(sigma, order)
    pairs = np.unique(np.round(master.real, 14))
    for deg in range(2, max_deg + 1):
        for combo in itertools.combinations_with_replacement(range(pairs.size), deg):
            val = sum(pairs[i] for i in combo)
            for lk in outer:
                if abs(val - lk.real) <= tol * abs(lk.real):
                    report["hits"].append({"degree": deg, "modes": list(combo), "lambda_outer": complex(lk)})
    report["clean"] = not report["hits"]
    return report
