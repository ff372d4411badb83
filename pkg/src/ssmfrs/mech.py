"""Mechanical systems, first-order form and spectral data.

Second-order systems ``M x'' + C x' + K x + f(x, x') = eps * fext * cos(Omega t)``
are rewritten as ``B z' = A z + F(z) + eps * (Fa e^{i Omega t} + c.c.)`` with
``z = (x, x')`` and

    B = [[C, M], [M, 0]],   A = [[-K, 0], [0, M]],   F(z) = (-f(x, x'), 0).

The first block row reads ``C x' + M x'' = -K x - f + forcing`` and the second
is the identity ``M x' = M x'``, so the forcing lives in the first block:
``Fa = (fext / 2, 0)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .poly import MultiIndexPoly

log = logging.getLogger(__name__)

#: Geometry and material of the benchmark cantilever (mm, kg, s; force in mN).
BEAM_DEFAULTS = dict(length=2700.0, width=10.0, height=10.0, density=1780e-9, youngs=45e6)


@dataclass(frozen=True)
class MechanicalSystem:
    """Second-order system ``M x'' + C x' + K x + f(x, x') = eps fext cos(Omega t)``.

    ``nonlinearity`` is a :class:`MultiIndexPoly` in the ``2n`` real variables
    ``(x, x')`` with output dimension ``n``; only its ``c`` exponents are used.
    """

    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    fext: np.ndarray
    nonlinearity: MultiIndexPoly | None = None
    name: str = "system"

    def __post_init__(self):
        n = self.M.shape[0]
        for label, mat in (("M", self.M), ("C", self.C), ("K", self.K)):
            if mat.shape != (n, n):
                raise ValueError(f"{label} must be {n}x{n}, got {mat.shape}")
        if self.fext.shape != (n,):
            raise ValueError(f"fext must have length {n}")
        if not np.allclose(self.M, self.M.T, atol=1e-12 * np.abs(self.M).max()):
            raise ValueError("M must be symmetric")
        try:
            np.linalg.cholesky(self.M)
        except np.linalg.LinAlgError as exc:
            raise ValueError("M must be positive definite") from exc
        if not np.allclose(self.K, self.K.T, atol=1e-12 * max(np.abs(self.K).max(), 1.0)):
            raise ValueError("K must be symmetric")
        if np.linalg.eigvalsh(self.K).min() < -1e-10 * max(np.abs(self.K).max(), 1.0):
            raise ValueError("K must be positive semidefinite")
        nl = self.nonlinearity
        if nl is not None and len(nl):
            if nl.num_vars != 2 * n or nl.dim != n:
                raise ValueError(f"nonlinearity must map {2 * n} variables to {n} outputs")
            if nl.degrees.min() < 2:
                raise ValueError("nonlinearity must not contain constant or linear terms")
            if np.any([any(d) for (c, d), _ in nl]):
                raise ValueError("nonlinearity must be a polynomial in (x, x') only (d = 0)")

    @property
    def n(self) -> int:
        return self.M.shape[0]


@dataclass(frozen=True)
class FirstOrderSystem:
    """``B z' = A z + F(z) + eps (Fa e^{i Omega t} + c.c.)``."""

    A: np.ndarray
    B: np.ndarray
    F: MultiIndexPoly
    Fa: np.ndarray
    mech: MechanicalSystem | None = field(default=None, repr=False, compare=False)

    @property
    def N(self) -> int:
        return self.A.shape[0]

    def nonlinear_force(self, z: np.ndarray) -> np.ndarray:
        """``F(z)`` for real states; ``z`` may carry leading batch dims."""
        z = np.asarray(z, dtype=float)
        if not len(self.F):
            return np.zeros_like(z)
        return self.F.eval(z, z).real

    def nonlinear_jacobian(self, z: np.ndarray) -> np.ndarray:
        """``dF/dz`` for real states, shape (..., N, N)."""
        z = np.asarray(z, dtype=float)
        if not len(self.F):
            return np.zeros(z.shape + (self.N,))
        dq, _ = self.F.partials(z, z)
        return dq.real

    def rhs(self, t: float, z: np.ndarray, Omega: float, eps: float) -> np.ndarray:
        """``z'`` of the forced first-order system."""
        force = self.A @ z + self.nonlinear_force(z) + eps * 2.0 * np.real(self.Fa * np.exp(1j * Omega * t))
        return np.linalg.solve(self.B, force)


@dataclass(frozen=True)
class SpectralData:
    """Generalized eigen-triples of ``(A, B)`` sorted by descending real part.

    Columns of ``V`` and ``U`` are right and left eigenvectors with
    ``U^H B V = I``.  The displacement block of each right eigenvector is
    scaled to unit max-modulus with that entry real and positive.
    """

    eigenvalues: np.ndarray
    V: np.ndarray
    U: np.ndarray

    def __len__(self) -> int:
        return self.eigenvalues.size

    @property
    def stable(self) -> bool:
        return bool(self.eigenvalues.real.max() < 0)


def assemble_first_order(sys: MechanicalSystem) -> FirstOrderSystem:
    """Build the first-order form with the block convention of this module."""
    n = sys.n
    if abs(np.linalg.det(sys.M)) == 0:
        raise ValueError("singular mass matrix")
    Z = np.zeros((n, n))
    B = np.block([[sys.C, sys.M], [sys.M, Z]])
    A = np.block([[-sys.K, Z], [Z, sys.M]])
    N = 2 * n
    if sys.nonlinearity is None or not len(sys.nonlinearity):
        F = MultiIndexPoly(N, N)
    else:
        terms = []
        for (c, _), w in sys.nonlinearity:
            coeff = np.zeros(N, dtype=complex)
            coeff[:n] = -w
            terms.append(((c, (0,) * N), coeff))
        F = MultiIndexPoly(N, N, terms)
    Fa = np.zeros(N, dtype=complex)
    Fa[:n] = 0.5 * sys.fext
    return FirstOrderSystem(A=A, B=B, F=F, Fa=Fa, mech=sys)


def _normalize_pair(lam, v, ul, B, n_disp):
    disp = v[:n_disp] if n_disp else v
    k = int(np.argmax(np.abs(disp)))
    v = v / disp[k]
    v = v / np.abs(v[:n_disp] if n_disp else v).max()
    s = ul.conj() @ B @ v
    u = ul / np.conj(s)
    return v, u


def eigenpairs(fos: FirstOrderSystem, k: int | None = None, shift: complex = 0.0) -> SpectralData:
    """Eigen-triples of ``A v = lam B v`` with the ``k`` largest real parts.

    Dense for ``N <= 400``; above that a shift-invert Arnoldi iteration about
    ``shift`` (eigenvalues closest to the shift, which for lightly and
    proportionally damped structures are the slowest modes).
    """
    N = fos.N
    k = N if k is None else int(k)
    if not 1 <= k <= N:
        raise ValueError(f"k must lie in [1, {N}]")
    A, B = fos.A, fos.B
    if N <= 400:
        lam, ul, vr = sla.eig(A, B, left=True, right=True)
    else:
        lu = sla.lu_factor(A - shift * B)
        op = spla.LinearOperator((N, N), matvec=lambda x: sla.lu_solve(lu, B @ x), dtype=complex)
        nu, vr = spla.eigs(op, k=min(k + 2, N - 2), which="LM")
        lam = shift + 1.0 / nu
        luT = sla.lu_factor((A - shift * B).conj().T)
        opT = spla.LinearOperator((N, N), matvec=lambda x: sla.lu_solve(luT, B.conj().T @ x), dtype=complex)
        nuT, ul_all = spla.eigs(opT, k=min(k + 2, N - 2), which="LM")
        lamT = shift + 1.0 / np.conj(nuT)
        order = [int(np.argmin(np.abs(lamT - x))) for x in lam]
        ul = ul_all[:, order]
    if not np.all(np.isfinite(lam)):
        raise np.linalg.LinAlgError("infinite generalized eigenvalues: B is singular")
    n_disp = fos.mech.n if fos.mech is not None else N // 2
    scale = np.linalg.norm(A, 1) + np.abs(lam).max() * np.linalg.norm(B, 1)
    # keep one representative per conjugate pair (Im >= 0), then close the set
    tol = 1e-9 * np.abs(lam).max()
    reps = [i for i in range(lam.size) if lam[i].imag >= -tol]
    reps = sorted(reps, key=lambda i: (-lam[i].real, -lam[i].imag))
    vals, Vs, Us = [], [], []
    for i in reps:
        li = lam[i].real + 0j if abs(lam[i].imag) <= tol else lam[i]
        v, u = _normalize_pair(li, vr[:, i], ul[:, i], B, n_disp)
        if li.imag == 0:
            v, u = v.real + 0j, u.real + 0j
            vals.append(li); Vs.append(v); Us.append(u)
        else:
            vals += [li, np.conj(li)]
            Vs += [v, v.conj()]
            Us += [u, u.conj()]
    vals = np.array(vals)
    V = np.array(Vs).T
    U = np.array(Us).T
    # stable sort keeps each pair ordered as (+Im, -Im)
    order = np.argsort(-vals.real, kind="stable")
    vals, V, U = vals[order], V[:, order], U[:, order]
    vals, V, U = vals[:k], V[:, :k], U[:, :k]
    if vals.size and vals[-1].imag > 0 and k < N:
        # complete the last conjugate pair
        vals = np.append(vals, np.conj(vals[-1]))
        V = np.column_stack([V, V[:, -1].conj()])
        U = np.column_stack([U, U[:, -1].conj()])
    if vals.size == N:
        # full spectrum: exact biorthogonality from the inverse of B V
        U = np.linalg.inv(B @ V).conj().T
    res = np.max(np.linalg.norm(A @ V - (B @ V) * vals, axis=0) / scale) if vals.size else 0.0
    if res > 1e-10:
        raise np.linalg.LinAlgError(f"eigen-solve residual {res:.2e} exceeds tolerance")
    if vals.real.max() >= 0:
        log.warning("origin is not asymptotically stable: max Re(lambda) = %.3e", vals.real.max())
    return SpectralData(vals, V, U)


# ------------------------------------------------------------------ builders
def _cubic_nonlinearity(n: int, entries) -> MultiIndexPoly:
    """Sum of ``coef * var**3`` acting on output ``row``; entries = (row, var, coef)."""
    terms = []
    for row, var, coef in entries:
        if coef == 0:
            continue
        c = [0] * (2 * n)
        c[var] = 3
        w = np.zeros(n)
        w[row] = coef
        terms.append(((tuple(c), (0,) * (2 * n)), w))
    return MultiIndexPoly(2 * n, n, terms)


def build_linear_oscillator(zeta: float) -> MechanicalSystem:
    """``x'' + 2 zeta x' + x = eps cos(Omega t)`` with ``0 < zeta <= 1/sqrt(2)``."""
    if not 0 < zeta <= 1 / np.sqrt(2) + 1e-15:
        raise ValueError("zeta must lie in (0, 1/sqrt(2)]")
    one = np.ones((1, 1))
    return MechanicalSystem(M=one, C=2 * zeta * one, K=one.copy(), fext=np.ones(1), name="linear_oscillator")


def build_duffing(zeta: float = 0.1, kappa: float = 1.0, omega: float = 1.0) -> MechanicalSystem:
    """``x'' + 2 zeta omega x' + omega^2 x + kappa x^3 = eps cos(Omega t)``."""
    if zeta <= 0 or omega <= 0:
        raise ValueError("zeta and omega must be positive")
    one = np.ones((1, 1))
    nl = _cubic_nonlinearity(1, [(0, 0, kappa)])
    return MechanicalSystem(M=one, C=2 * zeta * omega * one, K=omega**2 * one, fext=np.ones(1),
                            nonlinearity=nl, name="duffing")


def build_duffing_chain(zeta: float = 0.02, kappa: float = 1.0, stiffness: float = 1.0) -> MechanicalSystem:
    """Two masses in a fixed-fixed spring chain, cubic spring on the first mass."""
    M = np.eye(2)
    K = stiffness * np.array([[2.0, -1.0], [-1.0, 2.0]])
    w1 = np.sqrt(np.linalg.eigvalsh(K)[0])
    C = 2 * zeta / w1 * K
    nl = _cubic_nonlinearity(2, [(0, 0, kappa)])
    return MechanicalSystem(M=M, C=C, K=K, fext=np.array([1.0, 0.0]), nonlinearity=nl, name="duffing_chain")


def beam_matrices(n_elements: int, length: float, width: float, height: float,
                  density: float, youngs: float) -> tuple[np.ndarray, np.ndarray]:
    """Hermite Bernoulli cantilever mass and stiffness (clamped at node 0).

    DOFs are ``(w_1, theta_1, ..., w_ne, theta_ne)``; the tip transverse DOF
    is index ``2 * (n_elements - 1)``.
    """
    L = length / n_elements
    EI = youngs * width * height**3 / 12.0
    rhoA = density * width * height
    ke = EI / L**3 * np.array([
        [12, 6 * L, -12, 6 * L],
        [6 * L, 4 * L**2, -6 * L, 2 * L**2],
        [-12, -6 * L, 12, -6 * L],
        [6 * L, 2 * L**2, -6 * L, 4 * L**2],
    ])
    me = rhoA * L / 420.0 * np.array([
        [156, 22 * L, 54, -13 * L],
        [22 * L, 4 * L**2, 13 * L, -3 * L**2],
        [54, 13 * L, 156, -22 * L],
        [-13 * L, -3 * L**2, -22 * L, 4 * L**2],
    ])
    ndof = 2 * (n_elements + 1)
    K = np.zeros((ndof, ndof))
    M = np.zeros((ndof, ndof))
    for e in range(n_elements):
        idx = slice(2 * e, 2 * e + 4)
        K[idx, idx] += ke
        M[idx, idx] += me
    return M[2:, 2:], K[2:, 2:]


def build_beam_model(n_elements: int = 25, kappa: float = 6.0, gamma: float = -0.02,
                     alpha: float = 1.25e-4, beta: float = 2.5e-4, tip_force: float = 0.1,
                     **geometry) -> MechanicalSystem:
    """Cantilever with a cubic spring/damper support ``kappa w^3 + gamma w'^3`` at the tip.

    Units are mm, kg and s (forces in mN).  Damping is Rayleigh,
    ``C = alpha M + beta K``.  The default ``beta`` reproduces the slowest
    pair ``-0.0062 +/- 7.0005i`` of the 25-element model.  The harmonic
    forcing ``tip_force * eps cos(Omega t)`` acts on the tip transverse DOF;
    the default scale places the simple bifurcation of the forced response
    at ``eps ~ 1.802e-3``.
    """
    if n_elements < 2:
        raise ValueError("n_elements must be at least 2")
    geo = {**BEAM_DEFAULTS, **geometry}
    if min(geo.values()) <= 0 or alpha < 0 or beta < 0:
        raise ValueError("geometry, material and damping parameters must be positive")
    M, K = beam_matrices(n_elements, **geo)
    C = alpha * M + beta * K
    n = M.shape[0]
    tip = n - 2
    nl = _cubic_nonlinearity(n, [(tip, tip, kappa), (tip, n + tip, gamma)])
    fext = np.zeros(n)
    fext[tip] = tip_force
    return MechanicalSystem(M=M, C=C, K=K, fext=fext, nonlinearity=nl, name=f"beam{n_elements}")


def beam_tip_index(sys: MechanicalSystem) -> int:
    return sys.n - 2


# ------------------------------------------------------------- system files
def _matrix_to_json(mat: np.ndarray) -> dict:
    i, j = np.nonzero(mat)
    return {"shape": list(mat.shape), "entries": [[int(a), int(b), float(mat[a, b])] for a, b in zip(i, j)]}


def _matrix_from_json(obj, n: int, label: str) -> np.ndarray:
    if isinstance(obj, list):
        mat = np.asarray(obj, dtype=float)
    elif isinstance(obj, dict) and "entries" in obj:
        mat = np.zeros((n, n))
        for entry in obj["entries"]:
            a, b, val = entry
            mat[int(a), int(b)] += float(val)
    else:
        raise ValueError(f"{label}: expected dense list or coordinate entries")
    if mat.shape != (n, n):
        raise ValueError(f"{label}: expected shape ({n}, {n}), got {mat.shape}")
    return mat


def save_system(sys: MechanicalSystem, path) -> None:
    """Write the system file (coordinate-list matrices, 0-based)."""
    nl = sys.nonlinearity.to_records() if sys.nonlinearity is not None else []
    data = {
        "n": sys.n, "name": sys.name,
        "M": _matrix_to_json(sys.M), "C": _matrix_to_json(sys.C), "K": _matrix_to_json(sys.K),
        "fext": sys.fext.tolist(), "nonlinearity": nl,
    }
    Path(path).write_text(json.dumps(data, indent=1))


def load_system(path) -> MechanicalSystem:
    data = json.loads(Path(path).read_text())
    try:
        n = int(data["n"])
        M = _matrix_from_json(data["M"], n, "M")
        C = _matrix_from_json(data["C"], n, "C")
        K = _matrix_from_json(data["K"], n, "K")
        fext = np.asarray(data["fext"], dtype=float)
    except KeyError as exc:
        raise ValueError(f"system file missing field {exc}") from exc
    recs = data.get("nonlinearity", [])
    nl = MultiIndexPoly.from_records(recs, 2 * n, n) if recs else None
    return MechanicalSystem(M=M, C=C, K=K, fext=fext, nonlinearity=nl, name=data.get("name", "system"))
