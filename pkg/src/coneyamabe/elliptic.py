"""Discrete mixed Dirichlet/Robin operator on the reduced wedge.

The axisymmetric reduction of the Laplacian is, in the computational
coordinates (xi, omega) with xi = log(rho_polar),

    L u = -(1/Wt) [ (A u_xi)_xi + (A u_omega)_omega ],
    A  = rho_polar^(n-d-1) sin^(n-d-1)(omega),
    Wt = rho_polar^(n-d+1) sin^(n-d-1)(omega),

which is the weighted divergence form
(1/W)[d_rho(W u_rho) + d_omega(W u_omega / rho_polar^2)] with
W = rho_polar^(n-d) sin^(n-d-1)(omega) rewritten in log-radius.  Both
directions carry the same coefficient A because log-polar coordinates are
conformal on the half-plane.

Assembly is vertex-centered finite volume: each grid edge contributes a
positive conductance, so off-diagonal entries are nonpositive and the matrix
is symmetric in the weighted inner product.  Robin rows at omega = theta are
half-cell balances (equivalent to second-order one-sided ghost elimination);
the Robin potential and any shift pair (mu1, mu2) enter as diagonal volume
and surface mass terms, mirroring the shifted bilinear form
B[u,v] + mu1 (u,v) + mu2 (u,v)_boundary whose unique solvability for large
enough mu1 backs the linear solves here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Field, Mesh

__all__ = [
    "OperatorAssembly",
    "LinearSolveReport",
    "MMatrixWarning",
    "NonConvergenceError",
    "IndefiniteOperatorError",
    "NegativeEigenvectorError",
    "assemble",
    "solve_mixed",
    "rayleigh_quotient",
    "principal_eigen",
    "write_coo_system",
]

DENSE_CUTOFF = 5000
DEFAULT_TOL = 1e-10


class MMatrixWarning(UserWarning):
    """The assembled operator lost the discrete-maximum-principle certificate."""


class NonConvergenceError(RuntimeError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class IndefiniteOperatorError(RuntimeError):
    """Conjugate directions met nonpositive curvature: raise the shift mu1."""


class NegativeEigenvectorError(RuntimeError):
    """Ground-state candidate has negative components: discrete maximum principle lost."""


@dataclass(eq=False)
class OperatorAssembly:
    """Assembled operator; treat as immutable after construction.

    stiffness          : edge-conductance part (symmetric CSR, all nodes)
    volume_mass        : diagonal volume weights (mesh.node_weights)
    boundary_mass      : diagonal surface weights (nonzero on Robin nodes)
    c, c2              : linear potentials (full-length arrays; c2 read on Robin)
    shift              : (mu1, mu2) added to (c, c2)
    m_matrix_ok        : row-sum certificate c+mu1 >= 0 and c2+mu2 >= 0
    """

    mesh: Mesh
    stiffness: sp.csr_matrix
    volume_mass: np.ndarray
    boundary_mass: np.ndarray
    c: np.ndarray
    c2: np.ndarray
    shift: tuple[float, float]
    m_matrix_ok: bool
    m_matrix_margin: float

    _matrix: sp.csr_matrix | None = None
    _free_factor: object | None = None
    _free_matrix: sp.csr_matrix | None = None
    _free_to_fixed: sp.csr_matrix | None = None

    @property
    def matrix(self) -> sp.csr_matrix:
        """Full integrated-form matrix: stiffness + volume and surface mass terms."""
        if self._matrix is None:
            mu1, mu2 = self.shift
            diag = self.volume_mass * (self.c + mu1) + self.boundary_mass * (self.c2 + mu2)
            self._matrix = (self.stiffness + sp.diags(diag)).tocsr()
        return self._matrix

    def energy(self, u: np.ndarray, v: np.ndarray) -> float:
        """Dirichlet energy u . stiffness . v (no potentials, no shifts)."""
        return float(u @ (self.stiffness @ v))

    def weighted_product(self, u: np.ndarray, v: np.ndarray) -> float:
        """Volume-weighted inner product <u, v>_W."""
        return float(np.sum(self.volume_mass * u * v))

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Integrated-form application: matrix @ u."""
        return self.matrix @ u

    def pointwise_interior(self, u: np.ndarray, rhs=0.0) -> np.ndarray:
        """Operator-form residual (L u + (c+mu1) u - rhs) at interior nodes."""
        r = np.broadcast_to(np.asarray(rhs, dtype=float), u.shape)
        res = (self.matrix @ u - self.volume_mass * r) / self.volume_mass
        return res[self.mesh.tags == 0]

    def pointwise_robin(self, u: np.ndarray, robin_rhs=0.0, rhs=0.0) -> np.ndarray:
        """Flux-form residual of the Robin half-cell rows.

        Equals (du/dnu + (c2+mu2) u - robin_rhs) plus half the angular cell
        height times rho_polar times the interior residual at the same node:
        second-order consistent with the boundary condition whenever u
        satisfies the interior equation with source rhs.
        """
        mask = self.mesh.robin_mask
        r = np.broadcast_to(np.asarray(rhs, dtype=float), u.shape)
        g = np.broadcast_to(np.asarray(robin_rhs, dtype=float), u.shape)
        num = self.matrix @ u - self.volume_mass * r - self.boundary_mass * g
        return num[mask] / self.boundary_mass[mask]


def assemble(mesh: Mesh, c: Field | None = None, c2: Field | None = None,
             shift: tuple[float, float] = (0.0, 0.0)) -> OperatorAssembly:
    """Assemble the weighted divergence-form operator with Robin rows.

    c is the interior linear potential, c2 the Robin potential (both
    full-length fields; c2 is only read on ROBIN_CONE nodes).  shift adds
    (mu1, mu2) to them.  Off-diagonal entries are nonpositive by
    construction; the certificate degrades only through negative c + mu1 or
    c2 + mu2, which is reported as a warning, not an error.
    """
    cvals = np.zeros(mesh.n_nodes) if c is None else _field_values(mesh, c)
    c2vals = np.zeros(mesh.n_nodes) if c2 is None else _field_values(mesh, c2)

    cone = mesh.domain.cone
    p = cone.n - cone.d
    radial = mesh.radial_nodes
    angular = mesh.angular_nodes
    nr, na = len(radial), len(angular)
    xi = np.log(radial)
    gxi = np.diff(xi)
    gom = np.diff(angular)
    dxiw = _half_widths(xi)
    domw = _half_widths(angular)

    # radial edges (i, j) -- (i+1, j): conductance A(midpoint) * cell width / gap,
    # with A = rho_polar^(p-1) sin^(p-1)(omega)
    rho_half = np.sqrt(radial[:-1] * radial[1:])
    k_rad = np.outer(rho_half ** (p - 1) / gxi, np.sin(angular) ** (p - 1) * domw)

    # angular edges (i, j) -- (i, j+1)
    om_half = 0.5 * (angular[:-1] + angular[1:])
    k_ang = np.outer(radial ** (p - 1) * dxiw, np.sin(om_half) ** (p - 1) / gom)

    ii = np.arange(nr)
    jj = np.arange(na)
    idx = (ii[:, None] * na + jj[None, :])

    pr = idx[:-1, :].ravel()
    qr = idx[1:, :].ravel()
    kr = k_rad.ravel()
    pa = idx[:, :-1].ravel()
    qa = idx[:, 1:].ravel()
    ka = k_ang.ravel()

    # off-diagonal conductances first; the diagonal is then set to minus the
    # row sum so constants sit in the kernel up to matvec-order roundoff
    rows = np.concatenate([pr, qr, pa, qa])
    cols = np.concatenate([qr, pr, qa, pa])
    vals = np.concatenate([-kr, -kr, -ka, -ka])
    off = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()
    stiffness = (off + sp.diags(-np.asarray(off.sum(axis=1)).ravel())).tocsr()

    mu1, mu2 = float(shift[0]), float(shift[1])
    margin = float(min(np.min(cvals + mu1), np.min((c2vals + mu2)[mesh.robin_mask])))
    ok = margin >= 0.0
    if not ok:
        warnings.warn(
            f"M-matrix certificate violated: min potential margin {margin:.3e} < 0; "
            "the discrete comparison principle is not guaranteed",
            MMatrixWarning,
            stacklevel=2,
        )

    return OperatorAssembly(
        mesh=mesh,
        stiffness=stiffness,
        volume_mass=mesh.node_weights.copy(),
        boundary_mass=mesh.robin_weights.copy(),
        c=cvals.copy(),
        c2=c2vals.copy(),
        shift=(mu1, mu2),
        m_matrix_ok=ok,
        m_matrix_margin=margin,
    )


def _field_values(mesh: Mesh, f) -> np.ndarray:
    if isinstance(f, Field):
        if f.mesh is not mesh:
            raise ValueError("field is attached to a different mesh")
        return f.values
    arr = np.asarray(f, dtype=float)
    if arr.shape != (mesh.n_nodes,):
        raise ValueError(f"field length {arr.shape} does not match mesh ({mesh.n_nodes} nodes)")
    return arr


def _half_widths(nodes: np.ndarray) -> np.ndarray:
    gaps = np.diff(nodes)
    w = np.empty(len(nodes))
    w[0] = 0.5 * gaps[0]
    w[-1] = 0.5 * gaps[-1]
    w[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    return w


@dataclass
class LinearSolveReport:
    solution: Field
    relative_residual: float
    iterations: int


def _pcg(A, b, tol, maxiter, x0=None):
    """Jacobi-preconditioned conjugate gradients with indefiniteness detection."""
    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise IndefiniteOperatorError(
            "nonpositive diagonal entry in the reduced operator; raise mu1"
        )
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x
    z = r / diag
    rho = r @ z
    pvec = z.copy()
    for k in range(maxiter):
        relres = np.linalg.norm(r) / bnorm
        if relres <= tol:
            return x, k, relres
        Ap = A @ pvec
        pAp = pvec @ Ap
        if pAp <= 0.0:
            raise IndefiniteOperatorError(
                "nonpositive curvature direction in CG; operator indefinite, raise mu1"
            )
        alpha = rho / pAp
        x += alpha * pvec
        if (k + 1) % 64 == 0:
            r = b - A @ x
        else:
            r -= alpha * Ap
        z = r / diag
        rho_new = r @ z
        pvec = z + (rho_new / rho) * pvec
        rho = rho_new
    relres = np.linalg.norm(b - A @ x) / bnorm
    raise NonConvergenceError(
        f"CG did not reach rtol {tol:g} in {maxiter} iterations (residual {relres:.3e})",
        iterations=maxiter,
        residual=relres,
    )


def _free_system(op: OperatorAssembly):
    if op._free_matrix is None:
        free = op.mesh.free_mask
        A = op.matrix
        op._free_matrix = A[free][:, free].tocsr()
        op._free_to_fixed = A[free][:, ~free].tocsr()
    return op._free_matrix, op._free_to_fixed


def _free_factorization(op: OperatorAssembly):
    """Dense Cholesky of the reduced system, cached on the assembly."""
    if op._free_factor is None:
        A_ff, _ = _free_system(op)
        try:
            op._free_factor = scipy.linalg.cho_factor(A_ff.toarray(), lower=True)
        except np.linalg.LinAlgError as exc:
            raise IndefiniteOperatorError(
                f"dense Cholesky failed ({exc}); operator indefinite, raise mu1"
            ) from exc
    return op._free_factor


def solve_mixed(op: OperatorAssembly, rhs, dirichlet_data, tol: float = DEFAULT_TOL,
                robin_rhs=None, max_iter: int | None = None,
                initial_guess=None) -> LinearSolveReport:
    """Solve the mixed linear problem L u + (c+mu1) u = rhs with Robin data.

    rhs is the interior source f1, robin_rhs the boundary source f2 of the
    mixed weak form (default 0); Dirichlet rows return the supplied data
    exactly.  Meshes with at most DENSE_CUTOFF free nodes use a cached dense
    Cholesky factorization, larger ones Jacobi-preconditioned CG.  Raises
    IndefiniteOperatorError when the shifted operator is not positive
    definite (the caller should raise mu1) and NonConvergenceError on
    iteration overrun.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    mesh = op.mesh
    rvals = _field_values(mesh, rhs) if not np.isscalar(rhs) else np.full(mesh.n_nodes, float(rhs))
    dvals = (_field_values(mesh, dirichlet_data) if not np.isscalar(dirichlet_data)
             else np.full(mesh.n_nodes, float(dirichlet_data)))
    if robin_rhs is None:
        gvals = np.zeros(mesh.n_nodes)
    elif np.isscalar(robin_rhs):
        gvals = np.full(mesh.n_nodes, float(robin_rhs))
    else:
        gvals = _field_values(mesh, robin_rhs)

    free = mesh.free_mask
    b = op.volume_mass * rvals + op.boundary_mass * gvals
    A_ff, A_fd = _free_system(op)
    b_f = b[free] - A_fd @ dvals[~free]

    n_free = int(np.sum(free))
    u = np.empty(mesh.n_nodes)
    u[~free] = dvals[~free]
    if n_free <= DENSE_CUTOFF:
        factor = _free_factorization(op)
        x = scipy.linalg.cho_solve(factor, b_f)
        iters = 1
    else:
        x0 = None if initial_guess is None else _field_values(mesh, initial_guess)[free]
        maxiter = max_iter if max_iter is not None else max(2000, 4 * n_free)
        x, iters, _ = _pcg(A_ff, b_f, tol, maxiter, x0=x0)
    u[free] = x

    bnorm = np.linalg.norm(b_f)
    relres = float(np.linalg.norm(b_f - A_ff @ x) / bnorm) if bnorm > 0 else 0.0
    if relres > max(tol, 1e3 * np.finfo(float).eps):
        if n_free <= DENSE_CUTOFF and relres > 1e-6:
            raise NonConvergenceError(
                f"direct solve residual {relres:.3e} exceeds tolerance", residual=relres
            )
    return LinearSolveReport(solution=Field(mesh, u), relative_residual=relres, iterations=iters)


def rayleigh_quotient(op: OperatorAssembly, zeta) -> float:
    """(energy[zeta] + int c zeta^2 + int_Robin c2 zeta^2) / int zeta^2.

    zeta must vanish on every Dirichlet-tagged node; shifts (mu1, mu2) are
    not included, matching the variational quotient whose infimum the
    principal eigenvalue realizes.
    """
    z = _field_values(op.mesh, zeta)
    if np.any(z[op.mesh.dirichlet_mask] != 0.0):
        raise ValueError("zeta must vanish on all Dirichlet-tagged nodes")
    den = float(np.sum(op.volume_mass * z * z))
    if den == 0.0:
        raise ValueError("zeta is identically zero on the volume quadrature")
    num = op.energy(z, z)
    num += float(np.sum(op.volume_mass * op.c * z * z))
    num += float(np.sum(op.boundary_mass * op.c2 * z * z))
    return num / den


def _eigen_matrices(op: OperatorAssembly, variant: str):
    free = op.mesh.free_mask
    diag = op.volume_mass * op.c + op.boundary_mass * op.c2
    A = (op.stiffness + sp.diags(diag)).tocsr()[free][:, free]
    if variant == "volume":
        bdiag = op.volume_mass[free]
    elif variant == "volume-plus-boundary":
        bdiag = (op.volume_mass + op.boundary_mass)[free]
    else:
        raise ValueError(f"unknown eigenvalue denominator variant {variant!r}")
    return A.tocsr(), bdiag


def principal_eigen(op: OperatorAssembly, variant: str = "volume", tol: float = 1e-10,
                    max_iter: int = 500) -> tuple[float, Field]:
    """Smallest eigenvalue and positive ground state of (A, B) by inverse iteration.

    A is the operator with potentials c, c2 (shifts excluded); B is the
    volume mass or, for the "volume-plus-boundary" variant, volume plus
    Robin surface mass.  The iteration inverts A + mu*B with mu chosen from
    a generalized Gershgorin lower bound so the shifted matrix is positive
    definite.  The eigenvector is normalized to sup = 1; a genuinely
    negative component raises NegativeEigenvectorError since the ground
    state of an irreducible M-matrix pencil must be positive.
    """
    A, bdiag = _eigen_matrices(op, variant)
    n = A.shape[0]
    # Gershgorin on B^(-1) A (similar to the pencil): with the row-sum
    # stiffness construction this is tight, lower ~ min potential
    diag = A.diagonal()
    offsum = np.asarray(np.abs(A).sum(axis=1)).ravel() - np.abs(diag)
    lower = float(np.min((diag - offsum) / bdiag))
    mu = 0.0 if lower > 0 else -lower + max(1e-8, 0.01 * abs(lower))

    shifted = (A + sp.diags(mu * bdiag)).tocsc()
    factor = spla.splu(shifted)

    v = np.ones(n)
    v /= np.max(np.abs(v))
    lam = math.inf
    lam_old = math.inf
    polish = 0
    for k in range(max_iter):
        w = factor.solve(bdiag * v)
        w /= np.max(np.abs(w))
        lam = float((w @ (A @ w)) / (w @ (bdiag * w)))
        v = w
        if polish:
            polish -= 1
            if polish == 0:
                break
        elif abs(lam - lam_old) <= tol * (1.0 + abs(lam)):
            # a few extra sweeps: the quotient increment underestimates the
            # eigenvalue error when the spectral gap is small
            polish = 4
        lam_old = lam
    else:
        raise NonConvergenceError(
            f"inverse power iteration did not settle in {max_iter} iterations",
            iterations=max_iter,
        )

    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    v /= np.max(v)
    if np.min(v) < -1e-10:
        raise NegativeEigenvectorError(
            f"ground-state candidate has negative component {np.min(v):.3e}"
        )
    full = np.zeros(op.mesh.n_nodes)
    full[op.mesh.free_mask] = v
    return lam, Field(op.mesh, full)


def write_coo_system(op: OperatorAssembly, target) -> None:
    """Dump the assembled integrated-form matrix as 'row,col,value' text."""
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    own = isinstance(target, (str, bytes))
    fh = open(target, "w", newline="\n") if own else target
    try:
        fh.write("row,col,value\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r},{c},{v:.17g}\n")
    finally:
        if own:
            fh.close()
