"""Weak-form assembly and saddle-point linear algebra.

All bilinear forms are assembled cellwise with vectorized einsum
contractions and scattered into scipy.sparse matrices.  The convection
trilinear form is used in the skew-symmetrized version

    b(u, v, w) = 1/2 [ ([grad v] u, w) - ([grad w] u, v) ],

which yields an exactly antisymmetric matrix in (v, w) for any frozen
transport field u; testing the step operator with the solution itself
therefore sees no convective energy contribution.

Velocity/pressure saddle systems carry a scalar multiplier enforcing
zero pressure mean:

    [ A   -B^T  0 ] [u]   [f]
    [ B    0    w ] [q] = [g]
    [ 0   w^T   0 ] [a]   [0]

with w the pressure-basis means; Dirichlet rows are replaced by the
identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .pstructure import StressModel


class LinearSolveError(RuntimeError):
    """Sparse factorization or solve failed."""


def _wdet(space, degree):
    rule = space.tabulation(degree)[0]
    return space.detJ[:, None] * rule.weights[None, :]


def _scatter(local, row_dofs, col_dofs, shape):
    nl_r = row_dofs.shape[1]
    nl_c = col_dofs.shape[1]
    rows = np.broadcast_to(row_dofs[:, :, None], (len(local), nl_r, nl_c))
    cols = np.broadcast_to(col_dofs[:, None, :], (len(local), nl_r, nl_c))
    mat = sparse.coo_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())), shape=shape
    )
    return mat.tocsr()


def assemble_mass(space, degree=None):
    """Mass matrix; block-diagonal over components for vector spaces."""
    if degree is None:
        degree = 2 * space.element.degree + 1
    _, phi, _, _ = space.tabulation(degree)
    wd = _wdet(space, degree)
    local = np.einsum("cq,qa,qb->cab", wd, phi, phi)
    M = _scatter(local, space.cell_dofs, space.cell_dofs, (space.n_scalar, space.n_scalar))
    if space.n_components == 1:
        return M
    return sparse.block_diag([M] * space.n_components, format="csr")


def assemble_stiffness(space, degree=None):
    """Gradient-seminorm matrix (grad u, grad v), blocked per component."""
    if degree is None:
        degree = 2 * space.element.degree
    _, _, gphys, _ = space.tabulation(degree)
    wd = _wdet(space, degree)
    local = np.einsum("cq,cqal,cqbl->cab", wd, gphys, gphys)
    K = _scatter(local, space.cell_dofs, space.cell_dofs, (space.n_scalar, space.n_scalar))
    if space.n_components == 1:
        return K
    return sparse.block_diag([K] * space.n_components, format="csr")


def assemble_divergence(v_space, q_space, degree=None):
    """Matrix of (psi_e, div v); shape (pressure dofs, velocity dofs)."""
    if degree is None:
        degree = v_space.element.degree + q_space.element.degree + 1
    _, psi, _, _ = q_space.tabulation(degree)
    _, _, gphys, _ = v_space.tabulation(degree)
    wd = _wdet(v_space, degree)
    # (psi_e, d_i phi_b) goes to column i*n_scalar + b
    local = np.einsum("cq,qe,cqbi->ceib", wd, psi, gphys)
    nc = v_space.mesh.n_cells
    d = v_space.mesh.dim
    cols = v_space.local_vector_dofs()
    local = local.reshape(nc, psi.shape[1], d * v_space.n_local)
    return _scatter(local, q_space.cell_dofs, cols, (q_space.n_dofs, v_space.n_dofs))


def pressure_mean_vector(q_space, degree=None):
    """Vector of pressure basis integrals, w_e = int psi_e."""
    if degree is None:
        degree = q_space.element.degree + 1
    _, psi, _, _ = q_space.tabulation(degree)
    wd = _wdet(q_space, degree)
    cell = np.einsum("cq,qe->ce", wd, psi)
    w = np.zeros(q_space.n_dofs)
    np.add.at(w, q_space.cell_dofs, cell)
    return w


def assemble_rhs(space, f, degree=5):
    """Load vector of (f, phi) for a pointwise callable f."""
    _, phi, _, xq = space.tabulation(degree)
    wd = _wdet(space, degree)
    nc, nq = xq.shape[:2]
    vals = np.asarray(f(xq.reshape(-1, space.mesh.dim)), dtype=float)
    vals = vals.reshape(nc, nq, -1)
    if vals.shape[-1] != space.n_components:
        raise ValueError(
            f"callable returned {vals.shape[-1]} components, "
            f"space has {space.n_components}"
        )
    cell = np.einsum("cq,cqi,qa->cia", wd, vals, phi)
    out = np.zeros(space.n_dofs)
    dofs = np.concatenate(
        [space.cell_dofs + i * space.n_scalar for i in range(space.n_components)],
        axis=1,
    )
    np.add.at(out, dofs, cell.reshape(nc, -1))
    return out


def assemble_stress(v_space, coeffs, model: StressModel, degree=5, jacobian="newton",
                    jac_delta_floor=1e-8):
    """Stress residual (S(Du), Dv) and optional linearization.

    jacobian: "newton" for the exact derivative (with the shift floored
    at jac_delta_floor to keep the weight representable), "picard" for
    the frozen-weight secant operator, or None for residual only.
    The residual always uses the unmodified model.
    """
    grad = v_space.grad_at_qp(coeffs, degree)
    _, _, gphys, _ = v_space.tabulation(degree)
    wd = _wdet(v_space, degree)
    S = model.stress(grad)
    res_cell = np.einsum("cq,cqil,cqal->cia", wd, S, gphys)
    nc = v_space.mesh.n_cells
    residual = np.zeros(v_space.n_dofs)
    dofs = v_space.local_vector_dofs()
    np.add.at(residual, dofs, res_cell.reshape(nc, -1))
    if jacobian is None:
        return residual, None

    nloc = v_space.n_local
    d = v_space.mesh.dim
    if jacobian == "newton":
        jmodel = model
        if model.delta < jac_delta_floor:
            jmodel = StressModel(model.p, jac_delta_floor, model.dim)
        J4 = jmodel.stress_jacobian(grad)
        local = np.einsum("cq,cqsltm,cqal,cqbm->csatb", wd, J4, gphys, gphys)
    elif jacobian == "picard":
        from .pstructure import _safe_pow, sym_part, tensor_norm

        t = tensor_norm(sym_part(grad))
        shift = np.maximum(model.delta + t, jac_delta_floor)
        g = _safe_pow(shift, model.p - 2.0)
        wg = wd * g
        # frozen-weight operator g (Dv, Dw) with D the symmetric gradient:
        # 1/2 [delta_ij grad(phi_a).grad(phi_b) + d_j phi_a d_i phi_b]
        term1 = np.einsum("cq,cqal,cqbl->cab", wg, gphys, gphys)
        local = 0.5 * np.einsum("cq,cqaj,cqbi->ciajb", wg, gphys, gphys)
        for i in range(d):
            local[:, i, :, i, :] += 0.5 * term1
    else:
        raise ValueError(f"unknown jacobian mode {jacobian!r}")
    K = _scatter(
        local.reshape(nc, d * nloc, d * nloc), dofs, dofs,
        (v_space.n_dofs, v_space.n_dofs),
    )
    return residual, K


def assemble_convection(v_space, transport_coeffs, degree=None):
    """Skew-symmetrized convection matrix for a frozen transport field."""
    if degree is None:
        degree = 3 * v_space.element.degree
    _, phi, gphys, _ = v_space.tabulation(degree)
    wvals = v_space.eval_at_qp(transport_coeffs, degree)
    wd = _wdet(v_space, degree)
    C_local = np.einsum("cq,cqi,cqbi,qa->cab", wd, wvals, gphys, phi)
    n = v_space.n_scalar
    C = _scatter(C_local, v_space.cell_dofs, v_space.cell_dofs, (n, n))
    skew = 0.5 * (C - C.T)
    return sparse.block_diag([skew] * v_space.n_components, format="csr")


def apply_dirichlet_matrix(A, bdofs, identity=True):
    """Zero constrained rows and columns; optionally set unit diagonal."""
    n = A.shape[0]
    free = np.ones(n)
    free[bdofs] = 0.0
    Df = sparse.diags(free)
    out = (Df @ A @ Df).tocsr()
    if identity:
        out = out + sparse.diags(1.0 - free)
    return out.tocsr()


@dataclass
class SaddleSystem:
    """Augmented velocity/pressure system with mean constraint."""

    A: sparse.csr_matrix
    B: sparse.csr_matrix
    w: np.ndarray
    bdofs: np.ndarray

    def matrix(self):
        A = apply_dirichlet_matrix(self.A, self.bdofs)
        free = np.ones(self.A.shape[0])
        free[self.bdofs] = 0.0
        Bf = (self.B @ sparse.diags(free)).tocsr()
        wcol = sparse.csr_matrix(self.w[:, None])
        return sparse.bmat(
            [[A, -Bf.T, None], [Bf, None, wcol], [None, wcol.T, None]],
            format="csc",
        )

    def rhs(self, rhs_u, rhs_q):
        f = np.array(rhs_u, dtype=float)
        f[self.bdofs] = 0.0
        return np.concatenate([f, rhs_q, [0.0]])

    def split(self, x):
        nu = self.A.shape[0]
        nq = self.B.shape[0]
        return x[:nu], x[nu : nu + nq], float(x[-1])


def apply_dirichlet(system: SaddleSystem, boundary_dofs) -> SaddleSystem:
    """Attach homogeneous Dirichlet constraints to a saddle system.

    The returned system eliminates the listed velocity dofs
    symmetrically (identity rows/cols in A, zeroed B columns, zeroed
    rhs entries) when its matrix and rhs are formed.
    """
    return SaddleSystem(system.A, system.B, system.w,
                        np.asarray(boundary_dofs, dtype=np.int64))


def solve_saddle(A, B, w, rhs_u, rhs_q, bdofs):
    """Factor and solve one augmented saddle system.

    Returns (u, q, alpha); raises LinearSolveError when the
    factorization fails or produces non-finite values.
    """
    sys = SaddleSystem(A.tocsr(), B.tocsr(), np.asarray(w, dtype=float),
                       np.asarray(bdofs, dtype=np.int64))
    K = sys.matrix()
    try:
        lu = splu(K)
        x = lu.solve(sys.rhs(rhs_u, rhs_q))
    except Exception as exc:  # scipy raises bare RuntimeError on singularity
        raise LinearSolveError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("non-finite solution from sparse solve")
    return sys.split(x)
