"""Semi-implicit time stepping for the shear-thinning flow problem.

Each step solves the fully coupled velocity/pressure system

    (u^m - u^(m-1), v)/kappa + (S(Du^m), Dv) + b(u^(m-1), u^m, v)
        - (q^m, div v) = (f(t_m), v),
    (div u^m, eta) = 0,

with the convecting field frozen at the previous step, so the
nonlinearity entering Newton's method is the stress alone.  The initial
field is the divergence-preserving projection of the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import time

import numpy as np
from scipy.sparse.linalg import splu

from . import assembly
from .fespace import DiscreteField, div_preserving_projection


class NonConvergenceError(RuntimeError):
    """Nonlinear solve exhausted its iteration budget."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, t_end] into n_steps intervals."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.t_end <= 0.0 or self.n_steps < 1:
            raise ValueError("need t_end > 0 and at least one step")

    @property
    def kappa(self):
        return self.t_end / self.n_steps

    def times(self):
        return np.linspace(0.0, self.t_end, self.n_steps + 1)


@dataclass
class SolverOptions:
    tol: float = 1e-10  # relative to the fixed part of the step rhs
    abs_tol: float = 1e-14
    max_newton: int = 50
    max_picard: int = 200
    max_backtrack: int = 8
    picard_after_rejects: int = 3
    jac_delta_floor: float = 1e-8
    method: str = "newton"  # "newton" (with picard fallback) or "picard"
    quad_degree: int = 5
    data_degree: int = 5


@dataclass
class StepDiagnostics:
    iterations: int
    mode: str
    residual_norm: float
    residual_history: list
    alpha: float
    converged: bool
    backtracks: int = 0


class StepperContext:
    """Shared matrices and options for a sequence of steps."""

    def __init__(self, v_space, q_space, model, kappa, options=None):
        self.v_space = v_space
        self.q_space = q_space
        self.model = model
        self.kappa = float(kappa)
        self.opts = options or SolverOptions()
        self.M = assembly.assemble_mass(v_space)
        self.B = assembly.assemble_divergence(v_space, q_space)
        self.w = assembly.pressure_mean_vector(q_space)
        self.bdofs = v_space.boundary_dofs()
        self._free = np.ones(v_space.n_dofs)
        self._free[self.bdofs] = 0.0

    def _residual(self, U, Q, alpha, U_prev, N, F):
        s, _ = assembly.assemble_stress(
            self.v_space, U, self.model, degree=self.opts.quad_degree, jacobian=None
        )
        Ru = self.M @ (U - U_prev) / self.kappa + s + N @ U - self.B.T @ Q - F
        Ru = np.where(self._free > 0.0, Ru, U)
        Rq = self.B @ U + self.w * alpha
        Ra = float(self.w @ Q)
        return np.concatenate([Ru, Rq, [Ra]])

    def _linear_matrix(self, U, N, mode):
        _, K = assembly.assemble_stress(
            self.v_space, U, self.model, degree=self.opts.quad_degree,
            jacobian=mode, jac_delta_floor=self.opts.jac_delta_floor,
        )
        A = self.M / self.kappa + N + K
        return assembly.SaddleSystem(A.tocsr(), self.B, self.w, self.bdofs)

    def step(self, U_prev, Q_prev, t_m, f=None, initial=None):
        """Advance one step; returns (U, Q, StepDiagnostics)."""
        opts = self.opts
        nu = self.v_space.n_dofs
        nq = self.q_space.n_dofs
        if f is not None:
            F = assembly.assemble_rhs(self.v_space, f, degree=opts.data_degree)
        else:
            F = np.zeros(nu)
        N = assembly.assemble_convection(self.v_space, U_prev)
        scale = float(np.linalg.norm(F + self.M @ U_prev / self.kappa))
        tol_eff = max(opts.tol * scale, opts.abs_tol)

        if initial is not None:
            U, Q = np.array(initial[0], dtype=float), np.array(initial[1], dtype=float)
            U[self.bdofs] = 0.0
        else:
            U, Q = np.array(U_prev, dtype=float), np.array(Q_prev, dtype=float)
        alpha = 0.0

        history = []
        backtracks = 0
        R = self._residual(U, Q, alpha, U_prev, N, F)
        rnorm = float(np.linalg.norm(R))
        history.append(rnorm)
        mode = opts.method
        rejects = 0
        newton_iters = 0
        total_iters = 0

        def unpack(x):
            return x[:nu], x[nu : nu + nq], float(x[-1])

        x = np.concatenate([U, Q, [alpha]])
        while total_iters < opts.max_newton + opts.max_picard:
            if rnorm <= tol_eff:
                return (
                    x[:nu].copy(), x[nu : nu + nq].copy(),
                    StepDiagnostics(total_iters, mode, rnorm, history, float(x[-1]),
                                    True, backtracks),
                )
            U, Q, alpha = unpack(x)
            if mode == "newton" and newton_iters >= opts.max_newton:
                mode = "picard"
            if mode == "newton":
                sys = self._linear_matrix(U, N, "newton")
                try:
                    lu = splu(sys.matrix())
                except RuntimeError as exc:
                    raise NonConvergenceError(
                        f"factorization failed at t={t_m:.6g}: {exc}"
                    ) from exc
                d = lu.solve(-R)
                lam = 1.0
                accepted = False
                for _ in range(opts.max_backtrack + 1):
                    x_try = x + lam * d
                    R_try = self._residual(*unpack(x_try), U_prev, N, F)
                    r_try = float(np.linalg.norm(R_try))
                    if r_try <= (1.0 - 1e-4 * lam) * rnorm or r_try <= tol_eff:
                        x, R, rnorm = x_try, R_try, r_try
                        accepted = True
                        break
                    lam *= 0.5
                    backtracks += 1
                newton_iters += 1
                total_iters += 1
                if accepted:
                    rejects = 0
                else:
                    rejects += 1
                    if rejects >= opts.picard_after_rejects:
                        mode = "picard"
                history.append(rnorm)
            else:
                # secant iteration with the frozen-weight operator; direct
                # iterate, no line search
                sys = self._linear_matrix(U, N, "picard")
                rhs_u = F + self.M @ U_prev / self.kappa
                try:
                    U_new, Q_new, a_new = assembly.solve_saddle(
                        sys.A, self.B, self.w, rhs_u, np.zeros(nq), self.bdofs
                    )
                except assembly.LinearSolveError as exc:
                    raise NonConvergenceError(
                        f"linear solve failed at t={t_m:.6g}: {exc}"
                    ) from exc
                x = np.concatenate([U_new, Q_new, [a_new]])
                R = self._residual(U_new, Q_new, a_new, U_prev, N, F)
                rnorm = float(np.linalg.norm(R))
                history.append(rnorm)
                total_iters += 1
        raise NonConvergenceError(
            f"step at t={t_m:.6g} did not reach tol {tol_eff:.3e} "
            f"(last residual {rnorm:.3e})",
            StepDiagnostics(total_iters, mode, rnorm, history, float(x[-1]), False,
                            backtracks),
        )


@dataclass
class Trajectory:
    """Discrete solution history over a time grid."""

    v_space: object
    q_space: object
    model: object
    grid: TimeGrid
    velocities: list
    pressures: list
    diagnostics: list = field(default_factory=list)
    wall_time: float = 0.0

    def velocity_field(self, m) -> DiscreteField:
        return DiscreteField(self.v_space, self.velocities[m])

    def l2_norms(self, degree=5):
        """||u_h^m||_2 for m = 0..M."""
        out = []
        for U in self.velocities:
            vals = self.v_space.eval_at_qp(U, degree)
            out.append(
                float(np.sqrt(self.v_space.integrate(np.sum(vals * vals, -1), degree)))
            )
        return np.array(out)

    def f_norm_sq(self, degree=5):
        """||F(Du_h^m)||_2^2 for m = 0..M."""
        out = []
        for U in self.velocities:
            grad = self.v_space.grad_at_qp(U, degree)
            Fv = self.model.f_map(grad)
            out.append(float(self.v_space.integrate(np.sum(Fv * Fv, (-2, -1)), degree)))
        return np.array(out)

    def energy_report(self, degree=5):
        norms = self.l2_norms(degree)
        fsq = self.f_norm_sq(degree)
        return {
            "max_l2_sq": float(np.max(norms**2)),
            "dissipation": float(self.grid.kappa * np.sum(fsq[1:])),
        }

    def divergence_max(self):
        B = assembly.assemble_divergence(self.v_space, self.q_space)
        Mq = assembly.assemble_mass(self.q_space)
        psi_norms = np.sqrt(Mq.diagonal())
        worst = 0.0
        for U in self.velocities:
            r = np.abs(B @ U) / psi_norms
            worst = max(worst, float(np.max(r)))
        return worst


def discrete_divergence_check(u: DiscreteField, q_space, B=None):
    """max_e |(div u_h, psi_e)| / ||psi_e||_2 over the pressure basis."""
    if B is None:
        B = assembly.assemble_divergence(u.space, q_space)
    Mq = assembly.assemble_mass(q_space)
    psi_norms = np.sqrt(Mq.diagonal())
    return float(np.max(np.abs(B @ u.coeffs) / psi_norms))


def run_simulation(v_space, q_space, model, grid: TimeGrid, u0, f=None,
                   options=None) -> Trajectory:
    """Run the scheme over the grid from initial data u0.

    u0 may be a callable (projected onto the discretely divergence-free
    subspace) or a DiscreteField taken as is.  f, when given, is called
    as f(t, X) with X of shape (n, d).
    """
    opts = options or SolverOptions()
    if grid.kappa > 1.0:
        raise ValueError(f"time step kappa={grid.kappa:.3g} must be <= 1")
    t0 = time.perf_counter()
    if isinstance(u0, DiscreteField):
        U0 = np.array(u0.coeffs, dtype=float)
    else:
        U0 = div_preserving_projection(
            v_space, q_space, u0, degree=max(opts.data_degree, 5)
        ).coeffs
    ctx = StepperContext(v_space, q_space, model, grid.kappa, opts)
    velocities = [U0]
    pressures = [np.zeros(q_space.n_dofs)]
    diags = []
    U_prev = U0
    Q_prev = pressures[0]
    for m, t_m in enumerate(grid.times()[1:], start=1):
        fm = (lambda X, _t=t_m: f(_t, X)) if f is not None else None
        U, Q, diag = ctx.step(U_prev, Q_prev, t_m, fm)
        velocities.append(U)
        pressures.append(Q)
        diags.append(diag)
        U_prev, Q_prev = U, Q
    return Trajectory(
        v_space, q_space, model, grid, velocities, pressures, diags,
        wall_time=time.perf_counter() - t0,
    )
