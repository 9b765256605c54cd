"""Manufactured solutions, error studies and inequality checkers.

The verification pipeline: an exact divergence-free velocity/pressure
pair with all derivatives in closed form, the forcing that makes it
solve the flow problem, per-step error records in the natural norms,
convergence studies under a kappa = sigma*h coupling, and numeric
checkers for the discrete Gronwall inequality and for the mean-square
time-increment (Bochner) bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import io

import numpy as np
import sympy as sp
from scipy.special import roots_legendre

from . import assembly
from .fespace import FESpace, element_pair
from .mesh import unit_square_mesh
from .pstructure import StressModel, _safe_pow, sym_part, tensor_norm
from .stepper import SolverOptions, TimeGrid, Trajectory, run_simulation


# -- manufactured solutions --------------------------------------------

@dataclass
class ManufacturedSolution:
    """Closed-form exact solution on the unit square.

    All callables take (t, X) with X of shape (..., 2) and return
    arrays with the trailing structure noted below.
    """

    name: str
    u: object        # (..., 2)
    grad_u: object   # (..., 2, 2), entry [i, j] = d u_i / d x_j
    hess_u: object   # (..., 2, 2, 2), entry [i, j, k] = d2 u_i / dx_j dx_k
    dt_u: object     # (..., 2)
    q: object        # (...)
    grad_q: object   # (..., 2)


_ALPHAS = {
    # gentle modulation; spatial error dominates under kappa ~ h coupling
    "smooth-periodic": lambda t: 1 + sp.sin(2 * sp.pi * t) / 2,
    # fast, strong modulation so fixed-mesh refinement in time alone sees
    # the temporal error above the spatial floor
    "time-dominant": lambda t: 1 + sp.Rational(9, 10) * sp.sin(16 * sp.pi * t),
}


def _lambdify_vector(exprs, syms):
    fns = [sp.lambdify(syms, e, modules="numpy") for e in exprs]

    def call(t, X):
        X = np.asarray(X, dtype=float)
        x, y = X[..., 0], X[..., 1]
        cols = [
            np.broadcast_to(np.asarray(f(t, x, y), dtype=float), x.shape)
            for f in fns
        ]
        return np.stack(cols, axis=-1)

    return call


def _lambdify_scalar(expr, syms):
    f = sp.lambdify(syms, expr, modules="numpy")

    def call(t, X):
        X = np.asarray(X, dtype=float)
        x, y = X[..., 0], X[..., 1]
        return np.broadcast_to(np.asarray(f(t, x, y), dtype=float), x.shape).copy()

    return call


def _tree_depth(node):
    d = 0
    while isinstance(node, (list, tuple)):
        d += 1
        node = node[0]
    return d


def _lambdify_nested(nested, syms):
    # nested lists of expressions -> callable returning (..., *tree shape)
    def compile_node(node):
        if isinstance(node, (list, tuple)):
            return [compile_node(c) for c in node]
        return sp.lambdify(syms, node, modules="numpy")

    tree = compile_node(nested)

    def call(t, X):
        X = np.asarray(X, dtype=float)
        x, y = X[..., 0], X[..., 1]

        def evaluate(node):
            if isinstance(node, list):
                parts = [evaluate(c) for c in node]
                return np.stack(parts, axis=-_tree_depth(node))
            return np.broadcast_to(np.asarray(node(t, x, y), dtype=float), x.shape)

        return evaluate(tree)

    return call


def manufactured_default(alpha_kind="smooth-periodic") -> ManufacturedSolution:
    """Stream-function solution u = alpha(t) curl psi on the unit square.

    psi = (x(1-x)y(1-y))^2 has a double zero on the boundary, so the
    velocity (and the tangential part of its gradient) vanishes there;
    q = cos(2 pi t)(x^3 + y^3 - 1/2) has zero mean.  alpha_kind chooses
    the time modulation.
    """
    if alpha_kind not in _ALPHAS:
        raise ValueError(
            f"unknown alpha kind {alpha_kind!r}; available: {sorted(_ALPHAS)}"
        )
    t, x, y = sp.symbols("t x y")
    psi = (x * (1 - x) * y * (1 - y)) ** 2
    alpha = _ALPHAS[alpha_kind](t)
    u1 = alpha * sp.diff(psi, y)
    u2 = -alpha * sp.diff(psi, x)
    q = sp.cos(2 * sp.pi * t) * (x**3 + y**3 - sp.Rational(1, 2))
    syms = (t, x, y)
    X = (x, y)
    u_exprs = [u1, u2]
    grad = [[sp.diff(ui, Xj) for Xj in X] for ui in u_exprs]
    hess = [[[sp.diff(ui, Xj, Xk) for Xk in X] for Xj in X] for ui in u_exprs]
    dtu = [sp.diff(ui, t) for ui in u_exprs]
    gq = [sp.diff(q, Xj) for Xj in X]
    return ManufacturedSolution(
        name=alpha_kind,
        u=_lambdify_vector(u_exprs, syms),
        grad_u=_lambdify_nested(grad, syms),
        hess_u=_lambdify_nested(hess, syms),
        dt_u=_lambdify_vector(dtu, syms),
        q=_lambdify_scalar(q, syms),
        grad_q=_lambdify_vector(gq, syms),
    )


def forcing_from(ms: ManufacturedSolution, model: StressModel):
    """Forcing f = dt_u - div S(Du) + [grad u] u + grad q as a callable.

    div S is evaluated by contracting the closed-form stress derivative
    with the analytic Hessian.  For delta = 0 the stress derivative is
    singular where Du vanishes.  The default solution family degenerates
    only at isolated points (the domain center and corners), which the
    default quadrature rules avoid; that is asserted here by probing the
    physical quadrature points of representative meshes.  The hard guard
    remains the DegenerateGradientError raised at evaluation time.
    """
    def f(t, X):
        X = np.asarray(X, dtype=float)
        G = ms.grad_u(t, X)
        H = ms.hess_u(t, X)
        J = model.stress_jacobian(G)
        dA = 0.5 * (H + np.swapaxes(H, -3, -2))  # d_j (sym grad u)_kl at [k,l,j]
        divS = np.einsum("...ijkl,...klj->...i", J, dA)
        conv = np.einsum("...il,...l->...i", G, ms.u(t, X))
        return ms.dt_u(t, X) + conv + ms.grad_q(t, X) - divS

    if model.delta == 0.0:
        for n in (4, 8, 16, 32):
            probe = FESpace(unit_square_mesh(n), "P1")
            for deg in (5, 7):
                X = probe.tabulation(deg)[3].reshape(-1, 2)
                for tt in (0.0, 0.3, 0.7):
                    A = sym_part(ms.grad_u(tt, X))
                    if np.min(tensor_norm(A)) < 1e-10:
                        raise ValueError(
                            "delta=0 forcing degenerates at a default "
                            "quadrature point; use a regularized model"
                        )
    return f


# -- error quantities --------------------------------------------------

@dataclass
class ErrorRecord:
    """Per-step error norms of a trajectory against the exact solution.

    a_m = ||u_h^m - u(t_m)||_2 and the F-increment distance b_m are
    stored for m = 0..M; the Lebesgue gradient norms feed the Gronwall
    harvest.  Aggregates follow the error-estimate form
    max_m a_m^2 + kappa sum b_m^2.
    """

    times: np.ndarray
    l2: np.ndarray           # a_m
    f_dist: np.ndarray       # b_m
    grad_p_err: np.ndarray   # ||D(u_h - u)||_p
    grad_p_exact: np.ndarray  # ||Du(t_m)||_p
    kappa: float
    h: float
    p: float
    delta: float

    @property
    def l2_max(self):
        return float(np.max(self.l2))

    @property
    def f_agg(self):
        return float(np.sqrt(self.kappa * np.sum(self.f_dist[1:] ** 2)))

    @property
    def combined_sq(self):
        return self.l2_max**2 + self.f_agg**2

    def ratio(self):
        """Aggregate over h^2 + kappa^2, the rate-consistency monitor."""
        return self.combined_sq / (self.h**2 + self.kappa**2)


def error_record(traj: Trajectory, ms: ManufacturedSolution, model=None,
                 degree=7) -> ErrorRecord:
    model = model or traj.model
    sp_v = traj.v_space
    rule, _, _, xq = sp_v.tabulation(degree)
    Xflat = xq.reshape(-1, sp_v.mesh.dim)
    p = model.p
    times = traj.grid.times()
    l2 = np.zeros(len(times))
    f_dist = np.zeros(len(times))
    gperr = np.zeros(len(times))
    gpex = np.zeros(len(times))
    for m, tm in enumerate(times):
        U = traj.velocities[m]
        uh = sp_v.eval_at_qp(U, degree)
        gh = sp_v.grad_at_qp(U, degree)
        ue = ms.u(tm, Xflat).reshape(uh.shape)
        ge = ms.grad_u(tm, Xflat).reshape(gh.shape)
        diff = uh - ue
        l2[m] = np.sqrt(sp_v.integrate(np.sum(diff * diff, -1), degree))
        dF = model.f_map(gh) - model.f_map(ge)
        f_dist[m] = np.sqrt(sp_v.integrate(np.sum(dF * dF, (-2, -1)), degree))
        dsym = tensor_norm(sym_part(gh) - sym_part(ge))
        gperr[m] = sp_v.integrate(dsym**p, degree) ** (1.0 / p)
        gpex[m] = sp_v.integrate(tensor_norm(sym_part(ge)) ** p, degree) ** (1.0 / p)
    q = sp_v.mesh.quality()
    return ErrorRecord(
        times=times, l2=l2, f_dist=f_dist, grad_p_err=gperr, grad_p_exact=gpex,
        kappa=traj.grid.kappa, h=q.h_max, p=p, delta=model.delta,
    )


def eoc_pairs(errors, hs):
    """EOC between consecutive levels; first entry is NaN."""
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    out = np.full(len(errors), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[1:] = np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:])
    return out


def least_squares_rate(errors, hs):
    """Slope of log(error) against log(h)."""
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


# -- convergence studies -----------------------------------------------

@dataclass
class StudyConfig:
    """Parameters of a convergence study.

    mode "coupled" refines mesh and time step together with
    kappa = sigma*h; mode "temporal" fixes the n_fixed mesh and runs
    each step count in ``steps``.
    """

    p: float
    delta: float
    levels: tuple = (4, 8, 16)
    element: str = "MINI"
    t_end: float = 0.5
    sigma: float = 0.25
    mode: str = "coupled"
    n_fixed: int = 16
    steps: tuple = (8, 16, 32, 64)
    manufactured: str = "smooth-periodic"
    quad_flow: int = 5
    quad_error: int = 7
    seed: int = 42
    tol: float = 1e-10
    method: str = "newton"

    def __post_init__(self):
        if self.mode not in ("coupled", "temporal"):
            raise ValueError(f"unknown study mode {self.mode!r}")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if self.t_end <= 0.0:
            raise ValueError("t_end must be positive")

    @property
    def guaranteed_range(self):
        # convergence guarantee covers p in (8/5, 2]
        return self.p > 1.6


@dataclass
class StudyRow:
    p: float
    delta: float
    level: int
    h: float
    kappa: float
    err_l2max: float
    err_fagg: float
    eoc_l2: float
    eoc_f: float
    gronwall_mu4: float
    energy: float
    compat: float  # h^(4/p') / kappa, the coupling monitor
    record: ErrorRecord = field(repr=False, default=None)
    traj: Trajectory = field(repr=False, default=None)


CSV_HEADER = "p,delta,level,h,kappa,err_L2max,err_Fagg,eoc_L2,eoc_F,gronwall_mu4,energy"


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list

    def csv(self) -> str:
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for r in self.rows:
            eoc_l2 = "" if np.isnan(r.eoc_l2) else f"{r.eoc_l2:.10g}"
            eoc_f = "" if np.isnan(r.eoc_f) else f"{r.eoc_f:.10g}"
            out.write(
                f"{r.p:.10g},{r.delta:.10g},{r.level},{r.h:.10g},{r.kappa:.10g},"
                f"{r.err_l2max:.10g},{r.err_fagg:.10g},{eoc_l2},{eoc_f},"
                f"{r.gronwall_mu4:.10g},{r.energy:.10g}\n"
            )
        return out.getvalue()

    def summary(self) -> str:
        from .cli import report  # table formatter shared with the CLI

        cfg = self.config
        head = ["level", "h", "kappa", "err_L2max", "err_Fagg", "eoc_L2",
                "eoc_F", "mu4", "energy", "compat"]
        body = [
            [r.level, r.h, r.kappa, r.err_l2max, r.err_fagg, r.eoc_l2,
             r.eoc_f, r.gronwall_mu4, r.energy, r.compat]
            for r in self.rows
        ]
        lines = [
            f"study p={cfg.p} delta={cfg.delta} element={cfg.element} "
            f"mode={cfg.mode} manufactured={cfg.manufactured}",
        ]
        if not cfg.guaranteed_range:
            lines.append(
                "note: p <= 8/5 is outside the guaranteed exponent range; "
                "results are experimental"
            )
        lines.append(report([head] + body))
        errs_l2 = [r.err_l2max for r in self.rows]
        errs_f = [r.err_fagg for r in self.rows]
        xs = [r.h for r in self.rows] if cfg.mode == "coupled" else [
            r.kappa for r in self.rows
        ]
        if len(self.rows) >= 2 and min(errs_l2) > 0 and min(errs_f) > 0:
            lines.append(
                f"least-squares rates: L2max {least_squares_rate(errs_l2, xs):.3f}, "
                f"F-aggregate {least_squares_rate(errs_f, xs):.3f}"
            )
        return "\n".join(lines) + "\n"


def convergence_study(config: StudyConfig) -> StudyResult:
    """Run the manufactured-solution study described by the config.

    Coupled mode asserts the compatibility h^(4/p') <= sigma0*kappa by
    reporting the monitor column; the step count at each level is
    M = round(T / (sigma h)) so kappa = T/M matches sigma*h up to
    rounding.  delta = 0 switches the nonlinear solver to its secant
    path, which tolerates the degenerate weight.
    """
    ms = manufactured_default(config.manufactured)
    model = StressModel(config.p, config.delta)
    f = forcing_from(ms, model)
    method = "picard" if config.delta == 0.0 else config.method
    opts = SolverOptions(
        tol=config.tol, method=method, quad_degree=config.quad_flow,
        data_degree=config.quad_flow,
    )

    runs = []
    if config.mode == "coupled":
        for n in config.levels:
            mesh = unit_square_mesh(n)
            h = mesh.quality().h_max
            M = max(1, round(config.t_end / (config.sigma * h)))
            runs.append((n, mesh, TimeGrid(config.t_end, M)))
    else:
        mesh = unit_square_mesh(config.n_fixed)
        for M in config.steps:
            runs.append((config.n_fixed, mesh, TimeGrid(config.t_end, int(M))))

    rows = []
    for n, mesh, grid in runs:
        ev, eq = element_pair(config.element)
        V = FESpace(mesh, ev, n_components=2)
        Q = FESpace(mesh, eq, n_components=1)
        traj = run_simulation(V, Q, model, grid, lambda X: ms.u(0.0, X), f,
                              options=opts)
        rec = error_record(traj, ms, model, degree=config.quad_error)
        g = gronwall_check(harvest_gronwall(rec))
        energy = traj.energy_report(config.quad_flow)
        pprime = config.p / (config.p - 1.0)
        rows.append(
            StudyRow(
                p=config.p, delta=config.delta, level=n, h=rec.h,
                kappa=grid.kappa, err_l2max=rec.l2_max, err_fagg=rec.f_agg,
                eoc_l2=np.nan, eoc_f=np.nan,
                gronwall_mu4=g.mu4_required,
                energy=energy["max_l2_sq"] + energy["dissipation"],
                compat=rec.h ** (4.0 / pprime) / grid.kappa,
                record=rec, traj=traj,
            )
        )

    if config.mode == "coupled":
        compat = np.array([r.compat for r in rows])
        # kappa = sigma*h only satisfies h^(4/p') <= sigma0*kappa under
        # refinement when the monitor does not grow (needs p > 4/3)
        if np.any(np.diff(compat) > 1e-12):
            raise ValueError(
                f"step-size coupling incompatible with p={config.p}: "
                "h^(4/p')/kappa grows under refinement"
            )

    xs = [r.h for r in rows] if config.mode == "coupled" else [r.kappa for r in rows]
    el2 = eoc_pairs([r.err_l2max for r in rows], xs)
    ef = eoc_pairs([r.err_fagg for r in rows], xs)
    rows = [replace(r, eoc_l2=el2[i], eoc_f=ef[i]) for i, r in enumerate(rows)]
    return StudyResult(config, rows)


# -- discrete Gronwall checker -----------------------------------------

@dataclass
class GronwallData:
    """Sequences and constants of the discrete Gronwall inequality.

    a, b cover m = 0..M; the auxiliary sequences r, s, rho, sigma cover
    m = 1..M and default to zero.  theta must lie in (0, 1].
    """

    kappa: float
    h: float
    p: float
    a: np.ndarray
    b: np.ndarray
    r: np.ndarray = None
    s: np.ndarray = None
    rho: np.ndarray = None
    sigma: np.ndarray = None
    lam: float = 0.0
    Lam: float = 1.0
    theta: float = 1.0
    mu0: float = 1.0
    mu1: float = 1.0
    mu2: float = 1.0
    mu3: float = 1.0
    mu4: float = 1.0
    mu5: float = 1.0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        M = len(self.a) - 1
        if len(self.b) != M + 1:
            raise ValueError("a and b must have length M+1")
        for name in ("r", "s", "rho", "sigma"):
            v = getattr(self, name)
            v = np.zeros(M) if v is None else np.asarray(v, dtype=float)
            if len(v) != M:
                raise ValueError(f"{name} must have length M")
            setattr(self, name, v)
        seqs = np.concatenate([self.a, self.b, self.r, self.s, self.rho, self.sigma])
        if np.any(seqs < 0.0):
            raise ValueError("sequences must be nonnegative")
        if not (0.0 < self.theta <= 1.0):
            raise ValueError("theta must lie in (0, 1]")
        if not (0.0 <= self.lam <= self.Lam):
            raise ValueError("need 0 <= lambda <= Lambda")

    @property
    def M(self):
        return len(self.a) - 1


@dataclass
class GronwallReport:
    hypotheses_ok: bool
    stepwise_ok: bool
    stepwise_ok_bis: bool
    stepwise_ok_ter: bool
    conclusion_ok: bool
    mu0_required: float
    mu4_required: float
    b_max: float
    margins: dict
    violations_bis: list
    violations_ter: list


def _gronwall_weight(lam, b, p):
    # (lam + b)^(p-2) b^2 with the 0-at-0 convention
    return _safe_pow(lam + b, p - 2.0) * b * b


def gronwall_check(data: GronwallData) -> GronwallReport:
    """Numerically verify the discrete Gronwall hypotheses/conclusions.

    Hypotheses and the two step inequalities are checked with the
    constants carried by ``data``; the smallest admissible mu0 and mu4
    are always reported alongside the pass/fail flags.
    """
    k, h, p = data.kappa, data.h, data.p
    a, b = data.a, data.b
    M = data.M
    slack = 1e-12

    hyp = {
        "a0": a[0] ** 2 / h**2,
        "b0": b[0] ** 2 / h**2,
        "r": k * np.sum(data.r**2) / h**2,
        "s": k * np.sum(data.s**2) / h**2,
        "rho": k * np.sum(data.rho**2) / k**2,
        "sigma": k * np.sum(data.sigma**2) / k**2,
    }
    mu0_required = max(hyp.values())
    hypotheses_ok = bool(mu0_required <= data.mu0 * (1 + slack))

    dt_a2 = (a[1:] ** 2 - a[:-1] ** 2) / k
    lhs = dt_a2 + data.mu1 * _gronwall_weight(data.lam, b[1:], p)
    base = b[1:] * data.r + b[1:] * data.rho + data.s**2 + data.sigma**2
    rhs_bis = base + data.mu2 * b[:-1] * b[1:]
    rhs_ter = base + data.mu3 * b[1:] * _safe_pow(b[:-1], 1.0 - data.theta) * _safe_pow(
        a[:-1], data.theta
    )
    tol = slack * (1.0 + np.abs(lhs) + np.abs(rhs_bis) + np.abs(rhs_ter))
    viol_bis = np.nonzero(lhs > rhs_bis + tol)[0] + 1
    viol_ter = np.nonzero(lhs > rhs_ter + tol)[0] + 1
    ok_bis = len(viol_bis) == 0
    ok_ter = len(viol_ter) == 0

    lhs_conclusion = float(np.max(a**2) + data.mu1 * _safe_pow(1.0 + data.Lam, p - 2.0)
                           * k * np.sum(b**2))
    growth = (h**2 + k**2) * np.exp(2.0 * data.mu5 * k * M)
    mu4_required = lhs_conclusion / growth
    b_max = float(np.max(b))
    conclusion_ok = bool(
        lhs_conclusion <= data.mu4 * growth * (1 + slack)
        and b_max <= 1.0 + slack
    )
    margins = {
        "hypotheses": {kk: data.mu0 - v for kk, v in hyp.items()},
        "stepwise_bis_min": float(np.min(rhs_bis - lhs)) if M else 0.0,
        "stepwise_ter_min": float(np.min(rhs_ter - lhs)) if M else 0.0,
        "conclusion": data.mu4 * growth - lhs_conclusion,
        "b_max": 1.0 - b_max,
    }
    return GronwallReport(
        hypotheses_ok=hypotheses_ok,
        stepwise_ok=ok_bis and ok_ter,
        stepwise_ok_bis=ok_bis,
        stepwise_ok_ter=ok_ter,
        conclusion_ok=conclusion_ok,
        mu0_required=float(mu0_required),
        mu4_required=float(mu4_required),
        b_max=b_max,
        margins=margins,
        violations_bis=viol_bis.tolist(),
        violations_ter=viol_ter.tolist(),
    )


def harvest_gronwall(record: ErrorRecord, mus=None) -> GronwallData:
    """Map a computed error record onto Gronwall sequences.

    Only a_m (L2 error) and b_m (F-distance) are observable from a run;
    the proof-internal sequences r, s, rho, sigma are zero here and
    mu0 is not asserted.  lambda follows the quasi-norm shift
    delta + max ||Du||_p; theta is the exponent (10p-16)/(5p-6) clipped
    into (0, 1].
    """
    p = record.p
    lam = record.delta + float(np.max(record.grad_p_exact))
    theta = (10.0 * p - 16.0) / (5.0 * p - 6.0)
    theta = min(max(theta, 1e-6), 1.0)
    kw = dict(
        kappa=record.kappa, h=record.h, p=p, a=record.l2, b=record.f_dist,
        lam=lam, Lam=lam + float(np.max(record.f_dist)) + 1e-30, theta=theta,
    )
    if mus:
        kw.update(mus)
    return GronwallData(**kw)


# -- Bochner time-increment checker ------------------------------------

@dataclass
class BochnerReport:
    lhs: float
    rhs: float
    ratio: float
    holds: bool
    per_interval: np.ndarray


def bochner_check(f, dt_f, grid: TimeGrid, norm_x=None, tau="right",
                  n_quad=64) -> BochnerReport:
    """Check kappa sum avg_Im ||f(s)-f(tau_m)||^2 <= kappa^2 ||dt f||^2.

    f and dt_f map a time to a vector; norm_x (default Euclidean) maps
    values to reals.  tau selects the comparison node per interval:
    "right" (the scheme's choice t_m), "left", or "mid".
    """
    if norm_x is None:
        norm_x = np.linalg.norm
    if n_quad < 64:
        raise ValueError("need at least 64 quadrature points per interval")
    xi, wq = roots_legendre(n_quad)
    times = grid.times()
    k = grid.kappa
    pick = {"right": lambda t0, t1: t1, "left": lambda t0, t1: t0,
            "mid": lambda t0, t1: 0.5 * (t0 + t1)}
    try:
        tau_of = pick[tau]
    except KeyError:
        raise ValueError(f"tau must be one of {sorted(pick)}") from None

    lhs_parts = np.zeros(grid.n_steps)
    rhs = 0.0
    for m in range(grid.n_steps):
        t0, t1 = times[m], times[m + 1]
        ts = 0.5 * (t1 - t0) * xi + 0.5 * (t0 + t1)
        ws = 0.5 * (t1 - t0) * wq
        ftau = f(tau_of(t0, t1))
        # kappa * interval mean = plain interval integral
        lhs_parts[m] = np.sum(
            ws * np.array([norm_x(f(s) - ftau) ** 2 for s in ts])
        )
        rhs += np.sum(ws * np.array([norm_x(dt_f(s)) ** 2 for s in ts]))
    lhs = float(np.sum(lhs_parts))
    rhs = float(k**2 * rhs)
    ratio = 0.0 if lhs == 0.0 else lhs / rhs
    return BochnerReport(
        lhs=lhs, rhs=rhs, ratio=ratio, holds=lhs <= rhs + 1e-8,
        per_interval=lhs_parts,
    )


def bochner_example(kind, size=5, seed=0):
    """(f, dt_f) example families used by the checker suite."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(size)
    if kind == "constant":
        return (lambda t: g, lambda t: 0.0 * g)
    if kind == "linear":
        return (lambda t: t * g, lambda t: g)
    if kind == "sine":
        two_pi = 2.0 * np.pi
        return (
            lambda t: np.sin(two_pi * t) * g,
            lambda t: two_pi * np.cos(two_pi * t) * g,
        )
    raise ValueError(f"unknown example family {kind!r}")


# -- quasi-norm envelope on discrete fields ----------------------------

@dataclass
class QuasiNormReport:
    ratios: np.ndarray
    ratio_min: float
    ratio_max: float
    p: float
    delta: float
    seed: int


def quasi_norm_suite(mesh, model: StressModel, samples=100, seed=0) -> QuasiNormReport:
    """Sampled constants of the F-increment lower bound on P1 fields.

    For random piecewise-linear velocity pairs the ratio
    ||F(Du)-F(Dv)||^2 / [(delta+||Du||_p+||Du-Dv||_p)^(p-2) ||Du-Dv||_p^2]
    must stay positive; the envelope over the sample set is reported.
    """
    from .pstructure import quasi_norm_lower_bound_ratio

    if samples < 100:
        raise ValueError("suite requires at least 100 sample pairs")
    V = FESpace(mesh, "P1", n_components=mesh.dim)
    vols = V.detJ * quadrature_weight_total(mesh.dim)
    rng = np.random.default_rng(seed)
    p = model.p
    ratios = np.zeros(samples)
    for i in range(samples):
        U = rng.uniform(-1.0, 1.0, V.n_dofs)
        W = rng.uniform(-1.0, 1.0, V.n_dofs)
        gu = V.grad_at_qp(U, 1)[:, 0]  # P1 gradients are cellwise constant
        gw = V.grad_at_qp(W, 1)[:, 0]
        Au, Aw = sym_part(gu), sym_part(gw)
        ndu = float(np.sum(vols * tensor_norm(Au) ** p) ** (1.0 / p))
        ndiff = float(np.sum(vols * tensor_norm(Au - Aw) ** p) ** (1.0 / p))
        dF = model.f_map(gu) - model.f_map(gw)
        fsq = float(np.sum(vols * np.sum(dF * dF, (-2, -1))))
        ratios[i] = quasi_norm_lower_bound_ratio(model, ndu, ndiff, fsq)
    return QuasiNormReport(
        ratios=ratios, ratio_min=float(np.min(ratios)),
        ratio_max=float(np.max(ratios)), p=model.p, delta=model.delta, seed=seed,
    )


def quadrature_weight_total(dim):
    # reference simplex volume
    return 0.5 if dim == 2 else 1.0 / 6.0


# -- weak-residual consistency gate ------------------------------------

@dataclass
class WeakResidualReport:
    max_residual: float
    residuals: np.ndarray
    degree: int
    t: float


def weak_residual_check(ms: ManufacturedSolution, model: StressModel,
                        v_space: FESpace, t=0.3, n_fields=100, seed=0,
                        degree=7) -> WeakResidualReport:
    """Residual of the exact triple against random discrete test fields.

    Evaluates (dt u, v) + (S(Du), Dv) + b(u, u, v) - (q, div v) - (f, v)
    with a single quadrature rule for every term and unit-H1 normalized
    random fields v with zero boundary values.  Analytically the
    residual vanishes; what remains measures quadrature consistency.
    """
    rule, _, gphys, xq = v_space.tabulation(degree)
    wd = v_space.detJ[:, None] * rule.weights[None, :]
    Xflat = xq.reshape(-1, v_space.mesh.dim)
    nc, nq = xq.shape[:2]

    u = ms.u(t, Xflat).reshape(nc, nq, 2)
    G = ms.grad_u(t, Xflat).reshape(nc, nq, 2, 2)
    S = model.stress(G)
    qv = ms.q(t, Xflat).reshape(nc, nq)
    dtu = ms.dt_u(t, Xflat).reshape(nc, nq, 2)
    f = forcing_from(ms, model)
    fv = f(t, Xflat).reshape(nc, nq, 2)
    conv = np.einsum("cqil,cql->cqi", G, u)

    rng = np.random.default_rng(seed)
    K = assembly.assemble_stiffness(v_space)
    Mv = assembly.assemble_mass(v_space)
    bdofs = v_space.boundary_dofs()
    res = np.zeros(n_fields)
    for k in range(n_fields):
        coeffs = rng.standard_normal(v_space.n_dofs)
        coeffs[bdofs] = 0.0
        coeffs /= np.sqrt(coeffs @ (K @ coeffs) + coeffs @ (Mv @ coeffs))
        vvals = v_space.eval_at_qp(coeffs, degree)
        gvals = v_space.grad_at_qp(coeffs, degree)
        divv = np.einsum("cqii->cq", gvals)
        integrand = (
            np.einsum("cqil,cqil->cq", S, gvals)
            + np.einsum("cqi,cqi->cq", dtu + 0.5 * conv - fv, vvals)
            - 0.5 * np.einsum("cqil,cql,cqi->cq", gvals, u, u)
            - qv * divv
        )
        res[k] = np.sum(wd * integrand)
    return WeakResidualReport(
        max_residual=float(np.max(np.abs(res))), residuals=res, degree=degree,
        t=t,
    )


# -- Fenchel-Young sampling --------------------------------------------

@dataclass
class FenchelYoungReport:
    max_violation: float
    max_equality_gap: float


def fenchel_young_check(model: StressModel, a=0.7, n_samples=10000, seed=0,
                        scale=3.0) -> FenchelYoungReport:
    """Sampled Young inequality t s <= phi_a(t) + phi_a*(s).

    Also evaluates the equality case s = phi_a'(t), where the gap must
    vanish.
    """
    rng = np.random.default_rng(seed)
    sh = model.shifted(a)
    ts = rng.uniform(0.0, scale, n_samples)
    ss = rng.uniform(0.0, scale, n_samples)
    lhs = ts * ss
    rhs = sh.value(ts) + sh.conjugate(ss)
    violation = float(np.max(lhs - rhs))
    s_eq = sh.derivative(ts)
    gap = np.abs(ts * s_eq - sh.value(ts) - sh.conjugate(s_eq))
    return FenchelYoungReport(
        max_violation=max(violation, 0.0),
        max_equality_gap=float(np.max(gap)),
    )

