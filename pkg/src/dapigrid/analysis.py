"""Small-signal machinery.

Builds the decoupled linear voltage/reactive system, evaluates the two
closed-form symmetric-part conditions, assembles numeric Jacobians of the
full nonlinear loop at converged operating points, and sweeps controller
gains to trace eigenvalue loci.

All spectra here come from the in-repo solvers; the quadratic-pencil
companion route (pencil_eigenvalues) deliberately goes through numpy so
the two paths stay independent cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .control import CommGraph, gain_vector
from .eigensolvers import general_eigenvalues, symmetric_eigh
from .errors import ConvergenceTimeout, NumericError, ParameterError
from .network import build_susceptance_matrices
from .simulation import SystemState, _Context, steady_state

_REAL_TOL = 1e-9   # |Im| below this counts as a real eigenvalue


@dataclass(frozen=True)
class LinearVoltageSystem:
    """First-order form of the voltage/reactive channel around E = E*."""
    W: np.ndarray    # 2n x 2n, blocks [[-W1, I], [-W2, 0]]
    W1: np.ndarray
    W2: np.ndarray
    u: np.ndarray    # 2n constant forcing


@dataclass(frozen=True)
class StabilityReport:
    lambda_min_w1: float
    lambda_min_w2: float
    w1_condition: bool
    w2_condition: bool
    eigenvalues: np.ndarray

    def to_dict(self) -> dict:
        return {
            "lambda_min_w1": self.lambda_min_w1,
            "lambda_min_w2": self.lambda_min_w2,
            "w1_condition": self.w1_condition,
            "w2_condition": self.w2_condition,
            "eigenvalues": [[float(z.real), float(z.imag)]
                            for z in self.eigenvalues],
        }


@dataclass
class EigenTrace:
    gain: str
    grid: np.ndarray
    eigenvalues: np.ndarray          # (len(grid), m) complex, rows sorted
    warnings: list = field(default_factory=list)


def sort_spectrum(eigs) -> np.ndarray:
    eigs = np.asarray(eigs, dtype=complex)
    order = np.lexsort((-eigs.imag, -eigs.real))
    return eigs[order]


def admittance_matrix(net) -> np.ndarray:
    y_bus, y_load = build_susceptance_matrices(net)
    return -(y_bus + y_load)


def build_linear_voltage_system(net, ctrls, graph_b: CommGraph) -> LinearVoltageSystem:
    n = net.n
    if len(ctrls) != n:
        raise ParameterError("one controller per bus required")
    nq = gain_vector(ctrls, "n")
    kappa = gain_vector(ctrls, "kappa")
    beta = gain_vector(ctrls, "beta")
    e_star = gain_vector(ctrls, "e_star")
    q_star = gain_vector(ctrls, "q_star")
    if np.any(nq <= 0) or np.any(kappa <= 0) or np.any(q_star <= 0):
        raise ParameterError("droop gains, kappa and ratings must be positive")
    y = admittance_matrix(net)
    w1 = np.eye(n) + np.diag(nq * e_star) @ y
    lc = graph_b.laplacian()
    w2 = np.diag(1.0 / kappa) @ (np.diag(beta) + lc @ np.diag(e_star / q_star) @ y)
    # diagonal scaling t = sqrt(n_i E*_i) must symmetrize w1; y is symmetric
    # so this is structural, checked to guard against assembly mistakes
    t = np.sqrt(nq * e_star)
    sym = (w1 - np.eye(n)) / t[:, None] * t[None, :]
    if np.linalg.norm(sym - sym.T) > 1e-9 * max(np.linalg.norm(sym), 1e-300):
        raise NumericError("scaled voltage block failed its symmetry check")
    w = np.zeros((2 * n, 2 * n))
    w[:n, :n] = -w1
    w[:n, n:] = np.eye(n)
    w[n:, :n] = -w2
    u = np.concatenate([e_star, beta * e_star / kappa])
    return LinearVoltageSystem(W=w, W1=w1, W2=w2, u=u)


def _checked_sym_eigmin(mat: np.ndarray) -> float:
    w, v = symmetric_eigh(mat)
    scale = max(np.linalg.norm(mat, 2), 1e-300)
    resid = np.max(np.abs(mat @ v - v * w))
    if resid > 1e-10 * scale:
        raise NumericError(f"symmetric eigensolver residual {resid:.3e} too large")
    return float(w[0])


def check_stability_conditions(sys: LinearVoltageSystem) -> StabilityReport:
    lam1 = _checked_sym_eigmin(sys.W1 + sys.W1.T)
    lam2 = _checked_sym_eigmin(sys.W2 + sys.W2.T)
    cond1 = lam1 > 0.0
    cond2 = lam2 > 0.0
    eigs = sort_spectrum(general_eigenvalues(sys.W))
    if cond1 and cond2 and eigs.size and float(np.max(eigs.real)) >= 0.0:
        raise NumericError(
            "both symmetric-part conditions hold yet the spectrum is not "
            f"strictly stable (max Re = {float(np.max(eigs.real)):.3e})")
    return StabilityReport(lambda_min_w1=lam1, lambda_min_w2=lam2,
                           w1_condition=cond1, w2_condition=cond2,
                           eigenvalues=eigs)


def pencil_eigenvalues(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Roots of det(s^2 I + s W1 + W2) via the block companion form.

    Uses the stock LAPACK-backed solver on purpose: an independent route
    for cross-checking the in-repo QR on W.
    """
    n = w1.shape[0]
    comp = np.zeros((2 * n, 2 * n))
    comp[:n, n:] = np.eye(n)
    comp[n:, :n] = -w2
    comp[n:, n:] = -w1
    return sort_spectrum(np.linalg.eigvals(comp))


def multiset_distance(a, b) -> float:
    """Greedy pairing of two spectra; returns the worst pair distance."""
    a = list(np.asarray(a, dtype=complex))
    b = list(np.asarray(b, dtype=complex))
    if len(a) != len(b):
        return math.inf
    worst = 0.0
    for z in a:
        j = min(range(len(b)), key=lambda j: abs(b[j] - z))
        worst = max(worst, abs(b.pop(j) - z))
    return worst


def _active_indices(n: int, active: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(active)
    return np.concatenate([idx + block * n for block in range(4)])


def _centered_residual(ctx, y0: np.ndarray):
    """(max-abs, stacked vector) of the drift-centered derivative on active entries."""
    n = ctx.n
    act = ctx.active
    dy = ctx.rhs(0.0, y0)
    dth = dy[0:n][act]
    r = np.concatenate([dth - dth.mean(), dy[n:2 * n][act],
                        dy[2 * n:3 * n][act], dy[3 * n:4 * n][act]])
    return float(np.max(np.abs(r))), r


def _fd_jacobian(ctx, y0: np.ndarray, h: float, keep: np.ndarray) -> np.ndarray:
    dim = keep.size
    jac = np.empty((dim, dim))
    for col, var in enumerate(keep):
        yp = y0.copy()
        ym = y0.copy()
        yp[var] += h
        ym[var] -= h
        jac[:, col] = ((ctx.rhs(0.0, yp) - ctx.rhs(0.0, ym)) / (2.0 * h))[keep]
    return jac


def jacobian_full(net, ctrls, graph_a, graph_b, state: SystemState, *,
                  h: float = 1e-6, tau_e: float = 1.0,
                  secondary_enabled: bool = True, grounded: bool = True) -> np.ndarray:
    """Central-difference Jacobian of the closed loop at an operating point.

    Rows/columns for inactive units are dropped. Grounding removes the
    first active angle, eliminating the rotational zero mode from the
    spectrum.
    """
    ctx = _Context(net, ctrls, graph_a, graph_b, state.active, secondary_enabled,
                   tau_e=tau_e)
    resid, _ = _centered_residual(ctx, state.pack())
    if resid > 1e-9:
        raise ParameterError(
            f"operating point not converged (residual {resid:.3e} > 1e-9)")
    keep = _active_indices(ctx.n, ctx.active)
    jac = _fd_jacobian(ctx, state.pack(), h, keep)
    if grounded:
        jac = np.delete(np.delete(jac, 0, axis=0), 0, axis=1)
    return jac


def refine_equilibrium(net, ctrls, graph_a, graph_b, state: SystemState, *,
                       h: float = 1e-6, tau_e: float = 1.0,
                       secondary_enabled: bool = True, max_iter: int = 6,
                       target: float = 1e-12) -> SystemState:
    """Newton-polish a near-equilibrium state on the grounded dynamics.

    Time integration leaves a roundoff-scale residual floor that grows with
    the stiffest channel rate; a few Newton corrections push the residual
    to the finite-difference floor so linearization starts from a point
    that is an equilibrium to near machine precision. Returns the iterate
    with the smallest residual seen (never worse than the input).
    """
    ctx = _Context(net, ctrls, graph_a, graph_b, state.active, secondary_enabled,
                   tau_e=tau_e)
    keep = _active_indices(ctx.n, ctx.active)
    y = state.pack()
    best_resid, r = _centered_residual(ctx, y)
    best_y = y.copy()
    for _ in range(max_iter):
        if best_resid < target:
            break
        jac = _fd_jacobian(ctx, y, h, keep)
        jac_g = np.delete(np.delete(jac, 0, axis=0), 0, axis=1)
        try:
            delta = np.linalg.solve(jac_g, -r[1:])
        except np.linalg.LinAlgError:
            break
        y = y.copy()
        y[keep[1:]] += delta
        resid, r = _centered_residual(ctx, y)
        if resid < best_resid:
            best_resid, best_y = resid, y.copy()
        else:
            break
    return SystemState.unpack(best_y, t=state.t, active=state.active.copy())


def _nominal_value(scenario, gain: str) -> float:
    if gain == "b":
        w = scenario.graph_b.weights
        nz = w[w > 0]
        if nz.size == 0:
            raise ParameterError("cannot sweep b: no comm links in layer B")
        return float(nz.mean())
    vals = gain_vector(scenario.controllers, gain)
    nz = vals[vals > 0]
    return float(nz.mean()) if nz.size else 0.0


def apply_gain(scenario, gain: str, value: float):
    """Scenario with the named gain rescaled to `value` at the nominal point.

    Heterogeneous per-unit patterns are preserved: every entry scales by
    value/nominal. A uniformly zero pattern is replaced by the flat value.
    """
    if gain not in ("k", "kappa", "beta", "b"):
        raise ParameterError(f"unknown gain {gain!r}")
    if value < 0 or (value == 0 and gain in ("k", "kappa")):
        raise ParameterError(f"invalid value {value} for gain {gain!r}")
    if gain == "b":
        w = scenario.graph_b.weights
        nz = w[w > 0]
        if nz.size == 0:
            raise ParameterError("cannot sweep b: no comm links in layer B")
        factor = value / float(nz.mean())
        graph_b = CommGraph(w * factor, directed=scenario.graph_b.directed)
        return replace(scenario, graph_b=graph_b)
    vals = gain_vector(scenario.controllers, gain)
    nz = vals[vals > 0]
    if nz.size:
        scaled = vals * (value / float(nz.mean()))
    else:
        scaled = np.full(vals.size, float(value))
    ctrls = tuple(replace(c, **{gain: float(v)})
                  for c, v in zip(scenario.controllers, scaled))
    return replace(scenario, controllers=ctrls)


def default_grid(scenario, gain: str, points: int = 13) -> np.ndarray:
    nominal = _nominal_value(scenario, gain)
    if nominal <= 0:
        raise ParameterError(
            f"gain {gain!r} has no nonzero nominal value; pass an explicit grid")
    # kappa gets extra headroom: its interesting regime sits well above nominal
    hi = 8.0 if gain == "kappa" else 4.0
    return np.geomspace(0.25 * nominal, hi * nominal, points)


def eigen_trace(scenario, gain: str, grid=None) -> EigenTrace:
    """Eigenvalues of the grounded Jacobian along a gain sweep.

    Operating points are found by time integration. The frequency-channel
    gains k and kappa do not move the equilibrium, so their sweeps reuse a
    single operating point; b and beta sweeps warm-start each point from
    the previous one. On a non-converging grid point the trace is
    truncated and a warning records the break.
    """
    if grid is None:
        spec = scenario.analysis
        if spec is not None and spec.gain == gain:
            grid = np.geomspace(spec.lo, spec.hi, spec.points)
        else:
            grid = default_grid(scenario, gain)
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ParameterError("sweep grid must be strictly increasing")
    sim = scenario.sim
    op_kw = dict(tol=1e-10, rtol=5e-14, atol=5e-14)
    warnings: list[str] = []
    rows = []
    kept = []
    shared_op = None
    warm = None
    for value in grid:
        scn_v = apply_gain(scenario, gain, float(value))
        try:
            if gain in ("k", "kappa"):
                # frequency-channel gains leave the equilibrium untouched;
                # find it once at the nominal gains where noise is lowest
                if shared_op is None:
                    shared_op = steady_state(scenario, **op_kw)
                op = shared_op
            else:
                start = None
                if warm is not None:
                    start = warm.copy()
                    start.t = 0.0
                op = steady_state(scn_v, initial=start, **op_kw)
                warm = op
        except ConvergenceTimeout as exc:
            warnings.append(
                f"trace truncated at {gain}={value:.6g}: {exc}")
            break
        op = refine_equilibrium(scn_v.network, scn_v.controllers, scn_v.graph_a,
                                scn_v.graph_b, op, tau_e=sim.tau_e)
        jac = jacobian_full(scn_v.network, scn_v.controllers, scn_v.graph_a,
                            scn_v.graph_b, op, tau_e=sim.tau_e)
        rows.append(sort_spectrum(general_eigenvalues(jac)))
        kept.append(value)
    return EigenTrace(gain=gain, grid=np.asarray(kept),
                      eigenvalues=np.asarray(rows) if rows else
                      np.zeros((0, 0), complex),
                      warnings=warnings)


def trace_to_csv(trace: EigenTrace, path) -> None:
    m = trace.eigenvalues.shape[1] if trace.eigenvalues.size else 0
    header = ["gain_value"]
    for i in range(m):
        header += [f"re_{i + 1}", f"im_{i + 1}"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for value, row in zip(trace.grid, trace.eigenvalues):
            cells = [format(value, ".17g")]
            for z in row:
                cells += [format(z.real, ".17g"), format(z.imag, ".17g")]
            fh.write(",".join(cells) + "\n")


def dominant_real_mode(eigs) -> complex:
    """The rightmost essentially-real eigenvalue."""
    eigs = np.asarray(eigs, dtype=complex)
    real = eigs[np.abs(eigs.imag) < _REAL_TOL]
    if real.size == 0:
        raise ParameterError("spectrum has no real eigenvalue")
    return complex(real[np.argmax(real.real)])


def min_damping_pair(eigs) -> complex:
    """The complex mode with the smallest damping ratio (upper half-plane)."""
    eigs = np.asarray(eigs, dtype=complex)
    cplx = eigs[eigs.imag > _REAL_TOL]
    if cplx.size == 0:
        raise ParameterError("spectrum has no complex pair")
    zeta = -cplx.real / np.abs(cplx)
    return complex(cplx[np.argmin(zeta)])


def dominant_complex_pair(eigs) -> complex:
    """The rightmost complex mode (upper half-plane)."""
    eigs = np.asarray(eigs, dtype=complex)
    cplx = eigs[eigs.imag > _REAL_TOL]
    if cplx.size == 0:
        raise ParameterError("spectrum has no complex pair")
    return complex(cplx[np.argmax(cplx.real)])


def damping_ratio(z: complex) -> float:
    return float(-z.real / abs(z))


def follow_eigenvalue(trace: EigenTrace, start: complex) -> np.ndarray:
    """Continuation tracking: nearest-neighbor match row by row."""
    out = []
    current = complex(start)
    for row in trace.eigenvalues:
        current = complex(row[np.argmin(np.abs(row - current))])
        out.append(current)
    return np.asarray(out, dtype=complex)
