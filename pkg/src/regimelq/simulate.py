"""Joint simulation of (W, chain, X, u) and Monte Carlo cost estimation.

Two layers live here.  ``simulate_closed_loop`` builds one fully recorded
path (used by algebraic checks and path dumps).  ``mc_run`` is the batch
engine: paths are processed in fixed-size chunks, each chunk owning a
random stream derived from (seed, chunk index), so estimates are
bit-identical regardless of worker count, and per-path costs are
aggregated in path order.

Conventions: controls and regimes are evaluated at left endpoints
(explicit scheme, predictable integrands); the chain is simulated exactly
and projected onto the grid; the running cost is a left Riemann sum.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .chain import ChainPath, sample_chain_path, sample_chain_paths
from .errors import NonFiniteState, ValidationError
from .model import CoefficientSet, ProblemSpec
from .riccati import FeedbackLaw, _stacks
from .streams import derive_rng

CHUNK_SIZE = 4096


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo mean with standard error; the unit of statistical checks."""

    mean: float
    stderr: float
    n: int
    seed: int


@dataclass(frozen=True)
class ControlTable:
    """Deterministic piecewise-constant open-loop control on the sim grid."""

    values: NDArray[np.float64]  # (N, m), row i in force on [t_i, t_{i+1})

    @property
    def num_steps(self) -> int:
        return self.values.shape[0]

    def l2_norm_sq(self, T: float) -> float:
        """Exact int_0^T |u|^2 dt of the piecewise-constant table."""
        h = T / self.num_steps
        return float(np.sum(self.values**2) * h)


@dataclass(frozen=True)
class PerturbedFeedback:
    """Closed-loop law plus an additive open-loop perturbation table."""

    law: FeedbackLaw
    table: ControlTable


Control = FeedbackLaw | ControlTable | PerturbedFeedback


@dataclass
class PathRecord:
    """One recorded joint sample path with its cost decomposition."""

    times: NDArray[np.float64]  # (N+1,)
    dW: NDArray[np.float64]  # (N,)
    chain: ChainPath
    regimes: NDArray[np.int64]  # (N+1,) regime at each node
    X: NDArray[np.float64]  # (N+1, n)
    U: NDArray[np.float64]  # (N, m), left endpoints
    running_cost: float
    terminal_cost: float

    @property
    def cost(self) -> float:
        return self.running_cost + self.terminal_cost


def euler_maruyama_step(
    x: NDArray, u: NDArray, coeffs: CoefficientSet, dW: float, h: float
) -> NDArray:
    """One explicit step x' = x + (Ax + Bu) h + (Cx + Du) dW."""
    if not h > 0.0:
        raise ValidationError("step size must be positive")
    x_new = x + (coeffs.A @ x + coeffs.B @ u) * h + (coeffs.C @ x + coeffs.D @ u) * dW
    if not np.all(np.isfinite(x_new)):
        raise NonFiniteState("state became non-finite during Euler step")
    return x_new


def evaluate_cost(path: PathRecord, problem: ProblemSpec) -> float:
    """Quadratic cost of a recorded path: left Riemann sum plus terminal term."""
    return _running_cost(path, problem) + _terminal_cost(path, problem)


def _running_cost(path: PathRecord, problem: ProblemSpec) -> float:
    h = path.times[1] - path.times[0]
    total = 0.0
    for i in range(len(path.U)):
        cs = problem.coefficients[problem.segment_index(path.times[i])][path.regimes[i]]
        x, u = path.X[i], path.U[i]
        total += (x @ cs.Q @ x + 2.0 * (u @ cs.S @ x) + u @ cs.R @ u) * h
    return float(total)


def _terminal_cost(path: PathRecord, problem: ProblemSpec) -> float:
    G = problem.terminal_weights()[path.regimes[-1]]
    xT = path.X[-1]
    return float(xT @ G @ xT)


def simulate_closed_loop(
    problem: ProblemSpec, law: FeedbackLaw, N: int, seed: int
) -> PathRecord:
    """Simulate one closed-loop path u_i = Theta(t_i, k_i) X_i on an N-step grid.

    The law should be solved on a grid at least as fine as N; off-node gains
    come from the law's P interpolation either way.
    """
    rng = derive_rng(seed, "path")
    T = problem.T
    h = T / N
    times = np.linspace(0.0, T, N + 1)
    chain = sample_chain_path(problem.generator, problem.i0, 0.0, T, rng)
    regimes = chain.regimes_on_grid(times)
    dW = rng.standard_normal(N) * np.sqrt(h)

    X = np.empty((N + 1, problem.n))
    U = np.empty((N, problem.m))
    X[0] = problem.x0
    for i in range(N):
        k = int(regimes[i])
        cs = problem.coefficients[problem.segment_index(times[i])][k]
        U[i] = law.gain(times[i], k) @ X[i]
        X[i + 1] = euler_maruyama_step(X[i], U[i], cs, dW[i], h)

    record = PathRecord(
        times=times,
        dW=dW,
        chain=chain,
        regimes=regimes,
        X=X,
        U=U,
        running_cost=0.0,
        terminal_cost=0.0,
    )
    record.running_cost = _running_cost(record, problem)
    record.terminal_cost = _terminal_cost(record, problem)
    return record


# --- batch engine ---------------------------------------------------------

def _resolve_control(control: Control, problem: ProblemSpec, times) -> tuple:
    """Split a control into (gains (N, D, m, n) | None, table (N, m) | None)."""
    N = len(times) - 1
    gains = table = None
    if isinstance(control, PerturbedFeedback):
        gains = control.law.gains_at_times(times[:-1])
        table = control.table.values
    elif isinstance(control, FeedbackLaw):
        gains = control.gains_at_times(times[:-1])
    elif isinstance(control, ControlTable):
        table = control.values
    else:
        raise ValidationError(f"unsupported control source {type(control)!r}")
    if table is not None and table.shape != (N, problem.m):
        raise ValidationError(
            f"control table shape {table.shape} does not match grid ({N}, {problem.m})"
        )
    return gains, table


def _draw_chunk_noise(problem: ProblemSpec, times, rng, n_chunk: int):
    """Exact chain paths projected on the grid, plus Brownian increments."""
    N = len(times) - 1
    h = times[1] - times[0]
    if problem.generator.is_zero:
        regimes = np.full((n_chunk, N + 1), problem.i0, dtype=np.int64)
    else:
        paths = sample_chain_paths(
            problem.generator, problem.i0, 0.0, problem.T, rng, n_chunk
        )
        regimes = np.empty((n_chunk, N + 1), dtype=np.int64)
        for j, p in enumerate(paths):
            if len(p.jump_times) == 0:
                regimes[j] = p.initial_regime
            else:
                regimes[j] = p.regimes_on_grid(times)
    dW = rng.standard_normal((n_chunk, N)) * np.sqrt(h)
    return regimes, dW


def _evolve_costs_scalar(problem, stacks, seg_idx, gains, table, times, regimes, dW):
    """Fast path for n = m = 1: coefficients become regime-indexed vectors."""
    N = len(times) - 1
    h = times[1] - times[0]
    n_chunk = regimes.shape[0]
    flat = lambda M: M[:, 0, 0]
    coef = [
        tuple(flat(getattr(st, name)) for name in ("A", "B", "C", "D", "Q", "S", "R"))
        for st in stacks
    ]
    gains_flat = gains[:, :, 0, 0] if gains is not None else None
    X = np.full(n_chunk, problem.x0[0])
    costs = np.zeros(n_chunk)
    for i in range(N):
        a, b, c, d, q, s, r = coef[seg_idx[i]]
        reg = regimes[:, i]
        if gains_flat is not None:
            u = gains_flat[i][reg] * X
            if table is not None:
                u = u + table[i, 0]
        else:
            u = np.full(n_chunk, table[i, 0])
        costs += h * (q[reg] * X * X + 2.0 * s[reg] * u * X + r[reg] * u * u)
        X = X + (a[reg] * X + b[reg] * u) * h + (c[reg] * X + d[reg] * u) * dW[:, i]
    if not np.all(np.isfinite(X)):
        raise NonFiniteState("state became non-finite during batch simulation")
    g = problem.terminal_weights()[:, 0, 0]
    costs += g[regimes[:, N]] * X * X
    return costs, X[:, None]


def _evolve_costs(
    problem: ProblemSpec,
    stacks,
    seg_idx,
    gains,
    table,
    times,
    regimes,
    dW,
):
    """Vectorized closed-form stepping of one chunk; returns (costs, X_T)."""
    if problem.n == 1 and problem.m == 1:
        return _evolve_costs_scalar(
            problem, stacks, seg_idx, gains, table, times, regimes, dW
        )
    N = len(times) - 1
    h = times[1] - times[0]
    n_chunk = regimes.shape[0]
    X = np.broadcast_to(problem.x0, (n_chunk, problem.n)).copy()
    costs = np.zeros(n_chunk)
    for i in range(N):
        st = stacks[seg_idx[i]]
        reg = regimes[:, i]
        X_next = np.empty_like(X)
        for k in np.unique(reg):
            idx = reg == k
            Xk = X[idx]
            if gains is not None:
                uk = Xk @ gains[i, k].T
                if table is not None:
                    uk = uk + table[i]
            else:
                uk = np.broadcast_to(table[i], (Xk.shape[0], problem.m))
            drift = Xk @ st.A[k].T + uk @ st.B[k].T
            diff = Xk @ st.C[k].T + uk @ st.D[k].T
            X_next[idx] = Xk + drift * h + diff * dW[idx, i][:, None]
            costs[idx] += h * (
                np.einsum("pi,ij,pj->p", Xk, st.Q[k], Xk)
                + 2.0 * np.einsum("pi,ij,pj->p", uk, st.S[k], Xk)
                + np.einsum("pi,ij,pj->p", uk, st.R[k], uk)
            )
        X = X_next
    if not np.all(np.isfinite(X)):
        raise NonFiniteState("state became non-finite during batch simulation")
    G = problem.terminal_weights()
    reg_T = regimes[:, N]
    for k in np.unique(reg_T):
        idx = reg_T == k
        costs[idx] += np.einsum("pi,ij,pj->p", X[idx], G[k], X[idx])
    return costs, X


def mc_run(
    problem: ProblemSpec,
    control: Control,
    n_paths: int,
    seed: int,
    N: int,
    workers: int = 1,
    control_b: Control | None = None,
):
    """Run the chunked Monte Carlo engine.

    Returns ``(costs, X_T)`` arrays ordered by path index, or, when
    ``control_b`` is given, ``(costs_a, costs_b, X_T_a)`` where both control
    variants share the same chain and Brownian draws (common random numbers).
    """
    if n_paths < 1:
        raise ValidationError("need at least one path")
    T = problem.T
    times = np.linspace(0.0, T, N + 1)
    stacks = _stacks(problem)
    seg_idx = np.array([problem.segment_index(t) for t in times[:-1]])
    gains_a, table_a = _resolve_control(control, problem, times)
    paired = control_b is not None
    if paired:
        gains_b, table_b = _resolve_control(control_b, problem, times)

    costs = np.empty(n_paths)
    costs_b = np.empty(n_paths) if paired else None
    X_T = np.empty((n_paths, problem.n))
    chunks = [
        (c, lo, min(lo + CHUNK_SIZE, n_paths))
        for c, lo in enumerate(range(0, n_paths, CHUNK_SIZE))
    ]

    def run_chunk(spec):
        c, lo, hi = spec
        rng = derive_rng(seed, "chunk", c)
        regimes, dW = _draw_chunk_noise(problem, times, rng, hi - lo)
        costs[lo:hi], X_T[lo:hi] = _evolve_costs(
            problem, stacks, seg_idx, gains_a, table_a, times, regimes, dW
        )
        if paired:
            costs_b[lo:hi], _ = _evolve_costs(
                problem, stacks, seg_idx, gains_b, table_b, times, regimes, dW
            )

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_chunk, chunks))
    else:
        for spec in chunks:
            run_chunk(spec)
    if paired:
        return costs, costs_b, X_T
    return costs, X_T


def paired_refinement_run(
    problem: ProblemSpec,
    control_for,
    n_paths: int,
    seed: int,
    N: int,
    workers: int = 1,
):
    """Simulate each path on N and 2N steps with refined common noise.

    The 2N Brownian increments sum pairwise to the N increments and both
    grids share the exact chain path, so per-path differences isolate the
    discretization effect; used to calibrate bias allowances.
    ``control_for(N)`` must return the control source for an N-step grid.
    Returns (costs_N, costs_2N, X_T_N, X_T_2N).
    """
    T = problem.T
    times2 = np.linspace(0.0, T, 2 * N + 1)
    times1 = times2[::2]
    stacks = _stacks(problem)
    seg1 = np.array([problem.segment_index(t) for t in times1[:-1]])
    seg2 = np.array([problem.segment_index(t) for t in times2[:-1]])
    gains1, table1 = _resolve_control(control_for(N), problem, times1)
    gains2, table2 = _resolve_control(control_for(2 * N), problem, times2)

    costs1 = np.empty(n_paths)
    costs2 = np.empty(n_paths)
    xT1 = np.empty((n_paths, problem.n))
    xT2 = np.empty((n_paths, problem.n))
    chunks = [
        (c, lo, min(lo + CHUNK_SIZE, n_paths))
        for c, lo in enumerate(range(0, n_paths, CHUNK_SIZE))
    ]

    def run_chunk(spec):
        c, lo, hi = spec
        rng = derive_rng(seed, "refine", c)
        regimes2, dW2 = _draw_chunk_noise(problem, times2, rng, hi - lo)
        regimes1 = regimes2[:, ::2]
        dW1 = dW2[:, 0::2] + dW2[:, 1::2]
        costs1[lo:hi], xT1[lo:hi] = _evolve_costs(
            problem, stacks, seg1, gains1, table1, times1, regimes1, dW1
        )
        costs2[lo:hi], xT2[lo:hi] = _evolve_costs(
            problem, stacks, seg2, gains2, table2, times2, regimes2, dW2
        )

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_chunk, chunks))
    else:
        for spec in chunks:
            run_chunk(spec)
    return costs1, costs2, xT1, xT2


def _estimate(values: NDArray, seed: int) -> MCEstimate:
    n = len(values)
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / np.sqrt(n)) if n >= 2 else float("nan")
    return MCEstimate(mean=mean, stderr=stderr, n=n, seed=seed)


def mc_cost(
    problem: ProblemSpec,
    control: Control,
    n_paths: int,
    seed: int,
    N: int,
    workers: int = 1,
) -> MCEstimate:
    """Monte Carlo estimate of the cost under the given control source."""
    if n_paths < 100:
        raise ValidationError("mc_cost needs at least 100 paths")
    costs, _ = mc_run(problem, control, n_paths, seed, N, workers)
    return _estimate(costs, seed)


def mc_cost_diff(
    problem: ProblemSpec,
    control_a: Control,
    control_b: Control,
    n_paths: int,
    seed: int,
    N: int,
    workers: int = 1,
) -> MCEstimate:
    """Estimate of J(control_a) - J(control_b) with common random numbers."""
    costs_a, costs_b, _ = mc_run(
        problem, control_a, n_paths, seed, N, workers, control_b=control_b
    )
    return _estimate(costs_a - costs_b, seed)
