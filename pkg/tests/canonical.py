"""Canonical test problems used across the suite.

Three solvable instances with independent oracles plus one deliberately
non-convex instance:

* scalar_analytic: closed form P(t) = 1/(2 - t), Theta = -P.
* two_regime_coupling: pure jump coupling, P_1(0) = 1 + e^-2, P_2(0) = 1 - e^-2.
* det_lqr: no diffusion, no chain; oracle is a fine RK4 integration.
* nonconvex: terminal weight -10 with D = 1, so R + D'PD < 0 at T.
"""

import numpy as np

import regimelq as rl


def scalar_analytic() -> rl.ProblemSpec:
    return rl.make_problem(
        n=1, m=1, T=1.0, generator=[[0.0]],
        coefficients=[[{"A": 0, "B": 1, "C": 0, "D": 0, "Q": 0, "S": 0, "R": 1}]],
        G=[[[1.0]]], x0=[1.0], i0=0,
    )


def scalar_p_exact(t):
    return 1.0 / (2.0 - np.asarray(t))


def two_regime_coupling() -> rl.ProblemSpec:
    zero = {"A": 0, "B": 0, "C": 0, "D": 0, "Q": 0, "S": 0, "R": 1}
    return rl.make_problem(
        n=1, m=1, T=1.0, generator=[[-1.0, 1.0], [1.0, -1.0]],
        coefficients=[[dict(zero), dict(zero)]],
        G=[[[2.0]], [[0.0]]], x0=[1.0], i0=0,
    )


TWO_REGIME_P0 = (1.0 + np.exp(-2.0), 1.0 - np.exp(-2.0))


def det_lqr() -> rl.ProblemSpec:
    return rl.make_problem(
        n=1, m=1, T=1.0, generator=[[0.0]],
        coefficients=[[{"A": 0.3, "B": 1.0, "C": 0, "D": 0, "Q": 1.0, "S": 0.2, "R": 1.0}]],
        G=[[[0.5]]], x0=[1.0], i0=0,
    )


def nonconvex() -> rl.ProblemSpec:
    return rl.make_problem(
        n=1, m=1, T=1.0, generator=[[0.0]],
        coefficients=[[{"A": 0, "B": 1.0, "C": 0, "D": 1.0, "Q": 0, "S": 0, "R": 1.0}]],
        G=[[[-10.0]]], x0=[1.0], i0=0,
    )


def stochastic_scalar() -> rl.ProblemSpec:
    """Scalar problem with genuine diffusion noise (not part of acceptance)."""
    return rl.make_problem(
        n=1, m=1, T=1.0, generator=[[0.0]],
        coefficients=[[{"A": 0.1, "B": 0.5, "C": 0.2, "D": 0.3, "Q": 1.0, "S": 0.1, "R": 1.0}]],
        G=[[[1.0]]], x0=[1.0], i0=0,
    )


def canonical_problems():
    return {
        "scalar_analytic": scalar_analytic(),
        "two_regime_coupling": two_regime_coupling(),
        "det_lqr": det_lqr(),
    }


def one_regime_market() -> rl.MarketSpec:
    return rl.make_market(
        T=1.0, generator=[[0.0]], r=0.06, b=[0.12], sigma=[0.2],
        delta=0.01, x0=1.0, i0=0,
    )


def det_lqr_oracle(N: int = 4000) -> tuple[float, float]:
    """Independent fine-RK4 oracle for det_lqr: returns (P(0), optimal cost).

    Integrates the scalar Riccati ODE and the closed-loop state/cost ODEs
    with plain RK4, sharing nothing with the package solvers.
    """
    A, B, Q, S, R, G, T = 0.3, 1.0, 1.0, 0.2, 1.0, 0.5, 1.0
    h = T / N

    def riccati_rhs(p):
        shat = B * p + S
        return -(2 * A * p + Q - shat * shat / R)

    ts = np.linspace(0.0, T, N + 1)
    p = np.empty(N + 1)
    p[N] = G
    for i in range(N, 0, -1):
        k1 = riccati_rhs(p[i])
        k2 = riccati_rhs(p[i] - 0.5 * h * k1)
        k3 = riccati_rhs(p[i] - 0.5 * h * k2)
        k4 = riccati_rhs(p[i] - h * k3)
        p[i - 1] = p[i] - (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    def state_rhs(p_val, xc):
        x, c = xc
        u = -(B * p_val + S) / R * x
        return np.array([A * x + B * u, Q * x * x + 2 * S * x * u + R * u * u])

    xc = np.array([1.0, 0.0])
    for i in range(N):
        p_mid = 0.5 * (p[i] + p[i + 1])
        k1 = state_rhs(p[i], xc)
        k2 = state_rhs(p_mid, xc + 0.5 * h * k1)
        k3 = state_rhs(p_mid, xc + 0.5 * h * k2)
        k4 = state_rhs(p[i + 1], xc + h * k3)
        xc = xc + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    cost = xc[1] + G * xc[0] ** 2
    return float(p[0]), float(cost)
