"""Symplectic one-step methods built around fixed-point solves.

The workhorse is the implicit midpoint rule

    y' = y + h f((y + y') / 2)

solved by a second-order explicit predictor followed by fixed-point
iteration.  The midpoint rule is symmetric, second order, and symplectic for
arbitrary smooth Hamiltonians, separable or not, which is why it sits in the
training loop.  A two-stage Gauss collocation pair (order 4) serves as the
reference generator for datasets, and a staggered explicit Euler variant is
kept for comparisons on separable systems.

Partitioned Runge-Kutta tableaux are first-class: any registered pair can be
stepped through the generic stage solver, and `check_symplectic_tableau`
verifies the algebraic symplecticity conditions on the coefficients.

Vector fields are plain callables f(y) -> ydot over flat states [..., 2d];
everything here works on a single state [2d] or a batch [B, 2d].  For batched
fixed-point solves, convergence is judged on the max residual across the
whole batch, so all trajectories in a batch see the same iteration count.
"""

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(RuntimeError):
    """A solver iterate or state stopped being finite."""


# ----------------------------------------------------------------------
# tableaux


@dataclass(frozen=True)
class PrkTableau:
    """Coefficient pair for a partitioned Runge-Kutta method.

    The *_q set advances positions, the *_p set momenta; stage values of both
    partitions are evaluated at the same stage points.
    """

    name: str
    a_q: np.ndarray
    b_q: np.ndarray
    a_p: np.ndarray
    b_p: np.ndarray

    @property
    def stages(self):
        return len(self.b_q)

    @property
    def c_q(self):
        return self.a_q.sum(axis=1)

    @property
    def c_p(self):
        return self.a_p.sum(axis=1)


def _tab(name, a_q, b_q, a_p=None, b_p=None):
    a_q = np.asarray(a_q, dtype=np.float64)
    b_q = np.asarray(b_q, dtype=np.float64)
    a_p = a_q if a_p is None else np.asarray(a_p, dtype=np.float64)
    b_p = b_q if b_p is None else np.asarray(b_p, dtype=np.float64)
    return PrkTableau(name=name, a_q=a_q, b_q=b_q, a_p=a_p, b_p=b_p)


_SQRT3 = np.sqrt(3.0)

TABLEAUX = {
    "implicit_midpoint": _tab("implicit_midpoint", [[0.5]], [1.0]),
    # positions explicit, momenta implicit: the one-stage symplectic Euler pair
    "symplectic_euler": _tab("symplectic_euler", [[0.0]], [1.0], [[1.0]], [1.0]),
    # two-stage Gauss collocation, order 4
    "gauss2": _tab(
        "gauss2",
        [[0.25, 0.25 - _SQRT3 / 6.0], [0.25 + _SQRT3 / 6.0, 0.25]],
        [0.5, 0.5],
    ),
    # deliberately non-symplectic, kept so rejection paths stay exercised
    "explicit_euler": _tab("explicit_euler", [[0.0]], [1.0]),
}


@dataclass(frozen=True)
class TableauReport:
    symplectic: bool
    max_violation: float
    weight_mismatch: float      # max |b_q,i - b_p,i|
    coupling_violation: float   # max |b_q,i a_p,ij + b_p,j a_q,ji - b_q,i b_p,j|
    node_mismatch: float        # max |c_q,i - c_p,i|, informational


def check_symplectic_tableau(tableau, tol=1e-12):
    """Check the algebraic symplecticity conditions of a coefficient pair.

    The verdict rests on equal weights and the stage-coupling identity; those
    two make a partitioned pair symplectic for any autonomous Hamiltonian.
    The node mismatch max|c_q - c_p| is reported alongside because staggered
    pairs (symplectic Euler) legitimately have unequal nodes, so it never
    enters the verdict or the reported violation.
    """
    b_q, b_p = tableau.b_q, tableau.b_p
    weight = float(np.max(np.abs(b_q - b_p)))
    # coupling[i, j] = b_q[i] a_p[i, j] + b_p[j] a_q[j, i] - b_q[i] b_p[j]
    coupling = float(np.max(np.abs(
        b_q[:, None] * tableau.a_p + (b_p[:, None] * tableau.a_q).T
        - b_q[:, None] * b_p[None, :]
    )))
    node = float(np.max(np.abs(tableau.c_q - tableau.c_p)))
    worst = max(weight, coupling)
    return TableauReport(
        symplectic=bool(worst <= tol),
        max_violation=worst,
        weight_mismatch=weight,
        coupling_violation=coupling,
        node_mismatch=node,
    )


# ----------------------------------------------------------------------
# fixed-point configuration and reporting


@dataclass(frozen=True)
class FpiConfig:
    """Controls for the fixed-point corrector.

    tol is on the max-norm change between successive iterates; guess_source
    picks the initial iterate: the explicit second-order predictor, the
    observation aligned with the step end (when supplied), or simply the
    current state.
    """

    tol: float = 1e-10
    max_iters: int = 50
    guess_source: str = "predictor"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.guess_source not in ("predictor", "observation", "previous_state"):
            raise ValueError(f"unknown guess_source {self.guess_source!r}")


@dataclass(frozen=True)
class StepReport:
    iterations: int
    residual: float
    converged: bool
    residuals: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray    # [n+1]
    states: np.ndarray   # [n+1, ..., 2d]

    def __len__(self):
        return len(self.times)


def _check_finite(y, context):
    if not np.all(np.isfinite(y)):
        raise NonFiniteError(f"non-finite state during {context}")


def rk2_predictor(f, y, h):
    """Explicit midpoint step: y + h f(y + (h/2) f(y)); the corrector seed."""
    return y + h * f(y + 0.5 * h * f(y))


def implicit_midpoint_step(f, y, h, cfg=FpiConfig(), observation=None):
    """One implicit midpoint step solved by fixed-point iteration.

    Returns (y_next, StepReport).  Non-convergence within max_iters is not
    fatal: the best iterate is returned with converged=False so the caller can
    count failures and decide.  Non-finite iterates raise NonFiniteError.
    """
    y = np.asarray(y, dtype=np.float64)
    if cfg.guess_source == "predictor":
        cur = rk2_predictor(f, y, h)
    elif cfg.guess_source == "observation":
        if observation is None:
            raise ValueError("guess_source='observation' but no observation was supplied")
        cur = np.broadcast_to(np.asarray(observation, dtype=np.float64), y.shape).copy()
    else:
        cur = y.copy()
    _check_finite(cur, "implicit midpoint seeding")

    residuals = []
    converged = False
    for _ in range(cfg.max_iters):
        new = y + h * f(0.5 * (y + cur))
        _check_finite(new, "implicit midpoint iteration")
        resid = float(np.max(np.abs(new - cur)))
        residuals.append(resid)
        cur = new
        if resid <= cfg.tol:
            converged = True
            break
    return cur, StepReport(
        iterations=len(residuals),
        residual=residuals[-1],
        converged=converged,
        residuals=tuple(residuals),
    )


def symplectic_euler_step(f, y, h, dim):
    """Staggered explicit Euler: advance q with f at y, then p with f at (q', p).

    Symplectic for separable Hamiltonians only; for fields with genuine q-p
    coupling it degrades to a plain first-order method.
    """
    y = np.asarray(y, dtype=np.float64)
    q_new = y[..., :dim] + h * f(y)[..., :dim]
    shifted = np.concatenate([q_new, y[..., dim:]], axis=-1)
    p_new = y[..., dim:] + h * f(shifted)[..., dim:]
    return np.concatenate([q_new, p_new], axis=-1)


def rk2_step(f, y, h):
    """Plain explicit midpoint step, the non-symplectic baseline."""
    return rk2_predictor(f, np.asarray(y, dtype=np.float64), h)


def prk_step(f, y, h, tableau, dim, cfg=FpiConfig()):
    """One step of an arbitrary partitioned Runge-Kutta pair.

    Stage slopes for both partitions are solved jointly by fixed-point
    iteration, seeded with the field at the current state.  Explicit pairs
    converge in one sweep; implicit ones contract at rate O(h).
    """
    y = np.asarray(y, dtype=np.float64)
    s = tableau.stages
    q0, p0 = y[..., :dim], y[..., dim:]
    f0 = f(y)
    # slopes[i] holds (k_i, l_i) stacked as a full-width field sample
    slopes = np.stack([f0] * s, axis=0)

    residuals = []
    converged = False
    for _ in range(cfg.max_iters):
        new_slopes = np.empty_like(slopes)
        for i in range(s):
            q_i = q0 + h * sum(tableau.a_q[i, j] * slopes[j][..., :dim] for j in range(s))
            p_i = p0 + h * sum(tableau.a_p[i, j] * slopes[j][..., dim:] for j in range(s))
            new_slopes[i] = f(np.concatenate([q_i, p_i], axis=-1))
        _check_finite(new_slopes, f"{tableau.name} stage iteration")
        resid = float(np.max(np.abs(new_slopes - slopes)))
        residuals.append(resid)
        slopes = new_slopes
        if resid <= cfg.tol:
            converged = True
            break

    q1 = q0 + h * sum(tableau.b_q[i] * slopes[i][..., :dim] for i in range(s))
    p1 = p0 + h * sum(tableau.b_p[i] * slopes[i][..., dim:] for i in range(s))
    return np.concatenate([q1, p1], axis=-1), StepReport(
        iterations=len(residuals),
        residual=residuals[-1],
        converged=converged,
        residuals=tuple(residuals),
    )


# ----------------------------------------------------------------------
# trajectory drivers


def integrate(f, y0, h, n_steps, method="implicit_midpoint", cfg=FpiConfig(),
              dim=None, observations=None):
    """Roll a state forward n_steps of size h; returns (Trajectory, reports).

    method is one of 'implicit_midpoint', 'symplectic_euler', 'rk2', a name
    from the tableau registry, or a PrkTableau instance.  h may be negative
    (the symmetric methods are time-reversible).  observations, when given,
    must align with the step grid: observations[i] seeds the solve for step i
    under guess_source='observation'.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if h == 0:
        raise ValueError("h must be nonzero")
    y0 = np.asarray(y0, dtype=np.float64)
    _check_finite(y0, "integration start")
    if dim is None:
        dim = y0.shape[-1] // 2
    if y0.shape[-1] != 2 * dim:
        raise ValueError(f"state width {y0.shape[-1]} does not match dim {dim}")
    if observations is not None and len(observations) < n_steps + 1:
        raise ValueError("observations must cover every step endpoint")

    states = np.empty((n_steps + 1,) + y0.shape)
    states[0] = y0
    reports = []
    tableau = None
    if isinstance(method, PrkTableau):
        tableau = method
    elif method in ("implicit_midpoint", "symplectic_euler", "rk2"):
        pass
    elif method in TABLEAUX:
        tableau = TABLEAUX[method]
    else:
        raise ValueError(f"unknown method {method!r}")

    y = y0
    for i in range(n_steps):
        try:
            if tableau is not None:
                y, rep = prk_step(f, y, h, tableau, dim, cfg)
                reports.append(rep)
            elif method == "implicit_midpoint":
                obs = observations[i + 1] if observations is not None else None
                y, rep = implicit_midpoint_step(f, y, h, cfg, observation=obs)
                reports.append(rep)
            elif method == "symplectic_euler":
                y = symplectic_euler_step(f, y, h, dim)
            else:
                y = rk2_step(f, y, h)
            _check_finite(y, f"step {i}")
        except NonFiniteError as err:
            raise NonFiniteError(f"{err} (step {i} of {n_steps}, h={h})") from None
        states[i + 1] = y

    times = np.arange(n_steps + 1) * h
    return Trajectory(times=times, states=states), reports


REFERENCE_FPI = FpiConfig(tol=1e-13, max_iters=100)


def reference_integrate(f, y0, h, n_steps, cfg=REFERENCE_FPI):
    """High-order reference rollout: the Gauss pair at a tight stage tolerance."""
    return integrate(f, y0, h, n_steps, method="gauss2", cfg=cfg)
