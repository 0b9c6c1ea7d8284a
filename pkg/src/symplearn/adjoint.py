"""Gradients of trajectory losses: backward costate solve and recorded backprop.

Two engines compute d(loss)/d(theta) for a loss that compares an implicit
midpoint rollout of the model field against observations at every step.

The costate engine integrates

    dlam/dt = -(df/dy)^T lam

backward through the window with the same implicit midpoint rule used
forward, freezing the state at the stored step endpoints and forming
midpoints by averaging.  Observations contribute jumps: crossing an
observation time going backward adds that time's loss gradient to lam.  The
parameter gradient accumulates in place, one quadrature term per step, so the
engine's footprint does not grow with the window length.

The recorded-backprop engine replays the forward solve while keeping every
network tape alive, then walks the whole computation backward, including the
predictor and each fixed-point sweep.  Its footprint grows linearly with the
window length; it exists as the exactness baseline the costate engine is
checked against.

Why not fold theta into an augmented state and integrate one big ODE
backward: the augmented system is no longer canonically Hamiltonian, so the
symplectic solver would buy nothing there, and the quadrature view used here
is both cheaper and exact for the discrete map.

With the default midpoint quadrature the two engines agree to solver
tolerance.  The midpoint rule's one-step map has derivative
(I - (h/2)Df)^{-1}(I + (h/2)Df); its transpose is exactly one backward
midpoint step of the costate equation at the same frozen midpoint, and the
parameter term lands on the averaged costate at that midpoint.  An endpoint
trapezoid quadrature is kept as an option; it differs from the discrete
gradient at O(h^2) per unit time.
"""

from dataclasses import dataclass

import numpy as np

from .integrators import FpiConfig, NonFiniteError, StepReport, Trajectory
from .memory import METER
from .model import costate_to_direction


def adjoint_rhs(net, theta, y, lam):
    """Costate velocity -(df/dy)^T lam at the phase point y.

    The contraction is a Hessian product: (df/dy)^T lam = d2H/dy2 applied to
    (-lam_p, lam_q), so one tangent-over-reverse sweep per call suffices.
    """
    y2 = np.atleast_2d(np.asarray(y, dtype=np.float64))
    lam2 = np.atleast_2d(np.asarray(lam, dtype=np.float64))
    layers = net.unpack(theta)
    acts = net._forward(layers, y2)
    hw, _ = net.field_vjp(layers, acts, lam2, need_params=False)
    net._drop(acts)
    out = -hw
    return out[0] if np.asarray(y).ndim == 1 else out


def terminal_conditions(loss_partial):
    """Costate start value at the window end: the loss gradient itself.

    For the squared loss this is 2 (y_pred(T) - y_obs(T)); linear in the
    residual, so scaling the loss scales the costate.
    """
    return np.array(loss_partial, dtype=np.float64, copy=True)


@dataclass(frozen=True)
class AdjointDiagnostics:
    steps: int
    converged_fraction: float
    max_residual: float


def _solve_costate_step(hess, lam_end, h, cfg):
    """One backward midpoint step of the linear costate equation.

    Solves lam_start = lam_end + h * Hess . w(lam_mid) with
    lam_mid = (lam_start + lam_end)/2 and Hess frozen at the step midpoint,
    by fixed point iteration seeded with lam_end.  Linear in lam, contraction
    rate O(h * |Hess|).
    """
    dim = lam_end.shape[-1] // 2
    cur = lam_end.copy()
    converged = False
    resid = np.inf
    for _ in range(cfg.max_iters):
        mid = 0.5 * (cur + lam_end)
        new = lam_end + h * np.einsum("bij,bj->bi", hess, costate_to_direction(mid, dim))
        if not np.all(np.isfinite(new)):
            raise NonFiniteError("non-finite costate iterate in backward solve")
        resid = float(np.max(np.abs(new - cur)))
        cur = new
        if resid <= cfg.tol:
            converged = True
            break
    return cur, converged, resid


def solve_adjoint_accumulate(net, theta, states, partials, h, cfg=FpiConfig(),
                             quadrature="midpoint"):
    """Backward costate sweep with in-place gradient accumulation.

    states:   [n+1, B, 2d] forward trajectory at the step endpoints
              (the checkpoints; reused, never copied).
    partials: [n, B, 2d] loss gradients at steps 1..n; zeros where a step
              carries no observation.  partials[n-1] seeds the costate, the
              rest enter as jumps on the way back.
    h:        forward step size (positive).

    Returns (grad, diagnostics) with grad flat [n_params].  No batch scaling
    happens here: partials carry whatever scaling the loss used (a batch mean
    hands in partials divided by B), and grad inherits it.

    quadrature='midpoint' evaluates the gradient integrand at step midpoints
    with the averaged costate and matches recorded backprop to solver
    tolerance.  quadrature='trapezoid' pairs step-endpoint integrands with
    weight h/2 each, reusing the previous endpoint where no jump intervenes.
    """
    if isinstance(states, Trajectory):  # allow passing the Trajectory wrapper
        states = states.states
    states = np.asarray(states, dtype=np.float64)
    partials = np.asarray(partials, dtype=np.float64)
    if states.ndim != 3 or partials.ndim != 3:
        raise ValueError("states must be [n+1, B, 2d] and partials [n, B, 2d]")
    n_steps = states.shape[0] - 1
    if partials.shape != (n_steps,) + states.shape[1:]:
        raise ValueError(
            f"partials shape {partials.shape} does not match states {states.shape}"
        )
    if quadrature not in ("midpoint", "trapezoid"):
        raise ValueError(f"unknown quadrature {quadrature!r}")
    if n_steps < 1:
        raise ValueError("need at least one step")

    grad = np.zeros(net.n_params)
    lam = np.zeros_like(states[-1])
    METER.track(grad, lam)
    last_integrand = None
    n_converged = 0
    worst = 0.0

    try:
        for n in range(n_steps - 1, -1, -1):
            lam_end = lam + partials[n]      # observation jump at t_{n+1}
            mid = 0.5 * (states[n] + states[n + 1])
            hess = net.hess_state(theta, mid)
            METER.track(hess)
            try:
                lam, ok, resid = _solve_costate_step(hess, lam_end, h, cfg)
            finally:
                METER.release(hess)
            n_converged += ok
            worst = max(worst, resid)

            if quadrature == "midpoint":
                grad += h * net.vjp_params(theta, mid, 0.5 * (lam + lam_end))
            else:
                jumped = bool(np.any(partials[n]))
                if jumped or last_integrand is None:
                    right = net.vjp_params(theta, states[n + 1], lam_end)
                else:
                    right = last_integrand
                left = net.vjp_params(theta, states[n], lam)
                grad += 0.5 * h * (right + left)
                last_integrand = left
    finally:
        METER.release(grad, lam)
    return grad, AdjointDiagnostics(
        steps=n_steps,
        converged_fraction=n_converged / n_steps,
        max_residual=worst,
    )


# ----------------------------------------------------------------------
# recorded backprop


@dataclass
class _StepRecord:
    seed_kind: str
    seed_acts: list          # acts of the two predictor field evals, or []
    iter_acts: list          # acts of each fixed-point sweep, oldest first
    report: StepReport


@dataclass
class RecordedRollout:
    states: np.ndarray       # [n+1, B, 2d]
    times: np.ndarray
    h: float
    steps: list
    reports: list

    def release(self):
        """Drop every retained tape; backward_through_record calls this lazily."""
        for rec in self.steps:
            for acts in rec.seed_acts + rec.iter_acts:
                METER.release(*acts[1:])
            rec.seed_acts = []
            rec.iter_acts = []


def record_rollout(net, theta, y0, h, n_steps, cfg=FpiConfig(), observations=None):
    """Forward implicit-midpoint rollout that keeps every network tape alive.

    Mirrors the plain integrator step for step: same predictor, same
    fixed-point sweep, same stopping rule, so the produced states match
    integrate() exactly.  The retained tapes are what makes the later reverse
    sweep possible, and what makes this engine's memory grow with n_steps.
    """
    y0 = np.atleast_2d(np.asarray(y0, dtype=np.float64))
    layers = net.unpack(theta)
    if observations is None and cfg.guess_source == "observation":
        raise ValueError("guess_source='observation' but no observations were supplied")

    def field_eval(point):
        acts = net._forward(layers, point)
        g = net._reverse_input(layers, acts)
        d = net.dim
        return np.concatenate([g[..., d:], -g[..., :d]], axis=-1), acts

    states = np.empty((n_steps + 1,) + y0.shape)
    states[0] = y0
    steps = []
    reports = []
    y = y0
    try:
        for i in range(n_steps):
            seed_acts = []
            iter_acts = []
            try:
                if cfg.guess_source == "predictor":
                    f1, acts1 = field_eval(y)
                    seed_acts.append(acts1)
                    half = y + 0.5 * h * f1
                    f2, acts2 = field_eval(half)
                    seed_acts.append(acts2)
                    cur = y + h * f2
                elif cfg.guess_source == "observation":
                    cur = np.broadcast_to(
                        np.asarray(observations[i + 1], dtype=np.float64), y.shape
                    ).copy()
                else:
                    cur = y.copy()
                if not np.all(np.isfinite(cur)):
                    raise NonFiniteError(f"non-finite seed at step {i}")

                residuals = []
                converged = False
                for _ in range(cfg.max_iters):
                    fmid, acts = field_eval(0.5 * (y + cur))
                    iter_acts.append(acts)
                    new = y + h * fmid
                    if not np.all(np.isfinite(new)):
                        raise NonFiniteError(f"non-finite iterate at step {i}")
                    resid = float(np.max(np.abs(new - cur)))
                    residuals.append(resid)
                    cur = new
                    if resid <= cfg.tol:
                        converged = True
                        break
            except NonFiniteError:
                for acts in seed_acts + iter_acts:
                    METER.release(*acts[1:])
                raise

            report = StepReport(
                iterations=len(residuals),
                residual=residuals[-1],
                converged=converged,
                residuals=tuple(residuals),
            )
            steps.append(_StepRecord(cfg.guess_source, seed_acts, iter_acts, report))
            reports.append(report)
            y = cur
            states[i + 1] = y
    except NonFiniteError:
        RecordedRollout(states, None, h, steps, reports).release()
        raise

    times = np.arange(n_steps + 1) * h
    return RecordedRollout(states=states, times=times, h=h, steps=steps, reports=reports)


def backward_through_record(net, theta, record, partials):
    """Reverse sweep over a recorded rollout; returns the flat theta gradient.

    partials is [n, B, 2d] as in solve_adjoint_accumulate.  Tapes are released
    as they are consumed, so peak memory sits at the end of the forward pass.
    """
    partials = np.asarray(partials, dtype=np.float64)
    n_steps = len(record.steps)
    if partials.shape[0] != n_steps:
        raise ValueError(f"partials cover {partials.shape[0]} steps, record has {n_steps}")
    layers = net.unpack(theta)
    h = record.h
    grad = np.zeros(net.n_params)
    cot = np.zeros_like(record.states[-1])
    METER.track(grad, cot)

    for n in range(n_steps - 1, -1, -1):
        rec = record.steps[n]
        cot = cot + partials[n]
        cot_yn = np.zeros_like(cot)
        # iterates, newest first: y_k = y_n + h f((y_n + y_{k-1}) / 2)
        for acts in reversed(rec.iter_acts):
            ybar, thbar = net.field_vjp(layers, acts, h * cot, need_params=True)
            METER.release(*acts[1:])
            grad += thbar
            cot_yn += cot + 0.5 * ybar
            cot = 0.5 * ybar
        # seed
        if rec.seed_kind == "predictor":
            acts1, acts2 = rec.seed_acts
            # y_seed = y_n + h f(y_half), y_half = y_n + (h/2) f(y_n)
            ybar2, thbar2 = net.field_vjp(layers, acts2, h * cot, need_params=True)
            METER.release(*acts2[1:])
            grad += thbar2
            cot_yn += cot
            ybar1, thbar1 = net.field_vjp(layers, acts1, 0.5 * h * ybar2, need_params=True)
            METER.release(*acts1[1:])
            grad += thbar1
            cot_yn += ybar2 + ybar1
        elif rec.seed_kind == "previous_state":
            cot_yn += cot
        # observation seeds are data: no path back
        rec.seed_acts = []
        rec.iter_acts = []
        cot = cot_yn

    METER.release(grad, cot)
    return grad
