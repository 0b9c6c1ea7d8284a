"""Side-by-side memory and wall-time profile of the two gradient engines.

Memory numbers are tracked bytes from the allocation meter, so they count
what each engine retains internally: the reverse engine keeps every solver
iterate's activation tape until the backward sweep consumes it, which grows
linearly with the window length, while the costate engine re-derives what it
needs from the stored trajectory and holds only per-step work buffers.  Wall
time is the minimum over repeats of a full loss+gradient evaluation.
"""

import dataclasses
import time

import numpy as np

from .integrators import REFERENCE_FPI, integrate
from .memory import METER
from .model import HamiltonianNet
from .systems import get_system
from .training import TrainConfig, loss_and_grad

PROFILE_WINDOW_STEPS = (4, 8, 16, 32)


@dataclasses.dataclass(frozen=True)
class ProfileRow:
    grad_mode: str
    window_steps: int
    batch_size: int
    peak_bytes: int
    wall_s: float
    loss: float


def _profile_windows(system, batch_size, window_steps, h, seed):
    """Noise-free windows rolled out from the true field: the profile should
    measure engine overhead, not data quality."""
    rng = np.random.default_rng((seed, 4))
    lo = system.bounds[:, 0]
    hi = system.bounds[:, 1]
    y0 = lo + (hi - lo) * rng.random((batch_size, 2 * system.dim))
    traj, _ = integrate(system.dynamics, y0, h, window_steps,
                        method="implicit_midpoint", cfg=REFERENCE_FPI)
    return np.ascontiguousarray(np.swapaxes(traj.states, 0, 1))


def profile_gradient_modes(system_name="coupled_ho", batch_size=512,
                           window_steps=PROFILE_WINDOW_STEPS, h=0.01,
                           seed=0, repeats=3):
    """Profile both engines over a range of window lengths.

    Same freshly initialized network, same windows, same solver settings for
    both engines at each length; returns a list of ProfileRow.
    """
    system = get_system(system_name)
    net = HamiltonianNet(system.dim)
    theta = net.init_params(seed)
    rows = []
    for n_steps in window_steps:
        windows = _profile_windows(system, batch_size, n_steps, h, seed)
        for mode in ("adjoint", "backprop"):
            config = TrainConfig(grad_mode=mode, window_steps=n_steps,
                                 epochs=1, seed=seed)
            best = np.inf
            peak = 0
            loss = np.nan
            for _ in range(repeats):
                t0 = time.perf_counter()
                with METER.measure() as meter:
                    loss, _, _ = loss_and_grad(net, theta, windows, h, config)
                    peak = meter.peak_bytes
                best = min(best, time.perf_counter() - t0)
            rows.append(ProfileRow(
                grad_mode=mode, window_steps=n_steps, batch_size=batch_size,
                peak_bytes=peak, wall_s=float(best), loss=float(loss),
            ))
    return rows


def profile_to_csv(rows):
    lines = ["grad_mode,window_steps,batch_size,peak_bytes,wall_s,loss"]
    for r in rows:
        lines.append(
            f"{r.grad_mode},{r.window_steps},{r.batch_size},{r.peak_bytes},"
            f"{r.wall_s!r},{r.loss!r}"
        )
    return "\n".join(lines) + "\n"
