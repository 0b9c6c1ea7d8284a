"""Window-matching training loop: rollout, squared loss, Adam, plateau schedule.

Training draws short observation windows from stored noisy trajectories,
rolls the model field forward through each window with the implicit midpoint
solver, and matches the predictions against the remaining observations in the
squared sense.  Windows may take every stride-th stored point, so the solver
step is stride * dt; coarsening like this lifts the dynamics signal well
above the observation-noise floor, which at the storage rate would dominate
the loss and leave nothing to optimize.

Gradients come from either engine in `adjoint` (grad_mode 'adjoint' or
'backprop'); both see exactly the same forward map, so the parameter
trajectories they produce stay within solver tolerance of each other.
"""

import dataclasses
import time

import numpy as np

from . import adjoint as adj
from .data import sample_windows, split_dataset
from .integrators import FpiConfig, NonFiniteError, integrate
from .model import DEFAULT_HIDDEN, HamiltonianNet


class NumericalAbort(RuntimeError):
    """Training stopped because the numbers went bad, with context attached."""


def window_loss(pred_states, windows, batch_scale=None):
    """Squared mismatch over a window, skipping the shared initial point.

    pred_states is time-major [n+1, B, 2d] (or [n+1, 2d] for one window),
    windows batch-major [B, n+1, 2d] (or [n+1, 2d]).  Returns
    (loss, partials [n, B, 2d]) where loss sums residual squares over steps
    and coordinates and averages over the batch; partials is the gradient of
    that scalar with respect to the predictions.  batch_scale overrides the
    1/B factor (the multi-segment path needs a scale other than the expanded
    batch size).
    """
    pred_states = np.asarray(pred_states, dtype=np.float64)
    windows = np.asarray(windows, dtype=np.float64)
    single = windows.ndim == 2
    if single:
        pred_states = pred_states[:, None, :]
        windows = windows[None]
    obs = np.swapaxes(windows, 0, 1)
    if pred_states.shape != obs.shape:
        raise ValueError(
            f"predictions {pred_states.shape} do not line up with windows {obs.shape}"
        )
    if batch_scale is None:
        batch_scale = 1.0 / windows.shape[0]
    resid = pred_states[1:] - obs[1:]
    loss = float(np.sum(resid ** 2) * batch_scale)
    partials = (2.0 * batch_scale) * resid
    return loss, partials


class Adam:
    """Standard Adam on a flat parameter vector.  A zero gradient moves
    nothing: first and second moments stay zero and the update is exactly 0."""

    def __init__(self, n_params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class ReduceOnPlateau:
    """Halve the learning rate after `patience` consecutive epochs without a
    new best validation loss."""

    def __init__(self, lr, factor=0.5, patience=3):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = np.inf
        self.bad = 0

    def update(self, val_loss):
        if val_loss < self.best:
            self.best = val_loss
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr *= self.factor
                self.bad = 0
        return self.lr


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    grad_mode: str = "adjoint"          # 'adjoint' or 'backprop'
    window_steps: int = 6               # solver steps per training window
    stride: int = 25                    # stored points per solver step
    batch_size: int = 512
    epochs: int = 25
    windows_per_traj: int = 16          # epoch length: n_train * this / batch_size
    lr: float = 0.01
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    shooting: str = "single"            # 'single' or 'multiple'
    segment_steps: int | None = None    # solver steps per segment when multiple
    quadrature: str = "midpoint"
    fpi: FpiConfig = FpiConfig()
    hidden: tuple = DEFAULT_HIDDEN
    seed: int = 0
    val_batches: int = 2
    max_nonconverged_fraction: float = 0.5

    def __post_init__(self):
        if self.grad_mode not in ("adjoint", "backprop"):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")
        if self.shooting not in ("single", "multiple"):
            raise ValueError(f"unknown shooting {self.shooting!r}")
        if self.window_steps < 1 or self.stride < 1:
            raise ValueError("window_steps and stride must be >= 1")
        if self.shooting == "multiple":
            seg = self.segment_steps
            if seg is None or seg < 2:
                raise ValueError("multiple shooting needs segment_steps >= 2")
            if self.window_steps % seg != 0:
                raise ValueError("segment_steps must divide window_steps")


def smoke_config(**overrides):
    """Desk-scale settings: pairs with the 1024/256-trajectory smoke dataset."""
    base = dict(epochs=10, windows_per_traj=16, batch_size=512)
    base.update(overrides)
    return TrainConfig(**base)


def _segment_windows(windows, segment_steps):
    """Slice [B, n+1, 2d] windows into overlapping-endpoint segments,
    stacked as [B * n_seg, seg+1, 2d]: each segment restarts from the
    observation at its left edge."""
    b, n_plus, width = windows.shape
    n = n_plus - 1
    n_seg = n // segment_steps
    parts = [windows[:, s * segment_steps:(s + 1) * segment_steps + 1, :]
             for s in range(n_seg)]
    return np.stack(parts, axis=1).reshape(b * n_seg, segment_steps + 1, width)


def loss_and_grad(net, theta, windows, h, config):
    """One batch: forward rollout, loss, and the parameter gradient.

    Returns (loss, grad, converged_fraction).  Multiple shooting expands the
    batch into per-segment windows first; the loss keeps the 1/B scale of the
    original batch, so segment losses add within each window.
    """
    batch = windows.shape[0]
    if config.shooting == "multiple":
        windows = _segment_windows(windows, config.segment_steps)
    n_steps = windows.shape[1] - 1
    scale = 1.0 / batch
    obs_tm = np.ascontiguousarray(np.swapaxes(windows, 0, 1))
    y0 = windows[:, 0, :]

    if config.grad_mode == "adjoint":
        def field(y):
            return net.dynamics(theta, y)

        traj, reports = integrate(
            field, y0, h, n_steps, method="implicit_midpoint", cfg=config.fpi,
            observations=obs_tm if config.fpi.guess_source == "observation" else None,
        )
        loss, partials = window_loss(traj.states, windows, batch_scale=scale)
        grad, diag = adj.solve_adjoint_accumulate(
            net, theta, traj.states, partials, h, cfg=config.fpi,
            quadrature=config.quadrature,
        )
        # worst stage wins: a batch is only as converged as its weakest solve
        frac = min(float(np.mean([r.converged for r in reports])),
                   diag.converged_fraction)
    else:
        record = adj.record_rollout(
            net, theta, y0, h, n_steps, cfg=config.fpi,
            observations=obs_tm if config.fpi.guess_source == "observation" else None,
        )
        loss, partials = window_loss(record.states, windows, batch_scale=scale)
        grad = adj.backward_through_record(net, theta, record, partials)
        frac = float(np.mean([r.converged for r in record.reports]))
    return loss, grad, frac


def _forward_loss(net, theta, windows, h, config):
    """Loss only, no gradient; used for validation and the epoch-0 baseline."""
    scale = 1.0 / windows.shape[0]
    if config.shooting == "multiple":
        windows = _segment_windows(windows, config.segment_steps)
    n_steps = windows.shape[1] - 1
    obs_tm = np.ascontiguousarray(np.swapaxes(windows, 0, 1))

    def field(y):
        return net.dynamics(theta, y)

    traj, _ = integrate(
        field, windows[:, 0, :], h, n_steps, method="implicit_midpoint",
        cfg=config.fpi,
        observations=obs_tm if config.fpi.guess_source == "observation" else None,
    )
    loss, _ = window_loss(traj.states, windows, batch_scale=scale)
    return loss


@dataclasses.dataclass
class TrainResult:
    theta: np.ndarray
    net: HamiltonianNet
    metrics: list                 # dict rows: epoch, train_loss, val_loss, lr, wall_time_s
    saturation_epoch: int | None


def saturation_epoch(val_losses, rel_improve=0.01, patience=3):
    """First epoch index (1-based) after which the validation loss improved by
    less than rel_improve for patience consecutive epochs; None if it never
    saturated."""
    quiet = 0
    for i in range(1, len(val_losses)):
        prev, cur = val_losses[i - 1], val_losses[i]
        if prev - cur < rel_improve * abs(prev):
            quiet += 1
            if quiet >= patience:
                return i - patience + 1
        else:
            quiet = 0
    return None


def train(manifest, noisy, config, theta0=None):
    """Fit a Hamiltonian to the noisy trajectories of a loaded dataset.

    Deterministic per (config.seed, config): all sampling comes from seeded
    generators and both gradient engines are single-threaded.  Raises
    NumericalAbort (with epoch/batch context) on non-finite numbers or when
    more than half the solver steps of a batch fail to converge.
    """
    net = HamiltonianNet(manifest.dim, hidden=config.hidden)
    train_traj, val_traj = split_dataset(manifest, noisy)
    if len(val_traj) == 0:
        raise ValueError("dataset has no validation split")
    h = config.stride * manifest.dt
    span = config.window_steps * config.stride + 1
    if span > manifest.n_steps + 1:
        raise ValueError(
            f"window needs {span} stored points, dataset has {manifest.n_steps + 1}"
        )

    theta = net.init_params(config.seed) if theta0 is None else np.array(theta0, dtype=np.float64)
    adam = Adam(net.n_params, lr=config.lr)
    sched = ReduceOnPlateau(config.lr, config.plateau_factor, config.plateau_patience)
    rng = np.random.default_rng((config.seed, 2))

    batch = min(config.batch_size, len(train_traj) * config.windows_per_traj)
    steps_per_epoch = max(1, (len(train_traj) * config.windows_per_traj) // batch)

    def val_loss_at(theta_now, epoch):
        rng_val = np.random.default_rng((config.seed, 3, epoch))
        losses = []
        for _ in range(config.val_batches):
            vw, _, _ = sample_windows(
                val_traj, min(batch, len(val_traj) * 4), config.window_steps,
                rng_val, stride=config.stride,
            )
            losses.append(_forward_loss(net, theta_now, vw, h, config))
        return float(np.mean(losses))

    metrics = []
    # epoch 0: the untouched model, so later epochs have a baseline to beat
    t0 = time.perf_counter()
    rng_base = np.random.default_rng((config.seed, 3, 0))
    base_w, _, _ = sample_windows(train_traj, batch, config.window_steps,
                                  rng_base, stride=config.stride)
    try:
        base_train = _forward_loss(net, theta, base_w, h, config)
        base_val = val_loss_at(theta, 0)
    except NonFiniteError as err:
        raise NumericalAbort(f"solver blow-up at epoch 0 (baseline): {err}") from None
    metrics.append({
        "epoch": 0,
        "train_loss": base_train,
        "val_loss": base_val,
        "lr": config.lr,
        "wall_time_s": time.perf_counter() - t0,
    })

    for epoch in range(1, config.epochs + 1):
        t_epoch = time.perf_counter()
        epoch_losses = []
        for bi in range(steps_per_epoch):
            windows, _, _ = sample_windows(
                train_traj, batch, config.window_steps, rng, stride=config.stride,
            )
            try:
                loss, grad, frac = loss_and_grad(net, theta, windows, h, config)
            except NonFiniteError as err:
                raise NumericalAbort(
                    f"solver blow-up at epoch {epoch} batch {bi}: {err}"
                ) from None
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise NumericalAbort(
                    f"non-finite loss or gradient at epoch {epoch} batch {bi}"
                )
            if 1.0 - frac > config.max_nonconverged_fraction:
                raise NumericalAbort(
                    f"{100 * (1 - frac):.0f}% of solver steps failed to converge "
                    f"at epoch {epoch} batch {bi} (h={h})"
                )
            adam.lr = sched.lr
            theta = adam.step(theta, grad)
            epoch_losses.append(loss)
        try:
            vl = val_loss_at(theta, epoch)
        except NonFiniteError as err:
            raise NumericalAbort(
                f"solver blow-up at epoch {epoch} (validation): {err}"
            ) from None
        lr_now = sched.update(vl)
        metrics.append({
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "val_loss": vl,
            "lr": lr_now,
            "wall_time_s": time.perf_counter() - t_epoch,
        })

    sat = saturation_epoch([row["val_loss"] for row in metrics[1:]])
    return TrainResult(theta=theta, net=net, metrics=metrics, saturation_epoch=sat)


def metrics_to_csv(metrics):
    """Per-epoch metrics as CSV text (epoch, train_loss, val_loss, lr, wall_time_s)."""
    lines = ["epoch,train_loss,val_loss,lr,wall_time_s"]
    for row in metrics:
        lines.append(
            f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r},"
            f"{row['lr']!r},{row['wall_time_s']!r}"
        )
    return "\n".join(lines) + "\n"
