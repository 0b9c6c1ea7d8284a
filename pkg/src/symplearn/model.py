"""Trainable Hamiltonian: a dense tanh network with hand-written derivatives.

The network maps a phase-space point y = (q, p), flattened into one vector of
width 2*dim, to a scalar energy.  Everything the solvers need is derived from
that scalar by explicit forward/reverse sweeps written out below:

    eval_h       H(theta, y)
    grad_state   dH/dy                       (one reverse sweep)
    dynamics     (dH/dp, -dH/dq)             (canonical field from grad_state)
    hess_state   d2H/dy2                     (forward tangent over the reverse)
    vjp_params   d/dtheta of <lam, f(y)>     (reverse over a directional tangent)

No autodiff framework is used: the passes are few, the layer structure is
fixed, and writing them out keeps every buffer under our control, which the
memory accounting in the gradient engines depends on.  tanh keeps the model
C^2; the costate equations differentiate the vector field once more, so a
merely C^1 activation would break them.

Parameters travel as a single flat float64 vector (layer by layer, weight
matrix then bias) so optimizers, finite differencing and checkpoints stay
trivial.
"""

import json
import pathlib

import numpy as np

from .memory import METER

CHECKPOINT_FORMAT_VERSION = 1

DEFAULT_HIDDEN = (16, 32, 16)


def param_count(arch):
    """Total flat length: sum over layers of n_in*n_out + n_out."""
    return int(sum(n_in * n_out + n_out for n_in, n_out in zip(arch[:-1], arch[1:])))


def costate_to_direction(lam, dim):
    """Map a costate lam = (lam_q, lam_p) to the direction w = (-lam_p, lam_q).

    With the canonical field f = (dH/dp, -dH/dq) one has, for fixed lam,
    <lam, f> = <w, dH/dy>, so contractions of lam against df/dy or df/dtheta
    become plain directional derivatives of dH/dy along w.  Both the costate
    right-hand side and the parameter-gradient integrand go through here.
    """
    return np.concatenate([-lam[..., dim:], lam[..., :dim]], axis=-1)


def _as_batch(y, width):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        if y.shape[0] != width:
            raise ValueError(f"phase point has width {y.shape[0]}, expected {width}")
        return y[None, :], True
    if y.ndim == 2:
        if y.shape[1] != width:
            raise ValueError(f"phase points have width {y.shape[1]}, expected {width}")
        return y, False
    raise ValueError("phase points must be a vector [2d] or a batch [B, 2d]")


class HamiltonianNet:
    """Feed-forward scalar network over phase space, with its derivative passes.

    All public methods accept a single point [2d] or a batch [B, 2d] and are
    pure: no internal state, bit-identical results for identical inputs.
    """

    def __init__(self, dim, hidden=DEFAULT_HIDDEN):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self.arch = (2 * self.dim, *(int(w) for w in hidden), 1)
        if any(w < 1 for w in self.arch):
            raise ValueError(f"bad layer widths {self.arch}")
        self.n_params = param_count(self.arch)

    # ------------------------------------------------------------------
    # parameters

    def init_params(self, seed):
        """Weights uniform on +-1/sqrt(fan_in), biases zero, per-seed deterministic."""
        rng = np.random.default_rng(seed)
        chunks = []
        for n_in, n_out in zip(self.arch[:-1], self.arch[1:]):
            scale = 1.0 / np.sqrt(n_in)
            chunks.append(rng.uniform(-scale, scale, size=n_in * n_out))
            chunks.append(np.zeros(n_out))
        return np.concatenate(chunks)

    def unpack(self, theta):
        """Flat vector -> list of (W, b) views, no copies."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(
                f"parameter vector has shape {theta.shape}, expected ({self.n_params},)"
            )
        layers = []
        pos = 0
        for n_in, n_out in zip(self.arch[:-1], self.arch[1:]):
            w = theta[pos:pos + n_in * n_out].reshape(n_in, n_out)
            pos += n_in * n_out
            b = theta[pos:pos + n_out]
            pos += n_out
            layers.append((w, b))
        return layers

    def pack_layer_grads(self, layer_grads):
        """Per-layer (dW, db) -> flat vector matching the theta layout."""
        return np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in layer_grads])

    # ------------------------------------------------------------------
    # forward / reverse sweeps

    def _forward(self, layers, y):
        """Activation list a_0..a_L; hidden layers tanh, output linear.

        The list is registered with the allocation meter while alive; callers
        must pair it with _drop.
        """
        acts = [y]
        last = len(layers) - 1
        for l, (w, b) in enumerate(layers):
            z = acts[-1] @ w + b
            acts.append(np.tanh(z) if l < last else z)
        METER.track(*acts[1:])
        return acts

    @staticmethod
    def _drop(acts):
        METER.release(*acts[1:])

    def _reverse_input(self, layers, acts):
        """d(sum of outputs)/d(input), walked back layer by layer."""
        bar = np.ones_like(acts[-1])
        last = len(layers) - 1
        for l in range(last, -1, -1):
            w, _ = layers[l]
            if l < last:
                bar = bar * (1.0 - acts[l + 1] ** 2)
            bar = bar @ w.T
        return bar

    def _mixed(self, layers, acts, w_dir, need_state, need_params):
        """Tangent sweep along w_dir, then reverse through primal and tangent.

        The tangent forward propagates ydot_0 = w_dir through the network,
        producing the directional derivative T = <w_dir, dH/dy> per row.  The
        reverse sweep then differentiates sum(T):

            need_state  -> dT/dy      = (d2H/dy2) w_dir, row-wise
            need_params -> dT/dtheta  summed over the batch

        which covers Hessian columns, the costate right-hand side and the
        parameter-gradient integrand with one piece of code.
        """
        last = len(layers) - 1
        tans = [w_dir]
        zts = []
        for l, (w, _) in enumerate(layers):
            zt = tans[-1] @ w
            zts.append(zt)
            if l < last:
                tans.append((1.0 - acts[l + 1] ** 2) * zt)
            else:
                tans.append(zt)
        METER.track(*zts, *tans[1:])

        s = np.zeros_like(acts[-1])      # cotangent on a_l
        r = np.ones_like(tans[-1])       # cotangent on adot_l
        layer_grads = [None] * len(layers) if need_params else None
        for l in range(last, -1, -1):
            w, _ = layers[l]
            if l < last:
                a_next = acts[l + 1]
                sp = 1.0 - a_next ** 2
                gz = s * sp + r * (-2.0 * a_next * sp * zts[l])
                gzt = r * sp
            else:
                gz = s
                gzt = r
            if need_params:
                dw = acts[l].T @ gz + tans[l].T @ gzt
                layer_grads[l] = (dw, gz.sum(axis=0))
            if l > 0 or need_state:
                s = gz @ w.T
                r = gzt @ w.T

        METER.release(*zts, *tans[1:])
        state_out = s if need_state else None
        param_out = self.pack_layer_grads(layer_grads) if need_params else None
        return state_out, param_out

    # ------------------------------------------------------------------
    # public operations

    def eval_h(self, theta, y):
        """Scalar energy H(theta, y); batch in -> vector of energies out."""
        y2, single = _as_batch(y, self.arch[0])
        layers = self.unpack(theta)
        acts = self._forward(layers, y2)
        out = acts[-1][:, 0].copy()
        self._drop(acts)
        return float(out[0]) if single else out

    def grad_state(self, theta, y):
        """dH/dy, shape like y."""
        y2, single = _as_batch(y, self.arch[0])
        layers = self.unpack(theta)
        acts = self._forward(layers, y2)
        g = self._reverse_input(layers, acts)
        self._drop(acts)
        return g[0] if single else g

    def dynamics(self, theta, y):
        """Canonical vector field (dH/dp, -dH/dq) at y."""
        g = self.grad_state(theta, y)
        d = self.dim
        return np.concatenate([g[..., d:], -g[..., :d]], axis=-1)

    def hess_state(self, theta, y):
        """Full second derivative d2H/dy2, shape [..., 2d, 2d].

        Built column by column: one tangent-over-reverse sweep per coordinate
        direction (2d of them, so at most four for the systems shipped here).
        The result is symmetric up to roundoff; nothing is symmetrized, so
        tests can see the raw asymmetry.
        """
        y2, single = _as_batch(y, self.arch[0])
        layers = self.unpack(theta)
        acts = self._forward(layers, y2)
        width = self.arch[0]
        cols = []
        for k in range(width):
            e_k = np.zeros_like(y2)
            e_k[:, k] = 1.0
            col, _ = self._mixed(layers, acts, e_k, need_state=True, need_params=False)
            cols.append(col)
        self._drop(acts)
        hess = np.stack(cols, axis=1)
        return hess[0] if single else hess

    def hess_blocks(self, theta, y):
        """hess_state split into (Hqq, Hqp, Hpq, Hpp)."""
        hess = self.hess_state(theta, y)
        d = self.dim
        return (hess[..., :d, :d], hess[..., :d, d:],
                hess[..., d:, :d], hess[..., d:, d:])

    def vjp_params(self, theta, y, lam):
        """Sum over the batch of <lam, df/dtheta> at (theta, y), flat [n_params].

        f is the canonical field; the contraction is computed as the theta
        gradient of the directional derivative <w, dH/dy> with
        w = (-lam_p, lam_q), never materializing df/dtheta itself.
        """
        y2, single_y = _as_batch(y, self.arch[0])
        lam2, single_l = _as_batch(lam, self.arch[0])
        if y2.shape != lam2.shape:
            raise ValueError(f"state batch {y2.shape} and costate batch {lam2.shape} differ")
        layers = self.unpack(theta)
        acts = self._forward(layers, y2)
        w_dir = costate_to_direction(lam2, self.dim)
        _, pg = self._mixed(layers, acts, w_dir, need_state=False, need_params=True)
        self._drop(acts)
        return pg

    def field_vjp(self, layers, acts, u, need_params):
        """Reverse through one recorded field evaluation.

        Given the cotangent u on f(y) = (dH/dp, -dH/dq) and the activations
        recorded when f was evaluated, returns (ybar, thetabar):

            ybar     = (df/dy)^T u     = d2H/dy2 caught along w = (-u_p, u_q)
            thetabar = (df/dtheta)^T u summed over the batch

        This is the workhorse of the backprop-through-solver engine.
        """
        w_dir = costate_to_direction(u, self.dim)
        return self._mixed(layers, acts, w_dir, need_state=True, need_params=need_params)


# ----------------------------------------------------------------------
# checkpoints: JSON header + sibling little-endian float64 binary


def _binary_sibling(header_path):
    header_path = pathlib.Path(header_path)
    return header_path.with_suffix(".bin")


def save_checkpoint(header_path, net, theta, seed):
    """Write <stem>.json describing the model and <stem>.bin holding theta."""
    header_path = pathlib.Path(header_path)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (net.n_params,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({net.n_params},)")
    bin_path = _binary_sibling(header_path)
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "hamiltonian-net",
        "dim": net.dim,
        "arch": list(net.arch),
        "seed": seed,
        "param_count": int(net.n_params),
        "dtype": "<f8",
        "data_file": bin_path.name,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    theta.astype("<f8").tofile(bin_path)
    return header_path, bin_path


def load_checkpoint(header_path):
    """Read a checkpoint pair back; returns (net, theta, header)."""
    header_path = pathlib.Path(header_path)
    with open(header_path, encoding="utf-8") as fh:
        header = json.load(fh)
    version = header.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    arch = tuple(header["arch"])
    if len(arch) < 2 or arch[-1] != 1 or arch[0] % 2 != 0:
        raise ValueError(f"checkpoint arch {arch} is not a scalar network over phase space")
    net = HamiltonianNet(arch[0] // 2, hidden=arch[1:-1])
    if net.n_params != header["param_count"]:
        raise ValueError(
            f"header param_count {header['param_count']} does not match arch {arch}"
        )
    bin_path = header_path.parent / header["data_file"]
    theta = np.fromfile(bin_path, dtype="<f8")
    if theta.shape != (net.n_params,):
        raise ValueError(
            f"parameter file holds {theta.size} values, arch {arch} needs {net.n_params}"
        )
    return net, theta, header
