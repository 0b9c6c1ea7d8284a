"""Trajectory datasets: generation, binary storage, window sampling.

A dataset is a directory holding

    manifest.json   versioned description: system, sizes, step, noise, seed
    clean.f64       [n_traj, n_steps + 1, 2d] little-endian float64, row-major
    noisy.f64       same shape: clean plus i.i.d. N(0, noise_std^2) per scalar

with the first n_train trajectories forming the training split and the rest
validation.  Trajectories come from the order-4 Gauss reference integrator at
the stored step size.  Initial conditions are drawn uniformly from the
system's phase-space box (with rejection below the energy cap where the
system defines one); noise for trajectory i comes from its own generator
seeded with seed XOR i, so the content of a trajectory never depends on how
many trajectories surround it or in what order they were produced.
"""

import dataclasses
import json
import pathlib

import numpy as np

from .integrators import reference_integrate
from .systems import get_system

MANIFEST_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
CLEAN_NAME = "clean.f64"
NOISY_NAME = "noisy.f64"

DEFAULT_DT = 0.001
# long enough to host coarsened training windows (stride * window + 1 points)
DEFAULT_N_STEPS = 160
DEFAULT_NOISE_STD = 0.01

FULL_SCALE = {"n_train": 16384, "n_val": 8192}
SMOKE_SCALE = {"n_train": 1024, "n_val": 256}


@dataclasses.dataclass(frozen=True)
class DatasetManifest:
    format_version: int
    system: str
    system_params: dict
    dim: int
    seed: int
    n_train: int
    n_val: int
    n_steps: int
    dt: float
    noise_std: float

    @property
    def n_traj(self):
        return self.n_train + self.n_val

    @property
    def shape(self):
        return (self.n_traj, self.n_steps + 1, 2 * self.dim)

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        version = raw.get("format_version")
        if version != MANIFEST_FORMAT_VERSION:
            raise ValueError(f"unsupported manifest format_version {version!r}")
        return cls(**raw)


def sample_initial_conditions(system, n, rng):
    """Uniform draws from the system's box, rejecting states at/above the
    energy cap when the system defines one.  Accepted states keep draw order,
    so the first k results do not depend on n."""
    lo = system.bounds[:, 0]
    hi = system.bounds[:, 1]
    if system.ic_energy_cap is None:
        return rng.uniform(lo, hi, size=(n, system.width))
    out = np.empty((n, system.width))
    have = 0
    while have < n:
        # fixed block size: the accepted sequence is then a pure function of
        # the stream, so the first k draws never depend on n
        block = rng.uniform(lo, hi, size=(256, system.width))
        keep = block[system.hamiltonian(block) < system.ic_energy_cap]
        take = min(len(keep), n - have)
        out[have:have + take] = keep[:take]
        have += take
    return out


def _noise_like(shape, seed, traj_offset, noise_std):
    """Per-trajectory noise blocks, each from generator seed XOR trajectory id."""
    noise = np.empty(shape)
    for i in range(shape[0]):
        rng = np.random.default_rng(seed ^ (traj_offset + i))
        noise[i] = noise_std * rng.standard_normal(shape[1:])
    return noise


def generate_dataset(system_name, out_dir, seed, n_train, n_val,
                     n_steps=DEFAULT_N_STEPS, dt=DEFAULT_DT,
                     noise_std=DEFAULT_NOISE_STD, system_params=None):
    """Integrate, corrupt, and write one dataset directory.

    Returns (manifest, clean, noisy).  Deterministic for fixed arguments: the
    reference integration is batched across trajectories but convergence is
    independent of machine parallelism, and every random stream is seeded.
    """
    system_params = dict(system_params or {})
    system = get_system(system_name, **system_params)
    if n_train < 1 or n_val < 0:
        raise ValueError("need n_train >= 1 and n_val >= 0")
    if n_steps < 1 or dt <= 0 or noise_std < 0:
        raise ValueError("need n_steps >= 1, dt > 0, noise_std >= 0")

    ic_rng = np.random.default_rng((seed, 1))  # distinct stream from the noise ids
    ics = sample_initial_conditions(system, n_train + n_val, ic_rng)
    traj, _ = reference_integrate(system.dynamics, ics, dt, n_steps)
    clean = np.ascontiguousarray(np.swapaxes(traj.states, 0, 1))  # [n_traj, n+1, 2d]
    noisy = clean + _noise_like(clean.shape, seed, 0, noise_std)

    manifest = DatasetManifest(
        format_version=MANIFEST_FORMAT_VERSION,
        system=system_name,
        system_params=system_params,
        dim=system.dim,
        seed=seed,
        n_train=n_train,
        n_val=n_val,
        n_steps=n_steps,
        dt=dt,
        noise_std=noise_std,
    )
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / MANIFEST_NAME).write_text(manifest.to_json(), encoding="utf-8")
    clean.astype("<f8").tofile(out_dir / CLEAN_NAME)
    noisy.astype("<f8").tofile(out_dir / NOISY_NAME)
    return manifest, clean, noisy


def load_dataset(dataset_dir):
    """Read a dataset directory back; returns (manifest, clean, noisy)."""
    dataset_dir = pathlib.Path(dataset_dir)
    manifest = DatasetManifest.from_json(
        (dataset_dir / MANIFEST_NAME).read_text(encoding="utf-8")
    )
    arrays = []
    for name in (CLEAN_NAME, NOISY_NAME):
        flat = np.fromfile(dataset_dir / name, dtype="<f8")
        expected = int(np.prod(manifest.shape))
        if flat.size != expected:
            raise ValueError(
                f"{name} holds {flat.size} values, manifest implies {expected}"
            )
        arrays.append(flat.reshape(manifest.shape))
    return manifest, arrays[0], arrays[1]


def split_dataset(manifest, array):
    """(train, val) views of a [n_traj, ...] array per the manifest split."""
    return array[:manifest.n_train], array[manifest.n_train:]


def sample_windows(trajectories, batch_size, window_steps, rng, stride=1):
    """Random observation windows for one batch.

    Picks batch_size (trajectory, start) pairs uniformly; a window takes
    every stride-th stored point, window_steps + 1 of them, so it spans
    window_steps solver steps of size stride * dt.  Returns
    (windows [B, window_steps + 1, 2d], traj_idx, start_idx).
    """
    n_traj, n_points = trajectories.shape[:2]
    span = window_steps * stride
    if span + 1 > n_points:
        raise ValueError(
            f"window needs {span + 1} stored points, trajectories have {n_points}"
        )
    traj_idx = rng.integers(0, n_traj, size=batch_size)
    start_idx = rng.integers(0, n_points - span, size=batch_size)
    offsets = np.arange(0, span + 1, stride)
    windows = trajectories[traj_idx[:, None], start_idx[:, None] + offsets[None, :]]
    return windows, traj_idx, start_idx


def export_csv(dataset_dir, out_path, which="noisy", max_traj=None):
    """Flatten a dataset array to CSV for eyeballing: one row per stored point."""
    manifest, clean, noisy = load_dataset(dataset_dir)
    if which not in ("clean", "noisy"):
        raise ValueError("which must be 'clean' or 'noisy'")
    data = clean if which == "clean" else noisy
    if max_traj is not None:
        data = data[:max_traj]
    d = manifest.dim
    cols = ["traj", "step", "t"] + [f"q{i}" for i in range(d)] + [f"p{i}" for i in range(d)]
    out_path = pathlib.Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(data.shape[0]):
            for s in range(data.shape[1]):
                vals = ",".join(repr(float(v)) for v in data[i, s])
                fh.write(f"{i},{s},{float(s * manifest.dt)!r},{vals}\n")
    return out_path
