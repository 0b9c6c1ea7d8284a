"""Model quality checks on held-out phase-space grids, plus report tables.

A learned Hamiltonian is only determined up to an additive constant (the
dynamics see gradients, never the value), so value comparisons subtract the
mean offset over the grid before measuring error.  Grid points come from a
regular slice of the phase space, not from trajectories, so the numbers say
something about generalization rather than memorized paths.
"""

import numpy as np

from .integrators import FpiConfig, integrate

GRID_POINTS_PER_AXIS = 33


def phase_grid(system, points_per_axis=GRID_POINTS_PER_AXIS, slices=None):
    """Regular grid over one (q, p) plane of the system's sampling box.

    The grid varies the last position coordinate and the last momentum
    coordinate; every other coordinate is held at 0.0 unless `slices` maps
    its index (into the flat [q, p] state) to another value.  Returns
    (points [P*P, 2d], meta dict).
    """
    d = system.dim
    width = 2 * d
    free_q, free_p = d - 1, 2 * d - 1
    slices = dict(slices or {})
    for axis in (free_q, free_p):
        if axis in slices:
            raise ValueError(f"axis {axis} is a grid axis, not a slice axis")
    q_lo, q_hi = system.bounds[free_q]
    p_lo, p_hi = system.bounds[free_p]
    q_axis = np.linspace(q_lo, q_hi, points_per_axis)
    p_axis = np.linspace(p_lo, p_hi, points_per_axis)
    pts = np.zeros((points_per_axis * points_per_axis, width))
    for axis, value in slices.items():
        pts[:, axis] = value
    qv, pv = np.meshgrid(q_axis, p_axis, indexing="ij")
    pts[:, free_q] = qv.ravel()
    pts[:, free_p] = pv.ravel()
    meta = {
        "points_per_axis": points_per_axis,
        "grid_axes": [free_q, free_p],
        "slices": {int(k): float(v) for k, v in slices.items()},
    }
    return pts, meta


def evaluate_ood(h_fn, dyn_fn, system, points_per_axis=GRID_POINTS_PER_AXIS,
                 slices=None):
    """Compare a learned (value, field) pair to a known system on a grid.

    h_fn maps [N, 2d] -> [N] values; dyn_fn maps [N, 2d] -> [N, 2d] fields.
    Values are aligned by subtracting the mean difference before the error
    norms.  Returns a flat dict of floats plus grid metadata.
    """
    pts, meta = phase_grid(system, points_per_axis, slices)
    h_true = np.asarray(system.hamiltonian(pts), dtype=np.float64)
    h_pred = np.asarray(h_fn(pts), dtype=np.float64)
    offset = float(np.mean(h_pred - h_true))
    aligned = np.abs(h_pred - offset - h_true)
    f_true = np.asarray(system.dynamics(pts), dtype=np.float64)
    f_pred = np.asarray(dyn_fn(pts), dtype=np.float64)
    dyn_err = np.sqrt(np.sum((f_pred - f_true) ** 2, axis=1))
    return {
        "h_l1_mean": float(np.mean(aligned)),
        "h_l1_max": float(np.max(aligned)),
        "h_l1_mean_raw": float(np.mean(np.abs(h_pred - h_true))),
        "offset": offset,
        "dyn_l2_mean": float(np.mean(dyn_err)),
        "n_points": int(pts.shape[0]),
        **meta,
    }


def energy_drift(field, h_fn, y0, h, n_steps, method="implicit_midpoint",
                 cfg=FpiConfig()):
    """Max |H(y_k) - H(y_0)| along an integrated trajectory; 0.0 for no steps."""
    if n_steps == 0:
        return 0.0
    traj, _ = integrate(field, y0, h, n_steps, method=method, cfg=cfg)
    y0b = np.atleast_2d(np.asarray(y0, dtype=np.float64))
    h0 = np.asarray(h_fn(y0b), dtype=np.float64)
    flat = traj.states.reshape(-1, traj.states.shape[-1])
    vals = np.asarray(h_fn(flat), dtype=np.float64).reshape(traj.states.shape[0], -1)
    return float(np.max(np.abs(vals - h0[None, :])))


def report_table(rows):
    """Render benchmark rows as (csv_text, markdown_text).

    rows: list of dicts with a 'name' key and numeric columns; the column
    set is the union over rows, missing cells rendered empty.
    """
    cols = []
    for row in rows:
        for key in row:
            if key != "name" and key not in cols:
                cols.append(key)
    header = ["name"] + cols

    def cell(row, key):
        if key not in row:
            return ""
        value = row[key]
        # plain float() first: numpy scalars subclass float but repr() noisily
        return repr(float(value)) if isinstance(value, float) else str(value)

    csv_lines = [",".join(header)]
    for row in rows:
        csv_lines.append(",".join(cell(row, k) for k in header))
    csv_text = "\n".join(csv_lines) + "\n"

    md_lines = ["| " + " | ".join(header) + " |",
                "|" + "|".join(" --- " for _ in header) + "|"]
    for row in rows:
        md_lines.append("| " + " | ".join(cell(row, k) or "-" for k in header) + " |")
    md_text = "\n".join(md_lines) + "\n"
    return csv_text, md_text


def parse_report_csv(text):
    """Inverse of the CSV half of report_table (floats where they parse)."""
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        row = {}
        for key, value in zip(header, cells):
            if value == "":
                continue
            if key == "name":
                row[key] = value
            else:
                try:
                    row[key] = float(value)
                except ValueError:
                    row[key] = value
        rows.append(row)
    return rows
