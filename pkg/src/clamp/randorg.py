"""Random organization of equal-radius particles on the unit hypersphere.

Overlapping particles get random kicks and isolated particles stay put. With
reciprocal kicks the two members of an overlapping pair move by equal and
opposite displacements. :func:`gradient_step` is the deterministic analogue:
descent on the same quadratic overlap energy used by the packing loss.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial.distance import pdist

from .geometry import ValidationError

AXIS_JITTER = 0.5


@dataclass
class RandOrgConfig:
    N: int = 64
    D: int = 3
    radius: float = 0.1
    kick_amplitude: float = 0.05
    reciprocal: bool = True
    max_steps: int = 50_000
    seed: int = 0

    def validate(self):
        if self.N < 2:
            raise ValidationError(f"N must be >= 2, got {self.N}")
        if self.D < 2:
            raise ValidationError(f"D must be >= 2, got {self.D}")
        if not self.kick_amplitude > 0:
            raise ValidationError(f"kick_amplitude must be positive, got {self.kick_amplitude}")
        if self.radius < 0:
            raise ValidationError(f"radius must be >= 0, got {self.radius}")


@dataclass
class ParticleState:
    positions: np.ndarray  # (N, D) unit vectors
    radius: float
    rng: np.random.Generator
    step_index: int = 0
    overlaps: np.ndarray | None = field(default=None, repr=False)  # (N, N) pair mask
    displacement: np.ndarray | None = field(default=None, repr=False)  # pre-projection moves

    def __post_init__(self):
        if self.overlaps is None:
            self.overlaps = overlap_mask(self.positions, self.radius)

    @property
    def active_mask(self) -> np.ndarray:
        return self.overlaps.any(axis=1)

    @property
    def active_fraction(self) -> float:
        return float(self.active_mask.mean())


def overlap_mask(positions, radius: float) -> np.ndarray:
    """``(N, N)`` boolean matrix of pairs closer than two radii (chordal distance)."""
    x = np.ascontiguousarray(positions, dtype=np.float64)
    mask = np.zeros((x.shape[0], x.shape[0]), dtype=np.bool_)
    _fill_overlaps(x, 2.0 * radius, mask)
    return mask


@njit(cache=True)
def _fill_overlaps(x, cutoff, mask):
    n, d = x.shape
    c2 = cutoff * cutoff
    for i in range(n):
        mask[i, i] = False
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                t = x[i, k] - x[j, k]
                s += t * t
            hit = s < c2
            mask[i, j] = hit
            mask[j, i] = hit


@njit(cache=True)
def _kick_step(x, mask, rng, kick_amplitude, reciprocal, jitter, disp):
    """One random-organization step in place; returns True if any overlap remains.

    Random draws per pair (reciprocal) or per active particle: ``D`` normals
    then one uniform, in index order.
    """
    n, d = x.shape
    disp[:] = 0.0
    active = np.zeros(n, dtype=np.bool_)
    axis = np.empty(d)
    for i in range(n):
        for j in range(i + 1, n):
            if not mask[i, j]:
                continue
            active[i] = True
            active[j] = True
            if reciprocal:
                s = 0.0
                for k in range(d):
                    s += (x[i, k] - x[j, k]) ** 2
                s = np.sqrt(s)
                for k in range(d):
                    base = (x[i, k] - x[j, k]) / s if s > 0 else 0.0
                    axis[k] = base + jitter * rng.standard_normal()
                na = 0.0
                for k in range(d):
                    na += axis[k] * axis[k]
                mag = kick_amplitude * (1.0 - rng.random()) / np.sqrt(na)
                for k in range(d):
                    disp[i, k] += mag * axis[k]
                    disp[j, k] -= mag * axis[k]
    if not reciprocal:
        for i in range(n):
            if not active[i]:
                continue
            na = 0.0
            for k in range(d):
                axis[k] = rng.standard_normal()
                na += axis[k] * axis[k]
            mag = kick_amplitude * (1.0 - rng.random()) / np.sqrt(na)
            for k in range(d):
                disp[i, k] = mag * axis[k]
    for i in range(n):
        if not active[i]:
            continue
        s = 0.0
        for k in range(d):
            x[i, k] += disp[i, k]
            s += x[i, k] * x[i, k]
        s = np.sqrt(s)
        for k in range(d):
            x[i, k] /= s


@njit(cache=True)
def _run(x, rng, radius, kick_amplitude, reciprocal, jitter, max_steps):
    n, d = x.shape
    mask = np.zeros((n, n), dtype=np.bool_)
    disp = np.empty((n, d))
    _fill_overlaps(x, 2.0 * radius, mask)
    steps = 0
    while steps < max_steps and mask.any():
        _kick_step(x, mask, rng, kick_amplitude, reciprocal, jitter, disp)
        _fill_overlaps(x, 2.0 * radius, mask)
        steps += 1
    return steps, mask


def random_sphere_points(n: int, d: int, rng) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def initial_state(cfg: RandOrgConfig, rng=None) -> ParticleState:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return ParticleState(random_sphere_points(cfg.N, cfg.D, rng), cfg.radius, rng)


def randorg_step(state: ParticleState, cfg: RandOrgConfig) -> ParticleState:
    """Kick every overlapping particle and reproject onto the sphere.

    Reciprocal mode kicks each overlapping pair once, in index order, with
    ``+d`` / ``-d`` along a jittered separation axis; otherwise each active
    particle gets one independent kick. Magnitudes are uniform in
    ``(0, kick_amplitude]``. Isolated particles are not touched.
    """
    x = state.positions.copy()
    disp = np.zeros_like(x)
    if state.overlaps.any():
        _kick_step(x, state.overlaps, state.rng, float(cfg.kick_amplitude), bool(cfg.reciprocal),
                   AXIS_JITTER, disp)
        overlaps = overlap_mask(x, state.radius)
    else:
        x = state.positions
        overlaps = state.overlaps
    return ParticleState(
        positions=x,
        radius=state.radius,
        rng=state.rng,
        step_index=state.step_index + 1,
        overlaps=overlaps,
        displacement=disp,
    )


def overlap_energy(positions, radius: float) -> float:
    """Sum over ordered pairs of ``(1 - d / (2 radius))**2`` for overlapping pairs."""
    if radius <= 0:
        return 0.0
    d = pdist(positions)
    gap = np.clip(1.0 - d / (2.0 * radius), 0.0, None)
    return float(2.0 * np.sum(gap * gap))


def overlap_energy_grad(positions, radius: float) -> np.ndarray:
    x = np.asarray(positions, dtype=np.float64)
    if radius <= 0:
        return np.zeros_like(x)
    s = 2.0 * radius
    diff = x[:, None, :] - x[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    over = (dist < s) & (dist > 0)
    # ordered sum counts each pair twice: dE/dx_i = sum_j 2 * (-2 / s) (1 - d/s) (x_i - x_j)/d
    w = np.where(over, -4.0 / s * (1.0 - dist / s) / np.where(over, dist, 1.0), 0.0)
    return np.einsum("ij,ijd->id", w, diff)


def gradient_step(state: ParticleState, cfg: RandOrgConfig, step_size: float) -> ParticleState:
    g = overlap_energy_grad(state.positions, state.radius)
    if np.any(g):
        y = state.positions - step_size * g
        new_x = y / np.linalg.norm(y, axis=1, keepdims=True)
    else:
        new_x = state.positions
    return dataclasses.replace(
        state,
        positions=new_x,
        step_index=state.step_index + 1,
        overlaps=overlap_mask(new_x, state.radius),
        displacement=None,
    )


def run_until_absorbed(cfg: RandOrgConfig, rng=None) -> dict:
    """Iterate kicks until no particle overlaps or ``max_steps`` is reached.

    Same trajectory as repeated :func:`randorg_step` calls from
    :func:`initial_state` with the same generator.
    """
    state = initial_state(cfg, rng)
    x = state.positions.copy()
    steps, mask = _run(x, state.rng, float(cfg.radius), float(cfg.kick_amplitude), bool(cfg.reciprocal),
                       AXIS_JITTER, int(cfg.max_steps))
    absorbed = not mask.any()
    return {
        "radius": cfg.radius,
        "seed": cfg.seed,
        "absorbed": absorbed,
        "steps_to_absorb": int(steps) if absorbed else None,
        "steps_run": int(steps),
        "final_active_fraction": float(mask.any(axis=1).mean()),
    }


def cell_seed(seed: int, radius_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(radius_index)])


def _run_cell(args):
    cfg, k = args
    return run_until_absorbed(cfg, np.random.default_rng(cell_seed(cfg.seed, k)))


def run_density_sweep(cfg_template: RandOrgConfig, radii, seeds, n_jobs: int = 1) -> list[dict]:
    """One absorption run per ``(radius, seed)`` cell, rows ordered by radius then seed.

    Each cell's generator depends only on ``(seed, radius index)``, so results
    are identical for any ``n_jobs``.
    """
    if not len(radii) or not len(seeds):
        raise ValidationError("density sweep needs at least one radius and one seed")
    jobs = [
        (dataclasses.replace(cfg_template, radius=float(r), seed=int(s)), k)
        for k, r in enumerate(radii)
        for s in seeds
    ]
    for cfg, _ in jobs:
        cfg.validate()
    if n_jobs == 1:
        return [_run_cell(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_cell, jobs))


def summarize_sweep(rows: list[dict], max_steps: int) -> dict[float, dict]:
    """Per-radius absorbed fraction and mean steps (censored runs count as ``max_steps``)."""
    out: dict[float, dict] = {}
    for row in rows:
        out.setdefault(row["radius"], []).append(row)
    table = {}
    for r, cell in sorted(out.items()):
        steps = [row["steps_to_absorb"] if row["absorbed"] else max_steps for row in cell]
        table[r] = {
            "absorbed_fraction": float(np.mean([row["absorbed"] for row in cell])),
            "mean_steps": float(np.mean(steps)),
            "mean_final_active_fraction": float(np.mean([row["final_active_fraction"] for row in cell])),
        }
    return table
