"""Spectral sampling of the space-time driving noise on a periodic lattice.

The noise is white in time and has spatial covariance ``|x - y|^(-beta)``
with spectral density ``c |xi|^(beta-k)``.  On a torus of side L sampled at M
points per axis the field is synthesized by filtering lattice white noise in
frequency space: each discrete frequency cell carries the spectral mass of
its cell, with the singular zero cell integrated exactly.  The synthesized
slice is a real lattice field whose covariance is exactly the discrete
spectral sum returned by :func:`lattice_covariance`.

Random streams are counter-based: a Philox generator keyed by the master
seed, with the (step, replica) pair written into the counter block, so any
slice of any replica is reproducible in isolation and independent of
scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .kernels import NoiseParams, riesz_fourier_constant

__all__ = [
    "TorusGrid",
    "NoiseSlice",
    "NoiseSampler",
    "spectral_amplitudes",
    "sample_noise_increment",
    "lattice_covariance",
    "zero_cell_mass",
]


@dataclass(frozen=True)
class TorusGrid:
    """Periodic space-time lattice: k axes of length L at M points each, step dt."""

    k: int
    length: float
    points: int
    dt: float

    def __post_init__(self):
        if not (isinstance(self.k, (int, np.integer)) and self.k >= 1):
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")
        if not (isinstance(self.points, (int, np.integer)) and self.points >= 4
                and self.points % 2 == 0):
            raise ValueError(f"points must be an even integer >= 4, got {self.points!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def spacing(self) -> float:
        return self.length / self.points

    @property
    def shape(self) -> tuple:
        return (self.points,) * self.k

    def site_count(self) -> int:
        return self.points**self.k

    def axis_coordinates(self) -> np.ndarray:
        return np.arange(self.points) * self.spacing

    def frequency_axes(self) -> list:
        """Per-axis DFT frequencies m/L (Nyquist counted once, negative)."""
        return [np.fft.fftfreq(self.points, d=self.spacing) for _ in range(self.k)]

    def frequency_norms(self) -> np.ndarray:
        """|xi| on the full (M, ..., M) frequency lattice."""
        axes = self.frequency_axes()
        grids = np.meshgrid(*axes, indexing="ij")
        return np.sqrt(sum(g * g for g in grids))


@dataclass(frozen=True)
class NoiseSlice:
    """One white-in-time increment, scaled to unit time density.

    ``values`` has shape (d, M, ..., M); multiplying by sqrt(dt) gives the
    actual increment of the noise over one step.  ``seed_path`` records the
    (replica, step) pair that generated it.
    """

    grid: TorusGrid
    values: np.ndarray
    seed_path: tuple


@lru_cache(maxsize=None)
def _box_direction_integral(k: int, beta: float) -> float:
    """``int_{[-1,1]^(k-1)} (1 + |u|^2)^((beta-k)/2) du`` by Gauss-Legendre."""
    if k == 1:
        return 1.0
    nodes, weights = leggauss(48)
    if k == 2:
        vals = (1.0 + nodes**2) ** ((beta - k) / 2.0)
        return float(weights @ vals)
    if k == 3:
        uu, vv = np.meshgrid(nodes, nodes, indexing="ij")
        vals = (1.0 + uu**2 + vv**2) ** ((beta - k) / 2.0)
        return float(weights @ vals @ weights)
    raise NotImplementedError(f"lattice noise supports k <= 3, got k={k}")


def zero_cell_mass(grid: TorusGrid, params: NoiseParams) -> float:
    """Exact spectral mass of the frequency cell around 0 (finite since beta < k)."""
    a = 1.0 / (2.0 * grid.length)
    k, beta = params.k, params.beta
    c = riesz_fourier_constant(params)
    if k == 1:
        box = 2.0 * a**beta / beta
    else:
        box = (2.0 * k / beta) * a**beta * _box_direction_integral(k, beta)
    return c * box


def spectral_amplitudes(grid: TorusGrid, params: NoiseParams) -> np.ndarray:
    """Per-frequency noise amplitude: sqrt of cell spectral mass over cell volume.

    Equals ``sqrt(c |xi|^(beta-k))`` away from the origin; the zero mode gets
    the exact cell-averaged mass, which keeps the long-range part of the
    covariance without infinite variance.  Deterministic in its inputs.
    """
    if params.k != grid.k:
        raise ValueError(f"grid dimension {grid.k} != noise dimension {params.k}")
    norms = grid.frequency_norms()
    c = riesz_fourier_constant(params)
    with np.errstate(divide="ignore"):
        amp_sq = c * norms ** (params.beta - params.k)
    cell_volume = grid.length ** (-params.k)
    amp_sq[(0,) * params.k] = zero_cell_mass(grid, params) / cell_volume
    return np.sqrt(amp_sq)


def lattice_covariance(grid: TorusGrid, params: NoiseParams, lags) -> np.ndarray:
    """Exact covariance of sampled slices at integer lattice lags.

    ``lags`` is an (n, k) array of lattice index offsets.  The value is the
    discrete spectral sum ``sum_m mu(C_m) cos(2 pi m . lag / M)``, which is
    the covariance realized by :class:`NoiseSampler` by construction.
    """
    lags = np.atleast_2d(np.asarray(lags, dtype=float))
    amp = spectral_amplitudes(grid, params)
    mass = amp**2 * grid.length ** (-params.k)
    axes = [np.fft.fftfreq(grid.points) for _ in range(grid.k)]
    grids = np.meshgrid(*axes, indexing="ij")
    out = np.empty(lags.shape[0])
    for i, lag in enumerate(lags):
        phase = sum(g * (2.0 * math.pi * l) for g, l in zip(grids, lag))
        out[i] = float(np.sum(mass * np.cos(phase)))
    return out


class NoiseSampler:
    """Counter-based sampler of noise slices for one (grid, params, seed) triple.

    Each (replica, step) pair owns an independent Philox stream; draws inside
    a stream are laid out channel-major over the lattice.  Instances hold
    only read-only filter tables plus a scratch bit generator, so separate
    instances may run concurrently; a single instance is not thread-safe.
    """

    def __init__(self, grid: TorusGrid, params: NoiseParams, master_seed: int):
        self.grid = grid
        self.params = params
        self.master_seed = int(master_seed)
        amp = spectral_amplitudes(grid, params)
        half = grid.points // 2 + 1
        sl = (slice(None),) * (grid.k - 1) + (slice(0, half),)
        self._filter = amp[sl] * grid.spacing ** (-grid.k / 2.0)
        key = np.random.SeedSequence(self.master_seed).generate_state(2, np.uint64)
        self._bitgen = np.random.Philox(key=key)
        self._gen = np.random.Generator(self._bitgen)
        self._state_template = self._bitgen.state

    def _rewind(self, replica: int, step: int):
        st = self._state_template
        st["state"]["counter"][:] = (0, step, replica, 0)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bitgen.state = st

    def _white(self, replica: int, step: int) -> np.ndarray:
        self._rewind(replica, step)
        return self._gen.standard_normal((self.params.d,) + self.grid.shape)

    def sample(self, replica: int, step: int) -> NoiseSlice:
        """Draw the unit-density slice for this (replica, step)."""
        white = self._white(replica, step)
        values = self._filter_white(white)
        return NoiseSlice(grid=self.grid, values=values, seed_path=(replica, step))

    def _filter_white(self, white: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.grid.k, 0))
        spectrum = np.fft.rfftn(white, axes=axes)
        spectrum *= self._filter
        return np.fft.irfftn(spectrum, s=self.grid.shape, axes=axes)

    @property
    def spectral_filter(self) -> np.ndarray:
        """Frequency response applied to lattice white noise (rfft layout)."""
        return self._filter

    def white_batch(self, replicas, step: int) -> np.ndarray:
        """Raw white-noise block, channel-first (d, R, M, ..., M)."""
        replicas = list(replicas)
        white = np.empty((self.params.d, len(replicas)) + self.grid.shape)
        for lane, replica in enumerate(replicas):
            white[:, lane] = self._white(replica, step)
        return white

    def sample_batch(self, replicas, step: int, channel_first: bool = False) -> np.ndarray:
        """Slices for several replicas at one step.

        Shape (R, d, M, ..., M), or (d, R, M, ..., M) with ``channel_first``
        (the layout the solver steps in).  Lane r is bit-identical to
        ``sample(replicas[r], step).values``.
        """
        replicas = list(replicas)
        if channel_first:
            white = self.white_batch(replicas, step)
        else:
            white = np.empty((len(replicas), self.params.d) + self.grid.shape)
            for lane, replica in enumerate(replicas):
                white[lane] = self._white(replica, step)
        return self._filter_white(white)


def sample_noise_increment(grid: TorusGrid, params: NoiseParams, seed_path,
                           master_seed: int = 0) -> NoiseSlice:
    """One-shot convenience wrapper around :class:`NoiseSampler`.

    ``seed_path`` is the (replica, step) pair.  Repeated calls with the same
    arguments return bit-identical slices.
    """
    replica, step = seed_path
    return NoiseSampler(grid, params, master_seed).sample(int(replica), int(step))
