"""Block-structured 25 x 25 simulation phantom with known kinetic parameters.

Layout (rows/cols from 0, top-left origin, for the default 25 x 25 grid):

    A  rows 0-7,   cols 0-11   2Comp, k_ep = (0.2, 4), v = (0.5, 0.5)
    B  rows 0-11,  cols 12-24  2Comp, same parameters as A
    C  rows 8-24,  cols 0-11   2Comp, k_ep1 rising radially 0.2 -> 0.5
    D  rows 12-17, cols 12-24  1Comp slow: k_ep1 = 0.2, v_t1 = 1, v_t2 = 0
    E  rows 18-24, cols 12-24  1Comp fast: k_ep2 = 4, v_t2 = 1, v_t1 = 0

Other grid sizes scale the block boundaries proportionally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .io import Dataset
from .kinetics import AifParams, TwoComp, model_ctc

BLOCKS = ("A", "B", "C", "D", "E")
TWOCOMP_BLOCKS = ("A", "B", "C")
FIXED_TWOCOMP_BLOCKS = ("A", "B")
ONECOMP_BLOCKS = ("D", "E")

KEP_SLOW = 0.2
KEP_FAST = 4.0
KEP_RAMP_EDGE = 0.5


@dataclass(frozen=True)
class PhantomConfig:
    nx: int = 25
    ny: int = 25
    n_times: int = 40
    dt: float = 0.15
    aif: AifParams = field(default_factory=lambda: AifParams(dose=0.2))
    sigma: float = 0.05
    jitter_lo: float = 0.8
    jitter_hi: float = 1.2
    seed: int = 0

    def __post_init__(self):
        if self.nx < 5 or self.ny < 5:
            raise ValueError("phantom needs at least a 5 x 5 grid")
        if self.n_times < 2 or not self.dt > 0:
            raise ValueError("phantom needs n_times >= 2 and dt > 0")
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")
        if not 0 < self.jitter_lo <= self.jitter_hi:
            raise ValueError("jitter bounds must satisfy 0 < lo <= hi")

    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.n_times + 1)


@dataclass
class GroundTruth:
    """Per-voxel true parameters (grid order) and block labels."""

    nx: int
    ny: int
    k_ep1: np.ndarray
    k_ep2: np.ndarray
    K_trans1: np.ndarray
    K_trans2: np.ndarray
    block: np.ndarray

    @property
    def v_t1(self) -> np.ndarray:
        return self.K_trans1 / self.k_ep1

    @property
    def v_t2(self) -> np.ndarray:
        return self.K_trans2 / self.k_ep2

    def quantity(self, name: str) -> np.ndarray:
        return getattr(self, name)


QUANTITIES = ("k_ep1", "k_ep2", "K_trans1", "K_trans2", "v_t1", "v_t2")


def block_labels(nx: int, ny: int) -> np.ndarray:
    """Block letter for every voxel, row-major."""
    r_a = round(8 * ny / 25)      # end of block A
    r_ab = round(12 * ny / 25)    # end of block B
    r_d = round(18 * ny / 25)     # end of block D
    c_split = round(12 * nx / 25)
    labels = np.empty((ny, nx), dtype="<U1")
    rows = np.arange(ny)[:, None]
    cols = np.arange(nx)[None, :]
    left = cols < c_split
    labels[:] = "E"
    labels[np.broadcast_to(left & (rows < r_a), labels.shape)] = "A"
    labels[np.broadcast_to(left & (rows >= r_a), labels.shape)] = "C"
    labels[np.broadcast_to(~left & (rows < r_ab), labels.shape)] = "B"
    labels[np.broadcast_to(~left & (rows >= r_ab) & (rows < r_d), labels.shape)] = "D"
    return labels.ravel()


def _ramp(labels: np.ndarray, nx: int, ny: int) -> np.ndarray:
    """k_ep1 in block C: linear in distance from the block centre, 0.5 at the bottom-left corner."""
    grid = labels.reshape(ny, nx)
    rr, cc = np.nonzero(grid == "C")
    centre_r, centre_c = rr.mean(), cc.mean()
    corner_r, corner_c = rr.max(), cc.min()
    reach = np.hypot(corner_r - centre_r, corner_c - centre_c)
    dist = np.hypot(rr - centre_r, cc - centre_c)
    frac = np.clip(dist / reach, 0.0, 1.0)
    out = np.full(nx * ny, np.nan)
    out[rr * nx + cc] = KEP_SLOW + (KEP_RAMP_EDGE - KEP_SLOW) * frac
    return out


def base_parameters(nx: int = 25, ny: int = 25) -> GroundTruth:
    """Noise-free, jitter-free block parameters."""
    labels = block_labels(nx, ny)
    n = nx * ny
    k1 = np.full(n, KEP_SLOW)
    k2 = np.full(n, KEP_FAST)
    v1 = np.full(n, 0.5)
    v2 = np.full(n, 0.5)
    ramp = _ramp(labels, nx, ny)
    in_c = labels == "C"
    k1[in_c] = ramp[in_c]
    v1[labels == "D"], v2[labels == "D"] = 1.0, 0.0
    v1[labels == "E"], v2[labels == "E"] = 0.0, 1.0
    return GroundTruth(nx, ny, k1, k2, k1 * v1, k2 * v2, labels)


def generate_phantom(config: PhantomConfig = PhantomConfig(), jitter: bool = True):
    """Simulate the phantom; returns (Dataset, GroundTruth). Deterministic per seed."""
    rng = np.random.default_rng(config.seed)
    base = base_parameters(config.nx, config.ny)
    n = config.nx * config.ny
    if jitter:
        factors = rng.uniform(config.jitter_lo, config.jitter_hi, size=(4, n))
    else:
        factors = np.ones((4, n))
    truth = GroundTruth(
        config.nx, config.ny,
        k_ep1=base.k_ep1 * factors[0],
        k_ep2=base.k_ep2 * factors[1],
        K_trans1=base.K_trans1 * factors[2],
        K_trans2=base.K_trans2 * factors[3],
        block=base.block,
    )
    times = config.times()
    y = np.empty((n, times.size))
    with np.errstate(divide="ignore"):
        logs = [np.log(truth.k_ep1), np.log(truth.k_ep2),
                np.log(truth.K_trans1), np.log(truth.K_trans2)]
    for i in range(n):
        # log(0) = -inf maps to an exactly zero compartment
        y[i] = model_ctc(TwoComp(logs[0][i], logs[1][i], logs[2][i], logs[3][i]),
                         config.aif, times)
    if config.sigma > 0:
        y = y + rng.normal(0.0, config.sigma, size=y.shape)
    dataset = Dataset(nx=config.nx, ny=config.ny, mask=np.ones(n, dtype=bool),
                      times=times, aif=config.aif, y=y)
    return dataset, truth
