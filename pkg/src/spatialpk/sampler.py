"""Metropolis-within-Gibbs sampler for voxelwise and GMRF-regularised fits.

Per sweep, voxels are visited in a fresh random order and every log kinetic
parameter gets one random-walk Metropolis update. The noise precision and
(spatial mode) the four field precisions then get one conjugate Gibbs draw
each. Proposal scales adapt during burn-in only.

Voxel arguments to the public functions are positions in the masked-voxel
order (``state.problem.voxel_index`` maps them back to grid indices).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .io import Dataset
from .kinetics import (
    KIND_CODES,
    MODEL_KINDS,
    N_COMPONENTS,
    PARAM_COMPONENT,
    PARAM_NAMES,
    TWOCOMP,
    _component_curve,
)
from .model import (
    LOG_2PI,
    NoiseModel,
    SpatialPriorConfig,
    VoxelwisePriorConfig,
    elicit_noise_prior,
)

logger = logging.getLogger(__name__)

VOXELWISE = "voxelwise"
SPATIAL = "spatial"
PRIOR_MODES = (VOXELWISE, SPATIAL)

SD_MIN = 1e-4
SD_MAX = 10.0


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    model: str = TWOCOMP
    prior: str = SPATIAL
    burn_in: int = 5000
    iterations: int = 5000
    thin: int = 3
    target_acceptance: float = 0.2
    adapt_window: int = 50
    initial_sd: float = 0.2
    seed: int = 0
    voxelwise_prior: VoxelwisePriorConfig = field(default_factory=VoxelwisePriorConfig)
    spatial_prior: SpatialPriorConfig = field(default_factory=SpatialPriorConfig)
    # explicit noise prior; elicited from the data when None
    noise: NoiseModel | None = None
    expected_peak: float | None = None
    target_snr: float = 15.0
    progress_every: int = 500
    # test hook: drop the likelihood so the chain samples the prior
    use_likelihood: bool = True

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODEL_KINDS}")
        if self.prior not in PRIOR_MODES:
            raise ValueError(f"unknown prior {self.prior!r}; expected one of {PRIOR_MODES}")
        for name in ("burn_in", "iterations", "thin", "adapt_window", "progress_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.iterations // self.thin < 1:
            raise ValueError("configuration stores no draws (iterations < thin)")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if not self.initial_sd > 0:
            raise ValueError("initial_sd must be positive")
        if not self.target_snr > 0:
            raise ValueError("target_snr must be positive")
        if self.expected_peak is not None and not self.expected_peak > 0:
            raise ValueError("expected_peak must be positive")

    @property
    def n_stored(self) -> int:
        return self.iterations // self.thin

    def with_seed(self, seed: int) -> "SamplerConfig":
        return replace(self, seed=int(seed))


@dataclass
class Problem:
    """Arrays derived once from (dataset, config) and shared by every sweep."""

    kind: str
    prior: str
    y: np.ndarray            # masked voxels x T
    u: np.ndarray            # time since bolus onset
    cp: np.ndarray           # AIF on the grid
    amps: np.ndarray
    rates: np.ndarray
    voxel_index: np.ndarray  # masked position -> grid index
    nbr_ptr: np.ndarray      # CSR neighbour lists in masked positions
    nbr_idx: np.ndarray
    edges: np.ndarray        # neighbour pairs in masked positions
    mu: np.ndarray           # voxelwise prior means
    tau_prior: np.ndarray    # voxelwise prior precisions
    hyper_a: np.ndarray      # Gamma hyperprior shapes (spatial)
    hyper_b: np.ndarray      # Gamma hyperprior rates (spatial)
    noise: NoiseModel
    use_likelihood: bool
    nx: int = 1

    @property
    def n_voxels(self) -> int:
        return self.y.shape[0]

    @property
    def n_times(self) -> int:
        return self.y.shape[1]

    @property
    def param_names(self) -> tuple[str, ...]:
        return PARAM_NAMES[self.kind]

    @property
    def spatial(self) -> bool:
        return self.prior == SPATIAL


def build_problem(dataset: Dataset, config: SamplerConfig) -> Problem:
    lattice = dataset.lattice()
    if lattice.n_masked == 0:
        raise SamplerError("dataset mask is empty")
    voxel_index = lattice.masked_index
    y = np.ascontiguousarray(dataset.y[voxel_index], dtype=float)
    if not np.all(np.isfinite(y)):
        bad = voxel_index[np.flatnonzero(~np.all(np.isfinite(y), axis=1))[0]]
        raise SamplerError(f"non-finite observation at voxel {lattice.row_col(bad)}")

    pos = np.full(lattice.size, -1, dtype=np.int64)
    pos[voxel_index] = np.arange(voxel_index.size)
    nbr_ptr = np.zeros(voxel_index.size + 1, dtype=np.int64)
    nbr_idx = []
    for m, g in enumerate(voxel_index):
        nb = pos[lattice.neighbours(g)]
        nbr_idx.append(nb)
        nbr_ptr[m + 1] = nbr_ptr[m] + nb.size
    nbr_idx = np.concatenate(nbr_idx).astype(np.int64) if nbr_idx else np.zeros(0, np.int64)

    if config.noise is not None:
        noise = config.noise
    else:
        peak = config.expected_peak
        if peak is None:
            peak = float(np.median(np.max(y, axis=1)))
            if not peak > 0:
                raise SamplerError("cannot elicit noise prior: median curve peak is not positive")
        noise = elicit_noise_prior(voxel_index.size, peak, config.target_snr)

    mu, tau_prior = config.voxelwise_prior.arrays(config.model)
    hyper_a, hyper_b = config.spatial_prior.arrays(config.model)
    times = dataset.times
    aif = dataset.aif
    return Problem(
        kind=config.model,
        prior=config.prior,
        y=y,
        u=times - aif.t0,
        cp=np.asarray(dataset.aif_curve(), dtype=float),
        amps=aif.amplitudes(),
        rates=aif.rates(),
        voxel_index=voxel_index,
        nbr_ptr=nbr_ptr,
        nbr_idx=nbr_idx,
        edges=pos[lattice.edges] if lattice.n_edges else np.zeros((0, 2), np.int64),
        mu=mu,
        tau_prior=tau_prior,
        hyper_a=hyper_a,
        hyper_b=hyper_b,
        noise=noise,
        use_likelihood=config.use_likelihood,
        nx=dataset.nx,
    )


@dataclass
class ChainState:
    problem: Problem
    params: np.ndarray        # masked voxels x parameters, log scale
    tau_field: np.ndarray     # one precision per parameter field
    tau_eps: float
    sd: np.ndarray            # proposal standard deviations
    n_accept: np.ndarray      # counters since the last reset
    n_propose: np.ndarray
    comp: np.ndarray          # cached curve components, voxels x components x T
    ctc: np.ndarray           # cached model curves
    sse: np.ndarray           # cached residual sums of squares
    rng: np.random.Generator
    iteration: int = 0


def _refresh_cache(problem: Problem, params, comp, ctc, sse):
    code = KIND_CODES[problem.kind]
    _fill_cache(code, N_COMPONENTS[problem.kind], params, problem.amps, problem.rates,
                problem.u, problem.cp, problem.y, comp, ctc, sse)


@njit(cache=True, nogil=True)
def _fill_cache(code, n_comp, params, amps, rates, u, cp, y, comp, ctc, sse):
    for i in range(params.shape[0]):
        for c in range(n_comp):
            _component_curve(code, c, params[i], amps, rates, u, cp, comp[i, c])
        s = 0.0
        for j in range(u.shape[0]):
            total = 0.0
            for c in range(n_comp):
                total += comp[i, c, j]
            ctc[i, j] = total
            r = y[i, j] - total
            s += r * r
        sse[i] = s


def _initial_params(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind == TWOCOMP:
        v1 = rng.uniform(0.0, 1.0, n)
        v2 = 1.0 - v1
        k1 = rng.uniform(0.1, 0.3, n)
        k2 = rng.uniform(1.75, 5.25, n)
        return np.column_stack([np.log(k1), np.log(k2), np.log(k1 * v1), np.log(k2 * v2)])
    k = rng.uniform(0.1, 5.25, n)
    v = rng.uniform(0.0, 1.0, n)
    cols = [np.log(k), np.log(k * v)]
    if kind != "1comp":
        vp = rng.uniform(0.0, 0.1, n)
        cols.append(np.log(vp) - np.log1p(-vp))
    return np.column_stack(cols)


def init_state(dataset: Dataset, config: SamplerConfig, seed: int | None = None) -> ChainState:
    """Random starting point; bit-identical for identical inputs and seed."""
    problem = build_problem(dataset, config)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n, npar, ncomp = problem.n_voxels, len(problem.param_names), N_COMPONENTS[problem.kind]
    params = np.ascontiguousarray(_initial_params(problem.kind, n, rng))
    if problem.spatial:
        tau_field = problem.hyper_a / problem.hyper_b
    else:
        tau_field = problem.tau_prior.copy()
    comp = np.zeros((n, ncomp, problem.n_times))
    ctc = np.zeros((n, problem.n_times))
    sse = np.zeros(n)
    _refresh_cache(problem, params, comp, ctc, sse)
    _check_finite(problem, sse)
    return ChainState(
        problem=problem,
        params=params,
        tau_field=np.asarray(tau_field, dtype=float),
        tau_eps=problem.noise.mean_precision(),
        sd=np.full((n, npar), float(config.initial_sd)),
        n_accept=np.zeros((n, npar), dtype=np.int64),
        n_propose=np.zeros((n, npar), dtype=np.int64),
        comp=comp,
        ctc=ctc,
        sse=sse,
        rng=rng,
    )


def _check_finite(problem: Problem, sse):
    bad = np.flatnonzero(~np.isfinite(sse))
    if bad.size:
        r, c = divmod(int(problem.voxel_index[bad[0]]), problem.nx)
        raise SamplerError(f"non-finite likelihood at voxel row {r}, col {c}")


@njit(cache=True, nogil=True)
def _log_ratio(i, p, new, code, n_comp, param_comp, params, comp, sse, y, amps, rates,
               u, cp, spatial, mu, tau_prior, tau_field, nbr_ptr, nbr_idx, tau_eps,
               use_lik, buf):
    """Log acceptance ratio for moving params[i, p] to ``new``.

    Leaves the proposed component curve in ``buf`` and returns
    (log_ratio, new_sse). ``params`` is restored before returning.
    """
    old = params[i, p]
    if spatial:
        s = 0.0
        for k in range(nbr_ptr[i], nbr_ptr[i + 1]):
            xj = params[nbr_idx[k], p]
            s += (new - xj) ** 2 - (old - xj) ** 2
        log_ratio = -0.5 * tau_field[p] * s
    else:
        log_ratio = -0.5 * tau_prior[p] * ((new - mu[p]) ** 2 - (old - mu[p]) ** 2)

    c = param_comp[p]
    params[i, p] = new
    _component_curve(code, c, params[i], amps, rates, u, cp, buf)
    params[i, p] = old
    new_sse = 0.0
    for j in range(u.shape[0]):
        total = 0.0
        for cc in range(n_comp):
            total += buf[j] if cc == c else comp[i, cc, j]
        r = y[i, j] - total
        new_sse += r * r
    if use_lik:
        log_ratio += -0.5 * tau_eps * (new_sse - sse[i])
    return log_ratio, new_sse


@njit(cache=True, nogil=True)
def _mh_step(i, p, z, log_u, code, n_comp, param_comp, params, comp, ctc, sse, y,
             amps, rates, u, cp, spatial, mu, tau_prior, tau_field, nbr_ptr, nbr_idx,
             tau_eps, sd, use_lik, buf):
    new = params[i, p] + sd[i, p] * z
    # 2comp keeps the slow compartment first: theta1 < theta2
    if code == 1:
        if p == 0 and new >= params[i, 1]:
            return False
        if p == 1 and new <= params[i, 0]:
            return False
    log_ratio, new_sse = _log_ratio(i, p, new, code, n_comp, param_comp, params, comp,
                                    sse, y, amps, rates, u, cp, spatial, mu, tau_prior,
                                    tau_field, nbr_ptr, nbr_idx, tau_eps, use_lik, buf)
    if not log_u < log_ratio:
        return False
    c = param_comp[p]
    params[i, p] = new
    for j in range(u.shape[0]):
        comp[i, c, j] = buf[j]
        total = 0.0
        for cc in range(n_comp):
            total += comp[i, cc, j]
        ctc[i, j] = total
    sse[i] = new_sse
    return True


@njit(cache=True, nogil=True)
def _sweep_kernel(order, z, log_u, code, n_comp, param_comp, params, comp, ctc, sse, y,
                  amps, rates, u, cp, spatial, mu, tau_prior, tau_field, nbr_ptr, nbr_idx,
                  tau_eps, sd, use_lik, n_accept, n_propose):
    buf = np.empty(u.shape[0])
    npar = params.shape[1]
    for i in order:
        for p in range(npar):
            ok = _mh_step(i, p, z[i, p], log_u[i, p], code, n_comp, param_comp, params,
                          comp, ctc, sse, y, amps, rates, u, cp, spatial, mu, tau_prior,
                          tau_field, nbr_ptr, nbr_idx, tau_eps, sd, use_lik, buf)
            n_propose[i, p] += 1
            if ok:
                n_accept[i, p] += 1


def _kernel_args(state: ChainState):
    pr = state.problem
    return (KIND_CODES[pr.kind], N_COMPONENTS[pr.kind], PARAM_COMPONENT[pr.kind],
            state.params, state.comp, state.ctc, state.sse, pr.y, pr.amps, pr.rates,
            pr.u, pr.cp, pr.spatial, pr.mu, pr.tau_prior, state.tau_field,
            pr.nbr_ptr, pr.nbr_idx, state.tau_eps, state.sd, pr.use_likelihood)


def _param_position(state: ChainState, which) -> int:
    if isinstance(which, str):
        return state.problem.param_names.index(which)
    return int(which)


def mh_update_logparam(state: ChainState, i: int, which) -> bool:
    """One random-walk Metropolis update of a single log-parameter of voxel ``i``."""
    p = _param_position(state, which)
    if not 0 <= i < state.problem.n_voxels:
        raise IndexError(f"voxel position {i} outside the mask")
    if not state.sd[i, p] > 0:
        raise ValueError("proposal standard deviation must be positive")
    z = state.rng.standard_normal()
    log_u = math.log(state.rng.random())
    buf = np.empty(state.problem.n_times)
    ok = _mh_step(i, p, z, log_u, *_kernel_args(state), buf)
    state.n_propose[i, p] += 1
    state.n_accept[i, p] += int(ok)
    return bool(ok)


def mh_log_ratio(state: ChainState, i: int, which, value: float) -> float:
    """Log acceptance ratio of moving one log-parameter to ``value`` (no state change).

    Ignores the 2comp ordering constraint, which is enforced by rejection.
    """
    p = _param_position(state, which)
    pr = state.problem
    buf = np.empty(pr.n_times)
    args = _kernel_args(state)
    # _kernel_args order: code, n_comp, param_comp, params, comp, ctc, sse, y, ...
    log_ratio, _ = _log_ratio(i, p, float(value), *args[:5], *args[6:19], args[20], buf)
    return float(log_ratio)


def tau_eps_conditional(state: ChainState) -> tuple[float, float]:
    """(shape, rate) of the Gamma full conditional of the noise precision."""
    pr = state.problem
    shape = pr.noise.a + 0.5 * pr.n_voxels * pr.n_times
    rate = pr.noise.b + 0.5 * float(np.sum(state.sse))
    return shape, rate


def gibbs_update_tau_eps(state: ChainState) -> float:
    """Draw the noise precision from its Gamma full conditional."""
    shape, rate = tau_eps_conditional(state)
    state.tau_eps = float(state.rng.gamma(shape, 1.0 / rate))
    return state.tau_eps


def field_sumsq(state: ChainState, p: int) -> float:
    edges = state.problem.edges
    if edges.shape[0] == 0:
        return 0.0
    d = state.params[edges[:, 0], p] - state.params[edges[:, 1], p]
    return float(np.dot(d, d))


def tau_field_conditional(state: ChainState, which) -> tuple[float, float]:
    """(shape, rate) of the Gamma full conditional Ga(a + |edges|/2, b + sumsq/2)."""
    pr = state.problem
    if not pr.spatial:
        raise SamplerError("field precisions are fixed in voxelwise mode")
    p = _param_position(state, which)
    shape = pr.hyper_a[p] + 0.5 * pr.edges.shape[0]
    rate = pr.hyper_b[p] + 0.5 * field_sumsq(state, p)
    return float(shape), float(rate)


def gibbs_update_tau_field(state: ChainState, which) -> float:
    """Draw one GMRF field precision from its Gamma full conditional."""
    p = _param_position(state, which)
    shape, rate = tau_field_conditional(state, p)
    state.tau_field[p] = state.rng.gamma(shape, 1.0 / rate)
    return float(state.tau_field[p])


def adapt_proposal(sd, observed_acceptance, target: float = 0.2, eta: float = 1.0):
    """Multiplicative proposal-scale update, clamped to [1e-4, 10]."""
    sd = np.asarray(sd, dtype=float)
    if np.any(sd <= 0):
        raise ValueError("proposal standard deviation must be positive")
    new = sd * np.exp(eta * (np.asarray(observed_acceptance) - target))
    new = np.clip(new, SD_MIN, SD_MAX)
    return float(new) if new.ndim == 0 else new


def sweep(state: ChainState) -> ChainState:
    """Visit all voxels in random order, then update the precisions."""
    pr = state.problem
    rng = state.rng
    order = rng.permutation(pr.n_voxels)
    npar = len(pr.param_names)
    z = rng.standard_normal((pr.n_voxels, npar))
    log_u = np.log(rng.random((pr.n_voxels, npar)))
    _sweep_kernel(order, z, log_u, *_kernel_args(state), state.n_accept, state.n_propose)
    gibbs_update_tau_eps(state)
    if pr.spatial:
        for p in range(npar):
            gibbs_update_tau_field(state, p)
    state.iteration += 1
    return state


@dataclass
class SampleStore:
    """Thinned draws of every parameter plus per-voxel deviances."""

    kind: str
    prior: str
    voxel_index: np.ndarray   # grid index of each stored voxel
    n_times: int
    draws: np.ndarray         # draws x voxels x parameters (log scale)
    tau_eps: np.ndarray       # draws
    tau_field: np.ndarray     # draws x parameters
    deviance: np.ndarray      # draws x voxels
    acceptance: np.ndarray    # voxels x parameters, post burn-in
    proposal_sd: np.ndarray   # voxels x parameters, frozen values
    seeds: tuple[int, ...] = ()

    @property
    def param_names(self) -> tuple[str, ...]:
        return PARAM_NAMES[self.kind]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]


def deviance_from_sse(sse, tau_eps, n_times: int):
    return n_times * (LOG_2PI - np.log(tau_eps)) + tau_eps * np.asarray(sse)


def run_chain(dataset: Dataset, config: SamplerConfig) -> SampleStore:
    """Burn-in with adaptation, then a frozen-proposal run storing every thin-th state."""
    state = init_state(dataset, config)
    pr = state.problem
    window = config.adapt_window
    for it in range(1, config.burn_in + 1):
        sweep(state)
        if it % window == 0:
            rate = state.n_accept / state.n_propose
            state.sd = adapt_proposal(state.sd, rate, config.target_acceptance)
            state.n_accept[:] = 0
            state.n_propose[:] = 0
        _report(state, config, it, "burn-in")
    state.n_accept[:] = 0
    state.n_propose[:] = 0

    n_store = config.n_stored
    npar = len(pr.param_names)
    draws = np.empty((n_store, pr.n_voxels, npar))
    tau_eps = np.empty(n_store)
    tau_field = np.empty((n_store, npar))
    deviance = np.empty((n_store, pr.n_voxels))
    k = 0
    for it in range(1, config.iterations + 1):
        sweep(state)
        if it % config.thin == 0 and k < n_store:
            draws[k] = state.params
            tau_eps[k] = state.tau_eps
            tau_field[k] = state.tau_field
            deviance[k] = deviance_from_sse(state.sse, state.tau_eps, pr.n_times)
            if not np.all(np.isfinite(deviance[k])):
                _check_finite(pr, deviance[k])
            k += 1
        _report(state, config, config.burn_in + it, "sampling")

    return SampleStore(
        kind=pr.kind,
        prior=pr.prior,
        voxel_index=pr.voxel_index.copy(),
        n_times=pr.n_times,
        draws=draws,
        tau_eps=tau_eps,
        tau_field=tau_field,
        deviance=deviance,
        acceptance=state.n_accept / np.maximum(state.n_propose, 1),
        proposal_sd=state.sd.copy(),
        seeds=(config.seed,),
    )


def _report(state: ChainState, config: SamplerConfig, it: int, phase: str):
    if it % config.progress_every:
        return
    rate = state.n_accept.sum() / max(state.n_propose.sum(), 1)
    logger.info("%s iteration %d: tau_eps=%.4g mean acceptance=%.3f",
                phase, it, state.tau_eps, rate)


def merge_stores(stores) -> SampleStore:
    """Pool draws from independent chains over the same voxels."""
    stores = list(stores)
    first = stores[0]
    for s in stores[1:]:
        if s.kind != first.kind or not np.array_equal(s.voxel_index, first.voxel_index):
            raise ValueError("cannot merge chains fitted to different problems")
    if len(stores) == 1:
        return first
    return SampleStore(
        kind=first.kind,
        prior=first.prior,
        voxel_index=first.voxel_index,
        n_times=first.n_times,
        draws=np.concatenate([s.draws for s in stores]),
        tau_eps=np.concatenate([s.tau_eps for s in stores]),
        tau_field=np.concatenate([s.tau_field for s in stores]),
        deviance=np.concatenate([s.deviance for s in stores]),
        acceptance=np.mean([s.acceptance for s in stores], axis=0),
        proposal_sd=np.mean([s.proposal_sd for s in stores], axis=0),
        seeds=tuple(x for s in stores for x in s.seeds),
    )
