"""Posterior summaries and fit measures: medians, intervals, SSE, deviance, pD, DIC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import Dataset
from .kinetics import AifParams, KineticParams, model_ctc, params_from_array
from .model import log_likelihood_voxel
from .sampler import SampleStore

INTERVAL = (0.10, 0.90)

# natural-scale map name for each log-parameter column
NATURAL_NAMES = {
    "theta1": "k_ep1",
    "theta2": "k_ep2",
    "gamma1": "K_trans1",
    "gamma2": "K_trans2",
    "logit_vp": "v_p",
}


def to_natural(name: str, values):
    values = np.asarray(values, dtype=float)
    if name == "logit_vp":
        return 1.0 / (1.0 + np.exp(-values))
    return np.exp(values)


@dataclass
class FitSummary:
    """Per-voxel summaries over the masked voxels of one fit.

    ``maps`` holds natural-scale posterior medians (k_ep1, K_trans1, ...),
    derived volumes, and SSE/pD/DIC; ``lower``/``upper`` hold the 10% and
    90% quantiles of each kinetic parameter.
    """

    kind: str
    prior: str
    nx: int
    ny: int
    voxel_index: np.ndarray
    param_names: tuple[str, ...]
    median_log: np.ndarray
    maps: dict[str, np.ndarray]
    lower: dict[str, np.ndarray]
    upper: dict[str, np.ndarray]
    acceptance: np.ndarray
    median_deviance: np.ndarray
    tau_eps_median: float
    pd_total: float
    dic_total: float

    @property
    def sse(self) -> np.ndarray:
        return self.maps["SSE"]

    @property
    def pd(self) -> np.ndarray:
        return self.maps["pD"]

    @property
    def dic(self) -> np.ndarray:
        return self.maps["DIC"]

    def grid(self, name: str) -> np.ndarray:
        """Map ``name`` on the full ny x nx grid, NaN outside the mask."""
        out = np.full(self.nx * self.ny, np.nan)
        if name in self.maps:
            out[self.voxel_index] = self.maps[name]
        elif name.endswith(".q10"):
            out[self.voxel_index] = self.lower[name[:-4]]
        elif name.endswith(".q90"):
            out[self.voxel_index] = self.upper[name[:-4]]
        else:
            raise KeyError(name)
        return out.reshape(self.ny, self.nx)


def sse_voxel(params: KineticParams, y, times, aif: AifParams) -> float:
    resid = np.asarray(y, dtype=float) - model_ctc(params, aif, times)
    return float(np.dot(resid, resid))


def deviance_voxel(params: KineticParams, tau_eps: float, y, times, aif: AifParams) -> float:
    """-2 x log-likelihood of one voxel's curve."""
    return -2.0 * log_likelihood_voxel(y, model_ctc(params, aif, times), tau_eps)


def pd_voxel(store: SampleStore, i: int, y, times, aif: AifParams) -> float:
    """Median deviance minus deviance at the componentwise posterior median.

    ``i`` is the voxel's position in the store. Negative values flag a
    posterior median that sits between modes.
    """
    med = params_from_array(store.kind, np.median(store.draws[:, i, :], axis=0))
    plug_in = deviance_voxel(med, float(np.median(store.tau_eps)), y, times, aif)
    return float(np.median(store.deviance[:, i])) - plug_in


def _plug_in(store: SampleStore, dataset: Dataset):
    med = np.median(store.draws, axis=0)
    tau = float(np.median(store.tau_eps))
    sse = np.empty(med.shape[0])
    dev = np.empty(med.shape[0])
    for k, g in enumerate(store.voxel_index):
        p = params_from_array(store.kind, med[k])
        y = dataset.y[g]
        sse[k] = sse_voxel(p, y, dataset.times, dataset.aif)
        dev[k] = deviance_voxel(p, tau, y, dataset.times, dataset.aif)
    return med, tau, sse, dev


def dic(store: SampleStore, dataset: Dataset):
    """(global DIC, per-voxel DIC) with DIC = median deviance + pD."""
    _, _, _, dev_at_median = _plug_in(store, dataset)
    med_dev = np.median(store.deviance, axis=0)
    per_voxel = med_dev + (med_dev - dev_at_median)
    return float(per_voxel.sum()), per_voxel


def summarize_fit(store: SampleStore, dataset: Dataset) -> FitSummary:
    if store.n_draws < 1:
        raise ValueError("sample store is empty")
    med, tau, sse, dev_at_median = _plug_in(store, dataset)
    lo_log, hi_log = np.quantile(store.draws, INTERVAL, axis=0)
    maps, lower, upper = {}, {}, {}
    for p, name in enumerate(store.param_names):
        nat = NATURAL_NAMES[name]
        maps[nat] = to_natural(name, med[:, p])
        lower[nat] = to_natural(name, lo_log[:, p])
        upper[nat] = to_natural(name, hi_log[:, p])

    if "K_trans1" in maps:
        maps["v_t1"] = maps["K_trans1"] / maps["k_ep1"]
    if "K_trans2" in maps:
        maps["v_t2"] = maps["K_trans2"] / maps["k_ep2"]

    med_dev = np.median(store.deviance, axis=0)
    pd = med_dev - dev_at_median
    maps["SSE"] = sse
    maps["pD"] = pd
    maps["DIC"] = med_dev + pd
    maps["acceptance"] = store.acceptance.mean(axis=1)
    return FitSummary(
        kind=store.kind,
        prior=store.prior,
        nx=dataset.nx,
        ny=dataset.ny,
        voxel_index=store.voxel_index,
        param_names=store.param_names,
        median_log=med,
        maps=maps,
        lower=lower,
        upper=upper,
        acceptance=store.acceptance,
        median_deviance=med_dev,
        tau_eps_median=tau,
        pd_total=float(pd.sum()),
        dic_total=float((med_dev + pd).sum()),
    )
