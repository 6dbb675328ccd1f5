"""Bayesian compartment-model fitting for DCE-MRI with spatial GMRF priors."""

from .diagnostics import FitSummary, summarize_fit
from .io import Dataset, read_dataset, write_dataset
from .kinetics import AifParams, ExtTofts, OneComp, TwoComp, model_ctc
from .phantom import PhantomConfig, generate_phantom
from .sampler import SampleStore, SamplerConfig, run_chain

__version__ = "0.1.0"

__all__ = [
    "AifParams",
    "Dataset",
    "ExtTofts",
    "FitSummary",
    "OneComp",
    "PhantomConfig",
    "SampleStore",
    "SamplerConfig",
    "TwoComp",
    "generate_phantom",
    "model_ctc",
    "read_dataset",
    "run_chain",
    "summarize_fit",
    "write_dataset",
]
