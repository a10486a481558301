"""Few-step generative sampler benchmark on synthetic data."""

import json

try:
    from . import _nfebench as _core
except ImportError:
    import _nfebench as _core

from_core = (
    "Error",
    "ConfigError",
    "dataset_kinds",
    "sweep_methods",
    "default_nfe_list",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "frechet_distance",
    "optimal_coupling",
    "cell_seed",
    "sample",
    "sweep",
    "report_markdown",
    "report_svg",
)
globals().update({name: getattr(_core, name) for name in from_core})


def train(config, out, data=""):
    """Train a ddpm, edm, fm or multiflow model; returns the run manifest."""
    return json.loads(_core._train(config, str(out), str(data)))


def distill(config, teacher, out, data=""):
    return json.loads(_core._distill(config, str(teacher), str(out), str(data)))


def reflow(config, base, out, data=""):
    return json.loads(_core._reflow(config, str(base), str(out), str(data)))


def fit_bespoke(config, base, out, data=""):
    return json.loads(_core._fit_bespoke(config, str(base), str(out), str(data)))


__all__ = list(from_core) + ["train", "distill", "reflow", "fit_bespoke"]
