"""Zero-shot learning with attribute-conditioned Gaussian latent priors.

Submodules are imported lazily so the CLI can pin thread-count environment
variables before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "autodiff",
    "cli",
    "config",
    "data",
    "errors",
    "gaussian",
    "inductive",
    "inference",
    "networks",
    "optim",
    "serialize",
    "train",
    "transductive",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
