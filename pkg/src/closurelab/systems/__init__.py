"""The four benchmark systems and their truncated counterparts.

Each module provides the full simulator, the resolved-only vector field
(`resolved_rhs`), and the coarse one-step resolved map the closure model
advances (`resolved_step`).  The registry dispatches by system id.
"""

from __future__ import annotations

import numpy as np

from . import kse, langevin, nls, topo

_MODULES = {"langevin": langevin, "topo": topo, "nls": nls, "kse": kse}


class UnknownSystemError(KeyError):
    pass


def get_module(system_id: str):
    try:
        return _MODULES[system_id]
    except KeyError:
        raise UnknownSystemError(f"unknown system id: {system_id!r}") from None


def default_params(system_id: str, **overrides):
    return get_module(system_id).default_params(**overrides)


def resolved_rhs(system_id: str, state: np.ndarray, params) -> np.ndarray:
    """Feedback-free part of the resolved continuous-time vector field."""
    return get_module(system_id).resolved_rhs(state, params)
