"""Backend selection for the integration kernels.

The compiled Cython module is used when it was built; otherwise, or when
``PONTRYAGUS_KERNELS=python`` is set, the pure-Python mirror is used.
"""

import os

from . import _pykernels
from ._pykernels import MASS_DEPLETED, MAX_STEPS, NONFINITE, OK, STEP_UNDERFLOW

STATUS_MESSAGES = {
    OK: "ok",
    STEP_UNDERFLOW: "step size underflow",
    MASS_DEPLETED: "mass depleted",
    MAX_STEPS: "maximum number of steps reached",
    NONFINITE: "non-finite state",
}


def _load(name=None):
    name = name or os.environ.get("PONTRYAGUS_KERNELS", "auto")
    if name not in ("auto", "cython", "python"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name != "python":
        try:
            from . import _kernels

            return "cython", _kernels
        except ImportError:
            if name == "cython":
                raise
    return "python", _pykernels


BACKEND, _impl = _load()


def available_backends():
    out = {"python": _pykernels}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out


def integrate_augmented(y0, duration, c1, c2, alpha, mu, rtol=1e-12, atol=1e-12, h0=0.0, max_steps=1_000_000, record=True):
    return _impl.integrate_augmented(y0, duration, c1, c2, alpha, mu, rtol, atol, h0, max_steps, record)


def integrate_thrust(y0, duration, thrust, c1, c2, mu, rtol=1e-12, atol=1e-12, h0=0.0, max_steps=1_000_000):
    ux, uy, uz = (float(v) for v in thrust)
    return _impl.integrate_thrust(y0, duration, ux, uy, uz, c1, c2, mu, rtol, atol, h0, max_steps)


integrate_generic = _pykernels.integrate_generic
