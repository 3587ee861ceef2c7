"""Backend dispatch for the coordinate-descent kernels.

The compiled Cython extension is preferred; a pure-Python implementation with
identical semantics is selected when the extension is missing or when the
environment variable ``SVEMKIT_KERNEL=python`` is set.  ``set_backend`` allows
switching at runtime (used by the parity tests and the benchmark).
"""

from __future__ import annotations

import os

from . import _cd_python

try:
    from . import _cd_kernel
except ImportError:  # pragma: no cover - exercised only in source-only installs
    _cd_kernel = None

_BACKENDS = {"python": _cd_python}
if _cd_kernel is not None:
    _BACKENDS["compiled"] = _cd_kernel

_env = os.environ.get("SVEMKIT_KERNEL", "").strip().lower()
if _env in _BACKENDS:
    _active = _env
else:
    _active = "compiled" if _cd_kernel is not None else "python"


def set_backend(name: str) -> None:
    """Select the kernel backend: 'compiled' or 'python'."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {sorted(_BACKENDS)}")
    _active = name


def active_backend() -> str:
    return _active


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def cd_solve(G, c, beta, n_free, lam1, lam2, tol, max_sweeps):
    return _BACKENDS[_active].cd_solve(G, c, beta, n_free, lam1, lam2, tol, max_sweeps)


def cd_path(G, c, lam1s, lam2s, n_free, tol, max_sweeps, out):
    return _BACKENDS[_active].cd_path(G, c, lam1s, lam2s, n_free, tol, max_sweeps, out)


def binomial_path(A, y, w, lam1s, lam2s, beta0, tol, max_sweeps,
                  irls_max, irls_tol, clamp, out):
    return _BACKENDS[_active].binomial_path(
        A, y, w, lam1s, lam2s, beta0, tol, max_sweeps, irls_max, irls_tol,
        clamp, out)
