"""Kernel backend selection.

Hot inner loops (tri-plane gather/scatter, marching cubes, median filter)
exist in two result-identical implementations: a numba ``@njit`` version and
a pure-numpy fallback. The fallback is selected by setting the environment
variable ``ROOMSDF_NO_NUMBA`` to ``1``/``true``/``yes`` before import, or at
runtime via :func:`set_use_numba`.

Both paths perform the same arithmetic in the same order, so results are
bitwise identical; only speed differs (see ``benchmarks/bench_kernels.py``).
"""

import os

_TRUTHY = {"1", "true", "yes", "on"}


def _env_disables_numba() -> bool:
    return os.environ.get("ROOMSDF_NO_NUMBA", "").strip().lower() in _TRUTHY


_use_numba = not _env_disables_numba()

if _use_numba:
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _use_numba = False


def use_numba() -> bool:
    """True when the numba-compiled kernel path is active."""
    return _use_numba


def set_use_numba(flag: bool) -> None:
    """Switch kernel backend at runtime (mainly for tests and benchmarks)."""
    global _use_numba
    if flag:
        import numba  # noqa: F401  (raises if unavailable)
    _use_numba = bool(flag)
