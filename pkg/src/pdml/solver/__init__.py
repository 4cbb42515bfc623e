"""Coordinate-descent kernel with a compiled core and a pure-NumPy fallback.

The compiled extension is preferred when available; both backends implement
the same cyclic coordinate descent on the Gram formulation of the Lasso
objective and produce numerically equivalent solutions. ``HAS_COMPILED``
reports which backend was selected at import time.
"""

from pdml.solver._cd_numpy import cd_solve as cd_solve_numpy

try:
    from pdml.solver._cd_fast import cd_solve as _cd_solve

    HAS_COMPILED = True
except ImportError:  # pragma: no cover - source-only installs
    _cd_solve = cd_solve_numpy
    HAS_COMPILED = False

cd_solve = _cd_solve


def backend_name() -> str:
    return "compiled" if HAS_COMPILED else "numpy"


__all__ = ["cd_solve", "cd_solve_numpy", "HAS_COMPILED", "backend_name"]
