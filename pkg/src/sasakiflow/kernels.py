"""Selects the compiled RK4 kernel, falling back to numpy.

Set ``SASAKIFLOW_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _rk4_py

BACKEND = "python"
rk4_integrate = _rk4_py.rk4_integrate

if os.environ.get("SASAKIFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _rk4  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        pass
    else:
        rk4_integrate = _rk4.rk4_integrate
        BACKEND = "compiled"

# real-axis stability interval of classical RK4
RK4_REAL_LIMIT = 2.785293563405282
