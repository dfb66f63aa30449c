"""Select the IPFP kernel implementation at import time.

The compiled extension is preferred. Set ``LOWRANK_OT_BACKEND=python`` to
force the numpy fallback (the benchmark and the backend-parity tests do this
explicitly through :func:`get_kernels`).
"""

import logging
import os
from types import ModuleType

from . import _ipfp_py

logger = logging.getLogger(__name__)

try:
    from . import _ipfp_core as _compiled
except ImportError:  # extension not built
    _compiled = None


def get_kernels(name: str | None = None) -> ModuleType:
    """Return the kernel module named ``"compiled"`` or ``"python"``.

    With ``name=None`` the environment variable ``LOWRANK_OT_BACKEND`` is
    consulted, falling back to the compiled module when it is available.
    """
    if name is None:
        name = os.environ.get("LOWRANK_OT_BACKEND", "compiled" if _compiled else "python")
    if name == "python":
        return _ipfp_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


kernels = get_kernels()
BACKEND = "compiled" if kernels is _compiled else "python"
logger.debug("IPFP kernels: %s", BACKEND)
