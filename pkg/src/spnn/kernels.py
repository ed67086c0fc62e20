"""Kernel backend selection.

The compiled extension is preferred; ``SPNN_PURE_PYTHON=1`` forces the
pure-Python implementation (used by the benchmark and the twin tests).
"""

import os

from . import _pykernels as pure

compiled = None
if not os.environ.get("SPNN_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

backend = compiled if compiled is not None else pure
BACKEND = "compiled" if compiled is not None else "python"

lfsr_next = backend.lfsr_next
lfsr_states = backend.lfsr_states
sng_bits = backend.sng_bits
orbit_length = backend.orbit_length
mac_stream = backend.mac_stream
