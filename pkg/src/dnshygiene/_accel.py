"""Select the compiled kernels when available.

Set ``DNSHYGIENE_PURE_PYTHON=1`` to force the pure-Python fallback.
"""

from __future__ import annotations

import os

if os.environ.get("DNSHYGIENE_PURE_PYTHON") == "1":
    from ._kernels_py import decode_name, longest_match

    COMPILED = False
else:
    try:
        from ._kernels import decode_name, longest_match

        COMPILED = True
    except ImportError:
        from ._kernels_py import decode_name, longest_match

        COMPILED = False

__all__ = ["COMPILED", "decode_name", "longest_match"]
