"""Budget-aware block-level model merging over MPCK checkpoints.

Thin re-export of the compiled ``_mergepipe`` module. The extension lives
inside this package in an installed wheel; in a bare build tree it sits on
``PYTHONPATH`` next to the package instead.
"""

try:
    from ._mergepipe import *  # noqa: F401,F403
    from ._mergepipe import DEFAULT_BLOCK_ELEMENTS  # noqa: F401
except ImportError:  # build-tree layout
    from _mergepipe import *  # noqa: F401,F403
    from _mergepipe import DEFAULT_BLOCK_ELEMENTS  # noqa: F401

__version__ = "0.1.0"
