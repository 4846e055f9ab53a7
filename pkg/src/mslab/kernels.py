"""Hot-kernel dispatch.

The compiled extension ``mslab._core`` is used when it imports; otherwise
the numpy versions in ``mslab._fallback`` take over. Setting the
environment variable ``MSLAB_PURE=1`` forces the fallback.
"""
import os

from mslab import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("MSLAB_PURE"):
    try:
        from mslab import _core as _impl  # noqa: F811

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _fallback

cap_kernel_angle = _impl.cap_kernel_angle
cap_gram = _impl.cap_gram
mls_coefficients = _impl.mls_coefficients


def backend(name: str):
    """Return the kernel module ``"compiled"`` or ``"python"`` explicitly."""
    if name == "python":
        return _fallback
    if name == "compiled":
        from mslab import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
