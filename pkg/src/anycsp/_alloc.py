"""Keep freed heap memory around between training steps.

The autodiff tape holds on to many medium-sized arrays per step. With the
default glibc settings those are served by fresh mmaps and returned to the
OS right after backward, so every step pays page faults again.
"""

import ctypes
import ctypes.util
import sys

_M_TRIM_THRESHOLD = -1
_M_TOP_PAD = -2
_M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator() -> bool:
    """Raise glibc trim/mmap thresholds; a no-op elsewhere. Returns success."""
    global _done
    if _done:
        return True
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = (libc.mallopt(_M_MMAP_THRESHOLD, 32 * 1024 * 1024)
              and libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
              and libc.mallopt(_M_TOP_PAD, 64 * 1024 * 1024))
    except (OSError, AttributeError):
        return False
    _done = bool(ok)
    return _done
