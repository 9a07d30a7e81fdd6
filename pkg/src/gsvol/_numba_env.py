"""Thread-pool sizing that must run before numba is first imported.

numba freezes its maximum thread count from NUMBA_NUM_THREADS at import
time; raising the ceiling here lets callers request up to 8 workers even
on smaller machines (oversubscription is harmless for our disjoint-write
kernels, and determinism never depends on the worker count).
"""

import os

os.environ.setdefault("NUMBA_NUM_THREADS", "8")
# The bundled TBB is too old for numba and only triggers a warning;
# OpenMP handles the dynamic thread counts set_worker_count needs.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
