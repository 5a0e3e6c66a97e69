"""Backend dispatch for the hot kernels.

``CENIE_LAB_BACKEND=numba`` or ``=numpy`` selects the implementation; unset,
numba is used when it imports and the pure-numpy twin otherwise. Both paths
implement identical semantics (RNG stays outside: callers pass pre-drawn
uniforms), so a run is bit-reproducible within a backend and the two backends
agree to floating-point noise.

``CENIE_LAB_THREADS`` caps worker-thread parallelism. The kernels themselves
are single-threaded for determinism; the cap is applied to numba's thread
pool so any library-level parallelism stays bounded.

Exported kernels:

``component_log_densities(x, means, prec_chol, log_det_chol)``
    (n, k) Gaussian log densities from precision-Cholesky factors.
``silhouette_samples(x, labels, n_clusters)``
    Exact O(n^2) per-sample silhouette values.
``gae_scan(rewards, values, dones, gamma, lam)``
    Masked generalized-advantage backward recursion over (t, w) arrays.
``rollout_batch(...)``
    Lockstep multi-worker maze rollout with the policy forward pass inside.
"""

import logging
import os

_log = logging.getLogger(__name__)

_requested = os.environ.get("CENIE_LAB_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"CENIE_LAB_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

BACKEND = "numpy"
if _requested in ("", "numba"):
    try:
        import numba as _numba

        threads = os.environ.get("CENIE_LAB_THREADS", "").strip()
        if threads:
            _numba.set_num_threads(max(1, min(int(threads), _numba.config.NUMBA_NUM_THREADS)))
        from . import _numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _log.warning("numba unavailable, falling back to the pure-numpy kernels")
        from . import _numpy_impl as _impl
else:
    from . import _numpy_impl as _impl

component_log_densities = _impl.component_log_densities
silhouette_samples = _impl.silhouette_samples
gae_scan = _impl.gae_scan
rollout_batch = _impl.rollout_batch

__all__ = [
    "BACKEND",
    "component_log_densities",
    "silhouette_samples",
    "gae_scan",
    "rollout_batch",
]
