"""Tug-of-war games and the infinity Laplacian on graphs and sampled length spaces."""
import os as _os

# the parallel Jacobi kernel only needs a portable thread pool; pinning the
# layer avoids probing an incompatible system TBB
_os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
