"""EchoIR image restoration with a barrier-based bilevel trainer, on a small numpy autodiff core."""

import os as _os

# ECHOIR_THREADS caps BLAS parallelism (default 1, which keeps runs bit-reproducible).
_threads = _os.environ.get("ECHOIR_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
