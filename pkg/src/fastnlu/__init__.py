"""Joint intent detection and slot filling, from scratch, fast enough for CPU.

The package trains a small transformer encoder topped with a label-attention /
multi-head self-attention block and dual softmax decoders.  Everything numeric
runs on a minimal dense-tensor core with hand-written backward passes; no
autodiff framework is involved.
"""

import os

# FAN_THREADS pins the BLAS thread count for reproducible latency numbers.
# It must be exported into the BLAS-specific vars before numpy is imported,
# which is why this block sits at the very top of the package.
_threads = os.environ.get("FAN_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
del os, _threads

__version__ = "0.1.0"
