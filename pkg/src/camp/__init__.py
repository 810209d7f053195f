"""Multi-prompt contrastive vision-language embeddings on a from-scratch autodiff core."""

import os

# CAMP_THREADS caps BLAS worker threads; must be set before numpy loads.
if os.environ.get("CAMP_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["CAMP_THREADS"])

__version__ = "0.1.0"
