"""Mean pooling along the token axis: (N, L, E) -> (N, E)."""

from __future__ import annotations

import numpy as np

from .tensors import PooledFeatures, TokenTensor


def pool_tokens(t: TokenTensor) -> PooledFeatures:
    """Average over the token axis; accumulates in float64.

    output[n, e] = (1/L) * sum_l t[n, l, e]. For a class-token tensor
    (L = 1) this is the identity on the single token row.
    """
    pooled = t.data.astype(np.float64).mean(axis=1)
    return PooledFeatures(pooled)
