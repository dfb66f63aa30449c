"""Pure-numpy versions of the compiled IPFP kernels.

Same signatures and semantics as ``_ipfp_core``; used when the extension is
not built or when ``LOWRANK_OT_BACKEND=python``.
"""

import numpy as np


def lse_rows(K, shift, out):
    """``out[i] = log sum_j exp(K[i, j] + shift[j])``."""
    if shift.shape[0] != K.shape[1] or out.shape[0] != K.shape[0]:
        raise ValueError("shape mismatch in lse_rows")
    M = K + shift[None, :]
    m = M.max(axis=1)
    M -= m[:, None]
    np.exp(M, out=M)
    out[:] = m + np.log(M.sum(axis=1))


def lse_cols(K, shift, out):
    """``out[j] = log sum_i exp(K[i, j] + shift[i])``."""
    if shift.shape[0] != K.shape[0] or out.shape[0] != K.shape[1]:
        raise ValueError("shape mismatch in lse_cols")
    M = K + shift[:, None]
    m = M.max(axis=0)
    M -= m[None, :]
    np.exp(M, out=M)
    out[:] = m + np.log(M.sum(axis=0))


def gibbs(K, alpha, beta, out):
    """Fill ``out = exp(K + alpha[:, None] + beta[None, :] - c)``; return ``c``."""
    if alpha.shape[0] != K.shape[0] or beta.shape[0] != K.shape[1]:
        raise ValueError("shape mismatch in gibbs")
    if out.shape != K.shape:
        raise ValueError("output shape mismatch in gibbs")
    np.add(K, alpha[:, None], out=out)
    out += beta[None, :]
    c = float(out.max())
    out -= c
    np.exp(out, out=out)
    return c
