# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled aggregation kernel.

Model aggregation is the one hot loop BLAS does not already cover well at
this artifact's scale: repeated weighted accumulation of float32 parameter
arrays into float64 accumulators (live rounds, prefix aggregation while
stepping, integrity re-derivation, branch reaggregation). The loop performs
the identical per-element operation sequence as the numpy fallback (convert,
multiply, add, in caller order), and the extension is built with
-ffp-contract=off, so both backends produce bit-identical aggregates.

Forward and training math stays in fedtrace._pykernels on every backend:
measured against OpenBLAS, scalar-loop replacements were slower at all
relevant sizes.
"""

BACKEND_NAME = "compiled"


def weighted_sum_inplace(list accumulators, list params, double w):
    """acc[j] += w * params[j] elementwise, float64 accumulation."""
    cdef Py_ssize_t idx, i, m
    cdef double[::1] acc
    cdef const float[::1] p
    for idx in range(len(accumulators)):
        acc = accumulators[idx].reshape(-1)
        p = params[idx].reshape(-1)
        m = acc.shape[0]
        with nogil:
            for i in range(m):
                acc[i] += w * <double>p[i]
