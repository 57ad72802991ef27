"""Numba im2col / col2im for channels-last 'same' convolutions."""

from numba import njit


@njit(cache=True)
def im2col(x, k, out):
    """``out[b, h, w, (i*k + j)*C + c] = x[b, h + i - k//2, w + j - k//2, c]`` (zero outside)."""
    bsz, hgt, wid, ch = x.shape
    p = k // 2
    for b in range(bsz):
        for h in range(hgt):
            for i in range(k):
                hs = h + i - p
                for w in range(wid):
                    for j in range(k):
                        ws = w + j - p
                        o = (i * k + j) * ch
                        if hs < 0 or hs >= hgt or ws < 0 or ws >= wid:
                            for c in range(ch):
                                out[b, h, w, o + c] = 0.0
                        else:
                            for c in range(ch):
                                out[b, h, w, o + c] = x[b, hs, ws, c]


@njit(cache=True)
def col2im(cols, k, dx):
    """Adjoint of :func:`im2col`; accumulates into the zeroed ``dx``."""
    bsz, hgt, wid, ch = dx.shape
    p = k // 2
    for b in range(bsz):
        for h in range(hgt):
            for i in range(k):
                hs = h + i - p
                if hs < 0 or hs >= hgt:
                    continue
                for w in range(wid):
                    for j in range(k):
                        ws = w + j - p
                        if ws < 0 or ws >= wid:
                            continue
                        o = (i * k + j) * ch
                        for c in range(ch):
                            dx[b, hs, ws, c] += cols[b, h, w, o + c]
