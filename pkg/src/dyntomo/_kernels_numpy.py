"""Joseph ray-tracing kernels, pure-numpy fallback.

Same discretization as the numba kernels: midpoint samples every
``step <= pixel_size`` along the clipped ray, bilinear gather/scatter on a
zero-padded image. Rays are processed in fixed-size chunks to bound memory;
``np.add.at`` does the unbuffered scatter in the adjoint.
"""

import numpy as np

RAY_CHUNK = 4096


def _sample_grid(table, sel, pixel, n):
    """Sample coordinates and validity mask for one chunk of rays."""
    t0 = table.t0[sel][:, None]
    step = table.step[sel][:, None]
    nsamp = table.nsamp[sel]
    kmax = int(nsamp.max())
    k = np.arange(kmax, dtype=np.float64)[None, :]
    valid = k < nsamp[:, None]
    t = t0 + (k + 0.5) * step
    gx = (table.src_x[sel][:, None] + t * table.dir_x[sel][:, None]) / pixel + (n - 1) * 0.5
    gy = (table.src_y[sel][:, None] + t * table.dir_y[sel][:, None]) / pixel + (n - 1) * 0.5
    np.clip(gx, -0.5, n - 0.5, out=gx)
    np.clip(gy, -0.5, n - 0.5, out=gy)
    ix = np.floor(gx).astype(np.int64)
    iy = np.floor(gy).astype(np.int64)
    fx = gx - ix
    fy = gy - iy
    return ix + 1, iy + 1, fx, fy, valid


def forward(image, table, pixel_size_mm, n):
    img_pad = np.zeros((n + 2, n + 2), dtype=np.float64)
    img_pad[1:-1, 1:-1] = image
    nrays = table.src_x.shape[0]
    out = np.zeros(nrays, dtype=np.float64)
    for lo in range(0, nrays, RAY_CHUNK):
        sel = slice(lo, min(lo + RAY_CHUNK, nrays))
        if table.nsamp[sel].max() == 0:
            continue
        ip, jp, fx, fy, valid = _sample_grid(table, sel, pixel_size_mm, n)
        vals = (
            (1.0 - fx) * (1.0 - fy) * img_pad[jp, ip]
            + fx * (1.0 - fy) * img_pad[jp, ip + 1]
            + (1.0 - fx) * fy * img_pad[jp + 1, ip]
            + fx * fy * img_pad[jp + 1, ip + 1]
        )
        vals[~valid] = 0.0
        out[sel] = vals.sum(axis=1) * table.step[sel]
    return out


def adjoint(sino_flat, table, pixel_size_mm, n):
    acc = np.zeros((n + 2, n + 2), dtype=np.float64)
    nrays = table.src_x.shape[0]
    for lo in range(0, nrays, RAY_CHUNK):
        sel = slice(lo, min(lo + RAY_CHUNK, nrays))
        if table.nsamp[sel].max() == 0:
            continue
        ip, jp, fx, fy, valid = _sample_grid(table, sel, pixel_size_mm, n)
        v = (sino_flat[sel] * table.step[sel])[:, None] * valid
        np.add.at(acc, (jp, ip), (1.0 - fx) * (1.0 - fy) * v)
        np.add.at(acc, (jp, ip + 1), fx * (1.0 - fy) * v)
        np.add.at(acc, (jp + 1, ip), (1.0 - fx) * fy * v)
        np.add.at(acc, (jp + 1, ip + 1), fx * fy * v)
    return acc[1:-1, 1:-1].copy()
