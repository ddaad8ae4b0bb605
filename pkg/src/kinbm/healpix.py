"""Equal-area binning of S^2 using the HEALPix ring scheme (and equal arcs on S^1).

Only the two index maps are needed: direction -> pixel and pixel -> centre.
Pixel centres of a resolution ``nside * 2^k`` nest exactly inside the pixels
of resolution ``nside``, which gives a deterministic cubature for bin masses.
"""
import numpy as np


def npix(nside: int) -> int:
    return 12 * nside * nside


def ang2pix_ring(nside: int, z, phi):
    """Ring-scheme pixel index of the directions with ``cos(theta) = z`` and longitude ``phi``."""
    z = np.asarray(z, dtype=float)
    phi = np.asarray(phi, dtype=float)
    za = np.abs(z)
    tt = np.mod(phi, 2 * np.pi) * (2.0 / np.pi)
    tt = np.where(tt >= 4.0, 0.0, tt)
    pix = np.empty(z.shape, dtype=np.int64)
    ncap = 2 * nside * (nside - 1)
    n4 = 4 * nside

    eq = za <= 2.0 / 3.0
    if np.any(eq):
        t1 = nside * (0.5 + tt[eq])
        t2 = nside * z[eq] * 0.75
        jp = np.floor(t1 - t2).astype(np.int64)
        jm = np.floor(t1 + t2).astype(np.int64)
        ir = nside + 1 + jp - jm
        kshift = 1 - (ir & 1)
        ip = (jp + jm - nside + kshift + 1) // 2
        ip = np.mod(ip, n4)
        pix[eq] = ncap + (ir - 1) * n4 + ip

    pol = ~eq
    if np.any(pol):
        tp = tt[pol] - np.floor(tt[pol])
        tmp = nside * np.sqrt(3.0 * (1.0 - za[pol]))
        jp = np.floor(tp * tmp).astype(np.int64)
        jm = np.floor((1.0 - tp) * tmp).astype(np.int64)
        ir = jp + jm + 1
        ip = np.floor(tt[pol] * ir).astype(np.int64)
        ip = np.mod(ip, 4 * ir)
        north = z[pol] > 0
        pix[pol] = np.where(north, 2 * ir * (ir - 1) + ip, npix(nside) - 2 * ir * (ir + 1) + ip)
    return pix


def pix2ang_ring(nside: int, pix):
    """``(z, phi)`` of the centres of ring-scheme pixels."""
    pix = np.asarray(pix, dtype=np.int64)
    ncap = 2 * nside * (nside - 1)
    total = npix(nside)
    z = np.empty(pix.shape)
    phi = np.empty(pix.shape)

    north = pix < ncap
    if np.any(north):
        p = pix[north]
        iring = ((1 + np.floor(np.sqrt(1 + 2 * p)).astype(np.int64)) // 2)
        # guard against floating error in the square root
        iring = np.where(2 * iring * (iring - 1) > p, iring - 1, iring)
        iring = np.where(2 * (iring + 1) * iring <= p, iring + 1, iring)
        iphi = p + 1 - 2 * iring * (iring - 1)
        z[north] = 1.0 - iring ** 2 / (3.0 * nside ** 2)
        phi[north] = (iphi - 0.5) * np.pi / (2.0 * iring)

    belt = (pix >= ncap) & (pix < total - ncap)
    if np.any(belt):
        ip = pix[belt] - ncap
        iring = ip // (4 * nside) + nside
        iphi = np.mod(ip, 4 * nside) + 1
        fodd = 0.5 * (1 + np.mod(iring + nside, 2))
        z[belt] = (2 * nside - iring) * 2.0 / (3.0 * nside)
        phi[belt] = (iphi - fodd) * np.pi / (2.0 * nside)

    south = pix >= total - ncap
    if np.any(south):
        ip = total - pix[south]
        iring = ((1 + np.floor(np.sqrt(2 * ip - 1)).astype(np.int64)) // 2)
        iring = np.where(2 * iring * (iring - 1) >= ip, iring - 1, iring)
        iring = np.where(2 * iring * (iring + 1) < ip, iring + 1, iring)
        iphi = 4 * iring + 1 - (ip - 2 * iring * (iring - 1))
        z[south] = -1.0 + iring ** 2 / (3.0 * nside ** 2)
        phi[south] = (iphi - 0.5) * np.pi / (2.0 * iring)
    return z, phi


def vec2pix(nside: int, v):
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    return ang2pix_ring(nside, v[..., 2] / r, np.arctan2(v[..., 1], v[..., 0]))


def pix2vec(nside: int, pix):
    z, phi = pix2ang_ring(nside, pix)
    s = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


class SpherePartition:
    """Fixed equal-area partition of S^{d-1} for d in {2, 3}.

    d=3 uses HEALPix ring pixels (``nbins = 12 nside^2``, default 192);
    d=2 uses ``nbins`` equal arcs starting at angle 0.
    """

    def __init__(self, dim: int, nbins: int | None = None, refine: int = 5):
        self.dim = dim
        self.refine = refine
        if dim == 3:
            nbins = 192 if nbins is None else nbins
            nside = int(round(np.sqrt(nbins / 12)))
            if npix(nside) != nbins:
                raise ValueError("for d=3 the bin count must be 12 * nside^2")
            self.nside = nside
        elif dim == 2:
            nbins = 64 if nbins is None else nbins
        else:
            raise ValueError("equal-area partitions are provided for d = 2 and 3 only")
        self.nbins = nbins

    def assign(self, points):
        points = np.asarray(points, dtype=float)
        if self.dim == 3:
            return vec2pix(self.nside, points)
        ang = np.mod(np.arctan2(points[..., 1], points[..., 0]), 2 * np.pi)
        return np.minimum((ang * self.nbins / (2 * np.pi)).astype(np.int64), self.nbins - 1)

    def histogram(self, points):
        """Empirical bin probabilities."""
        idx = self.assign(points)
        if idx.size == 0:
            raise ValueError("empty sample")
        return np.bincount(idx.ravel(), minlength=self.nbins) / idx.size

    def cubature_nodes(self):
        """Nodes and the bin they fall in; every bin holds the same number of nodes."""
        if self.dim == 3:
            fine = self.nside * 2 ** self.refine
            nodes = pix2vec(fine, np.arange(npix(fine)))
        else:
            m = self.nbins * 4 ** self.refine
            ang = (np.arange(m) + 0.5) * 2 * np.pi / m
            nodes = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        return nodes, self.assign(nodes)

    def masses(self, density):
        """Probability of each bin under ``density`` (w.r.t. the uniform probability)."""
        nodes, idx = self.cubature_nodes()
        vals = np.asarray(density(nodes), dtype=float)
        mass = np.bincount(idx, weights=vals, minlength=self.nbins) / len(nodes)
        return mass / mass.sum()
