"""Mollified compactly supported kernels for nonlocal diffusion.

The exact kernel is a constant-times-indicator gamma(x, y) = C_delta on the
ball |x - y| <= delta. The mollified kernel replaces the discontinuous cutoff
with a C^4 radial transition of half-width eps, rescaled by C_{delta,eps} so
that the second moment of the kernel stays dim*kappa. That normalization is
what keeps the nonlocal operator consistent with kappa*Laplacian up to
O(delta^2) for both the sharp and the mollified variants.
"""

import math

import numpy as np

__all__ = [
    "xi",
    "mollifier",
    "scaling_c_delta",
    "scaling_c_delta_eps",
    "gamma_eps",
    "KernelParams",
]


def xi(r):
    """Degree-9 connector polynomial on [-1, 1].

    xi(-1) = 0, xi(1) = 1, xi(0) = 1/2, and xi'(r) = (315/256)(1 - r^2)^4,
    so the first four derivatives vanish at both endpoints. Accepts scalars
    or arrays.
    """
    r = np.asarray(r, dtype=float) if not np.isscalar(r) else r
    r2 = r * r
    inner = (((35.0 * r2 - 180.0) * r2 + 378.0) * r2 - 420.0) * r2 + 315.0
    return (inner * r + 128.0) / 256.0


def mollifier(d, params):
    """Radial cutoff profile in [0, 1] at distance d >= 0.

    Equal to 1 on [0, delta - eps), xi((delta - d)/eps) on the transition
    shell [delta - eps, delta + eps], and 0 beyond. For eps = 0 this is the
    sharp indicator of d <= delta (the tie at d = delta is inclusive).
    Accepts scalars or arrays.
    """
    delta = params.delta
    eps = params.eps
    if np.isscalar(d):
        if d <= delta - eps:
            return 1.0
        if d >= delta + eps:
            return 0.0
        return float(xi((delta - d) / eps))
    d = np.asarray(d, dtype=float)
    if eps == 0.0:
        return np.where(d <= delta, 1.0, 0.0)
    out = np.where(d <= delta - eps, 1.0, 0.0)
    shell = (d > delta - eps) & (d < delta + eps)
    out[shell] = xi((delta - d[shell]) / eps)
    return out


def scaling_c_delta(dim, delta, kappa=1.0):
    """Sharp-kernel scaling constant C_delta.

    2D: 4*kappa/(pi*delta^4); 3D: 15*kappa/(4*pi*delta^5). Chosen so the
    second moment of the kernel over its support equals dim*kappa.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if dim == 2:
        return 4.0 * kappa / (math.pi * delta**4)
    if dim == 3:
        return 15.0 * kappa / (4.0 * math.pi * delta**5)
    raise ValueError("dim must be 2 or 3")


def scaling_c_delta_eps(dim, delta, eps, kappa=1.0):
    """Mollified-kernel scaling constant C_{delta,eps}.

    C_delta divided by a quartic polynomial in t = eps/delta that restores
    the exact second-moment normalization of the mollified profile:
      2D: 1 + (6/11) t^2 + (3/143) t^4
      3D: 1 + (10/11) t^2 + (15/143) t^4
    Reduces to C_delta at eps = 0.
    """
    if not 0.0 <= eps < delta:
        raise ValueError("need 0 <= eps < delta")
    t2 = (eps / delta) ** 2
    if dim == 2:
        denom = 1.0 + (6.0 / 11.0) * t2 + (3.0 / 143.0) * t2 * t2
    elif dim == 3:
        denom = 1.0 + (10.0 / 11.0) * t2 + (15.0 / 143.0) * t2 * t2
    else:
        raise ValueError("dim must be 2 or 3")
    return scaling_c_delta(dim, delta, kappa) / denom


def gamma_eps(x, y, params):
    """Mollified kernel value C_{delta,eps} * mollifier(|x - y|).

    Symmetric in (x, y); zero whenever |x - y| > delta + eps. An optional
    eta hook on params multiplies the constant profile.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = float(np.sqrt(np.sum((x - y) ** 2)))
    val = params.c_delta_eps * mollifier(d, params)
    if params.eta is not None:
        val *= params.eta(x, y)
    return val


class KernelParams:
    """Kernel configuration with precomputed scaling constants.

    Parameters
    ----------
    dim : {2, 3}
    delta : horizon radius, > 0
    eps : mollifier half-width, 0 <= eps < delta (0 gives the sharp cutoff)
    kappa : diffusivity, > 0
    eta : optional symmetric modulation eta(x, y); None means the constant
        kernel, which is the only variant exercised by the experiments.
    """

    def __init__(self, dim, delta, eps=0.0, kappa=1.0, eta=None):
        if dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if delta <= 0.0:
            raise ValueError("delta must be positive")
        if not 0.0 <= eps < delta:
            raise ValueError("need 0 <= eps < delta")
        if kappa <= 0.0:
            raise ValueError("kappa must be positive")
        self.dim = dim
        self.delta = float(delta)
        self.eps = float(eps)
        self.kappa = float(kappa)
        self.eta = eta
        self.c_delta = scaling_c_delta(dim, self.delta, self.kappa)
        self.c_delta_eps = scaling_c_delta_eps(dim, self.delta, self.eps, self.kappa)

    @property
    def support_radius(self):
        return self.delta + self.eps

    def __repr__(self):
        return (
            f"KernelParams(dim={self.dim}, delta={self.delta}, eps={self.eps}, "
            f"kappa={self.kappa})"
        )
