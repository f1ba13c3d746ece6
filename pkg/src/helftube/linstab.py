"""Closed-form linear stability of the straight cylinder.

Dispersion relation, neutral curves, stability windows and bifurcation
points of the area- and volume-constrained Helfrich flow, all in closed
form.  Conventions: inward normal, so a cylinder of radius r has mean
curvature H = 1/(2r); lambda1 is the tension, lambda2 the pressure
difference.  Growth rates mu > 0 mean the cylinder is unstable against
the mode (m, n) with axial wavenumber k_m = 2*pi*m/L and azimuthal
index n.
"""

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi

# evaluation this close to the kappa = 1 pole of the pearling curve is
# rejected rather than extrapolated
POLE_GUARD = 1e-8


@dataclass(frozen=True)
class ModelParams:
    """Cylinder and model parameters.

    lambda1 defaults to None and is then derived from lambda2 via
    lambda1_on_cylinder whenever a trivial-branch value is needed.
    """
    c0: float = 0.0
    L: float = 10.0
    r: float = 1.0
    lambda2: float = 0.0
    lambda1: float = None

    def __post_init__(self):
        if self.r <= 0.0:
            raise ValueError("radius must be positive")
        if self.L <= 0.0:
            raise ValueError("axial period must be positive")

    def k(self, m):
        return TWO_PI * m / self.L

    @property
    def k1(self):
        return TWO_PI / self.L

    @property
    def lambda1_trivial(self):
        if self.lambda1 is not None:
            return self.lambda1
        return lambda1_on_cylinder(self.lambda2, self.c0, self.r)

    @property
    def area0(self):
        return TWO_PI * self.r * self.L

    @property
    def volume0(self):
        return math.pi * self.r * self.r * self.L


@dataclass(frozen=True)
class Mode:
    """Fourier mode exp(i*(k_m x + n phi)) on the periodic cylinder."""
    m: int
    n: int

    def k(self, L):
        return TWO_PI * self.m / L

    def kappa(self, L, r=1.0):
        k = self.k(L)
        return k * k + (self.n / r) ** 2

    @property
    def multiplicity(self):
        if self.m == 0 and self.n == 0:
            return 1
        if self.m != 0 and self.n != 0:
            return 4
        return 2


@dataclass(frozen=True)
class DispersionValue:
    mode: Mode
    mu: float
    multiplicity: int


@dataclass(frozen=True)
class StabilityWindow:
    exists: bool
    lambda2_lo: float = None
    lambda2_hi: float = None
    lo_mode: Mode = None
    hi_mode: Mode = None


def lambda1_on_cylinder(lambda2, c0=0.0, r=1.0):
    """Tension that makes the radius-r cylinder a steady state."""
    if r <= 0.0:
        raise ValueError("radius must be positive")
    return 0.5 * (1.0 / (2.0 * r * r) - 2.0 * r * lambda2 - 2.0 * c0 * c0)


def dispersion(params, k, n):
    """Growth rate mu(k, n) of the constrained flow at the cylinder.

    Parameters
    ----------
    params : ModelParams
        Supplies c0, r and lambda2 (lambda1 is on the trivial branch).
    k : float
        Axial wavenumber, continuous values allowed.
    n : int
        Azimuthal index.

    Returns
    -------
    float
        mu(k, n); even in k and in n, and mu(0, +-1) = 0 identically.
    """
    r, c0, lam2 = params.r, params.c0, params.lambda2
    kap = k * k + (n / r) ** 2
    return (-0.5 * kap * kap
            + (r * lam2 + 1.0 / r ** 2) * kap
            - (lam2 / r + 0.5 / r ** 4)
            - (1.0 / r - 2.0 * c0) * k * k / r)


def pearl_neutral_lambda2(kappa, c0=0.0):
    """Neutral pressure for axisymmetric modes, kappa = k^2 at r = 1.

    Diverges at kappa = 1 unless c0 = 1/2, where the curve degenerates
    to the line (kappa - 1)/2.
    """
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    if c0 == 0.5:
        return 0.5 * (kappa - 1.0)
    if abs(kappa - 1.0) <= POLE_GUARD:
        raise ValueError("pearling neutral curve has a pole at kappa = 1")
    return 0.5 * (kappa * kappa - 4.0 * c0 * kappa + 1.0) / (kappa - 1.0)


def pearl_extrema(c0):
    """Extrema kappa_± = 1 ± sqrt(2 - 4 c0) of the pearling curve.

    Returns (kappa_minus, kappa_plus, finite_wavelength) or None when
    c0 > 1/2 (negative radicand).  finite_wavelength flags the
    physically interesting case kappa_minus in (0, 1), i.e.
    c0 in (1/4, 1/2).
    """
    rad = 2.0 - 4.0 * c0
    if rad < 0.0:
        return None
    root = math.sqrt(rad)
    km, kp = 1.0 - root, 1.0 + root
    return km, kp, 0.0 < km < 1.0


def coil_neutral_lambda2(k, c0=0.0):
    """Neutral pressure of the (k, n=±1) modes at r = 1."""
    return 0.5 * k * k + 1.0 - 2.0 * c0


def wrinkle_neutral_lambda2(n):
    """Neutral pressure of the axially constant mode (0, n), n >= 2."""
    n = int(n)
    if abs(n) < 2:
        raise ValueError("wrinkling requires |n| >= 2")
    n2 = float(n * n)
    return (-0.5 * n2 * n2 + n2 - 0.5) / (1.0 - n2)


def bifurcation_point(m, n, L, c0=0.0, r=1.0):
    """The lambda2 at which mu(k_m, n) = 0; mu is linear in lambda2.

    Raises for (0,0) and (0,±1) (no crossing: constant mode excluded,
    translations are neutral at every lambda2) and for the kappa = 1/r^2
    degeneracy where the lambda2 coefficient vanishes.
    """
    if m == 0 and abs(n) <= 1:
        raise ValueError("mode (%d,%d) has no bifurcation point" % (m, n))
    k = TWO_PI * m / L
    kap = k * k + (n / r) ** 2
    coef = r * kap - 1.0 / r                   # d mu / d lambda2
    if abs(coef) <= POLE_GUARD * max(1.0, abs(kap)):
        raise ValueError("degenerate mode: kappa = 1/r^2 pole")
    const = (-0.5 * kap * kap + kap / r ** 2 - 0.5 / r ** 4
             - (1.0 / r - 2.0 * c0) * k * k / r)
    return -const / coef


def stability_window(c0, L, r=1.0, max_m=6, max_n=4):
    """Stability interval of the straight cylinder in lambda2.

    Scans the discrete modes (m, n) with m <= max_m, n <= max_n.  Modes
    with kappa < 1/r^2 destabilize below their neutral value (lower
    edge = max of those), modes with kappa > 1/r^2 above (upper edge =
    min).  exists is False when the edges cross, or for c0 > 1/2 with
    k_1 <= 1 where no discrete window survives.
    """
    k1 = TWO_PI / L
    lo, hi = -math.inf, math.inf
    lo_mode, hi_mode = None, None
    for m in range(0, max_m + 1):
        for n in range(0, max_n + 1):
            if m == 0 and n <= 1:
                continue
            mode = Mode(m, n)
            kap = mode.kappa(L, r)
            if abs(r * kap - 1.0 / r) <= POLE_GUARD:
                continue
            lam2 = bifurcation_point(m, n, L, c0, r)
            if kap < 1.0 / r ** 2:
                if lam2 > lo:
                    lo, lo_mode = lam2, mode
            else:
                if lam2 < hi:
                    hi, hi_mode = lam2, mode
    degenerate = c0 > 0.5 and k1 <= 1.0
    exists = (not degenerate) and lo < hi
    if not exists:
        return StabilityWindow(False, lo if lo > -math.inf else None,
                               hi if hi < math.inf else None,
                               lo_mode, hi_mode)
    return StabilityWindow(True, lo, hi, lo_mode, hi_mode)


def cylinder_spectrum(params, L=None, max_m=4, max_n=4):
    """All mu(k_m, n) with |m| <= max_m, |n| <= max_n, (0,0) excluded.

    Returns DispersionValue records sorted by decreasing mu, one per
    nonnegative representative (m, n) with the correct multiplicity.
    """
    if L is None:
        L = params.L
    if max_m < 1 or max_n < 1:
        raise ValueError("mode cutoffs must be at least 1")
    out = []
    for m in range(0, max_m + 1):
        for n in range(0, max_n + 1):
            if m == 0 and n == 0:
                continue
            mode = Mode(m, n)
            mu = dispersion(params, TWO_PI * m / L, n)
            out.append(DispersionValue(mode, mu, mode.multiplicity))
    out.sort(key=lambda v: -v.mu)
    return out
