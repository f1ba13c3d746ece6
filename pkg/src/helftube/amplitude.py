"""Amplitude equations at the primary cylinder instabilities.

Normal forms, with T the slow time and beta2 = ±1 the side of the
critical pressure on which the branch lives (lambda2 = lambda2_crit +
beta2 * eps^2):

    scalar   dA/dT = A (a beta2 + b |A|^2)
    coupled  dA/dT = A (a beta2 + b1 |A|^2 + b2 |B|^2)
             dB/dT = B (a beta2 + b2 |A|^2 + b1 |B|^2)

The scalar form covers pearling (mode (m,0)) and wrinkling (mode (0,2));
the coupled form covers the double bifurcation at (m,±1), whose two
branch types are coiling (B=0) and buckling (A=B).  The cubic
coefficients are assembled from the second-order mode amplitudes; the
tension expansion lambda1 = lambda1_crit + alpha2 * eps^2 rides along.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .linstab import (TWO_PI, Mode, lambda1_on_cylinder,
                      pearl_neutral_lambda2, coil_neutral_lambda2,
                      wrinkle_neutral_lambda2)


@dataclass(frozen=True)
class ScalarAE:
    """Scalar normal form data.

    a is the raw linear coefficient (kappa - 1 at the critical mode);
    the effective growth coefficient on the branch side is a * beta2,
    positive by the choice of beta2.  alpha2(A) = alpha2_slope*|A|^2 +
    alpha2_const with the default constant -beta2; the opposite sign
    option is carried by branch_predict.
    """
    kind: str
    mode: Mode
    lambda2_crit: float
    lambda1_crit: float
    a: float
    b: float
    beta2: int
    alpha2_slope: float
    alpha2_const: float
    second_order: dict = field(default_factory=dict)

    @property
    def a_effective(self):
        return self.a * self.beta2

    @property
    def steady_amplitude(self):
        return math.sqrt(abs(self.a / self.b))


@dataclass(frozen=True)
class CoupledAE:
    """Coupled normal form data for the double bifurcation at (m, ±1)."""
    mode: Mode
    lambda2_crit: float
    lambda1_crit: float
    a: float
    b1: float
    b2: float
    beta2_coil: int
    beta2_buckle: int
    alpha2_slope: float
    second_order: dict = field(default_factory=dict)

    @property
    def coil_amplitude(self):
        return math.sqrt(abs(self.a / self.b1))

    @property
    def buckle_amplitude(self):
        return math.sqrt(abs(self.a / (self.b1 + self.b2)))


@dataclass(frozen=True)
class BranchClassification:
    coiling_exists: bool
    buckling_exists: bool
    coiling_stable: bool
    buckling_stable: bool
    sigma2_coil: float
    sigma2_buckle: float


def _branch_side(a, b):
    # beta2 making the steady amplitude |A|^2 = -a*beta2/b positive
    if a == 0.0 or b == 0.0:
        raise ValueError("degenerate amplitude equation")
    return -int(math.copysign(1.0, a * b))


def pearling_ae(c0, L, m=1):
    """Staged assembly of the pearling normal form at mode (m, 0).

    Composes the second-order relations for the mean offset A0 (from
    the area constraint), the second harmonic A2 and the tension
    coefficient alpha2 into the cubic coefficient b.

    Parameters
    ----------
    c0, L : floats
        Spontaneous curvature and axial period (r = 1).
    m : int
        Axial mode index of the critical mode.

    Returns
    -------
    ScalarAE
    """
    k = TWO_PI * m / L
    k2 = k * k
    lam2 = pearl_neutral_lambda2(k2, c0)
    lam1 = lambda1_on_cylinder(lam2, c0)

    # second harmonic from the eps^2 psi_20 balance
    den2 = 2.0 * (16.0 * k2 ** 2 + (-16.0 * c0 - 8.0 * lam2) * k2
                  + 2.0 * lam2 + 1.0)
    if abs(den2) < 1e-12:
        raise ValueError("degenerate second-order denominator")
    a2_ratio = -(7.0 * k2 ** 2 + (3.0 + 8.0 * c0 - 2.0 * lam2) * k2
                 - 4.0 * lam2 - 5.0) / den2
    # mean offset from the area constraint, and the tension expansion
    a0_ratio = -k2
    slope = 0.5 * (k2 ** 2 - 8.0 * k2 * c0 + 4.0 * lam2 + 5.0)

    # eps^3 psi_10 balance: collect the cubic terms
    c_cubic = (2.5 * k2 ** 3 + 0.5 * (1.0 - 8.0 * c0 - 3.0 * lam2) * k2 ** 2
               + 0.5 * (3.5 + 12.0 * c0 + lam2) * k2 - 6.75 - 3.0 * lam2)
    c_mean = 0.5 * (-4.0 * c0 - 1.0) * k2 + 2.0 * lam2 + 2.5
    c_second = (4.0 * k2 ** 2 + 4.0 * (-0.375 - 2.5 * c0 - 0.5 * lam2) * k2
                + 4.0 * (0.625 + 0.5 * lam2))
    b = c_cubic + c_mean * a0_ratio + c_second * a2_ratio + (1.0 - k2) * slope

    a = k2 - 1.0
    beta2 = _branch_side(a, b)
    return ScalarAE("pearling", Mode(m, 0), lam2, lam1, a, b, beta2,
                    slope, -float(beta2),
                    {"A0_per_absA2": a0_ratio, "A2_per_A2": a2_ratio})


def pearling_b_closed_form(c0, k):
    """One-shot cubic coefficient for pearling (unverified closed form).

    Disagrees with the staged assembly (which matches the numerics);
    kept for comparison.  Treat the returned value as unverified.
    """
    k2 = k * k
    if k2 == 0.0 or k2 == 1.0:
        raise ValueError("k^2 in {0, 1} is degenerate")
    den = 4.0 * k2 ** 2 - 5.0 * k2 + 4.0 * c0 - 1.0
    if abs(den) < 1e-12:
        raise ValueError("denominator 4k^4 - 5k^2 + 4c0 - 1 vanishes")
    poly = ((3.0 / 20.0) * k ** 14 + (4.0 * c0 - 73.0 / 20.0) * k ** 12
            + (8.0 * c0 / 5.0 - 13.0 / 10.0) * k ** 10
            + (32.0 * c0 ** 2 / 5.0 - 52.0 * c0 / 5.0 + 73.0 / 20.0) * k ** 8
            + (16.0 * c0 ** 2 / 5.0 - 8.0 * c0 + 31.0 / 5.0) * k ** 6
            + (4.0 * c0 / 5.0 - 43.0 / 20.0) * k ** 4
            + (12.0 * c0 / 5.0 - 3.0 / 2.0) * k2)
    return 5.0 / ((k2 - 1.0) * k2 * den) * poly


def _wrinkling_staged(lam2=Fraction(3, 2)):
    # staged path in exact rational arithmetic; regression guard for the
    # assembly code structure (same composition as pearling_ae)
    a0 = Fraction(-4)                              # area: 8|A|^2 + 2 A0 = 0
    a4 = (Fraction(9) * lam2 - Fraction(369, 4)) / \
         (Fraction(15) * lam2 - Fraction(225, 2))
    alpha_slope = Fraction(3, 2) * (15 - 4 * lam2)
    c_mean = -6 * (lam2 - Fraction(11, 4))
    c_second = Fraction(1, 4) * (-120 * lam2 + 1170)
    c_cubic = -3 * (-lam2 + Fraction(221, 4))
    b = c_cubic + c_mean * a0 + c_second * a4 - 3 * alpha_slope
    return a0, a4, alpha_slope, b


def wrinkling_ae(c0=None):
    """Wrinkling normal form at (0, 2): exact and parameter-free.

    dA/dT = A(3 beta2 - (243/16)|A|^2), alpha2 = (27/2)|A|^2 - beta2,
    A0 = -4|A|^2, A4 = (7/8)A^2, independent of c0 and L.  Passing c0
    only fills in lambda1_crit for branch predictions.
    """
    lam2 = 1.5
    a, b = 3.0, -243.0 / 16.0
    beta2 = 1
    lam1 = None if c0 is None else lambda1_on_cylinder(lam2, c0)
    return ScalarAE("wrinkling", Mode(0, 2), lam2,
                    lam1, a, b, beta2, 27.0 / 2.0, -float(beta2),
                    {"A0_per_absA2": -4.0, "A4_per_A2": 7.0 / 8.0})


def coil_buckle_coeffs(c0, L, m=1):
    """Coupled AE coefficients at the double mode (m, ±1).

    Evaluates the collected formulas for b1 and b2 at lambda2_crit =
    k^2/2 - 2 c0 + 1, plus the second-order amplitude ratios and the
    tension slope.  All denominators are checked and reported.
    """
    k = TWO_PI * m / L
    k2 = k * k
    lam2 = coil_neutral_lambda2(k, c0)
    lam1 = lambda1_on_cylinder(lam2, c0)

    dens = {
        "4k^4 + 7k^2 + 4c0 + 1": 4.0 * k2 ** 2 + 7.0 * k2 + 4.0 * c0 + 1.0,
        "k^2 - 4c0 - 1": k2 - 4.0 * c0 - 1.0,
        "12k^4 - 7k^2 - 4c0 + 3": 12.0 * k2 ** 2 - 7.0 * k2 - 4.0 * c0 + 3.0,
        "k^2 - 4c0 + 3": k2 - 4.0 * c0 + 3.0,
    }
    for label, val in dens.items():
        if abs(val) < 1e-10:
            raise ValueError("degenerate denominator: %s = 0" % label)

    b1 = (1.25 * k2 ** 3 + 5.0 * k2 ** 2 * c0 + 0.75 * k2 ** 2
          + 9.0 * k2 * c0 - 8.25 * k2 - 6.0 * c0 - 1.5
          + 3.0 * (2.0 * k2 ** 2 + 4.0 * k2 * c0 - 6.0 * k2 - 4.0 * c0 - 1.0)
          * (-0.5 * k2 ** 2 + k2 * c0 - 3.25 * k2 - 2.0 * c0 - 0.5)
          / dens["4k^4 + 7k^2 + 4c0 + 1"])
    b2 = (3.0 * k2 ** 3 + 4.0 * k2 ** 2 * c0 - 6.0 * k2 ** 2
          - 16.0 * k2 * c0 - 3.0 * k2 - 12.0 * c0 - 3.0
          + 6.0 * (4.0 * k2 * c0 + 4.0 * c0 + 1.0)
          * (-(c0 + 0.25) * k2 + 0.5 * k2 - 0.5 - 2.0 * c0)
          / dens["k^2 - 4c0 - 1"]
          + 2.0 * (6.0 * k2 ** 2 - 4.0 * k2 * c0 - 4.0 * k2 - 4.0 * c0 + 3.0)
          * k2 * (-1.5 * k2 - c0 + 0.75)
          / dens["12k^4 - 7k^2 - 4c0 + 3"])

    second = {
        "A00_per_sum": -(k2 + 1.0),
        "A22_per_A2": -(2.0 * k2 ** 2 + 4.0 * k2 * c0 - 6.0 * k2
                        - 4.0 * c0 - 1.0)
                      / (2.0 * dens["4k^4 + 7k^2 + 4c0 + 1"]),
        "A20_per_AB": -(6.0 * k2 ** 2 - 4.0 * k2 * c0 - 4.0 * k2
                        - 4.0 * c0 + 3.0)
                      / dens["12k^4 - 7k^2 - 4c0 + 3"],
        "A02_per_ABbar": -(4.0 * k2 * c0 + 4.0 * c0 + 1.0)
                         / dens["k^2 - 4c0 - 1"],
    }
    second["B22_per_B2"] = second["A22_per_A2"]

    a = k2
    beta2_coil = _branch_side(a, b1)
    beta2_buckle = _branch_side(a, b1 + b2) if b1 + b2 != 0.0 else 0
    return CoupledAE(Mode(m, 1), lam2, lam1, a, b1, b2,
                     beta2_coil, beta2_buckle,
                     0.5 * k2 * (k2 - 8.0 * c0 + 6.0), second)


def _coil_buckle_staged(c0, k2):
    # staged re-assembly of b1, b2 from the per-order balances; used as
    # an independent cross-check of the collected formulas
    lam2 = 0.5 * k2 - 2.0 * c0 + 1.0
    a00 = -(k2 + 1.0)
    a22 = -(2.0 * k2 ** 2 + 4.0 * k2 * c0 - 6.0 * k2 - 4.0 * c0 - 1.0) / \
        (2.0 * (4.0 * k2 ** 2 + 7.0 * k2 + 4.0 * c0 + 1.0))
    a20 = -(6.0 * k2 ** 2 - 4.0 * k2 * c0 - 4.0 * k2 - 4.0 * c0 + 3.0) / \
        (12.0 * k2 ** 2 - 7.0 * k2 - 4.0 * c0 + 3.0)
    a02 = -(4.0 * k2 * c0 + 4.0 * c0 + 1.0) / (k2 - 4.0 * c0 - 1.0)
    slope = 0.5 * k2 * (k2 - 8.0 * c0 + 6.0)

    cub_a = -4.0 * (-0.625 * k2 ** 3 + (c0 + 0.375 * lam2 - 2.0) * k2 ** 2
                    + (-0.5 * c0 + 0.625 * lam2 + 23.0 / 16.0) * k2
                    - 0.75 * lam2 + 1.125)
    cub_b = -8.0 * (-0.625 * k2 ** 3 + (c0 + 0.375 * lam2) * k2 ** 2
                    + (1.5 * c0 - 0.375 * lam2 + 15.0 / 16.0) * k2
                    - 0.75 * lam2 + 1.125)
    c_mean = -2.0 * k2 * (c0 - 0.75)
    c22 = -10.0 * (-0.4 * k2 ** 2 + (c0 + 0.2 * lam2 - 2.45) * k2
                   + 0.6 * lam2 - 0.9)
    c02b = 6.0 * ((c0 + 0.25) * k2 - lam2 + 1.5)
    c20bbar = -2.0 * k2 * (-2.0 * k2 + c0 + lam2 - 0.25)

    b1 = cub_a + c_mean * a00 + c22 * a22 - k2 * slope
    b2 = cub_b + c_mean * a00 + c02b * a02 + c20bbar * a20 - k2 * slope
    return b1, b2


def classify_coil_buckle(coeffs):
    """Constrained stability of the two branch types of the coupled AE.

    The branch direction v1 (along the branch) is excluded by the
    constraints; the transverse eigenvalue sigma2 decides.  Coiling:
    sigma2 = a*beta2 + b2*A^2 with A^2 = |a/b1|.  Buckling: sigma2 =
    2*(b1 - b2)*A^2 with A^2 = |a/(b1+b2)| (Jacobian-derived sign).
    """
    a, b1, b2 = coeffs.a, coeffs.b1, coeffs.b2
    if b1 == 0.0 or b1 + b2 == 0.0:
        raise ValueError("degenerate amplitude system")
    amp2_coil = abs(a / b1)
    sig2_coil = a * coeffs.beta2_coil + b2 * amp2_coil
    amp2_buck = abs(a / (b1 + b2))
    sig2_buck = 2.0 * (b1 - b2) * amp2_buck
    return BranchClassification(
        coiling_exists=True, buckling_exists=True,
        coiling_stable=sig2_coil < 0.0,
        buckling_stable=sig2_buck < 0.0,
        sigma2_coil=sig2_coil, sigma2_buckle=sig2_buck)


def simulate_ae(system, initial, T=200.0, dt=1e-3, beta2=None):
    """Explicit integration of the normal form; brute-force oracle.

    Parameters
    ----------
    system : ScalarAE or CoupledAE
    initial : complex or (complex, complex)
        Starting amplitude(s).
    T, dt : floats
        Horizon and step of the explicit Euler integration.
    beta2 : optional override of the branch-side sign.

    Returns
    -------
    list of (t, A) or (t, (A, B)) samples, including the endpoint.

    Raises
    ------
    RuntimeError on blow-up (|A| above 10x the steady amplitude).
    """
    if dt <= 0.0 or T <= 0.0:
        raise ValueError("need positive T and dt")
    nsteps = int(round(T / dt))
    sample_every = max(1, nsteps // 400)
    out = []
    if isinstance(system, CoupledAE):
        b2sign = system.beta2_coil if beta2 is None else beta2
        a_eff = system.a * b2sign
        cap = 10.0 * max(system.coil_amplitude, system.buckle_amplitude, 1e-9)
        A, B = complex(initial[0]), complex(initial[1])
        for i in range(nsteps):
            if i % sample_every == 0:
                out.append((i * dt, (A, B)))
            dA = A * (a_eff + system.b1 * abs(A) ** 2 + system.b2 * abs(B) ** 2)
            dB = B * (a_eff + system.b2 * abs(A) ** 2 + system.b1 * abs(B) ** 2)
            A, B = A + dt * dA, B + dt * dB
            if abs(A) > cap or abs(B) > cap:
                raise RuntimeError("amplitude blow-up at t = %.3f" % (i * dt))
        out.append((nsteps * dt, (A, B)))
        return out
    b2sign = system.beta2 if beta2 is None else beta2
    a_eff = system.a * b2sign
    cap = 10.0 * max(system.steady_amplitude, 1e-9)
    A = complex(initial)
    for i in range(nsteps):
        if i % sample_every == 0:
            out.append((i * dt, A))
        A = A + dt * A * (a_eff + system.b * abs(A) ** 2)
        if abs(A) > cap:
            raise RuntimeError("amplitude blow-up at t = %.3f" % (i * dt))
    out.append((nsteps * dt, A))
    return out


def branch_predict(system, epsilon_max, samples=50, alpha2_const_sign=-1):
    """Near-onset branch prediction (amplitude, lambda2, lambda1).

    For eps in (0, eps_max]: amplitude = eps * A_steady, lambda2 =
    lambda2_crit + beta2 * eps^2, lambda1 = lambda1_crit + alpha2 *
    eps^2 where alpha2 = alpha2_slope * A_steady^2 + alpha2_const.
    alpha2_const_sign selects alpha2_const = sign * beta2 (default -1,
    the assembly value); the chosen option is recorded in each row.
    """
    rows = []
    if isinstance(system, CoupledAE):
        beta2 = system.beta2_coil
        astar = system.coil_amplitude
        lam1c = system.lambda1_crit
    else:
        beta2 = system.beta2
        astar = system.steady_amplitude
        lam1c = system.lambda1_crit
    const = alpha2_const_sign * beta2
    for i in range(1, samples + 1):
        eps = epsilon_max * i / samples
        alpha2 = system.alpha2_slope * astar ** 2 + const
        lam2 = system.lambda2_crit + beta2 * eps ** 2
        lam1 = (lam1c if lam1c is not None else 0.0) + alpha2 * eps ** 2
        rows.append({"epsilon": eps, "amplitude": eps * astar,
                     "lambda2": lam2, "lambda1": lam1,
                     "alpha2_const_sign": alpha2_const_sign})
    return rows
