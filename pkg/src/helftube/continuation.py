"""Pseudo-arclength continuation of constrained steady states.

Branches are followed in the pressure multiplier with the area pinned and
the volume free.  Rigid motions are removed by mass-weighted phase
conditions whose multipliers vanish at converged states; stability is
always judged with both constraints active and the multipliers free.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .linstab import Mode, lambda1_on_cylinder
from .solver import (Anchor, BorderedSystem, NewtonDivergence,
                     bordered_solve, constraint_rows, fd_jacobian,
                     lambda_columns, residual)
from .surface.geometry import Geometry, geometry_report, project_amplitude
from .surface.mesh import adapt, mesh_quality

log = logging.getLogger(__name__)

GENERATORS = ("translate_x", "translate_y", "translate_z", "rotate_x")
ANSATZ_PHASES = {
    "pearling": ("translate_x", "translate_y", "translate_z"),
    "coiling": ("translate_x", "translate_y", "translate_z"),
    "wrinkling": ("translate_y", "translate_z", "rotate_x"),
    "buckling": ("translate_x", "translate_y", "translate_z", "rotate_x"),
}


@dataclass
class PhaseConditions:
    active: tuple = ("translate_y", "translate_z")
    multipliers: dict = field(default_factory=dict)

    def __post_init__(self):
        self.active = tuple(self.active)
        for name in self.active:
            if name not in GENERATORS:
                raise ValueError("unknown phase condition %r" % name)
        for required in ("translate_y", "translate_z"):
            if required not in self.active:
                raise ValueError("y- and z-translation phase conditions "
                                 "are always on")


@dataclass
class BranchState:
    mesh: object
    lam: tuple
    diagnostics: object = None
    spectrum: np.ndarray = None
    n_unstable: int = 0
    amplitude: dict = field(default_factory=dict)
    phase: PhaseConditions = None
    arclength: float = 0.0


@dataclass
class Branch:
    states: list = field(default_factory=list)
    bifurcations: list = field(default_factory=list)
    provenance: str = ""


def rigid_fields(geo, mesh, names, normalize=True, guard=1e-8):
    """Mass-normalized generator fields of the requested rigid motions.

    Raises when a requested generator is degenerate at this state (the
    x-translation and x-rotation fields vanish on a straight cylinder).
    """
    p = mesh.vertices[mesh.rep_vertices]
    N = geo.normals
    m = geo.mass
    out = []
    for name in names:
        if name == "translate_x":
            t = N[:, 0].copy()
        elif name == "translate_y":
            t = N[:, 1].copy()
        elif name == "translate_z":
            t = N[:, 2].copy()
        elif name == "rotate_x":
            t = -p[:, 2] * N[:, 1] + p[:, 1] * N[:, 2]
        else:
            raise ValueError("unknown generator %r" % name)
        nrm = math.sqrt(float(np.dot(t, m * t)))
        if normalize:
            if nrm < guard:
                raise ValueError("degenerate phase generator %r" % name)
            t = t / nrm
        out.append(t)
    return np.array(out) if out else np.zeros((0, mesh.ndof))


def _corrector(anchor, c0, lam_init, w_init, a_target, tfields, tol,
               max_iter, fixed_lambda2=None, extra=None):
    """Newton on (w, lambda1[, lambda2], s) with area and phase rows.

    ``extra`` supplies one additional affine row
    (row_u . w + row_l1 lambda1 + row_l2 lambda2 = target), used for the
    arclength equation or an amplitude pin; it is required exactly when
    lambda2 is free so the system stays square.
    """
    free2 = fixed_lambda2 is None
    if free2 == (extra is None):
        raise ValueError("lambda2 must be free exactly when an extra row "
                         "is supplied")
    ndof = anchor.mesh.ndof
    m0 = anchor.mass
    k = tfields.shape[0]
    tcols = (tfields * m0).T
    w = w_init.copy()
    lam1, lam2 = lam_init
    if not free2:
        lam2 = fixed_lambda2
    s = np.zeros(k)
    scale_a = max(abs(a_target), 1.0)
    for _ in range(max_iter):
        try:
            cur = anchor.moved(w)
            g = Geometry(cur)
        except ValueError as exc:
            raise NewtonDivergence(str(exc)) from exc
        pde, _ = residual(cur, (lam1, lam2), c0, geo=g)
        f_pde = pde + tcols @ s
        f_area = g.area - a_target
        f_phase = tfields @ (m0 * w)
        parts = [np.array([f_area]), f_phase]
        if extra is not None:
            row_u, row_l1, row_l2, target = extra
            f_extra = float(row_u @ w + row_l1 * lam1 + row_l2 * lam2
                            - target)
            parts.append(np.array([f_extra]))
        f_border = np.concatenate(parts)
        sup = np.abs(f_pde / m0).max()
        if sup <= tol and abs(f_area) <= tol * scale_a and \
                np.abs(f_phase).max() <= tol and \
                (extra is None or abs(f_extra) <= tol * 10.0):
            return w, (lam1, lam2), s, g
        J = fd_jacobian(anchor, w, (lam1, lam2), c0)
        lam_cols = lambda_columns(g)
        col_list = [lam_cols[:, 0]]
        if free2:
            col_list.append(lam_cols[:, 1])
        cols = np.column_stack(col_list + [tcols])
        area_row = constraint_rows(g, anchor.normals)[0]
        row_list = [area_row] + [m0 * t for t in tfields]
        nb = cols.shape[1]
        corner = np.zeros((nb, nb))
        if extra is not None:
            row_list.append(row_u)
            corner[-1, 0] = row_l1
            corner[-1, 1] = row_l2
        rows = np.vstack(row_list)
        system = BorderedSystem(J, cols, rows, corner,
                                np.concatenate([-f_pde, -f_border]))
        try:
            sol = bordered_solve(system)
        except (ValueError, RuntimeError) as exc:
            raise NewtonDivergence(str(exc)) from exc
        if not np.all(np.isfinite(sol)):
            raise NewtonDivergence("non-finite Newton update")
        w = w + sol[:ndof]
        lam1 += sol[ndof]
        off = ndof + 1
        if free2:
            lam2 += sol[off]
            off += 1
        s = s + sol[off:off + k]
    raise NewtonDivergence("corrector did not converge in %d iterations"
                           % max_iter)


def constrained_stability(mesh, lam=None, c0=0.0, n_eigs=12, sigma=0.3,
                          geo=None, jac=None):
    """Leading eigenvalues of the flow linearization with both constraints
    active and the multipliers free.

    Accepts a BranchState or a mesh plus multipliers.  Returns
    (eigenvalues, eigenvectors, rigid_eigenvalues): physical modes sorted
    by decreasing real part, with translational/rotational zero modes
    reported separately.  Spurious pencil vectors carrying no mass are
    discarded.
    """
    if isinstance(mesh, BranchState):
        mesh, lam = mesh.mesh, mesh.lam
    if lam is None:
        raise ValueError("multipliers required with a bare mesh")
    anchor = Anchor(mesh, geo=geo)
    g = anchor.geo
    J = jac if jac is not None else \
        fd_jacobian(anchor, np.zeros(mesh.ndof), lam, c0)
    cols = lambda_columns(g)
    rows = constraint_rows(g, anchor.normals)
    nd = mesh.ndof
    A = sp.bmat([[-J, -cols], [sp.csr_matrix(rows), None]], format="csc")
    B = sp.bmat([[sp.diags(g.mass), sp.csr_matrix((nd, 2))],
                 [sp.csr_matrix((2, nd)), None]], format="csc")
    k = min(n_eigs + 4, nd - 2)
    last = None
    # a shift landing on an eigenvalue makes the factor singular
    for shift in (sigma, 1.31 * sigma + 0.017, 0.77 * sigma - 0.013,
                  sigma + 0.11):
        try:
            vals, vecs = spla.eigs(A, k=k, M=B, sigma=shift, which="LM")
            break
        except RuntimeError as exc:
            last = exc
    else:
        raise RuntimeError("eigenvalue extraction failed near shift %g: %s"
                           % (sigma, last))
    basis = []
    for name in GENERATORS:
        try:
            t = rigid_fields(g, mesh, (name,))[0]
        except ValueError:
            continue
        for b in basis:
            t = t - np.dot(b, g.mass * t) * b
        nrm = math.sqrt(float(np.dot(t, g.mass * t)))
        if nrm > 1e-6:
            basis.append(t / nrm)
    mu_phys, vec_phys, mu_rigid = [], [], []
    for i in range(len(vals)):
        psi = vecs[:nd, i]
        mnorm = math.sqrt(abs(np.vdot(psi, g.mass * psi)))
        if mnorm < 1e-6 * np.linalg.norm(vecs[:, i]):
            continue
        overlap = 0.0
        for b in basis:
            overlap += abs(np.vdot(b, g.mass * psi)) ** 2
        overlap = math.sqrt(overlap) / mnorm
        if overlap > 0.5:
            mu_rigid.append(vals[i].real)
        else:
            mu_phys.append(vals[i].real)
            vec_phys.append(np.real(psi) / mnorm)
    order = np.argsort(mu_phys)[::-1]
    mu_phys = np.array([mu_phys[i] for i in order])
    vec_phys = [vec_phys[i] for i in order]
    return mu_phys[:n_eigs], vec_phys[:n_eigs], np.array(sorted(mu_rigid))


def _amplitudes(mesh, tracked_modes):
    return {(m, n): project_amplitude(mesh, Mode(m, n))
            for (m, n) in tracked_modes}


def _make_state(mesh, lam, c0, phases, s, tracked_modes, sigma, geo=None,
                n_eigs=12):
    mu, vecs, _ = constrained_stability(mesh, lam, c0, n_eigs=n_eigs,
                                        sigma=sigma, geo=geo)
    return BranchState(
        mesh=mesh, lam=lam, diagnostics=geometry_report(mesh, c0=c0),
        spectrum=mu, n_unstable=int(np.sum(mu > 0.0)),
        amplitude=_amplitudes(mesh, tracked_modes),
        phase=PhaseConditions(phases.active,
                              dict(zip(phases.active, s))))


def solve_trivial_state(mesh, lambda2, c0=0.0, tol=1e-9, tracked_modes=(),
                        sigma=0.3, n_eigs=12):
    """Converged straight-cylinder state at the given pressure, with the
    tension corrected for the discrete mean curvature."""
    phases = PhaseConditions()
    anchor = Anchor(mesh)
    tfields = rigid_fields(anchor.geo, mesh, phases.active)
    lam1 = lambda1_on_cylinder(lambda2, c0=c0)
    w, lam, s, g = _corrector(anchor, c0, (lam1, lambda2),
                              np.zeros(mesh.ndof), anchor.geo.area,
                              tfields, tol, 12, fixed_lambda2=lambda2)
    return _make_state(anchor.moved(w), lam, c0, phases, s, tracked_modes,
                       sigma, n_eigs=n_eigs)


def _projected_w(anchor, other_mesh):
    """Normal-displacement coordinates of another mesh of the same
    connectivity in this anchor frame."""
    rep = anchor.mesh.rep_vertices
    diff = other_mesh.vertices[rep] - anchor.mesh.vertices[rep]
    return np.einsum("ij,ij->i", diff, anchor.normals)


def continue_branch(start, direction=1, steps=20, ds=0.02, c0=0.0,
                    prev=None, tol=1e-8, max_iter=10, ds_min=1e-5,
                    ds_max=0.1, tracked_modes=(), sigma=0.3,
                    provenance="", n_eigs=12, q_adapt=8.0):
    """Pseudo-arclength continuation from a converged state.

    The first tangent comes from the secant to ``prev`` when given (a
    freshly switched branch passes its parent cylinder); otherwise from a
    natural step of the pressure in ``direction``.  The step is halved on
    corrector failure and grown gently on easy ones; a mesh-quality
    breach triggers adapt-and-retry at the same pressure.
    """
    phases = start.phase if start.phase is not None else PhaseConditions()
    a_target = Geometry(start.mesh).area
    branch = Branch(states=[start], provenance=provenance)
    cur = start
    prev_state = prev
    ds_cur = ds
    nat_dir = float(direction)
    while len(branch.states) < steps + 1:
        anchor = Anchor(cur.mesh)
        tfields = rigid_fields(anchor.geo, cur.mesh, phases.active)
        if prev_state is None:
            tau_u = np.zeros(cur.mesh.ndof)
            tau_l = np.array([-nat_dir, nat_dir])
        else:
            w_prev = _projected_w(anchor, prev_state.mesh)
            tau_u = -w_prev
            tau_l = np.array([cur.lam[0] - prev_state.lam[0],
                              cur.lam[1] - prev_state.lam[1]])
        nrm = math.sqrt(float(np.dot(tau_u, anchor.mass * tau_u))
                        + float(tau_l @ tau_l))
        if nrm < 1e-14:
            raise RuntimeError("vanishing continuation tangent")
        tau_u /= nrm
        tau_l /= nrm
        done = False
        while not done:
            w_pred = ds_cur * tau_u
            lam_pred = (cur.lam[0] + ds_cur * tau_l[0],
                        cur.lam[1] + ds_cur * tau_l[1])
            row_u = anchor.mass * tau_u
            target = float(row_u @ w_pred + tau_l[0] * lam_pred[0]
                           + tau_l[1] * lam_pred[1])
            try:
                w, lam, s, g = _corrector(
                    anchor, c0, lam_pred, w_pred, a_target, tfields, tol,
                    max_iter,
                    extra=(row_u, tau_l[0], tau_l[1], target))
                done = True
            except NewtonDivergence as exc:
                if ds_cur <= ds_min * (1 + 1e-12):
                    raise RuntimeError(
                        "corrector diverged at minimal arclength step "
                        "(%s)" % exc)
                ds_cur = max(ds_cur / 2.0, ds_min)
        new_mesh = anchor.moved(w)
        if mesh_quality(new_mesh) > q_adapt:
            log.info("mesh quality breach, adapting at lambda2=%g", lam[1])
            adapted = adapt(new_mesh, q_max=q_adapt)
            state = _natural_state(adapted, lam, lam[1], c0, a_target,
                                   phases, tol, tracked_modes, sigma,
                                   n_eigs=n_eigs)
            prev_for_next = None
        else:
            state = _make_state(new_mesh, lam, c0, phases, s,
                                tracked_modes, sigma, n_eigs=n_eigs)
            prev_for_next = cur
        if abs(state.lam[1] - cur.lam[1]) > 1e-12:
            nat_dir = math.copysign(1.0, state.lam[1] - cur.lam[1])
        state.arclength = cur.arclength + ds_cur
        branch.states.append(state)
        prev_state = prev_for_next
        cur = state
        ds_cur = min(ds_cur * 1.2, ds_max)
    return branch


def _natural_state(mesh, lam_guess, lambda2, c0, a_target, phases, tol,
                   tracked_modes, sigma, n_eigs=12):
    anchor = Anchor(mesh)
    tfields = rigid_fields(anchor.geo, mesh, phases.active)
    w, lam, s, g = _corrector(anchor, c0, lam_guess, np.zeros(mesh.ndof),
                              a_target, tfields, tol, 12,
                              fixed_lambda2=lambda2)
    return _make_state(anchor.moved(w), lam, c0, phases, s, tracked_modes,
                       sigma, n_eigs=n_eigs)


def _mode_content(mesh, psi, mass, m_max=6, n_max=4):
    """Dominant (m, n) Fourier content of a DOF field."""
    p = mesh.vertices[mesh.rep_vertices]
    x = p[:, 0]
    phi = np.arctan2(p[:, 2], p[:, 1])
    k1 = 2.0 * math.pi / mesh.axial_period
    best, best_pow = (0, 0), -1.0
    for m in range(m_max + 1):
        for n in range(n_max + 1):
            if m == 0 and n == 0:
                fields = [np.ones_like(x)]
            else:
                fields = []
                for fx in ((np.cos(m * k1 * x), np.sin(m * k1 * x))
                           if m else (np.ones_like(x),)):
                    for fp in ((np.cos(n * phi), np.sin(n * phi))
                               if n else (np.ones_like(phi),)):
                        fields.append(fx * fp)
            power = 0.0
            for t in fields:
                tn = math.sqrt(float(np.dot(t, mass * t)))
                power += (float(np.dot(psi, mass * t)) / tn) ** 2
            if power > best_pow:
                best_pow, best = power, (m, n)
    return best


def detect_bifurcations(branch, c0=0.0, tol_lambda2=1e-5, tol=1e-8,
                        sigma=0.3, max_bisect=40):
    """Localize sign changes of the constrained spectrum along a branch.

    Bisects in the pressure between bracketing states using the natural
    corrector, to |dlambda2| <= tol_lambda2; stores the kernel basis and
    its dominant Fourier mode.
    """
    out = []
    states = branch.states
    phases = states[0].phase if states[0].phase is not None else \
        PhaseConditions()
    for a, b in zip(states[:-1], states[1:]):
        if a.n_unstable == b.n_unstable:
            continue
        lo, hi = a, b
        n_lo = lo.n_unstable
        # the crossing pair can split by more than the bisection width,
        # so multiplicity comes from the full bracket
        mult = abs(b.n_unstable - a.n_unstable)
        l_lo, l_hi = lo.lam[1], hi.lam[1]
        a_target = lo.diagnostics.area
        it = 0
        while abs(l_hi - l_lo) > tol_lambda2:
            it += 1
            if it > max_bisect:
                raise RuntimeError(
                    "bifurcation bisection did not converge between "
                    "lambda2=%r and %r" % (l_lo, l_hi))
            l_mid = 0.5 * (l_lo + l_hi)
            mid = _natural_state(lo.mesh, lo.lam, l_mid, c0, a_target,
                                 phases, tol, (), sigma)
            if mid.n_unstable == n_lo:
                lo, l_lo = mid, l_mid
            else:
                hi, l_hi = mid, l_mid
        l_bp = 0.5 * (l_lo + l_hi)
        mu, vecs, _ = constrained_stability(hi.mesh, hi.lam, c0,
                                            n_eigs=12, sigma=sigma)
        order = np.argsort(np.abs(mu))
        kernel = [vecs[i] for i in order[:max(mult, 1)]]
        g = Geometry(hi.mesh)
        mode = _mode_content(hi.mesh, kernel[0], g.mass)
        out.append({
            "lambda2": l_bp, "lambda1": hi.lam[0],
            "mode_m": mode[0], "mode_n": mode[1],
            "multiplicity": mult, "kernel": np.array(kernel),
            "mesh": hi.mesh, "lam": hi.lam,
        })
    return out


def _ansatz_field(mesh, ansatz, mode):
    p = mesh.vertices[mesh.rep_vertices]
    x = p[:, 0]
    phi = np.arctan2(p[:, 2], p[:, 1])
    k = 2.0 * math.pi * mode[0] / mesh.axial_period
    n = mode[1]
    if ansatz == "pearling":
        e = np.cos(k * x)
        orbits = [np.sin(k * x)]
    elif ansatz == "wrinkling":
        e = np.cos(n * phi)
        orbits = [np.sin(n * phi)]
    elif ansatz == "coiling":
        e = np.cos(k * x + n * phi)
        orbits = [np.sin(k * x + n * phi)]
    elif ansatz == "buckling":
        e = np.cos(k * x) * np.cos(n * phi)
        orbits = [np.sin(k * x) * np.cos(n * phi),
                  np.cos(k * x) * np.sin(n * phi)]
    else:
        raise ValueError("unknown ansatz %r" % ansatz)
    return e, orbits


def switch_branch(bp, ansatz, epsilon, c0=0.0, tol=1e-8, max_iter=14,
                  tracked_modes=None, sigma=0.3, n_eigs=12):
    """Seed a bifurcating branch at finite amplitude.

    The predictor displaces the cylinder by epsilon times the ansatz
    field; the corrector pins that amplitude, frees the pressure, and
    removes the branch's symmetry orbit with ansatz-specific phase rows.
    """
    if epsilon == 0.0:
        raise ValueError("epsilon = 0 seeds the trivial branch")
    mesh = bp["mesh"]
    mode = (bp["mode_m"], bp["mode_n"])
    if tracked_modes is None:
        tracked_modes = [mode]
        if mode[1] != 0:
            tracked_modes.append((mode[0], -mode[1]))
    phases = PhaseConditions(ANSATZ_PHASES[ansatz])
    anchor = Anchor(mesh)
    m0 = anchor.mass
    e, orbits = _ansatz_field(mesh, ansatz, mode)
    # inward displacement -epsilon*e bulges outward where e > 0
    w_pred = -epsilon * e
    tlist = [anchor.geo.normals[:, 1], anchor.geo.normals[:, 2]]
    tlist += orbits
    tfields = np.array([t / math.sqrt(float(np.dot(t, m0 * t)))
                        for t in tlist])
    pin_row = m0 * e / float(np.dot(e, m0 * e))
    target = float(pin_row @ w_pred)
    lam_guess = (bp["lam"][0], bp["lambda2"])
    w, lam, s, g = _corrector(anchor, c0, lam_guess, w_pred,
                              anchor.geo.area, tfields, tol, max_iter,
                              extra=(pin_row, 0.0, 0.0, target))
    new_mesh = anchor.moved(w)
    amp = abs(project_amplitude(new_mesh, Mode(*mode)))
    # a unit ansatz field projects onto its complex mode at 1/2, except
    # the buckle standing wave which splits over the helical pair at 1/4
    expected = abs(epsilon) * (0.25 if ansatz == "buckling" else 0.5)
    if amp < 0.4 * expected:
        raise RuntimeError("seed fell back onto the trivial branch "
                           "(amplitude %.2e for epsilon %.2e)"
                           % (amp, epsilon))
    return _make_state(new_mesh, lam, c0, phases, s, tracked_modes, sigma,
                       n_eigs=n_eigs)


def write_branch_csv(branch, path):
    """Branch record as CSV, one row per state, 17 significant digits."""
    cols = ("arclength", "lambda1", "lambda2", "v", "E_normalized",
            "n_unstable", "amp_re", "amp_im", "n_nodes")
    lines = [",".join(cols)]
    for st in branch.states:
        amp = next(iter(st.amplitude.values()), 0.0 + 0.0j)
        d = st.diagnostics
        row = (st.arclength, st.lam[0], st.lam[1], d.reduced_volume,
               d.normalized_energy, st.n_unstable, amp.real, amp.imag,
               st.mesh.ndof)
        lines.append(",".join("%d" % x if isinstance(x, (int, np.integer))
                              else "%.17g" % x for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_bifurcations_json(bps, path):
    """Detected bifurcation points as a JSON list."""
    records = [{"lambda2": float(bp["lambda2"]),
                "mode_m": int(bp["mode_m"]),
                "mode_n": int(bp["mode_n"]),
                "multiplicity": int(bp["multiplicity"])}
               for bp in bps]
    with open(path, "w") as fh:
        json.dump(records, fh, indent=2, sort_keys=True)
        fh.write("\n")
