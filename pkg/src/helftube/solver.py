"""Constrained Willmore-type flow in mixed form.

The shape unknown of one implicit step is the normal displacement w along
the frozen normals of the previous state (X = X_n + w N_n).  Each Newton
iteration assembles the weak residual on the moved mesh, a finite
difference Jacobian compressed by graph coloring, analytic multiplier
columns, and exact constraint rows, then solves the bordered system by
block elimination.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .surface.geometry import Geometry, displace

log = logging.getLogger(__name__)

FD_EPS = 1e-6


class NewtonDivergence(RuntimeError):
    """Newton failed; callers shrink the time step and retry."""


@dataclass
class FlowState:
    mesh: object
    lam: tuple
    time: float = 0.0
    step_size: float = 0.01
    conserved: tuple = None

    def __post_init__(self):
        if self.conserved is None:
            g = Geometry(self.mesh)
            self.conserved = (g.area, g.volume)


@dataclass
class BorderedSystem:
    core: object
    border_columns: np.ndarray
    border_rows: np.ndarray
    corner: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        self.border_columns = np.atleast_2d(np.asarray(self.border_columns,
                                                       dtype=np.float64))
        self.border_rows = np.atleast_2d(np.asarray(self.border_rows,
                                                    dtype=np.float64))
        self.corner = np.atleast_2d(np.asarray(self.corner,
                                               dtype=np.float64))
        self.rhs = np.asarray(self.rhs, dtype=np.float64)
        n = self.core.shape[0]
        k = self.corner.shape[0]
        if k > 6:
            raise ValueError("border width above six")
        if self.border_columns.shape != (n, k) and k > 0:
            if self.border_columns.shape == (k, n):
                self.border_columns = self.border_columns.T
            else:
                raise ValueError("border column block has wrong shape")
        if k > 0 and self.border_rows.shape != (k, n):
            raise ValueError("border row block has wrong shape")
        if self.rhs.shape != (n + k,):
            raise ValueError("right-hand side has wrong length")


def bordered_solve(system):
    """Solve [[A, B], [C, D]] (x, y) = rhs by block elimination.

    Factors the core once, forms the small Schur complement
    S = D - C A^-1 B, and back-substitutes.  A nearly singular S means
    the border rows (constraints or phase conditions) have become
    dependent, which is reported rather than solved through.
    """
    n = system.core.shape[0]
    k = system.corner.shape[0]
    lu = spla.splu(system.core.tocsc())
    f = system.rhs[:n]
    if k == 0:
        return lu.solve(f)
    g = system.rhs[n:]
    XB = lu.solve(np.column_stack([system.border_columns, f]))
    x0 = XB[:, k]
    S = system.corner - system.border_rows @ XB[:, :k]
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e12:
        raise ValueError("singular corner block: constraint and phase "
                         "rows are nearly dependent")
    y = np.linalg.solve(S, g - system.border_rows @ x0)
    x = x0 - XB[:, :k] @ y
    return np.concatenate([x, y])


def residual(mesh, lam, c0, conserved=None, geo=None):
    """Weak PDE residual and requested constraint residuals.

    The auxiliary mean curvature solves M H = -1/2 <L X, N>; the PDE rows
    are -L H + M (2H^3 - 2HK + 2 c0 K - 2(c0^2 + lam1) H - lam2), which
    vanish on a straight cylinder with the matching tension.
    """
    g = geo if geo is not None else Geometry(mesh)
    lam1, lam2 = lam
    H, K, m = g.H, g.K, g.mass
    pde = -(g.L @ H) + m * (2.0 * H ** 3 - 2.0 * H * K + 2.0 * c0 * K
                            - 2.0 * (c0 ** 2 + lam1) * H - lam2)
    if conserved is None:
        return pde, np.zeros(0)
    a0, v0 = conserved
    return pde, np.array([g.area - a0, g.volume - v0])


def lambda_columns(geo):
    """Derivative of the weak residual in (lam1, lam2)."""
    return np.column_stack([-2.0 * geo.mass * geo.H, -geo.mass])


def constraint_rows(geo, normals0):
    """Gradients of (area, volume) along the anchor normal directions."""
    ga = np.einsum("ij,ij->i", geo.area_shape_grad, normals0)
    gv = np.einsum("ij,ij->i", geo.volume_shape_grad, normals0)
    return np.vstack([ga, gv])


def constraint_angle(geo):
    """Angle between the area and volume gradients in the inverse-mass
    inner product; near zero only close to constant mean curvature."""
    ga = geo.dA_du
    gv = geo.dV_du
    w = 1.0 / geo.mass
    d11 = np.dot(ga * w, ga)
    d12 = np.dot(ga * w, gv)
    d22 = np.dot(gv * w, gv)
    c = abs(d12) / math.sqrt(d11 * d22)
    return math.acos(min(1.0, c))


class Anchor:
    """Frozen frame of one implicit step: reference vertices, inward unit
    normals, mass, and the coloring of the residual sparsity pattern."""

    def __init__(self, mesh, geo=None):
        self.mesh = mesh
        self.geo = geo if geo is not None else Geometry(mesh)
        self.normals = self.geo.normals
        self._normals_v = self.normals[mesh.dofs]
        self.mass = self.geo.mass
        self._rad = np.hypot(mesh.vertices[:, 1], mesh.vertices[:, 2])
        self._colors = None
        self._pattern = None

    def moved(self, w):
        wv = self.mesh.expand(w)
        if not np.all(np.isfinite(wv)) or \
                np.any(np.abs(wv) >= 0.95 * self._rad):
            raise NewtonDivergence("displacement left the guard tube")
        verts = self.mesh.vertices + wv[:, None] * self._normals_v
        return self.mesh.with_vertices(verts)

    def coloring(self):
        """Color classes for FD compression and the distance-2 pattern
        that holds every row a single column can touch."""
        if self._colors is None:
            A = self.geo.L.copy()
            A.data[:] = 1.0
            A2 = (A @ A).tocsr()
            A2.data[:] = 1.0
            A4 = (A2 @ A2).tocsr()
            ndof = A.shape[0]
            colors = -np.ones(ndof, dtype=np.int64)
            for i in range(ndof):
                nbrs = A4.indices[A4.indptr[i]:A4.indptr[i + 1]]
                used = set(colors[nbrs].tolist())
                c = 0
                while c in used:
                    c += 1
                colors[i] = c
            self._colors = [np.flatnonzero(colors == c)
                            for c in range(int(colors.max()) + 1)]
            self._pattern = A2
        return self._colors, self._pattern


def fd_jacobian(anchor, w, lam, c0, eps=FD_EPS):
    """Jacobian of the weak residual in w by colored central differences.

    The residual at a DOF depends on positions within two rings, so
    columns farther than four rings apart are probed together.
    """
    colors, pattern = anchor.coloring()
    ndof = anchor.mesh.ndof
    rows, cols, vals = [], [], []
    for dofset in colors:
        e = np.zeros(ndof)
        e[dofset] = eps
        rp, _ = residual(anchor.moved(w + e), lam, c0)
        rm, _ = residual(anchor.moved(w - e), lam, c0)
        df = (rp - rm) / (2.0 * eps)
        for m in dofset:
            touched = pattern.indices[pattern.indptr[m]:
                                      pattern.indptr[m + 1]]
            rows.append(touched)
            cols.append(np.full(touched.size, m, dtype=np.int64))
            vals.append(df[touched])
    return sp.coo_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(ndof, ndof)).tocsr()


def pde_jacobian(mesh, lam, c0, geo=None):
    """Residual Jacobian at the state itself (w = 0) plus the multiplier
    columns; shared by the stability pencil and steady-state correctors."""
    anchor = Anchor(mesh, geo=geo)
    J = fd_jacobian(anchor, np.zeros(mesh.ndof), lam, c0)
    return J, lambda_columns(anchor.geo), anchor


def _newton_flow(anchor, h, lam0, c0, conserved, tol, max_iter, cmc):
    """Newton on (w, multipliers) for one implicit step.

    In the reduced (near-CMC) mode the tension is frozen and only the
    pressure is solved with the volume constraint.
    """
    ndof = anchor.mesh.ndof
    w = np.zeros(ndof)
    lam = tuple(lam0)
    a0, v0 = conserved
    minv = 1.0 / anchor.mass
    for it in range(1, max_iter + 1):
        try:
            cur = anchor.moved(w)
            g = Geometry(cur)
        except ValueError as exc:
            raise NewtonDivergence(str(exc)) from exc
        pde, con = residual(cur, lam, c0, conserved=conserved, geo=g)
        f_pde = (anchor.mass / h) * w + pde
        sup = np.abs(f_pde * minv).max()
        ok_a = abs(con[0]) <= tol * max(a0, 1.0)
        ok_v = abs(con[1]) <= tol * max(v0, 1.0)
        if sup <= tol and ok_v and (cmc or ok_a):
            return w, lam, it, g
        J = fd_jacobian(anchor, w, lam, c0)
        core = sp.diags(anchor.mass / h) + J
        cols = lambda_columns(g)
        rows = constraint_rows(g, anchor.normals)
        if cmc:
            cols = cols[:, 1:]
            rows = rows[1:]
            f_con = con[1:]
        else:
            f_con = con
        k = rows.shape[0]
        system = BorderedSystem(core, cols, rows, np.zeros((k, k)),
                                np.concatenate([-f_pde, -f_con]))
        try:
            sol = bordered_solve(system)
        except (ValueError, RuntimeError) as exc:
            raise NewtonDivergence(str(exc)) from exc
        if not np.all(np.isfinite(sol)):
            raise NewtonDivergence("non-finite Newton update")
        w = w + sol[:ndof]
        if cmc:
            lam = (lam[0], lam[1] + sol[ndof])
        else:
            lam = (lam[0] + sol[ndof], lam[1] + sol[ndof + 1])
    raise NewtonDivergence("no convergence in %d iterations" % max_iter)


def flow_step(state, tol=1e-6, c0=0.0, max_iter=12, cmc=None):
    """One implicit Euler step of the constrained flow.

    Solves (1/h) M_n w + G(X_n + w N_n, Lambda) = 0 with the area and
    volume pinned to their targets, starting from w = 0 and the previous
    multipliers.  Returns the accepted state and a diagnostics dict;
    raises NewtonDivergence when the step must be rejected.
    """
    anchor = Anchor(state.mesh)
    if cmc is None:
        cmc = constraint_angle(anchor.geo) < 1e-3
    h = state.step_size
    w, lam, iters, g = _newton_flow(anchor, h, state.lam, c0,
                                    state.conserved, tol, max_iter, cmc)
    new_mesh = anchor.moved(w)
    a0, v0 = state.conserved
    info = {
        "newton_iters": iters,
        "sup_dw": float(np.abs(w).max()),
        "cmc": cmc,
        "energy": g.energy(c0)[0],
        "normalized_energy": g.energy(c0)[1],
        "area_rel_err": abs(g.area - a0) / a0,
        "vol_rel_err": abs(g.volume - v0) / v0,
    }
    new = FlowState(mesh=new_mesh, lam=lam, time=state.time + h,
                    step_size=h, conserved=state.conserved)
    return new, info


@dataclass
class FlowResult:
    final: FlowState
    rows: list = field(default_factory=list)
    stopped: str = ""
    energy_violations: int = 0


def run_flow(state0, c0=0.0, h_min=1e-6, h_max=1.0, tol=1e-6,
             t_max=math.inf, stop=1e-3, max_steps=100000):
    """Adaptive implicit flow until (sup |dw|)/h drops below ``stop``.

    The step is halved after a rejected or laboring solve (more than 8
    Newton iterations) and grown by 1.2 after easy ones (3 or fewer).
    Energy increases beyond 1e-8 of scale are counted and logged as a
    numerics-quality warning, not treated as errors.
    """
    state = replace(state0)
    g = Geometry(state.mesh)
    e_prev, en_prev = g.energy(c0)
    rows = [{
        "t": state.time, "h": state.step_size, "E": e_prev,
        "normalized_E": en_prev, "lambda1": state.lam[0],
        "lambda2": state.lam[1],
        "area_rel_err": abs(g.area - state.conserved[0]) /
        state.conserved[0],
        "vol_rel_err": abs(g.volume - state.conserved[1]) /
        state.conserved[1],
        "newton_iters": 0,
    }]
    violations = 0
    stopped = "max_steps"
    for _ in range(max_steps):
        if state.time >= t_max:
            stopped = "t_max"
            break
        h = min(max(state.step_size, h_min), h_max)
        if math.isfinite(t_max):
            h = min(h, t_max - state.time)
        state.step_size = h
        try:
            new, info = flow_step(state, tol=tol, c0=c0)
        except NewtonDivergence as exc:
            if h <= h_min * (1.0 + 1e-12):
                raise RuntimeError("flow stalled: no convergence at the "
                                   "minimal step size (%s)" % exc)
            state.step_size = max(h / 2.0, h_min)
            continue
        e_new = info["energy"]
        if e_new > e_prev + 1e-8 * max(abs(e_prev), 1.0):
            violations += 1
            log.warning("energy increased by %.3e at t=%.6g",
                        e_new - e_prev, new.time)
        e_prev = e_new
        if info["newton_iters"] > 8:
            new.step_size = max(h / 2.0, h_min)
        elif info["newton_iters"] <= 3:
            new.step_size = min(h * 1.2, h_max)
        rows.append({
            "t": new.time, "h": h, "E": e_new,
            "normalized_E": info["normalized_energy"],
            "lambda1": new.lam[0], "lambda2": new.lam[1],
            "area_rel_err": info["area_rel_err"],
            "vol_rel_err": info["vol_rel_err"],
            "newton_iters": info["newton_iters"],
        })
        state = new
        if info["sup_dw"] / h < stop:
            stopped = "steady"
            break
    return FlowResult(final=state, rows=rows, stopped=stopped,
                      energy_violations=violations)


def perturb_bump(mesh, delta, xi):
    """Azimuthal bump delta cos(phi)/(1 + xi (x - L/2)^2) along the inner
    normal, centered so the field is smooth across the periodic seam."""
    p = mesh.vertices[mesh.rep_vertices]
    x = p[:, 0] - 0.5 * mesh.axial_period
    phi = np.arctan2(p[:, 2], p[:, 1])
    u0 = delta * np.cos(phi) / (1.0 + xi * x * x)
    return displace(mesh, -u0)


def perturb_eigen(mesh, direction, delta):
    """delta times the sup-normalized direction field, along the inner
    normal."""
    d = np.asarray(direction, dtype=np.float64)
    if d.shape[0] == mesh.n_vertices:
        d = mesh.restrict(d)
    top = np.abs(d).max()
    if top < 1e-300:
        if delta != 0.0:
            raise ValueError("zero direction field")
        return displace(mesh, np.zeros(mesh.ndof))
    return displace(mesh, -(delta / top) * d)
