"""Arclength continuation: trivial branch, branch points, switching."""

import json

import numpy as np
import pytest

import helftube.amplitude as am
from helftube.continuation import (BranchState, PhaseConditions,
                                   constrained_stability, continue_branch,
                                   detect_bifurcations, rigid_fields,
                                   solve_trivial_state, switch_branch,
                                   write_bifurcations_json, write_branch_csv)
from helftube.linstab import bifurcation_point, lambda1_on_cylinder
from helftube.surface import Geometry, build_cylinder_mesh


@pytest.fixture(scope="module")
def tube1000():
    return build_cylinder_mesh(10.0, 1.0, 1000)


@pytest.fixture(scope="module")
def trivial_branch(tube1000):
    st = solve_trivial_state(tube1000, -0.5, c0=0.0, tracked_modes=[(1, 0)])
    return continue_branch(st, direction=-1, steps=6, ds=0.05, c0=0.0,
                           tracked_modes=[(1, 0)])


@pytest.fixture(scope="module")
def pearl_bp(tube1000):
    st = solve_trivial_state(tube1000, -0.90, c0=0.0)
    br = continue_branch(st, direction=-1, steps=4, ds=0.04, c0=0.0)
    bps = detect_bifurcations(br, c0=0.0)
    assert len(bps) == 1
    return bps[0]


@pytest.fixture(scope="module")
def pearl_branch(pearl_bp):
    seed = switch_branch(pearl_bp, "pearling", 0.04, c0=0.0)
    parent = BranchState(mesh=pearl_bp["mesh"], lam=pearl_bp["lam"])
    br = continue_branch(seed, steps=5, ds=0.03, c0=0.0, prev=parent,
                         tracked_modes=[(1, 0), (1, 1)])
    return seed, br


class TestPhaseSetup:
    def test_translations_always_active(self):
        with pytest.raises(ValueError):
            PhaseConditions(active=("translate_y",))

    def test_unknown_generator_rejected(self):
        with pytest.raises(ValueError):
            PhaseConditions(active=("translate_y", "translate_z", "spin"))

    def test_degenerate_generators_on_cylinder(self):
        mesh = build_cylinder_mesh(10.0, 1.0, 400)
        geo = Geometry(mesh)
        for name in ("translate_x", "rotate_x"):
            with pytest.raises(ValueError):
                rigid_fields(geo, mesh, (name,))

    def test_transverse_generators_mass_normalized(self):
        mesh = build_cylinder_mesh(10.0, 1.0, 400)
        geo = Geometry(mesh)
        fields = rigid_fields(geo, mesh, ("translate_y", "translate_z"))
        m0 = geo.mass
        for f in fields:
            assert abs(np.sum(m0 * f * f) - 1.0) <= 1e-12


class TestTrivialBranch:
    def test_anchor_matches_closed_form(self, trivial_branch):
        st = trivial_branch.states[0]
        assert abs(st.lam[0] - lambda1_on_cylinder(-0.5)) <= 5e-5
        assert st.n_unstable == 0
        # leading constrained pair sits on the axial dispersion value
        mu_ref = -0.2753193608489891
        assert abs(st.spectrum[0] / mu_ref - 1.0) <= 0.02
        assert abs(st.spectrum[1] / mu_ref - 1.0) <= 0.02

    def test_multiplier_path_is_affine(self, trivial_branch):
        l1 = np.array([s.lam[0] for s in trivial_branch.states])
        l2 = np.array([s.lam[1] for s in trivial_branch.states])
        A = np.vstack([l2, np.ones_like(l2)]).T
        coef, *_ = np.linalg.lstsq(A, l1, rcond=None)
        assert np.abs(A @ coef - l1).max() <= 1e-8
        assert abs(coef[0] + 1.0) <= 5e-3

    def test_volume_conserved(self, trivial_branch):
        v = np.array([s.diagnostics.reduced_volume
                      for s in trivial_branch.states])
        assert v.max() - v.min() <= 1e-12
        assert abs(v[0] - 1.0) <= 1e-2

    def test_phase_multipliers_vanish(self, trivial_branch):
        worst = max(max(abs(x) for x in s.phase.multipliers.values())
                    for s in trivial_branch.states)
        assert worst <= 1e-6

    def test_stays_axisymmetric(self, trivial_branch):
        worst = max(abs(s.amplitude[(1, 0)]) for s in trivial_branch.states)
        assert worst <= 1e-8

    def test_arclength_monotone(self, trivial_branch):
        arc = [s.arclength for s in trivial_branch.states]
        assert all(b > a for a, b in zip(arc, arc[1:]))

    def test_no_crossing_detected(self, trivial_branch):
        assert detect_bifurcations(trivial_branch, c0=0.0) == []


class TestStability:
    def test_state_and_explicit_calls_agree(self, trivial_branch):
        st = trivial_branch.states[0]
        mu_a, _, _ = constrained_stability(st, c0=0.0)
        mu_b, _, _ = constrained_stability(st.mesh, lam=st.lam, c0=0.0)
        assert np.allclose(mu_a[:6], mu_b[:6], atol=1e-9)

    def test_bare_mesh_needs_multipliers(self, tube1000):
        with pytest.raises(ValueError):
            constrained_stability(tube1000)


class TestPearlBranch:
    def test_onset_location_mode_multiplicity(self, pearl_bp):
        assert abs(pearl_bp["lambda2"] - bifurcation_point(1, 0, 10.0)) \
            <= 2.5e-3
        assert (pearl_bp["mode_m"], pearl_bp["mode_n"]) == (1, 0)
        assert pearl_bp["multiplicity"] == 2
        assert pearl_bp["kernel"].shape[0] == 2

    def test_switch_seeds_at_target_amplitude(self, pearl_branch):
        seed, _ = pearl_branch
        assert abs(abs(seed.amplitude[(1, 0)]) / 0.02 - 1.0) <= 0.05
        assert seed.n_unstable == 0
        assert max(abs(x) for x in seed.phase.multipliers.values()) <= 1e-6

    def test_zero_amplitude_switch_rejected(self, pearl_bp):
        with pytest.raises(ValueError):
            switch_branch(pearl_bp, "pearling", 0.0, c0=0.0)

    def test_slope_matches_weakly_nonlinear_prediction(self, pearl_branch):
        _, br = pearl_branch
        amps = np.array([abs(s.amplitude[(1, 0)]) for s in br.states])
        l2 = np.array([s.lam[1] for s in br.states])
        slopes = np.diff(l2) / np.diff(amps ** 2)
        ae = am.pearling_ae(0.0, 10.0)
        pred = ae.beta2 / ae.steady_amplitude ** 2
        assert pred < 0.0
        # drift grows with amplitude, so judge the small-amplitude end
        assert np.abs(slopes[:3] / pred - 1.0).max() <= 0.05

    def test_branch_stays_axisymmetric_and_steady(self, pearl_branch):
        _, br = pearl_branch
        cross = [abs(s.amplitude[(1, 1)]) / abs(s.amplitude[(1, 0)])
                 for s in br.states[1:]]
        assert max(cross) <= 1e-2
        assert all(s.n_unstable == 0 for s in br.states)
        worst = max(max(abs(x) for x in s.phase.multipliers.values())
                    for s in br.states)
        assert worst <= 1e-6


class TestGuards:
    def test_unreachable_tolerance_exhausts_steps(self):
        mesh = build_cylinder_mesh(10.0, 1.0, 400)
        st = solve_trivial_state(mesh, -0.5, c0=0.0)
        with pytest.raises(RuntimeError, match="minimal arclength"):
            continue_branch(st, steps=2, ds=0.02, c0=0.0, tol=1e-15,
                            ds_min=5e-3, max_iter=4)

    def test_adaption_threshold_does_not_derail(self):
        mesh = build_cylinder_mesh(10.0, 1.0, 400)
        st = solve_trivial_state(mesh, -0.5, c0=0.0)
        br = continue_branch(st, direction=-1, steps=3, ds=0.04, c0=0.0,
                             q_adapt=1.0)
        assert len(br.states) == 4
        l2 = [s.lam[1] for s in br.states]
        assert all(b < a for a, b in zip(l2, l2[1:]))
        v = [s.diagnostics.reduced_volume for s in br.states]
        assert max(v) - min(v) <= 1e-10


class TestWriters:
    def test_branch_csv_deterministic(self, trivial_branch, tmp_path):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_branch_csv(trivial_branch, p1)
        write_branch_csv(trivial_branch, p2)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().strip().split("\n")
        head = lines[0].split(",")
        assert head[:3] == ["arclength", "lambda1", "lambda2"]
        assert len(lines) == len(trivial_branch.states) + 1
        # full-precision floats round-trip exactly
        col2 = [float(ln.split(",")[2]) for ln in lines[1:]]
        assert col2 == [s.lam[1] for s in trivial_branch.states]

    def test_bifurcation_records(self, pearl_bp, tmp_path):
        path = tmp_path / "bps.json"
        write_bifurcations_json([pearl_bp], path)
        recs = json.loads(path.read_text())
        assert len(recs) == 1
        assert recs[0]["mode_m"] == 1 and recs[0]["mode_n"] == 0
        assert recs[0]["multiplicity"] == 2
        assert abs(recs[0]["lambda2"] - pearl_bp["lambda2"]) == 0.0


@pytest.fixture(scope="module")
def coil_bp():
    mesh = build_cylinder_mesh(10.0, 1.0, 2000)
    st = solve_trivial_state(mesh, 1.15, c0=0.0)
    br = continue_branch(st, direction=1, steps=3, ds=0.04, c0=0.0)
    return detect_bifurcations(br, c0=0.0)[0]


@pytest.mark.slow
class TestCoilBuckle:
    def test_quartet_onset(self, coil_bp):
        assert abs(coil_bp["lambda2"] - bifurcation_point(1, 1, 10.0)) \
            <= 1e-2
        assert coil_bp["multiplicity"] == 4
        assert (coil_bp["mode_m"], abs(coil_bp["mode_n"])) == (1, 1)

    def test_coil_isotropy_and_slope(self, coil_bp):
        seed = switch_branch(coil_bp, "coiling", 0.04, c0=0.0)
        parent = BranchState(mesh=coil_bp["mesh"], lam=coil_bp["lam"])
        br = continue_branch(seed, steps=3, ds=0.03, c0=0.0, prev=parent,
                             tracked_modes=[(1, 1), (1, -1)])
        amps = np.array([abs(s.amplitude[(1, 1)]) for s in br.states])
        l2 = np.array([s.lam[1] for s in br.states])
        slopes = np.diff(l2) / np.diff(amps ** 2)
        cb = am.coil_buckle_coeffs(0.0, 10.0)
        pred = cb.beta2_coil / cb.coil_amplitude ** 2
        assert np.abs(slopes / pred - 1.0).max() <= 0.05
        iso = [abs(s.amplitude[(1, -1)]) / abs(s.amplitude[(1, 1)])
               for s in br.states]
        assert max(iso) <= 2e-2
        assert all(s.n_unstable == 0 for s in br.states)

    def test_buckle_standing_wave(self, coil_bp):
        seed = switch_branch(coil_bp, "buckling", 0.06, c0=0.0,
                             tracked_modes=[(1, 1), (1, -1)])
        a = abs(seed.amplitude[(1, 1)])
        b = abs(seed.amplitude[(1, -1)])
        assert abs(a - b) / a <= 1e-2
        assert seed.n_unstable >= 1


@pytest.mark.slow
class TestPreferenceHandoff:
    def test_c048_coil_unstable_buckle_stable(self):
        cb = am.coil_buckle_coeffs(0.48, 10.0)
        cls = am.classify_coil_buckle(cb)
        assert cls.coiling_exists and cls.buckling_exists
        assert not cls.coiling_stable and cls.buckling_stable

        mesh = build_cylinder_mesh(10.0, 1.0, 2000)
        st = solve_trivial_state(mesh, cb.lambda2_crit - 0.06, c0=0.48)
        br = continue_branch(st, direction=1, steps=3, ds=0.04, c0=0.48)
        bp = detect_bifurcations(br, c0=0.48)[0]
        coil = switch_branch(bp, "coiling", 0.08, c0=0.48,
                             tracked_modes=[(1, 1), (1, -1)])
        buck = switch_branch(bp, "buckling", 0.11, c0=0.48,
                             tracked_modes=[(1, 1), (1, -1)])
        assert coil.n_unstable >= 1
        assert buck.n_unstable == 0


@pytest.mark.slow
class TestSpontaneousCurvature:
    """Branches at c0 = -1, where all three onsets reorder."""

    def test_wrinkle_onset(self):
        mesh = build_cylinder_mesh(10.0, 1.0, 2000)
        st = solve_trivial_state(mesh, 1.44, c0=-1.0)
        br = continue_branch(st, direction=1, steps=3, ds=0.05, c0=-1.0)
        bps = detect_bifurcations(br, c0=-1.0)
        bpw = [b for b in bps if (b["mode_m"], b["mode_n"]) == (0, 2)][0]
        ae = am.wrinkling_ae(-1.0)
        assert abs(bpw["lambda2"] - ae.lambda2_crit) <= 1e-2
        assert bpw["multiplicity"] == 2

    def test_pearl_slope(self):
        mesh = build_cylinder_mesh(10.0, 1.0, 3000)
        ae = am.pearling_ae(-1.0, 10.0)
        st = solve_trivial_state(mesh, ae.lambda2_crit + 0.05, c0=-1.0)
        br = continue_branch(st, direction=-1, steps=3, ds=0.05, c0=-1.0)
        bp = detect_bifurcations(br, c0=-1.0)[0]
        seed = switch_branch(bp, "pearling", 0.02, c0=-1.0)
        parent = BranchState(mesh=bp["mesh"], lam=bp["lam"])
        nbr = continue_branch(seed, steps=3, ds=0.01, c0=-1.0, prev=parent,
                              tracked_modes=[(1, 0)])
        amps = np.array([abs(s.amplitude[(1, 0)]) for s in nbr.states])
        l2 = np.array([s.lam[1] for s in nbr.states])
        slopes = np.diff(l2) / np.diff(amps ** 2)
        pred = ae.beta2 / ae.steady_amplitude ** 2
        assert pred < 0.0
        assert np.abs(slopes / pred - 1.0).max() <= 0.05

    def test_coil_onset_and_slope(self):
        mesh = build_cylinder_mesh(10.0, 1.0, 2000)
        cb = am.coil_buckle_coeffs(-1.0, 10.0)
        st = solve_trivial_state(mesh, cb.lambda2_crit - 0.06, c0=-1.0)
        br = continue_branch(st, direction=1, steps=3, ds=0.05, c0=-1.0)
        bp = detect_bifurcations(br, c0=-1.0)[0]
        # deep onset: the quartet splits wide, either pair may bracket
        assert abs(bp["lambda2"] - cb.lambda2_crit) <= 0.08
        assert bp["multiplicity"] in (2, 4)
        seed = switch_branch(bp, "coiling", 0.04, c0=-1.0)
        parent = BranchState(mesh=bp["mesh"], lam=bp["lam"])
        nbr = continue_branch(seed, steps=3, ds=0.03, c0=-1.0, prev=parent,
                              tracked_modes=[(1, 1)])
        amps = np.array([abs(s.amplitude[(1, 1)]) for s in nbr.states])
        l2 = np.array([s.lam[1] for s in nbr.states])
        slopes = np.diff(l2) / np.diff(amps ** 2)
        pred = cb.beta2_coil / cb.coil_amplitude ** 2
        assert np.abs(slopes / pred - 1.0).max() <= 0.05

    def test_wrinkle_slope_high_resolution(self):
        # azimuthal mode converges slowly in node count
        mesh = build_cylinder_mesh(10.0, 1.0, 12000)
        st = solve_trivial_state(mesh, 1.44, c0=-1.0)
        br = continue_branch(st, direction=1, steps=3, ds=0.05, c0=-1.0)
        bps = detect_bifurcations(br, c0=-1.0)
        bpw = [b for b in bps if (b["mode_m"], b["mode_n"]) == (0, 2)][0]
        seed = switch_branch(bpw, "wrinkling", 0.025, c0=-1.0)
        parent = BranchState(mesh=bpw["mesh"], lam=bpw["lam"])
        nbr = continue_branch(seed, steps=3, ds=0.015, c0=-1.0,
                              prev=parent, tracked_modes=[(0, 2)])
        amps = np.array([abs(s.amplitude[(0, 2)]) for s in nbr.states])
        l2 = np.array([s.lam[1] for s in nbr.states])
        slopes = np.diff(l2) / np.diff(amps ** 2)
        ae = am.wrinkling_ae(-1.0)
        pred = ae.beta2 / ae.steady_amplitude ** 2
        assert pred > 0.0
        assert np.abs(slopes / pred - 1.0).max() <= 0.05


@pytest.mark.slow
class TestDeepStates:
    """Fully nonlinear states far from onset."""

    def test_deep_pearl_state(self):
        mesh = build_cylinder_mesh(10.0, 1.0, 1500)
        st = solve_trivial_state(mesh, -0.90, c0=0.0)
        br = continue_branch(st, direction=-1, steps=3, ds=0.05, c0=0.0)
        bp = detect_bifurcations(br, c0=0.0)[0]
        seed = switch_branch(bp, "pearling", 0.05, c0=0.0)
        parent = BranchState(mesh=bp["mesh"], lam=bp["lam"])
        deep = continue_branch(seed, steps=52, ds=0.05, c0=0.0,
                               prev=parent, tracked_modes=[(1, 0)],
                               ds_max=0.12)
        l2s = np.array([s.lam[1] for s in deep.states])
        state = deep.states[int(np.argmin(np.abs(l2s + 3.133)))]
        assert abs(state.lam[0] / 3.701 - 1.0) <= 0.02
        assert abs(state.lam[1] / -3.133 - 1.0) <= 0.02
        assert state.n_unstable == 0
        assert -3.33 <= state.spectrum[0] <= -1.11
        assert 0.2 <= abs(state.amplitude[(1, 0)]) <= 0.35

    def test_weakly_unstable_buckle_state(self):
        mesh = build_cylinder_mesh(10.0, 1.0, 1500)
        st = solve_trivial_state(mesh, 1.15, c0=0.0)
        br = continue_branch(st, direction=1, steps=3, ds=0.04, c0=0.0)
        bp = detect_bifurcations(br, c0=0.0)[0]
        seed = switch_branch(bp, "buckling", 0.06, c0=0.0,
                             tracked_modes=[(1, 1), (1, -1)])
        parent = BranchState(mesh=bp["mesh"], lam=bp["lam"])
        bbr = continue_branch(seed, steps=34, ds=0.05, c0=0.0,
                              prev=parent, tracked_modes=[(1, 1), (1, -1)],
                              ds_max=0.1)
        l2s = np.array([s.lam[1] for s in bbr.states])
        state = bbr.states[int(np.argmin(np.abs(l2s - 1.29)))]
        assert abs(state.lam[0] / -0.972 - 1.0) <= 0.02
        assert abs(state.lam[1] / 1.29 - 1.0) <= 0.02
        assert state.n_unstable == 1
        assert 1.2e-3 <= state.spectrum[0] <= 0.12
        a = abs(state.amplitude[(1, 1)])
        b = abs(state.amplitude[(1, -1)])
        assert abs(a - b) / a <= 1e-4
