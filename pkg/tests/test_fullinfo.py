import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from ugc_equilibria.core import ActionProfile, GameConfig
from ugc_equilibria.fullinfo import (
    EquilibriumSearchError,
    Verdict,
    best_response_m4,
    eq_boundary,
    eq_interior,
    m3_prefix_index,
    perturbed_dynamics,
    solve,
    solve_m1,
    solve_m2,
    solve_m3,
    solve_m4,
)
from ugc_equilibria.verify import verify_pne

M3_TYPES = (0.9247, 0.3421, 0.3095)


def brute_force_binary(cfg):
    """All binary equilibria by plain enumeration of supports (independent of the package)."""
    N, R, c, q = cfg.n_users, cfg.reward, cfg.cost, cfg.types

    def util(i, acts):
        if acts[i] == 0:
            return 0.0
        if cfg.mechanism.allocation == "proportional":
            share = R * acts[i] / sum(acts)
        else:
            above = sum(1 for j in range(N) if acts[j] > acts[i])
            tied = sum(1 for j in range(N) if acts[j] == acts[i])
            slots = cfg.top_k - above
            share = 0.0 if slots <= 0 else R / cfg.top_k * min(1.0, slots / tied)
        return share - c * acts[i] / q[i]

    eqs = []
    for bits in itertools.product((0, 1), repeat=N):
        acts = [q[i] * b for i, b in enumerate(bits)]
        stable = True
        for i in range(N):
            flipped = list(acts)
            flipped[i] = q[i] - acts[i]
            if util(i, flipped) > util(i, acts) + 1e-12:
                stable = False
                break
        if stable:
            eqs.append(tuple(acts))
    return eqs


def grid_argmax(q, x_minus, R, c, step=1e-5):
    xs = np.arange(0.0, q + step / 2, step)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(xs > 0, R * xs / (xs + x_minus) - c * xs / q, 0.0)
    return xs[np.argmax(u)]


class TestSolveM1:
    def test_below_threshold(self):
        out = solve_m1(GameConfig("M1", 2, 1.0, 1.0, top_k=2, types=(1.0, 0.5)))
        assert out.verdict is Verdict.UNIQUE
        assert out.profiles[0].actions == (0.0, 0.0)

    def test_above_threshold(self):
        cfg = GameConfig("M1", 3, 3.0, 1.0, top_k=2, types=(0.9, 0.6, 0.3))
        out = solve_m1(cfg)
        assert out.verdict is Verdict.UNIQUE
        assert out.profiles[0].actions == (0.9, 0.6, 0.0)

    def test_marginal(self):
        cfg = GameConfig("M1", 3, 2.0, 1.0, top_k=2, types=(0.9, 0.6, 0.3))
        out = solve_m1(cfg)
        assert out.verdict is Verdict.MARGINAL
        assert ActionProfile((0.0, 0.0, 0.0)) in out.profiles
        assert ActionProfile((0.9, 0.6, 0.0)) in out.profiles
        assert "R = Kc" in out.notes

    def test_tie_at_kth_type(self):
        # two slots, three users of equal type; R/3 > c lets all three share
        cfg = GameConfig("M1", 3, 3.5, 1.0, top_k=2, types=(0.5, 0.5, 0.5))
        out = solve_m1(cfg)
        assert out.verdict is Verdict.UNIQUE
        assert out.profiles[0].actions == (0.5, 0.5, 0.5)
        assert set(brute_force_binary(cfg)) == {(0.5, 0.5, 0.5)}

    def test_tie_at_break_even(self):
        # the third user entering earns exactly zero, so pairs are stable too
        cfg = GameConfig("M1", 3, 3.0, 1.0, top_k=2, types=(0.5, 0.5, 0.5))
        out = solve_m1(cfg)
        assert out.verdict is Verdict.MULTIPLE
        assert len(brute_force_binary(cfg)) == 4

    def test_tie_with_partial_entry(self):
        cfg = GameConfig("M1", 4, 2.5, 1.0, top_k=2, types=(0.9, 0.5, 0.5, 0.5))
        out = solve_m1(cfg)
        assert out.verdict is Verdict.MULTIPLE
        assert out.profiles[0].actions in brute_force_binary(cfg)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.sampled_from([0.2, 0.4, 0.7, 1.0]), min_size=1, max_size=6),
           st.integers(1, 4), st.sampled_from([0.5, 1.0, 2.0, 3.0, 4.0, 5.5]))
    def test_matches_brute_force(self, types, k, R):
        types = tuple(sorted(types, reverse=True))
        cfg = GameConfig("M1", len(types), R, 1.0, top_k=k, types=types)
        out = solve_m1(cfg)
        eqs = set(brute_force_binary(cfg))
        for p in out.profiles:
            assert p.actions in eqs
        if out.verdict is Verdict.UNIQUE:
            assert len(eqs) == 1


class TestSolveM2:
    def test_main_case(self):
        out = solve_m2(GameConfig("M2", 3, 2.0, 1.0, top_k=1, types=(0.9, 0.6, 0.3)))
        assert out.verdict is Verdict.NONE and out.profiles == ()

    def test_outside_main_case(self):
        out = solve_m2(GameConfig("M2", 2, 1.0, 1.0, top_k=2, types=(1.0, 1.0)), confirm=True)
        assert out.verdict is Verdict.NONE
        assert "outside the main case" in out.notes

    def test_confirmed_by_scan(self):
        out = solve_m2(GameConfig("M2", 4, 10.0, 1.0, top_k=2, types=(0.9, 0.7, 0.5, 0.3)),
                       confirm=False)
        assert out.verdict is Verdict.NONE
        out = solve_m2(GameConfig("M2", 3, 10.0, 1.0, top_k=2, types=(0.9, 0.7, 0.5)),
                       confirm=True)
        assert "no stable profiles" in out.notes

    def test_tie_at_common_cap(self):
        cfg = GameConfig("M2", 3, 5.0, 1.0, top_k=2, types=(1.0, 1.0, 1.0))
        out = solve_m2(cfg)
        assert out.profiles[0].actions == (1.0, 1.0, 1.0)
        assert verify_pne(out.profiles[0], cfg).is_equilibrium


class TestSolveM3:
    def test_example_profiles(self):
        cfg = GameConfig("M3", 3, 4.0, 1.0, types=M3_TYPES)
        out = solve_m3(cfg)
        acts = {p.actions for p in out.profiles}
        assert (0.9247, 0.3421, 0.0) in acts and (0.9247, 0.0, 0.3095) in acts
        assert out.verdict is Verdict.MULTIPLE
        assert m3_prefix_index(cfg) == 2

    def test_below_cost(self):
        out = solve_m3(GameConfig("M3", 3, 0.8, 1.0, types=M3_TYPES))
        assert out.verdict is Verdict.UNIQUE
        assert out.profiles[0].actions == (0.0, 0.0, 0.0)

    def test_equal_types(self):
        cfg = GameConfig("M3", 2, 4.0, 1.0, types=(1.0, 1.0))
        out = solve_m3(cfg)
        assert out.profiles[0].actions == (1.0, 1.0)
        assert brute_force_binary(cfg) == [(1.0, 1.0)]

    def test_marginal(self):
        cfg = GameConfig("M3", 3, 1.0, 1.0, types=M3_TYPES)
        out = solve_m3(cfg)
        assert out.verdict is Verdict.MARGINAL
        assert len(out.profiles) == 4

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=7), st.floats(0.3, 8.0))
    def test_matches_brute_force(self, types, R):
        types = tuple(sorted(types, reverse=True))
        cfg = GameConfig("M3", len(types), R, 1.0, types=types)
        out = solve_m3(cfg)
        assert {p.actions for p in out.profiles} == set(brute_force_binary(cfg))


class TestBestResponseM4:
    @pytest.mark.parametrize("q,R,x_minus,expected", [
        (1.0, 2.0, 0.5, 0.5),
        (0.5, 1.0, 1.0, 0.0),
        (0.5, 4.0, 0.5, 0.5),
    ])
    def test_examples_against_grid(self, q, R, x_minus, expected):
        cfg = GameConfig("M4", 2, R, 1.0, types=(1.0, 1.0))
        br = best_response_m4(q, x_minus, cfg)
        assert br == pytest.approx(expected, abs=1e-12)
        assert abs(grid_argmax(q, x_minus, R, 1.0) - br) < 1e-4

    def test_no_best_response_at_zero(self):
        cfg = GameConfig("M4", 2, 2.0, 1.0, types=(1.0, 1.0))
        assert best_response_m4(1.0, 0.0, cfg) is None


class TestLocalGames:
    def test_interior_symmetric(self):
        cfg = GameConfig("M4", 2, 2.0, 1.0, types=(1.0, 1.0))
        assert_allclose(eq_interior(cfg, 2), [0.5, 0.5])

    def test_interior_infeasible_third_user(self):
        cfg = GameConfig("M4", 3, 2.0, 1.0, types=(1.0, 1.0, 0.1))
        assert eq_interior(cfg, 3)[2] < 0

    def test_interior_fixed_point(self):
        cfg = GameConfig("M4", 3, 3.0, 1.0, types=(0.9, 0.8, 0.7))
        y = eq_interior(cfg, 3)
        for i in range(3):
            assert best_response_m4(cfg.types[i], y.sum() - y[i], cfg) == pytest.approx(y[i], abs=1e-12)

    def test_boundary_all_pinned_equality(self):
        cfg = GameConfig("M4", 2, 4.0, 1.0, types=(1.0, 1.0))
        sol = eq_boundary(cfg, 2, 2)
        assert sol.feasible
        assert sol.profile.actions == (1.0, 1.0)
        assert best_response_m4(1.0, 1.0, cfg) == pytest.approx(1.0)

    def test_boundary_needs_4c(self):
        cfg = GameConfig("M4", 2, 2.0, 1.0, types=(1.0, 0.4))
        assert not eq_boundary(cfg, 2, 1).feasible

    def test_boundary_free_users_best_respond(self):
        cfg = GameConfig("M4", 3, 10.0, 1.0, types=(0.3, 0.28, 0.26))
        sol = eq_boundary(cfg, 3, 1)
        x = sol.profile.array
        for i in (1, 2):
            assert best_response_m4(cfg.types[i], x.sum() - x[i], cfg) == pytest.approx(x[i], abs=1e-12)

    def test_bad_sizes(self):
        cfg = GameConfig("M4", 2, 4.0, 1.0, types=(1.0, 1.0))
        with pytest.raises(ValueError):
            eq_boundary(GameConfig("M4", 1, 4.0, 1.0, types=(1.0,)), 1, 1)
        with pytest.raises(ValueError):
            eq_interior(cfg, 1)
        with pytest.raises(ValueError):
            eq_boundary(cfg, 2, 0)


class TestSolveM4:
    def test_third_user_stays_out(self):
        out = solve_m4(GameConfig("M4", 3, 2.0, 1.0, types=(1.0, 1.0, 0.1)))
        assert_allclose(out.profiles[0].array, [0.5, 0.5, 0.0], atol=1e-12)

    def test_symmetric_pair(self):
        cfg = GameConfig("M4", 2, 2.0, 1.0, types=(1.0, 1.0))
        out = solve_m4(cfg)
        dyn = perturbed_dynamics(cfg, epsilon=1e-6)
        assert_allclose(out.profiles[0].array, [0.5, 0.5], atol=1e-12)
        assert np.max(np.abs(dyn.profile.array - out.profiles[0].array)) < 1e-6

    def test_both_pinned(self):
        out = solve_m4(GameConfig("M4", 2, 8.0, 1.0, types=(1.0, 1.0)))
        assert out.profiles[0].actions == (1.0, 1.0)

    def test_single_user_rejected(self):
        with pytest.raises(ValueError):
            solve_m4(GameConfig("M4", 1, 2.0, 1.0, types=(1.0,)))

    def test_zero_profile_is_never_returned(self):
        cfg = GameConfig("M4", 3, 0.6, 1.0, types=(0.5, 0.4, 0.2))
        out = solve_m4(cfg, all_equilibria=True)
        assert all(p.array.sum() > 0 for p in out.profiles)
        assert not verify_pne(ActionProfile((0.0, 0.0, 0.0)), cfg).is_equilibrium

    def test_interior_full_candidate_matches(self):
        cfg = GameConfig("M4", 3, 3.0, 1.0, types=(0.9, 0.8, 0.7))
        y = eq_interior(cfg, 3)
        assert np.all((y > 0) & (y < cfg.q))
        assert_allclose(solve_m4(cfg).profiles[0].array, y, atol=1e-10)

    def test_dispatch(self):
        cfg = GameConfig("M4", 2, 2.0, 1.0, types=(1.0, 1.0))
        assert solve(cfg).profiles == solve_m4(cfg).profiles

    def test_search_error_type(self):
        assert issubclass(EquilibriumSearchError, RuntimeError)


m4_instances = st.tuples(
    st.lists(st.floats(0.05, 1.0), min_size=2, max_size=6),
    st.floats(0.5, 20.0),
).map(lambda t: GameConfig("M4", len(t[0]), t[1], 1.0, types=tuple(sorted(t[0], reverse=True))))


class TestM4Properties:
    @settings(max_examples=60, deadline=None)
    @given(m4_instances)
    def test_certified_and_prefix(self, cfg):
        out = solve_m4(cfg, all_equilibria=True)
        for p in out.profiles:
            assert verify_pne(p, cfg).gain <= 1e-9
            pinned = p.array >= cfg.q - 1e-12
            assert not np.any(pinned[1:] & ~pinned[:-1])

    @settings(max_examples=30, deadline=None)
    @given(m4_instances, st.floats(0.1, 10.0))
    def test_scale_invariance(self, cfg, s):
        scaled = GameConfig("M4", cfg.n_users, cfg.reward * s, cfg.cost * s, types=cfg.types)
        assert_allclose(solve_m4(scaled).profiles[0].array, solve_m4(cfg).profiles[0].array,
                        atol=1e-9)

    @pytest.mark.parametrize("types,R", [
        ((1.0, 1.0, 0.1), 2.0),
        ((0.9, 0.8, 0.7), 3.0),
        ((1.0, 0.6, 0.5, 0.2), 6.0),
        ((0.4, 0.35, 0.3), 12.0),
    ])
    def test_perturbed_limit(self, types, R):
        cfg = GameConfig("M4", len(types), R, 1.0, types=types)
        target = solve_m4(cfg).profiles[0].array
        dists = []
        for eps in (1e-4, 1e-6, 1e-8):
            res = perturbed_dynamics(cfg, epsilon=eps)
            assert res.converged
            dists.append(np.max(np.abs(res.profile.array - target)))
        assert dists[0] >= dists[1] >= dists[2]
        assert dists[2] < 1e-3


class TestDynamics:
    def test_floor_user(self):
        res = perturbed_dynamics(GameConfig("M4", 3, 2.0, 1.0, types=(1.0, 1.0, 0.1)), epsilon=1e-8)
        assert res.converged
        assert_allclose(res.profile.array, [0.5, 0.5, 1e-8], atol=1e-7)

    def test_single_user_flag(self):
        res = perturbed_dynamics(GameConfig("M4", 1, 2.0, 1.0, types=(1.0,)))
        assert res.no_best_response and res.profile is None

    def test_damping_used_for_many_users(self):
        res = perturbed_dynamics(GameConfig("M4", 5, 4.0, 1.0, types=(0.5,) * 5))
        assert res.converged and res.damping == 0.5
        assert_allclose(res.profile.array, eq_interior(GameConfig("M4", 5, 4.0, 1.0, types=(0.5,) * 5), 5),
                        atol=1e-10)

    def test_bad_epsilon(self):
        cfg = GameConfig("M4", 2, 2.0, 1.0, types=(1.0, 0.1))
        with pytest.raises(ValueError):
            perturbed_dynamics(cfg, epsilon=0.0)
        with pytest.raises(ValueError):
            perturbed_dynamics(cfg, epsilon=0.2)
