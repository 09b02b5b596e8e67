import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from fbmcontrol import (
    ConfigError,
    CovarianceSpec,
    DelaySystemSpec,
    RngStream,
    SampledFunction,
    TimeGrid,
    build_system,
    contraction_constant,
    delayed_lookup,
    heat_memory_example,
    sample_qfbm,
)
from fbmcontrol.system_model import (
    Delay,
    DelayModel,
    GateWarning,
    NonlinearityModel,
    Trajectory,
    gate_passing_example,
    history_grid,
    load_spec,
    parse_spec,
    save_spec,
    to_modes,
    to_physical,
)

nonneg = st.floats(0, 3)


def quiet_build(spec):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GateWarning)
        return build_system(spec)


@pytest.fixture(scope="module")
def preset():
    return quiet_build(heat_memory_example(n_steps=128))


def trajectory_for(system):
    grid = system.grid
    fwd = system.history.values[-1] * np.cos(grid.nodes)[:, None]
    return Trajectory(system.history, SampledFunction(grid, fwd))


class TestGate:
    def test_zero_nonlinearity(self):
        rep = contraction_constant(0, 0, 2.0, 3.0, 4.0, 1.0)
        assert rep.K == 0 and rep.passes

    def test_reference_arithmetic(self):
        rep = contraction_constant(0.1, 0.1, 1, 1, 1, 1)
        assert rep.condition_value == pytest.approx(0.04)
        assert rep.K == pytest.approx(0.16)
        assert rep.passes

    def test_large_c3_fails(self):
        rep = contraction_constant(0.0, 0.6, 0.0, 0.0, 0.0, 1.0)
        assert rep.condition_value >= 0.36 and not rep.passes

    def test_threshold_is_strict(self):
        assert not contraction_constant(0.0, 0.5, 0, 0, 0, 1).passes
        assert contraction_constant(0.0, 0.5 - 1e-9, 0, 0, 0, 1).passes

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            contraction_constant(-0.1, 0, 1, 1, 1, 1)

    @given(nonneg, nonneg, nonneg, nonneg, nonneg, nonneg, st.integers(0, 5), st.floats(0, 1))
    def test_monotone(self, c1, c3, d, ml, mw, t, which, bump):
        args = [c1, c3, d, ml, mw, t]
        base = contraction_constant(*args)
        args[which] += bump
        bumped = contraction_constant(*args)
        assert bumped.K >= base.K
        assert bumped.K == pytest.approx(4 * bumped.condition_value)
        assert bumped.passes == (bumped.condition_value < 0.25)

    def test_linear_preset_has_zero_k(self):
        system = build_system(heat_memory_example(modes=4, n_steps=64, f_gain=0.0, g_gain=0.0))
        assert system.gate.K == 0.0 and system.gate.passes

    def test_preset_warns(self):
        with pytest.warns(GateWarning):
            build_system(heat_memory_example(n_steps=64))

    def test_gate_passing_example(self):
        system = build_system(gate_passing_example(modes=4, n_steps=128))
        assert system.gate.condition_value == pytest.approx(0.04, rel=1e-9)
        assert system.gate.K == pytest.approx(0.16, rel=1e-9)


class TestLookup:
    def test_zero_delay(self, preset):
        traj = trajectory_for(preset)
        np.testing.assert_array_equal(
            delayed_lookup(traj, 0.5, Delay("constant", 0.0)), traj.forward.values[64]
        )

    def test_origin_reads_history(self, preset):
        traj = trajectory_for(preset)
        hist = preset.history
        got = delayed_lookup(traj, 0.0, preset.delay_r)
        np.testing.assert_allclose(got, hist(-0.2), rtol=1e-14)

    def test_half_delay_hits_history_node(self, preset):
        traj = trajectory_for(preset)
        hist = preset.history
        k = int(np.argmin(np.abs(hist.grid.nodes + 0.1)))
        assert hist.grid.nodes[k] == pytest.approx(-0.1, abs=1e-15)
        np.testing.assert_array_equal(delayed_lookup(traj, 0.1, Delay("constant", 0.2)), hist.values[k])

    def test_node_hits_exact(self, preset):
        traj = trajectory_for(preset)
        for j in (0, 3, 77, 128):
            t = traj.forward.grid.nodes[j]
            np.testing.assert_array_equal(traj.at(t), traj.forward.values[j])
        for k in range(traj.history.grid.n_steps + 1):
            np.testing.assert_array_equal(traj.at(traj.history.grid.nodes[k]), traj.history.values[k])

    def test_interpolates_between_nodes(self, preset):
        traj = trajectory_for(preset)
        mid = 0.5 * (traj.forward.grid.nodes[10] + traj.forward.grid.nodes[11])
        np.testing.assert_allclose(traj.at(mid), 0.5 * (traj.forward.values[10] + traj.forward.values[11]))

    def test_out_of_range(self, preset):
        traj = trajectory_for(preset)
        with pytest.raises(ConfigError):
            delayed_lookup(traj, 1.5, preset.delay_r)
        with pytest.raises(ConfigError):
            traj.at(-0.5)

    def test_history_grid_has_half_delay_node(self):
        hg = history_grid(0.2, 1 / 512)
        assert hg.start == -0.2 and hg.end == pytest.approx(0.0, abs=1e-15)
        assert hg.n_steps % 2 == 0


class TestBasis:
    @pytest.mark.parametrize("n", [1, 2, 7])
    def test_basis_normalized(self, n):
        val = quad(lambda xi: 2 / np.pi * np.sin(n * xi) ** 2, 0, np.pi)[0]
        assert val == pytest.approx(1.0, rel=1e-12)

    def test_round_trip_and_parseval(self):
        x = RngStream(3).normal(16)
        phys = to_physical(x)
        np.testing.assert_allclose(to_modes(phys, 16), x, atol=1e-13)
        m = phys.size
        assert np.pi / (m + 1) * np.sum(phys**2) == pytest.approx(np.sum(x**2), rel=1e-12)

    def test_collocation_values(self):
        x = np.zeros(4)
        x[2] = 1.0
        phys = to_physical(x)
        xi = np.pi * np.arange(1, phys.size + 1) / (phys.size + 1)
        np.testing.assert_allclose(phys, np.sqrt(2 / np.pi) * np.sin(3 * xi), atol=1e-13)


class TestNonlinearity:
    def test_sin_audit_below_gain(self, preset):
        found = preset.f.audit(16, 1.0, RngStream(5))
        assert found["lipschitz"] <= 0.05 * (1 + 1e-12)
        assert found["growth"] <= 0.05**2 * (1 + 1e-12)

    def test_halved_constant_fails(self):
        spec = heat_memory_example(modes=4, n_steps=64).model_copy(
            update={"f": NonlinearityModel(shape="linear", gain=0.05, lipschitz=0.025)}
        )
        with pytest.raises(ConfigError, match="Lipschitz"):
            quiet_build(spec)

    def test_mean_square_continuity(self, preset):
        grid = TimeGrid(1.0, 256)
        q = CovarianceSpec(np.arange(1, 17, dtype=float) ** -2)
        paths = [sample_qfbm(q, 0.25, grid, RngStream(9, (p,))).values for p in range(200)]
        gaps = []
        for lag in (32, 8, 2):
            sq = [np.sum((preset.g(0.0, x[lag:]) - preset.g(0.0, x[:-lag])) ** 2, axis=1).mean() for x in paths]
            gaps.append(np.mean(sq))
        assert gaps[0] > gaps[1] > gaps[2]


class TestSpecDocument:
    def test_round_trip(self, tmp_path):
        spec = heat_memory_example(modes=5, target=[0, 1, 0, 0, 0])
        path = tmp_path / "spec.json"
        save_spec(spec, path)
        assert load_spec(path) == spec

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_spec(json.dumps({"modes": 4, "bogus": 1}))

    def test_wrong_type(self):
        with pytest.raises(ConfigError):
            parse_spec(json.dumps({"modes": "4"}))

    def test_delay_out_of_range(self):
        spec = DelaySystemSpec(modes=2, n_steps=16, max_delay=0.2,
                               delay_r=DelayModel(kind="sinusoidal", value=0.15, amplitude=0.1))
        with pytest.raises(ConfigError, match="delay_r"):
            build_system(spec)

    def test_vector_length(self):
        with pytest.raises(ConfigError, match="target"):
            build_system(DelaySystemSpec(modes=3, n_steps=16, target=[1.0, 0.0]))

    def test_random_history_seeded(self):
        spec = DelaySystemSpec(modes=3, n_steps=16, history={"kind": "random", "seed": 4})
        a, b = build_system(spec).history.values, build_system(spec).history.values
        np.testing.assert_array_equal(a, b)
        smooth = build_system(DelaySystemSpec(modes=3, n_steps=16)).history.values
        assert not np.array_equal(a, smooth)

    def test_realized_components(self, preset):
        assert preset.modes == 16 and preset.hurst == 0.25
        np.testing.assert_array_equal(preset.target, np.eye(16)[0])
        np.testing.assert_allclose(preset.q.eigenvalues, np.arange(1, 17) ** -2.0)
        assert preset.noise_report["holder_ratio"] <= 1.0
        with pytest.warns(GateWarning):
            assert preset.with_steps(64).grid.n_steps == 64
