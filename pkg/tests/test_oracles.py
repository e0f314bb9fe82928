import numpy as np
import pytest

from geomflow.oracles import (
    AntipodeHit,
    OutOfReach,
    heat_score_exact,
    verify_exp_representation,
    verify_faa_2eps,
    verify_gronwall_bound,
    verify_varadhan_rate,
)


class TestHeatScore:
    def test_circle_points_toward_manifold(self):
        score = heat_score_exact("circle", np.array([1.5, 0.0]), 1e-3)
        assert score[0] < 0.0  # negative radial component
        assert abs(score[1]) < 1e-8 * abs(score[0])

    def test_circle_center_out_of_reach(self):
        with pytest.raises(OutOfReach):
            heat_score_exact("circle", np.array([0.0, 0.0]), 1e-3)

    def test_small_time_projection(self):
        x = np.array([1.2, 0.0])
        t = 1e-3
        score = heat_score_exact("circle", x, t, quad_nodes=8192)
        assert np.linalg.norm(x + t * score - np.array([1.0, 0.0])) <= 0.05

    def test_quadrature_converged_circle(self):
        # doubling the node count changes the score by < 1e-10
        for t in (1e-5, 1e-3):
            for x in (np.array([1.3, 0.0]), np.array([0.8, 0.4])):
                s1 = heat_score_exact("circle", x, t, quad_nodes=4096)
                s2 = heat_score_exact("circle", x, t, quad_nodes=8192)
                assert np.linalg.norm((s1 - s2) * t) < 1e-10

    def test_quadrature_converged_sphere(self):
        x = np.array([0.2, -0.1, 1.3])
        for t in (1e-4, 1e-3):
            s1 = heat_score_exact("sphere", x, t, quad_nodes=1024)
            s2 = heat_score_exact("sphere", x, t, quad_nodes=2048)
            assert np.linalg.norm((s1 - s2) * t) < 1e-10

    def test_sphere_score_radial_on_axis(self):
        score = heat_score_exact("sphere", np.array([0.0, 0.0, 1.4]), 1e-3)
        assert score[2] < 0.0
        assert max(abs(score[0]), abs(score[1])) < 1e-8 * abs(score[2])


class TestVaradhanRate:
    def test_circle_slope_in_band(self):
        fit = verify_varadhan_rate("circle", np.array([1.3, 0.0]))
        assert 0.45 <= fit.slope <= 1.1
        assert fit.passed

    def test_on_manifold_trivial(self):
        fit = verify_varadhan_rate("circle", np.array([1.0, 0.0]))
        assert fit.slope >= 0.45

    def test_sphere_slope(self):
        fit = verify_varadhan_rate(
            "sphere", np.array([0.0, 0.0, 1.4]), t_grid=np.logspace(-4, -2, 6),
            quad_nodes=1024,
        )
        assert fit.slope >= 0.45

    def test_leave_one_out_stability(self):
        fit = verify_varadhan_rate("circle", np.array([1.3, 0.0]))
        ts = np.array([s[0] for s in fit.samples])
        es = np.array([s[1] for s in fit.samples])
        for drop in range(len(ts)):
            keep = np.arange(len(ts)) != drop
            slope, _ = np.polyfit(np.log(ts[keep]), np.log(es[keep]), 1)
            assert abs(slope - fit.slope) < 0.05


class TestGronwallBound:
    def test_zero_delta_exact(self):
        check = verify_gronwall_bound(0.0, T=1.0, dt=1e-3, n_samples=50)
        assert check.measured <= 1e-12

    @pytest.mark.parametrize("delta", [1e-4, 1e-3, 1e-2])
    @pytest.mark.parametrize("T", [0.5, 1.0])
    def test_bound_holds(self, delta, T):
        check = verify_gronwall_bound(delta, T=T, dt=1e-3, n_samples=60)
        assert check.passed
        assert check.measured <= check.bound  # the stated bound, not only the looser

    def test_bound_linear_in_delta(self):
        a = verify_gronwall_bound(1e-3, dt=1e-2, n_samples=5)
        b = verify_gronwall_bound(2e-3, dt=1e-2, n_samples=5)
        # same U would make the bound exactly linear; U shifts by delta, so
        # doubling delta at least doubles the bound
        assert b.bound >= 2.0 * a.bound * (1.0 - 1e-9)

    def test_constants_recorded(self):
        check = verify_gronwall_bound(1e-3, dt=1e-2, n_samples=5)
        assert {"L", "U", "reach", "L_a"} <= set(check.constants)
        assert all(v > 0 for k, v in check.constants.items() if k in ("L", "U", "reach", "L_a"))


class TestFaa2Eps:
    @pytest.mark.parametrize("manifold", ["sphere", "disk"])
    @pytest.mark.parametrize("eps", [0.01, 0.1])
    def test_bound_holds(self, manifold, eps):
        check = verify_faa_2eps(manifold, eps)
        assert check.passed
        assert check.max_error <= 2 * eps + 1e-12

    def test_zero_eps_zero_error(self):
        check = verify_faa_2eps("sphere", 0.0)
        assert check.max_error <= 1e-12  # roundoff of projecting exact points

    def test_radial_perturbation_exact(self):
        # u = F(x): projecting (1+eps) F(x) recovers F(x) exactly
        from geomflow.geometry import make_kernel

        kernel = make_kernel("sphere")
        xs = kernel.random_point(0, n=200)
        eps = 0.05
        err = np.linalg.norm(xs - kernel.metric_project((1 + eps) * xs), axis=-1)
        assert np.max(err) <= 1e-12

    def test_tangential_perturbation_under_bound(self):
        from geomflow.geometry import make_kernel

        kernel = make_kernel("sphere")
        rng = np.random.default_rng(1)
        xs = kernel.random_point(rng, n=500)
        u = kernel.tangent_project(xs, rng.standard_normal(xs.shape))
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        eps = 0.1
        err = np.linalg.norm(xs - kernel.metric_project(xs + eps * u), axis=-1)
        assert np.max(err) <= 0.2


class TestExpRepresentation:
    def test_constant_map_zero_section(self):
        p = np.array([0.0, 0.0, 1.0])
        F = np.broadcast_to(p, (10, 10, 3)).copy()
        check = verify_exp_representation(base_point=p, F_values=F)
        assert check.max_speed <= 1e-12
        assert check.passed

    def test_fixed_angle_map(self):
        p = np.array([0.0, 0.0, 1.0])
        q = np.array([np.sin(0.7), 0.0, np.cos(0.7)])
        F = np.broadcast_to(q, (5, 5, 3)).copy()
        check = verify_exp_representation(base_point=p, F_values=F)
        assert abs(check.max_speed - 0.7) < 1e-12

    def test_random_smooth_map_reconstructs(self):
        check = verify_exp_representation(grid_n=50, seed=3)
        assert check.max_geodesic_error <= 1e-10
        assert check.max_speed <= np.pi - 0.1
        assert check.passed

    def test_antipode_raises(self):
        p = np.array([0.0, 0.0, 1.0])
        F = np.broadcast_to(-p, (4, 4, 3)).copy()
        with pytest.raises(AntipodeHit):
            verify_exp_representation(base_point=p, F_values=F)
