"""Refinement against closed-form, grid-search, and finite-difference oracles."""

import numpy as np
import pytest

from lgosr.expr import (
    Call,
    Const,
    Feature,
    PosConst,
    ThrConst,
    evaluate,
    gate_params,
    points,
    register_primitives,
    with_gate_params,
)
from lgosr.gates import gate_gradients, inv_softplus, lgo_hard, softplus
from lgosr.refine import (
    ConstFitConfig,
    RefineConfig,
    _grad_sign,
    coordinate_descent_gates,
    refine,
    refit_constants,
)
from lgosr.search import B_Z_CLIP, rmse_loss

REG_HARD = register_primitives("hard")
REG_BASE = register_primitives("base")


def _hard_gate(a_tilde=1.0, b_z=0.0):
    return Call(REG_HARD["lgo_thre"], (Feature(0, "x1"), PosConst(a_tilde), ThrConst(b_z)))


class TestConstantRefit:
    def test_recovers_additive_shift_to_1e6(self):
        # y = x + 3.7: the optimal constant is mean(y - x), a closed form.
        rng = np.random.default_rng(0)
        X = rng.normal(size=(200, 1))
        y = X[:, 0] + 3.7
        tree = Call(REG_BASE["add"], (Feature(0, "x1"), Const(0.0)))
        res = refit_constants(tree, X, y)
        got = res.expr.args[1].value
        want = float(np.mean(y - X[:, 0]))
        assert abs(got - want) < 1e-6
        assert res.changed

    def test_recovers_scale_constant(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(300, 1))
        y = -1.25 * X[:, 0]
        tree = Call(REG_BASE["mul"], (Const(1.0), Feature(0, "x1")))
        res = refit_constants(tree, X, y)
        # least-squares slope through the origin
        want = float(np.dot(X[:, 0], y) / np.dot(X[:, 0], X[:, 0]))
        assert abs(res.expr.args[0].value - want) < 1e-6

    def test_no_constants_flag(self):
        res = refit_constants(Feature(0, "x1"), np.zeros((5, 1)), np.zeros(5))
        assert res.flag == "no_constants"
        assert not res.changed

    def test_frozen_exponent_untouched(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(100, 1))
        y = X[:, 0] ** 2 + 1.0
        sq = Call(REG_BASE["pow"], (Feature(0, "x1"), Const(2.0)))
        tree = Call(REG_BASE["add"], (sq, Const(0.0)))
        res = refit_constants(tree, X, y)
        assert res.expr.args[0].args[1].value == 2.0
        assert abs(res.expr.args[1].value - 1.0) < 1e-6

    def test_nonfinite_start_flagged(self):
        tree = Call(REG_BASE["mul"], (Const(1e300), Const(1e300)))
        res = refit_constants(tree, np.zeros((5, 1)), np.zeros(5))
        assert res.flag == "nonfinite_at_start"
        assert res.expr == tree

    def test_history_monotone(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(150, 1))
        y = 2.0 * X[:, 0] - 0.5
        tree = Call(REG_BASE["add"],
                    (Call(REG_BASE["mul"], (Const(0.1), Feature(0, "x1"))), Const(0.0)))
        res = refit_constants(tree, X, y)
        hist = res.loss_history
        assert all(a >= b for a, b in zip(hist, hist[1:]))
        assert res.loss == hist[-1]


class TestGateDescent:
    def _step_data(self, b_raw=0.4, n=400, noise=0.02, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-2, 2, size=n)
        y = (x > b_raw).astype(float) + noise * rng.normal(size=n)
        return x.reshape(-1, 1), y

    def _grid_best_b(self, X, y, a_tilde):
        """Independent oracle: scan b_z on a 1e-3 grid at fixed steepness."""
        grid = np.arange(-B_Z_CLIP, B_Z_CLIP + 1e-9, 1e-3)
        a = float(softplus(a_tilde))
        best_b, best_loss = None, float("inf")
        for b in grid:
            loss = rmse_loss(lgo_hard(X[:, 0], a, b), y)
            if loss < best_loss:
                best_b, best_loss = float(b), loss
        return best_b, best_loss

    def test_threshold_converges_to_grid_optimum(self):
        X, y = self._step_data(b_raw=0.4)
        a_tilde = inv_softplus(8.0)
        start = _hard_gate(a_tilde=a_tilde, b_z=-1.2)
        cfg = RefineConfig()
        res = coordinate_descent_gates(start, X, y, cfg)
        got_b = gate_params(res.expr).b_z
        want_b, want_loss = self._grid_best_b(X, y, gate_params(res.expr).a_tilde)
        assert abs(got_b - want_b) < 0.05
        assert res.loss <= want_loss + 1e-3

    def test_loss_history_monotone_non_increasing(self):
        X, y = self._step_data(seed=5)
        res = coordinate_descent_gates(_hard_gate(b_z=1.0), X, y)
        hist = res.loss_history
        assert all(a >= b for a, b in zip(hist, hist[1:]))

    def test_threshold_stays_clipped(self):
        X, y = self._step_data(seed=6)
        res = coordinate_descent_gates(_hard_gate(b_z=2.9), X, y, RefineConfig(steps=100))
        for _, node, _ in points(res.expr):
            if isinstance(node, ThrConst):
                assert -B_Z_CLIP <= node.b_z <= B_Z_CLIP

    def test_no_gates_flag(self):
        res = coordinate_descent_gates(Feature(0, "x1"), np.zeros((5, 1)), np.zeros(5))
        assert res.flag == "no_gates"

    def test_structure_unchanged(self):
        X, y = self._step_data()
        start = _hard_gate(b_z=-0.5)
        res = coordinate_descent_gates(start, X, y)
        assert res.expr.prim.name == "lgo_thre"
        assert res.expr.args[0] == start.args[0]


class TestGradientDirection:
    def test_sign_matches_finite_differences(self):
        """The proposed direction must match d(loss)/d(param) from central
        differences whenever that derivative is clearly nonzero."""
        rng = np.random.default_rng(7)
        X = rng.uniform(-2, 2, size=(300, 1))
        y = (X[:, 0] > 0.3).astype(float)
        checked = 0
        for _ in range(100):
            a_tilde = float(rng.uniform(0.2, 3.0))
            b_z = float(rng.uniform(-2, 2))
            tree = _hard_gate(a_tilde=a_tilde, b_z=b_z)

            def loss_at(at, bz):
                return rmse_loss(evaluate(with_gate_params(tree, at, bz), X), y)

            h = 1e-6
            for which, fd in (
                ("a", (loss_at(a_tilde + h, b_z) - loss_at(a_tilde - h, b_z)) / (2 * h)),
                ("b", (loss_at(a_tilde, b_z + h) - loss_at(a_tilde, b_z - h)) / (2 * h)),
            ):
                if abs(fd) < 1e-8:
                    continue
                got = _grad_sign(tree, (), which, X, y)
                if which == "a":
                    # the sign is on d/da of the raw steepness; chain through
                    # softplus' positive slope preserves it
                    assert got == np.sign(fd), (a_tilde, b_z, which)
                else:
                    assert got == np.sign(fd), (a_tilde, b_z, which)
                checked += 1
        assert checked >= 100

    def test_multi_input_gate_returns_zero(self):
        g = Call(REG_HARD["lgo_and2"],
                 (Feature(0, "x1"), Feature(1, "x2"), PosConst(1.0), ThrConst(0.0)))
        X = np.random.default_rng(0).normal(size=(50, 2))
        assert _grad_sign(g, (), "b", X, np.zeros(50)) == 0.0


class TestRefineEndToEnd:
    def test_constant_recovered_when_gate_is_right(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(-2, 2, size=(500, 1))
        y = 2.0 * (X[:, 0] > 0.6).astype(float)
        gated = _hard_gate(a_tilde=inv_softplus(60.0), b_z=0.6)
        tree = Call(REG_HARD["mul"], (Const(1.0), gated))
        res = refine(tree, X, y)
        # with the gate essentially exact, the scale has a closed form
        g = evaluate(gated, X)
        want = float(np.dot(g, y) / np.dot(g, g))
        assert abs(res.expr.args[0].value - want) < 1e-5

    def test_threshold_recovered_when_constant_is_right(self):
        # no free constants here, so refine() reduces to gate descent
        rng = np.random.default_rng(8)
        X = rng.uniform(-2, 2, size=(500, 1))
        y = 2.0 * (X[:, 0] > 0.6).astype(float)
        gated = _hard_gate(a_tilde=inv_softplus(8.0), b_z=0.1)
        tree = Call(REG_HARD["add"], (gated, gated))
        res = refine(tree, X, y)
        for _, node, _ in points(res.expr):
            if isinstance(node, ThrConst):
                assert abs(node.b_z - 0.6) < 0.05
        assert res.loss < 0.25

    def test_refine_is_constfit_then_gate_descent(self):
        # the two stages applied by hand must reproduce refine() exactly
        rng = np.random.default_rng(11)
        X = rng.uniform(-2, 2, size=(200, 1))
        y = (X[:, 0] > 0.2).astype(float) + 0.3
        tree = Call(REG_HARD["add"], (_hard_gate(b_z=-0.4), Const(0.0)))
        combined = refine(tree, X, y)
        first = refit_constants(tree, X, y)
        second = coordinate_descent_gates(first.expr, X, y)
        from lgosr.expr import print_expr

        assert print_expr(combined.expr) == print_expr(second.expr)
        assert combined.loss == second.loss

    def test_history_concatenated_and_monotone(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(-2, 2, size=(200, 1))
        y = (X[:, 0] > -0.2).astype(float) + 0.5
        tree = Call(REG_HARD["add"], (_hard_gate(b_z=1.0), Const(0.0)))
        res = refine(tree, X, y)
        hist = res.loss_history
        assert all(a >= b for a, b in zip(hist, hist[1:]))
        assert res.loss == hist[-1]

    def test_refine_never_increases_loss(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(100, 2))
        y = rng.normal(size=100)
        reg = register_primitives("hard")
        from lgosr.expr import random_tree

        for _ in range(30):
            t = random_tree(reg, ["x1", "x2"], rng, 4, "grow")
            before = res0 = None
            from lgosr.refine import _loss_of

            before = _loss_of(t, X, y)
            res = refine(t, X, y)
            if np.isfinite(before):
                assert res.loss <= before + 1e-15
