import numpy as np
import pytest

import moelab as ml
from moelab.polysys import SCALE_SINGLE, PolyCandidate, residual_table, rbar_provenance


@pytest.fixture
def inst_r4():
    return ml.PolySystemInstance(m=2, d=1, r=4)


class TestEnumerateEquations:
    def test_d1_r1(self):
        inst = ml.PolySystemInstance(m=2, d=1, r=1)
        assert ml.enumerate_equations(inst) == [((1,), 0), ((0,), 1)]

    def test_d1_r2(self):
        inst = ml.PolySystemInstance(m=2, d=1, r=2)
        assert ml.enumerate_equations(inst) == [
            ((1,), 0), ((2,), 0), ((0,), 1), ((0,), 2), ((1,), 1)
        ]

    def test_d2_r1(self):
        inst = ml.PolySystemInstance(m=2, d=2, r=1)
        assert ml.enumerate_equations(inst) == [((1, 0), 0), ((0, 1), 0), ((0, 0), 1)]

    def test_bounds_hold(self):
        inst = ml.PolySystemInstance(m=3, d=2, r=3)
        for eta1, eta2 in ml.enumerate_equations(inst):
            assert 0 <= sum(eta1) <= 3
            assert 0 <= eta2 <= 3 - sum(eta1)
            assert sum(eta1) + eta2 >= 1


class TestResidual:
    def test_all_zero_but_z5(self, inst_r4):
        cand = PolyCandidate(
            z1=np.zeros((2, 1)), z2=np.zeros((2, 1)),
            z3=[0.0, 0.0], z4=[0.0, 0.0], z5=[1.0, 2.0],
        )
        for eta1, eta2 in ml.enumerate_equations(inst_r4):
            assert ml.residual(inst_r4, cand, eta1, eta2) == 0.0

    def test_first_order_gate_equation(self, inst_r4):
        # J((1), 0) contains only alpha1 = 1: residual = sum z5^2 z1
        cand = PolyCandidate(
            z1=[[2.0], [3.0]], z2=np.zeros((2, 1)),
            z3=[1.0, 1.0], z4=[1.0, 1.0], z5=[1.0, 2.0],
        )
        assert ml.residual(inst_r4, cand, (1,), 0) == pytest.approx(1 * 2 + 4 * 3)

    def test_constructive_witness_oracle(self, inst_r4):
        # Frozen oracle: coefficients of sum_i exp(z3_i t + z4_i t^2); every
        # equation through order 3 vanishes and the (0, 4) residual is -c^4/6.
        for c in (1.0, 0.5, 2.0):
            w = ml.constructive_witness_m2(c=c)
            for eta1, eta2 in ml.enumerate_equations(inst_r4):
                got = ml.residual(inst_r4, w, eta1, eta2)
                if sum(eta1) + eta2 <= 3:
                    assert abs(got) <= 1e-12
            assert ml.residual(inst_r4, w, (0,), 4) == pytest.approx(-(c**4) / 6.0, rel=1e-12)

    def test_witness_solves_r3_system(self):
        inst = ml.PolySystemInstance(m=2, d=1, r=3)
        w = ml.constructive_witness_m2()
        assert ml.max_abs_residual(inst, w) <= 1e-12
        assert w.is_nontrivial()

    @pytest.mark.parametrize("seed", range(8))
    def test_z5_square_scaling(self, seed, inst_r4):
        rng = np.random.default_rng(seed)
        cand = PolyCandidate(
            z1=rng.normal(size=(2, 1)), z2=rng.normal(size=(2, 1)),
            z3=rng.normal(size=2), z4=rng.normal(size=2), z5=rng.normal(size=2) + 2.0,
        )
        t = 1.7
        scaled = PolyCandidate(cand.z1, cand.z2, cand.z3, cand.z4, t * cand.z5)
        for eta1, eta2 in ml.enumerate_equations(inst_r4):
            base = ml.residual(inst_r4, cand, eta1, eta2)
            assert ml.residual(inst_r4, scaled, eta1, eta2) == pytest.approx(
                t**2 * base, rel=1e-12, abs=1e-15
            )

    @pytest.mark.parametrize("seed", range(8))
    def test_sign_symmetry(self, seed, inst_r4):
        # negating z1 and z3 flips residuals at odd |eta1| + eta2 when the
        # doubled scale-order pairing is in force
        rng = np.random.default_rng(50 + seed)
        cand = PolyCandidate(
            z1=rng.normal(size=(2, 1)), z2=np.zeros((2, 1)),
            z3=rng.normal(size=2), z4=rng.normal(size=2), z5=rng.normal(size=2) + 2.0,
        )
        flipped = PolyCandidate(-cand.z1, cand.z2, -cand.z3, cand.z4, cand.z5)
        for eta1, eta2 in ml.enumerate_equations(inst_r4):
            sign = -1.0 if (sum(eta1) + eta2) % 2 else 1.0
            base = ml.residual(inst_r4, cand, eta1, eta2)
            assert ml.residual(inst_r4, flipped, eta1, eta2) == pytest.approx(
                sign * base, rel=1e-12, abs=1e-15
            )

    def test_single_scale_convention_differs(self, inst_r4):
        w = ml.constructive_witness_m2()
        # with single-counted scale orders the same witness misses at (0, 2):
        # J contains (0,0,1,1) pairing z3 z4 at first order
        doubled = ml.residual(inst_r4, w, (0,), 2)
        single = ml.residual(inst_r4, w, (0,), 2, convention=SCALE_SINGLE)
        assert doubled == pytest.approx(0.0, abs=1e-15)
        assert single != pytest.approx(0.0, abs=1e-6)

    def test_residual_table_covers_all_equations(self, inst_r4):
        w = ml.constructive_witness_m2()
        table = residual_table(inst_r4, w)
        assert len(table) == len(ml.enumerate_equations(inst_r4))


class TestSearchNontrivial:
    def test_m2_r3_finds_solution(self):
        inst = ml.PolySystemInstance(m=2, d=1, r=3)
        cand = ml.search_nontrivial(inst, restarts=20, seed=1)
        assert cand is not None
        assert ml.max_abs_residual(inst, cand) <= 1e-10
        assert cand.is_nontrivial(tol=1e-3)

    def test_m2_r4_finds_nothing(self):
        # consistent with the known threshold for two components
        inst = ml.PolySystemInstance(m=2, d=1, r=4)
        assert ml.search_nontrivial(inst, restarts=20, seed=1) is None

    def test_m3_r5_finds_solution(self):
        inst = ml.PolySystemInstance(m=3, d=1, r=5)
        cand = ml.search_nontrivial(inst, restarts=60, seed=3)
        assert cand is not None
        assert ml.max_abs_residual(inst, cand) <= 1e-10
        assert cand.is_nontrivial(tol=1e-3)

    def test_deterministic(self):
        inst = ml.PolySystemInstance(m=2, d=1, r=3)
        c1 = ml.search_nontrivial(inst, restarts=5, seed=9)
        c2 = ml.search_nontrivial(inst, restarts=5, seed=9)
        assert c1 is not None and c2 is not None
        assert np.array_equal(c1.z3, c2.z3) and np.array_equal(c1.z5, c2.z5)


class TestRbar:
    def test_exact_table(self):
        assert ml.rbar(2, "exact") == 4
        assert ml.rbar(3, "exact") == 6

    def test_exact_refuses_m4(self):
        with pytest.raises(ml.UnsupportedValueError, match="conjecture"):
            ml.rbar(4, "exact")

    def test_conjecture_is_2m(self):
        for m in (2, 3, 5, 9):
            assert ml.rbar(m, "conjecture") == 2 * m

    def test_provenance(self):
        assert rbar_provenance(2, "conjecture") == "exact"
        assert rbar_provenance(5, "conjecture") == "conjecture"

    def test_m_below_two_rejected(self):
        with pytest.raises(ml.InvalidArgumentError):
            ml.rbar(1, "exact")
