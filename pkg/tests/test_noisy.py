from functools import reduce
from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_unitary
from dynatherm.circuit import CNOT, U3, Circuit, ansatz, cnot_permutation, contract, fold_cnots
from dynatherm.errors import ConfigError, NumericalError
from dynatherm.evolution import occupations
from dynatherm.noisy import (
    Attachment,
    CoherentRotation,
    Depolarizing,
    DensityMatrix,
    GlobalDepolarizing,
    NoiseModel,
    PauliChannel,
    RCPolicy,
    ReadoutModel,
    apply_channel,
    apply_gate,
    apply_kraus,
    dress_cnot,
    dressings,
    equal_up_to_phase,
    ibu_unfold,
    kraus_completeness_error,
    load_preset,
    measurement_probabilities,
    pauli_transfer_matrix,
    prepare_product_state,
    rc_dress,
    run_noisy,
    simulate,
    total_variation,
)
from dynatherm.noisy.density import PAULI, pauli_string
from dynatherm.noisy.twirl import PAIR_PAULIS, propagate_pauli

seeds = st.integers(0, 2**32 - 1)


def random_rho(n, gen, rank=3):
    a = gen.standard_normal((1 << n, rank)) + 1j * gen.standard_normal((1 << n, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def all_channels():
    return [
        Depolarizing(0.2, (0, 2)),
        Depolarizing(0.05, (1,)),
        GlobalDepolarizing(0.9),
        PauliChannel({"II": 0.7, "XZ": 0.1, "YY": 0.2}, (1, 2)),
        CoherentRotation(0.3, "ZZ", (0, 1)),
        CoherentRotation(-0.2, "X", (2,)),
    ]


class TestDensityMatrix:
    def test_validation(self):
        with pytest.raises(ValueError, match="Hermitian"):
            DensityMatrix(np.array([[0.5, 1], [0, 0.5]]))
        with pytest.raises(ValueError, match="trace"):
            DensityMatrix(np.eye(2))
        with pytest.raises(ValueError, match="eigenvalue"):
            DensityMatrix(np.diag([1.5, -0.5]))

    def test_constructors(self):
        rho = DensityMatrix.basis_state(2, 2)
        np.testing.assert_array_equal(rho.probabilities(), [0, 0, 1, 0])
        assert rho.n_qubits == 2
        psi = np.array([1, 1j]) / np.sqrt(2)
        np.testing.assert_allclose(DensityMatrix.pure(psi).probabilities(), [0.5, 0.5])


class TestChannels:
    @pytest.mark.parametrize("ch", all_channels(), ids=lambda c: type(c).__name__)
    def test_kraus_complete(self, ch):
        assert kraus_completeness_error(ch, 3) < 1e-12

    @pytest.mark.parametrize("ch", all_channels(), ids=lambda c: type(c).__name__)
    def test_fast_path_matches_kraus(self, ch):
        rho = random_rho(3, np.random.default_rng(0))
        np.testing.assert_allclose(ch.apply(rho, 3), apply_kraus(rho, ch.kraus(3)), atol=1e-13)

    def test_global_fixed_point(self):
        mixed = np.eye(16) / 16
        np.testing.assert_allclose(GlobalDepolarizing(0.7).apply(mixed, 4), mixed, atol=1e-15)

    def test_global_unit_fidelity_is_identity(self):
        rho = random_rho(2, np.random.default_rng(1))
        np.testing.assert_array_equal(GlobalDepolarizing(1.0).apply(rho, 2), rho)

    @given(st.floats(0, 1), st.floats(0, 1), seeds)
    def test_global_composition(self, f1, f2, seed):
        rho = random_rho(4, np.random.default_rng(seed))
        two = GlobalDepolarizing(f2).apply(GlobalDepolarizing(f1).apply(rho, 4), 4)
        np.testing.assert_allclose(two, GlobalDepolarizing(f1 * f2).apply(rho, 4), atol=1e-12)

    def test_global_closed_form(self):
        rho = random_rho(2, np.random.default_rng(2))
        out = GlobalDepolarizing(0.6).apply(rho, 2)
        np.testing.assert_allclose(out, 0.6 * rho + 0.4 * np.eye(4) / 4, atol=1e-15)

    def test_full_depolarizing_on_pair_traces_out(self):
        gen = np.random.default_rng(3)
        a, b = random_rho(1, gen), random_rho(2, gen)
        rho = np.kron(b, a)  # qubit 0 = a, qubits 1 and 2 = b
        out = Depolarizing(1.0, (1, 2)).apply(rho, 3)
        np.testing.assert_allclose(out, np.kron(np.eye(4) / 4, a), atol=1e-15)

    def test_pauli_probabilities_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            PauliChannel({"II": 0.5, "XX": 0.4}, (0, 1))

    def test_incomplete_kraus_rejected_when_checked(self):
        class Leaky(GlobalDepolarizing):
            def kraus(self, n):
                return [0.9 * np.eye(1 << n)]

        with pytest.raises(ValueError, match="trace preserving"):
            apply_channel(np.eye(2) / 2, Leaky(1.0), 1, check=True)

    @given(seeds, st.lists(st.integers(0, 9), min_size=1, max_size=12))
    def test_physicality_preserved(self, seed, ops):
        gen = np.random.default_rng(seed)
        rho = random_rho(3, gen)
        chans = all_channels()
        for k in ops:
            if k < len(chans):
                rho = apply_channel(rho, chans[k], 3, check=True)
            elif k < 8:
                rho = apply_gate(rho, CNOT(k - len(chans), 2), 3)
            else:
                rho = apply_gate(rho, U3(1, angles=gen.uniform(-3, 3, 3)), 3)
        DensityMatrix(rho)


class TestNoiseModels:
    def test_default_preset(self):
        model, ro = load_preset("default")
        chans = model.channels_for(1, 2, 4)
        kinds = [(type(c).__name__, c.qubits if hasattr(c, "qubits") else None) for c in chans]
        assert ("Depolarizing", (1, 2)) in kinds
        assert ("Depolarizing", (0,)) in kinds and ("Depolarizing", (3,)) in kinds
        assert any(isinstance(c, GlobalDepolarizing) and c.f == 0.998 for c in chans)
        assert ro == {"eps0": 0.01, "eps1": 0.02}

    def test_ideal_and_global_presets(self):
        assert load_preset("ideal")[0].is_noiseless
        model, ro = load_preset("global995")
        assert [type(c) for c in model.channels_for(0, 1, 4)] == [GlobalDepolarizing]
        assert ro == {"eps0": 0.0, "eps1": 0.0}

    def test_preset_file_errors(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text("[channel.x]\nkind = global\nf = 0.9\nbogus = 1\n")
        with pytest.raises(ConfigError, match="bogus"):
            load_preset(p)
        p.write_text("[extra]\n")
        with pytest.raises(ConfigError, match="unknown section"):
            load_preset(p)
        with pytest.raises(ConfigError, match="neither"):
            load_preset(tmp_path / "missing.ini")

    def test_preset_pauli_and_coherent(self, tmp_path):
        p = tmp_path / "custom.ini"
        p.write_text("[channel.a]\nkind = pauli\nprob_ii = 0.9\nprob_zz = 0.1\n"
                     "[channel.b]\nkind = coherent\non = spectators\nangle = 0.05\naxis = z\n")
        model, _ = load_preset(p)
        chans = model.channels_for(0, 1, 3)
        assert isinstance(chans[0], PauliChannel) and chans[0].probabilities == {"II": 0.9, "ZZ": 0.1}
        assert isinstance(chans[1], CoherentRotation) and chans[1].qubits == (2,)

    def test_attachment_validation(self):
        with pytest.raises(ValueError):
            Attachment("bogus")
        with pytest.raises(ValueError):
            Attachment("depolarizing2", on="spectators", p=0.1)


class TestReadout:
    def test_response_is_product_of_flips(self):
        ro = ReadoutModel(eps0=[0.01, 0.02, 0.03], eps1=[0.05, 0.06, 0.07])
        r = ro.response(3)
        for m, t in product(range(8), repeat=2):
            want = 1.0
            for q in range(3):
                mq, tq = (m >> q) & 1, (t >> q) & 1
                flip = (ro.eps0[q] if tq == 0 else ro.eps1[q])
                want *= flip if mq != tq else 1 - flip
            assert r[m, t] == pytest.approx(want, abs=1e-15)
        np.testing.assert_allclose(r.sum(axis=0), 1.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            ReadoutModel(eps0=0.5)
        with pytest.raises(ValueError):
            ReadoutModel(shots=0)
        assert ReadoutModel().is_perfect and not ReadoutModel(eps1=0.01).is_perfect


class TestTwirl:
    def test_conjugation_table_by_brute_force(self):
        # control is qubit 0 (right Kronecker factor) here
        cn = np.eye(4)[cnot_permutation(2, 0, 1)]
        for pc, pt in PAIR_PAULIS:
            qc, qt = propagate_pauli(pc, pt)
            before = pauli_string(pc + pt, (0, 1), 2)
            after = pauli_string(qc + qt, (0, 1), 2)
            assert equal_up_to_phase(after @ cn @ before, cn)

    def test_identity_draw_is_bare(self):
        before, mid, after = dress_cnot(0, 1, 4, ("I", "I"), {2: ("I", "I"), 3: ("I", "I")})
        assert before == [] and after == [] and mid == [CNOT(0, 1)]

    @given(seeds)
    def test_dressed_circuits_are_logically_equivalent(self, seed):
        c = ansatz(4, 3)
        p = np.random.default_rng(seed).uniform(-np.pi, np.pi, c.n_params)
        bare = contract(c, p)
        d = rc_dress(c, RCPolicy(), np.random.default_rng(seed))
        assert d.cnot_count == c.cnot_count
        assert equal_up_to_phase(contract(d, p), bare, 1e-10)

    def test_dressings_are_reproducible_and_distinct(self):
        c = ansatz(4, 2)
        a = dressings(c, RCPolicy(samples=4), seed=1, key=2)
        b = dressings(c, RCPolicy(samples=4), seed=1, key=2)
        assert a == b
        assert len({x.gates for x in a}) == 4

    def test_spectator_rotations_are_used(self):
        c = ansatz(4, 5)
        d = rc_dress(c, RCPolicy(twirl_active=False), np.random.default_rng(0))
        labels = {g.label for g in d.gates if g.kind == "RDRESS"}
        assert labels == {"X+", "X-", "Z+", "Z-"}
        bare_spectators = rc_dress(c, RCPolicy(twirl_spectators=False), np.random.default_rng(0))
        assert not any(g.kind == "RDRESS" for g in bare_spectators.gates)

    @staticmethod
    def twirled_ptm(error):
        cn = np.eye(4)[cnot_permutation(2, 0, 1)]

        def dressed(rho, pc, pt):
            qc, qt = propagate_pauli(pc, pt)
            a = pauli_string(pc + pt, (0, 1), 2)
            b = pauli_string(qc + qt, (0, 1), 2)
            m = b @ error @ cn @ a
            return m @ rho @ m.conj().T

        def average(rho):
            return sum(dressed(rho, pc, pt) for pc, pt in PAIR_PAULIS) / 16

        # strip the ideal CNOT so only the error channel's PTM remains
        return pauli_transfer_matrix(lambda r: average(cn @ r @ cn), 2)

    def test_exhaustive_twirl_diagonalizes_zz_error(self):
        zz = CoherentRotation(0.1, "ZZ", (0, 1)).unitary(2)
        ptm = self.twirled_ptm(zz)
        off = ptm - np.diag(np.diag(ptm))
        assert np.max(np.abs(off)) < 1e-10
        bare = pauli_transfer_matrix(lambda r: zz @ r @ zz.conj().T, 2)
        assert np.max(np.abs(bare - np.diag(np.diag(bare)))) > 0.05

    @given(seeds)
    def test_exhaustive_twirl_diagonalizes_any_unitary_error(self, seed):
        ptm = self.twirled_ptm(random_unitary(4, np.random.default_rng(seed)))
        assert np.max(np.abs(ptm - np.diag(np.diag(ptm)))) < 1e-10


class TestSimulate:
    def test_noiseless_matches_contraction(self, paper_basis):
        c = ansatz(4, 4)
        p = np.random.default_rng(0).uniform(-np.pi, np.pi, c.n_params)
        run = run_noisy(c, NoiseModel.ideal(), ReadoutModel(shots=None), RCPolicy(samples=3), 0, 0, paper_basis, p)
        psi = contract(c, p) @ paper_basis.vectors[:, paper_basis.level_of(0)]
        assert np.max(np.abs(run.occupations - occupations(psi, paper_basis))) < 1e-9

    def test_product_state_preparation(self, paper_basis):
        for bits in (0, 5, 15):
            rho = prepare_product_state(bits, 4)
            v = paper_basis.vectors[:, paper_basis.level_of(bits)]
            np.testing.assert_allclose(rho, np.outer(v, v.conj()), atol=1e-14)

    def test_measurement_reads_the_sigma_y_basis(self, paper_basis):
        l = paper_basis.level_of("udud")
        p = measurement_probabilities(prepare_product_state(paper_basis.states[l], 4), 4)
        np.testing.assert_allclose(p[paper_basis.states], np.eye(16)[l], atol=1e-14)

    @pytest.mark.parametrize("fold,exponent", [(1, 60), (3, 180)])
    def test_global_depolarizing_closed_form(self, paper_basis, fold, exponent):
        c = fold_cnots(ansatz(4, 20), fold)
        p = np.random.default_rng(1).uniform(-np.pi, np.pi, c.n_params)
        f = 0.995
        run = run_noisy(c, NoiseModel.global_depolarizing(f), ReadoutModel(shots=None), None, 0, 0, paper_basis, p)
        ideal = run_noisy(c, NoiseModel.ideal(), ReadoutModel(shots=None), None, 0, 0, paper_basis, p)
        expected = f**exponent * ideal.occupations + (1 - f**exponent) / 16
        assert np.max(np.abs(run.occupations - expected)) < 1e-12

    def test_global_depolarizing_with_shots(self, paper_basis):
        c = ansatz(4, 20)
        p = np.random.default_rng(2).uniform(-np.pi, np.pi, c.n_params)
        ideal = run_noisy(c, NoiseModel.ideal(), ReadoutModel(shots=None), None, 0, 0, paper_basis, p).occupations
        run = run_noisy(c, NoiseModel.global_depolarizing(0.995), ReadoutModel(shots=1000), RCPolicy(samples=50),
                        0, 0, paper_basis, p)
        expected = 0.995**60 * ideal + (1 - 0.995**60) / 16
        se = np.sqrt(expected * (1 - expected) / (1000 * 50))
        assert np.all(np.abs(run.occupations - expected) < 5 * se + 1e-12)
        assert run.counts.shape == (50, 16) and np.all(run.counts.sum(axis=1) == 1000)

    def test_deterministic_and_keyed(self, paper_basis):
        c = ansatz(4, 2)
        p = np.zeros(c.n_params)
        model, _ = load_preset("default")
        args = (c, model, ReadoutModel(0.01, 0.02), RCPolicy(samples=3), 7, 0, paper_basis, p)
        a, b = run_noisy(*args), run_noisy(*args)
        assert np.array_equal(a.counts, b.counts) and np.array_equal(a.occupations, b.occupations)
        c2 = run_noisy(*args, key=1)
        assert not np.array_equal(a.counts, c2.counts)

    def test_threads_do_not_change_results(self, paper_basis):
        c = ansatz(4, 2)
        p = np.zeros(c.n_params)
        args = (c, load_preset("default")[0], ReadoutModel(0.01, 0.02), RCPolicy(samples=4), 3, 0, paper_basis, p)
        assert np.array_equal(run_noisy(*args).occupations, run_noisy(*args, threads=3).occupations)

    def test_wrong_state_shape(self):
        with pytest.raises(ValueError):
            simulate(ansatz(4, 1), NoiseModel.ideal(), np.eye(8) / 8, np.zeros(12))


class TestIBU:
    def test_identity_response(self):
        m = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_allclose(ibu_unfold(m, np.eye(4), iterations=1), m, atol=1e-15)

    @pytest.mark.parametrize("beta", [-3.0, -1.25, 0.0, 1.21, 3.0])
    @pytest.mark.parametrize("g", [1.0, 0.7, 0.3])
    def test_round_trip_on_noisy_gibbs_states(self, paper_basis, beta, g):
        from dynatherm.mitigation import noisy_occupations

        r = ReadoutModel(0.02, 0.02, shots=None).response(4)
        truth = np.zeros(16)
        truth[paper_basis.states] = noisy_occupations(paper_basis.energies, beta, g)
        assert total_variation(ibu_unfold(r @ truth, r, 10), truth) <= 1e-3

    def test_round_trip_on_random_full_support(self):
        gen = np.random.default_rng(0)
        r = ReadoutModel(0.02, 0.02, shots=None).response(4)
        for truth in gen.dirichlet(np.full(16, 5.0), 50):
            assert total_variation(ibu_unfold(r @ truth, r, 10), truth) <= 1e-3

    def test_sparse_truth_needs_more_iterations(self):
        # near-zero entries are approached slowly from the uniform prior
        gen = np.random.default_rng(0)
        r = ReadoutModel(0.02, 0.02, shots=None).response(4)
        truths = gen.dirichlet(np.ones(16), 100)
        worst10 = max(total_variation(ibu_unfold(r @ t, r, 10), t) for t in truths)
        worst300 = max(total_variation(ibu_unfold(r @ t, r, 300), t) for t in truths)
        assert worst300 < 1e-3 < worst10

    def test_uniform_fixed_point(self):
        r = ReadoutModel(0.03, 0.03).response(4)
        np.testing.assert_allclose(ibu_unfold(np.full(16, 1 / 16), r, 10), 1 / 16, atol=1e-15)

    @given(seeds, st.integers(1, 12))
    def test_normalized_and_non_negative_at_every_iteration(self, seed, k):
        gen = np.random.default_rng(seed)
        r = ReadoutModel(0.01, 0.04).response(3)
        m = gen.multinomial(50, gen.dirichlet(np.ones(8))) / 50
        t = ibu_unfold(m, r, k)
        assert abs(t.sum() - 1) < 1e-12 and np.all(t >= 0)

    def test_zero_support_flagged(self):
        r = np.array([[1.0, 1.0], [0.0, 0.0]])
        with pytest.raises(NumericalError, match="zero predicted"):
            ibu_unfold([0.5, 0.5], r, 3)

    def test_input_validation(self):
        with pytest.raises(ValueError, match="column-stochastic"):
            ibu_unfold([0.5, 0.5], np.array([[0.5, 0.5], [0.4, 0.4]]))
        with pytest.raises(ValueError, match="sizes"):
            ibu_unfold([0.5, 0.5], np.eye(3))
