import numpy as np
import pytest

from expclt import RngStream, precompute_kernel, sample_xi
from expclt import engine
from expclt.dynamics import decompose_xi_prime


def _streams_root(seed):
    root = RngStream(seed, 0)
    return lambda i: root.child("test", i)


class TestBatchSize:
    def test_bounds(self):
        assert engine.batch_size("two_point", 1, 1) == 8192
        assert engine.batch_size("diagonal_uniform", 2_097_152, 4) == 32
        assert engine.batch_size("two_point", 256, 3) == 8192

    def test_diagonal_accounts_for_dim(self):
        wide = engine.batch_size("diagonal_uniform", 1024, 16)
        narrow = engine.batch_size("two_point", 1024, 16)
        assert wide <= narrow

    def test_pure_function(self):
        assert engine.batch_size("two_point", 100, 3) == engine.batch_size(
            "two_point", 100, 3)


class TestReferenceParity:
    # The batched sweep must reproduce the single-replicate route in
    # dynamics up to reassociation of the same floating-point work.

    @pytest.mark.parametrize("fix", ["dense3", "diag3"])
    def test_simulate_paths_matches_sample_xi(self, fix, request):
        e = request.getfixturevalue(fix)
        n, reps = 24, 16
        x = np.array([1.0, -0.3, 0.4])
        y = np.array([0.2, 1.0, -0.5])
        kern = precompute_kernel(e, n)
        stream_for = _streams_root(42)
        got = engine.simulate_paths(e, kern, x, y, stream_for, reps, want_s=True)
        for i in range(reps):
            ref = sample_xi(e, n, x, stream_for(i), kern, y=y)
            assert got["proj_xi"][i] == pytest.approx(ref.projected_xi,
                                                      rel=1e-11, abs=1e-13)
            assert got["proj_s"][i] == pytest.approx(ref.projected_s,
                                                     rel=1e-11, abs=1e-13)
            assert got["diff_norm"][i] == pytest.approx(ref.diff_norm,
                                                        rel=1e-10, abs=1e-13)

    def test_r_norm_matches_decomposition(self, dense3):
        n, reps = 16, 8
        x = np.array([0.7, 0.2, -1.0])
        kern = precompute_kernel(dense3, n)
        stream_for = _streams_root(7)
        got = engine.simulate_paths(dense3, kern, x, x, stream_for, reps,
                                    want_s_prime=True)
        for i in range(reps):
            idx = dense3.sample_indices(stream_for(i), n)
            draws = [dense3.support[j] for j in idx]
            _, r_norm = decompose_xi_prime(dense3, n, draws, x, kern)
            assert got["r_norm"][i] == pytest.approx(r_norm, rel=1e-9, abs=1e-13)

    def test_mk_norm_is_product_minus_mean_power(self, diag3):
        n, reps = 12, 6
        x = np.ones(3)
        kern = precompute_kernel(diag3, n)
        stream_for = _streams_root(3)
        got = engine.simulate_paths(diag3, kern, x, x, stream_for, reps,
                                    want_s_prime=True)
        qn_x = kern.q_powers[n] @ x
        for i in range(reps):
            vals = diag3.sample_diagonal_values(stream_for(i), n)
            prod = x * np.prod(np.exp(vals / n), axis=0)
            assert got["mk_norm"][i] == pytest.approx(
                np.linalg.norm(prod - qn_x), rel=1e-11, abs=1e-15)

    def test_output_keys_follow_flags(self, dense3):
        kern = precompute_kernel(dense3, 8)
        x = np.array([1.0, 0.0, 0.0])
        base = engine.simulate_paths(dense3, kern, x, x, _streams_root(1), 4)
        assert set(base) == {"proj_xi"}
        full = engine.simulate_paths(dense3, kern, x, x, _streams_root(1), 4,
                                     want_s=True, want_s_prime=True)
        assert set(full) == {"proj_xi", "proj_s", "diff_norm", "r_norm", "mk_norm"}


class TestChunkingInvariance:
    # Each replicate owns a keyed stream, so neither the replicate count nor
    # the internal chunk width may change a single output bit.

    @pytest.mark.parametrize("fix", ["dense3", "diag3"])
    def test_prefix_equality_across_reps(self, fix, request):
        e = request.getfixturevalue(fix)
        kern = precompute_kernel(e, 20)
        x = np.array([1.0, 0.5, -0.5])
        stream_for = _streams_root(11)
        small = engine.simulate_paths(e, kern, x, x, stream_for, 7,
                                      want_s=True, want_s_prime=True)
        large = engine.simulate_paths(e, kern, x, x, stream_for, 23,
                                      want_s=True, want_s_prime=True)
        for key in small:
            assert np.array_equal(small[key], large[key][:7])

    def test_forced_chunk_width_is_invisible(self, dense3, monkeypatch):
        kern = precompute_kernel(dense3, 16)
        x = np.array([1.0, 0.0, 0.0])
        stream_for = _streams_root(23)
        whole = engine.simulate_paths(dense3, kern, x, x, stream_for, 50,
                                      want_s=True)
        monkeypatch.setattr(engine, "batch_size", lambda *a: 3)
        split = engine.simulate_paths(dense3, kern, x, x, stream_for, 50,
                                      want_s=True)
        for key in whole:
            assert np.array_equal(whole[key], split[key])


class TestDiffPairBlock:
    def test_finite_support_matches_brute_force(self, dense3):
        n, B = 12, 9
        x = np.array([1.0, -0.2, 0.3])
        kern = precompute_kernel(dense3, n)
        streams = [_streams_root(5)(i) for i in range(B)]
        rows = engine._draw_rows(dense3, streams, n)
        ks = [1, 6, 12]
        block = engine.diff_pair_block(kern, x, rows, ks)
        mean = dense3.mean()
        for b in range(B):
            draws = [dense3.support[j] for j in rows[b]]
            for k in ks:
                d = kern.p_powers[k - 1] @ (draws[k - 1] - mean) \
                    @ kern.p_powers[n - k] @ x / np.sqrt(n)
                z = (draws[k - 1] - mean) @ kern.q_powers[n - k] @ x
                for j in range(k - 1, 0, -1):
                    z = kern.exps[rows[b, j - 1]] @ z
                ref = d - z / np.sqrt(n)
                assert np.allclose(block[k][b], ref, rtol=1e-11, atol=1e-15)

    def test_diagonal_matches_brute_force(self, diag3):
        n, B = 10, 7
        x = np.array([0.4, 1.0, -0.6])
        kern = precompute_kernel(diag3, n)
        streams = [_streams_root(8)(i) for i in range(B)]
        rows = engine._draw_rows(diag3, streams, n)
        ks = [1, 5, 10]
        block = engine.diff_pair_block(kern, x, rows, ks)
        mid = 0.5 * (diag3.low + diag3.high)
        qc = float(kern.q_powers[1][0, 0])
        for b in range(B):
            for k in ks:
                delta = np.diag(rows[b, k - 1] - mid)
                p_km1 = np.exp(mid * (k - 1) / n) * np.eye(3)
                p_nmk = np.exp(mid * (n - k) / n) * np.eye(3)
                d = p_km1 @ delta @ p_nmk @ x / np.sqrt(n)
                z = delta @ (qc ** (n - k) * np.eye(3)) @ x
                for j in range(k - 1, 0, -1):
                    z = np.diag(np.exp(rows[b, j - 1] / n)) @ z
                ref = d - z / np.sqrt(n)
                assert np.allclose(block[k][b], ref, rtol=1e-10, atol=1e-14)

    def test_k1_has_no_prefix(self, dense3):
        # at k=1 the prefix product is empty: delta = (d - z)/sqrt(n) exactly
        n = 8
        x = np.array([1.0, 0.0, 0.0])
        kern = precompute_kernel(dense3, n)
        rows = engine._draw_rows(dense3, [_streams_root(2)(0)], n)
        block = engine.diff_pair_block(kern, x, rows, [1])
        a1 = dense3.support[rows[0, 0]]
        d = kern.p_powers[0] @ (a1 - dense3.mean()) @ kern.p_powers[n - 1] @ x
        z = (a1 - dense3.mean()) @ kern.q_powers[n - 1] @ x
        assert np.allclose(block[1][0], (d - z) / np.sqrt(n), rtol=1e-12)


class TestDrawRows:
    def test_finite_rows_replay_sample_indices(self, dense3):
        streams = [_streams_root(31)(i) for i in range(5)]
        rows = engine._draw_rows(dense3, streams, 40)
        assert rows.dtype == np.uint16
        for b in range(5):
            ref = dense3.sample_indices(_streams_root(31)(b), 40)
            assert np.array_equal(rows[b], ref)

    def test_diagonal_rows_replay_values(self, diag3):
        streams = [_streams_root(13)(i) for i in range(4)]
        rows = engine._draw_rows(diag3, streams, 9)
        assert rows.shape == (4, 9, 3)
        for b in range(4):
            ref = diag3.sample_diagonal_values(_streams_root(13)(b), 9)
            assert np.array_equal(rows[b], ref)
