import math

import numpy as np
import pytest

from hdqkd.errors import (
    InsufficientDataError,
    InvalidConfigError,
    InvalidDimensionError,
    InvalidInputError,
    InvalidNoiseError,
)
from hdqkd.mub import computational_basis, dft_basis, full_mub_set, sqrt_mub_pair
from hdqkd.protocol import (
    CountTable,
    NoiseModel,
    ProbabilityTable,
    SessionRecord,
    apply_noise,
    decompose_errors,
    ideal_prob_table,
    load_counts_csv,
    load_probs_csv,
    normalize_counts,
    sample_counts,
    save_counts_csv,
    save_probs_csv,
    simulate_session,
)


def entangled_table(bases):
    return ideal_prob_table(bases, [b.conjugate() for b in bases])


# --- ideal probabilities ----------------------------------------------------


def test_matched_settings_perfectly_correlated():
    table = entangled_table(list(full_mub_set(5)))
    for k in range(1, 7):
        assert np.abs(table.setting(k, k) - np.eye(5) / 5).max() < 1e-12


def test_mismatched_mub_settings_are_flat():
    table = entangled_table(list(full_mub_set(5)))
    for k in range(1, 7):
        for l in range(1, 7):
            if k != l:
                assert np.abs(table.setting(k, l) - 1 / 25).max() < 1e-10


def test_dimension_one_table():
    table = entangled_table([computational_basis(1)])
    assert table.probs.shape == (1, 1, 1, 1)
    assert abs(table.probs[0, 0, 0, 0] - 1.0) < 1e-15


def test_ideal_table_rejects_mixed_dims():
    with pytest.raises(InvalidInputError):
        ideal_prob_table([dft_basis(3)], [dft_basis(4)])


# --- noise injection ----------------------------------------------------------


def test_zero_noise_leaves_ideal_table_unchanged():
    table = entangled_table(list(sqrt_mub_pair(25)))
    noisy = apply_noise(table, NoiseModel("uniform", 0.0))
    assert np.array_equal(noisy.probs, table.probs)


def test_uniform_noise_spreads_evenly():
    table = entangled_table(list(full_mub_set(5)))
    noisy = apply_noise(table, NoiseModel("uniform", 0.2))
    cond = noisy.setting(1, 1) * 5
    assert abs(cond[0, 0] - 0.8) < 1e-12
    off = cond[~np.eye(5, dtype=bool)]
    assert np.abs(off - 0.2 / 4).max() < 1e-12


def test_block_noise_three_term_structure():
    table = entangled_table(list(sqrt_mub_pair(25)))
    model = NoiseModel.from_components(0.073, 0.248)
    noisy = apply_noise(table, model, alignments=["row", "col"])
    cond = noisy.setting(1, 1) * 25
    # sent state 1 sits in grid row 1 = flat states 1..5
    assert abs(cond[0, 0] - (1 - 0.321)) < 1e-12
    assert abs(cond[1, 0] - (0.248 / 4 + 0.073 / 24)) < 1e-12
    assert abs(cond[5, 0] - 0.073 / 24) < 1e-12
    # mismatched settings untouched
    assert np.abs(noisy.setting(1, 2) - table.setting(1, 2)).max() == 0.0


def test_apply_noise_preserves_normalization():
    table = entangled_table(list(sqrt_mub_pair(9)))
    noisy = apply_noise(table, NoiseModel("block_biased", 0.4, 0.6))
    sums = noisy.probs.sum(axis=(0, 1))
    assert np.abs(sums - 1.0).max() < 1e-12


def test_noise_model_validation():
    with pytest.raises(InvalidNoiseError):
        NoiseModel("uniform", 1.0)
    with pytest.raises(InvalidNoiseError):
        NoiseModel("block_biased", 0.3, 1.5)
    with pytest.raises(InvalidNoiseError):
        NoiseModel("weird", 0.1)


def test_block_noise_needs_square_dimension():
    table = entangled_table(list(full_mub_set(5)))
    with pytest.raises(InvalidDimensionError):
        apply_noise(table, NoiseModel("block_biased", 0.3, 0.5))


# --- decomposition ------------------------------------------------------------


def test_uniform_noise_decomposes_to_zero_block():
    table = entangled_table(list(sqrt_mub_pair(25)))
    noisy = apply_noise(table, NoiseModel("uniform", 0.25), alignments=["row", "col"])
    dec = decompose_errors(noisy, 1, "row")
    assert abs(dec.total_error - 0.25) < 1e-12
    assert abs(dec.block_error) < 1e-9
    assert not dec.clamped


@pytest.mark.parametrize("d", [4, 9, 25])
def test_decompose_inverts_apply_noise(d):
    table = entangled_table(list(sqrt_mub_pair(d)))
    for e_u in (0.0, 0.05, 0.2):
        for e_b in (0.0, 0.1, 0.3):
            if e_u + e_b == 0.0:
                continue
            model = NoiseModel.from_components(e_u, e_b)
            for setting, alignment in ((1, "row"), (2, "col")):
                noisy = apply_noise(table, model, alignments=["row", "col"])
                dec = decompose_errors(noisy, setting, alignment)
                assert abs(dec.total_error - (e_u + e_b)) < 1e-9
                assert abs(dec.uniform_error - e_u) < 1e-9
                assert abs(dec.block_error - e_b) < 1e-9


def test_decompose_flags_inconsistent_tables():
    # all the error mass outside the block: the rescaled uniform estimate
    # overshoots the total and the block part comes out negative
    d, side = 9, 3
    cond = np.zeros((d, d))
    for b in range(d):
        cond[b, b] = 0.7
        out = [a for a in range(d) if a // side != b // side]
        for a in out:
            cond[a, b] = 0.3 / len(out)
    probs = (cond / d)[:, :, None, None]
    dec = decompose_errors(ProbabilityTable(d, probs), 1, "row")
    assert dec.clamped
    assert dec.block_error < 0.0
    assert abs(dec.uniform_error + dec.block_error - dec.total_error) < 1e-12


def test_decompose_alignment_matters():
    table = entangled_table(list(sqrt_mub_pair(9)))
    noisy = apply_noise(table, NoiseModel.from_components(0.0, 0.3))
    wrong = decompose_errors(noisy, 1, "col")  # noise was row-aligned
    assert abs(wrong.block_error - 0.3) > 0.01


# --- Poisson sampling ---------------------------------------------------------


def test_zero_rates_give_zero_counts():
    table = entangled_table(list(sqrt_mub_pair(4)))
    counts = sample_counts(table, 0.0, 10.0, 0.0, seed=1)
    assert counts.counts.sum() == 0


def test_sampling_is_reproducible():
    table = entangled_table(list(sqrt_mub_pair(9)))
    a = sample_counts(table, 1e3, 50.0, 10.0, seed=99)
    b = sample_counts(table, 1e3, 50.0, 10.0, seed=99)
    c = sample_counts(table, 1e3, 50.0, 10.0, seed=100)
    assert np.array_equal(a.counts, b.counts)
    assert not np.array_equal(a.counts, c.counts)


def test_sampled_frequencies_match_table():
    # >= 1e6 expected counts per setting; compare via a chi-square statistic
    # against its normal approximation at the 0.1% level
    table = apply_noise(
        entangled_table(list(sqrt_mub_pair(25))),
        NoiseModel.from_components(0.073, 0.248),
        alignments=["row", "col"],
    )
    n_expected = 1e6
    counts = sample_counts(table, n_expected, 1.0, seed=2024)
    mean = n_expected * table.probs
    live = mean > 0
    chi2 = float(((counts.counts[live] - mean[live]) ** 2 / mean[live]).sum())
    dof = int(live.sum())
    assert chi2 < dof + 3.29 * math.sqrt(2 * dof)  # 0.1% one-sided normal bound


def test_accidentals_fill_forbidden_outcomes():
    table = entangled_table(list(sqrt_mub_pair(4)))
    counts = sample_counts(table, 0.0, 1000.0, accidental_rate=100.0, seed=5)
    # matched-basis off-diagonal entries are impossible without accidentals
    off = counts.counts[:, :, 0, 0][~np.eye(4, dtype=bool)]
    assert off.sum() > 0


# --- normalization ------------------------------------------------------------


def test_normalize_is_scale_invariant():
    # counts proportional to an exact table recover that table exactly
    rng = np.random.default_rng(9)
    counts = rng.integers(1, 500, size=(4, 4, 2, 2))
    base = normalize_counts(CountTable(4, counts, integration_time=1.0))
    scaled = normalize_counts(CountTable(4, counts * 7, integration_time=7.0))
    assert np.array_equal(base.probs, scaled.probs)


def test_normalize_single_count_identity():
    d = 3
    counts = np.zeros((d, d, 1, 1), dtype=np.int64)
    for a in range(d):
        counts[a, a, 0, 0] = 1
    table = normalize_counts(CountTable(d, counts, integration_time=1.0))
    assert np.abs(table.setting(1, 1) - np.eye(d) / d).max() < 1e-15


def test_normalize_names_missing_sent_state():
    counts = np.ones((3, 3, 2, 2), dtype=np.int64)
    counts[:, 1, 0, 1] = 0
    with pytest.raises(InsufficientDataError, match=r"b=2.*k=1.*l=2"):
        normalize_counts(CountTable(3, counts, integration_time=1.0))


def test_sample_then_normalize_round_trip():
    table = apply_noise(
        entangled_table(list(sqrt_mub_pair(9))), NoiseModel.from_components(0.05, 0.15)
    )
    counts = sample_counts(table, 5e5, 1.0, seed=31)
    recovered = normalize_counts(counts)
    # conditional entries carry Poisson noise sqrt(p_cond / N_per_state)
    cond_err = np.abs(recovered.probs - table.probs) * 9
    sigma = np.sqrt(table.probs * 9 / (5e5 / 9)) + 1e-6
    assert np.all(cond_err < 6 * sigma)


# --- sessions -----------------------------------------------------------------


def test_noiseless_session_statistics():
    bases = [computational_basis(2), dft_basis(2)]
    record = simulate_session(bases, 40000, noise=None, seed=3)
    sift = record.sifted_fraction
    sigma = math.sqrt(0.25 / 40000)
    assert abs(sift - 0.5) < 3 * sigma
    assert record.qber == 0.0


def test_single_round_session():
    record = simulate_session([computational_basis(3)], 1, seed=0)
    assert record.n_rounds == 1
    assert record.sifted_fraction == 1.0


def test_session_reproducible():
    bases = list(sqrt_mub_pair(9))
    a = simulate_session(bases, 500, NoiseModel.from_components(0.1, 0.1), seed=8)
    b = simulate_session(bases, 500, NoiseModel.from_components(0.1, 0.1), seed=8)
    assert np.array_equal(a.bob_symbol, b.bob_symbol)
    assert np.array_equal(a.alice_basis, b.alice_basis)


def test_session_qber_tracks_noise():
    bases = list(sqrt_mub_pair(25))
    model = NoiseModel.from_components(0.073, 0.248)
    record = simulate_session(
        bases, 200000, model, seed=12, alignments=["row", "col"]
    )
    n_sifted = int(record.sifted.sum())
    sigma = math.sqrt(0.321 * 0.679 / n_sifted)
    assert abs(record.qber - 0.321) < 3 * sigma


def test_session_rejects_empty_and_bad_rounds():
    with pytest.raises(InvalidConfigError):
        simulate_session([], 10)
    with pytest.raises(InvalidConfigError):
        simulate_session([computational_basis(2)], 0)


# --- serialization ------------------------------------------------------------


def test_counts_csv_round_trip(tmp_path):
    table = entangled_table(list(sqrt_mub_pair(4)))
    counts = sample_counts(table, 500.0, 10.0, 5.0, seed=77)
    path = tmp_path / "counts.csv"
    save_counts_csv(counts, path)
    again = load_counts_csv(path)
    assert np.array_equal(again.counts, counts.counts)
    assert again.integration_time == counts.integration_time
    assert again.coincidence_window == counts.coincidence_window
    assert again.seed == 77


def test_probs_csv_round_trip(tmp_path):
    table = apply_noise(
        entangled_table(list(sqrt_mub_pair(9))), NoiseModel.from_components(0.07, 0.2)
    )
    path = tmp_path / "probs.csv"
    save_probs_csv(table, path)
    again = load_probs_csv(path)
    assert np.array_equal(again.probs, table.probs)


def test_session_jsonl_round_trip(tmp_path):
    record = simulate_session(list(sqrt_mub_pair(4)), 200, seed=4)
    path = tmp_path / "session.jsonl"
    record.save_jsonl(path)
    again = SessionRecord.load_jsonl(path, dim=4, seed=4)
    assert np.array_equal(again.alice_basis, record.alice_basis)
    assert np.array_equal(again.bob_basis, record.bob_basis)
    assert np.array_equal(again.alice_symbol, record.alice_symbol)
    assert np.array_equal(again.bob_symbol, record.bob_symbol)
    assert again.qber == record.qber
