import numpy as np
import pytest

from vbd_twohost.datagen import (
    COLUMNS,
    Dataset,
    DatasetFormatError,
    NoiseConfig,
    generate_dataset,
    read_csv,
    write_csv,
)
from vbd_twohost.model import ModelParams


def test_zero_noise_copies_model_columns(clean_dataset):
    np.testing.assert_array_equal(clean_dataset["obs_I_MD"], clean_dataset["I_MD"])
    np.testing.assert_array_equal(clean_dataset["obs_I_M"], clean_dataset["I_M"])


def test_shape_and_conservation_bounds(noisy_dataset, table2):
    assert len(noisy_dataset) == 1081
    assert noisy_dataset.times[0] == 0 and noisy_dataset.times[-1] == 1080
    assert np.all((noisy_dataset["I_MD"] >= 0) & (noisy_dataset["I_MD"] <= 80_000))
    assert np.all((noisy_dataset["I_M"] >= 0) & (noisy_dataset["I_M"] <= 920_000))
    assert np.all(noisy_dataset["obs_I_MD"] >= 0) and np.all(noisy_dataset["obs_I_M"] >= 0)
    v = noisy_dataset.model_values
    np.testing.assert_allclose(v[:, 0] + v[:, 1], table2.n_d, rtol=1e-6)


def test_reference_ranges_are_flagged_not_enforced(noisy_dataset):
    flags = noisy_dataset.provenance["range_flags"]
    assert "I_MD" in flags and flags["I_MD"][1] > 5_000


def test_same_seed_gives_identical_bytes(tmp_path, table2):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(generate_dataset(table2, noise=NoiseConfig(seed=42)), a)
    write_csv(generate_dataset(table2, noise=NoiseConfig(seed=42)), b)
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.meta.json").read_bytes() == (tmp_path / "b.meta.json").read_bytes()


def test_different_seeds_differ(table2):
    a = generate_dataset(table2, duration_days=30, noise=NoiseConfig(seed=1))
    b = generate_dataset(table2, duration_days=30, noise=NoiseConfig(seed=2))
    assert not np.array_equal(a["obs_I_MD"], b["obs_I_MD"])


def test_column_streams_are_independent(table2):
    a = generate_dataset(table2, duration_days=30, noise=NoiseConfig(0.15, 0.2, seed=3))
    b = generate_dataset(table2, duration_days=30, noise=NoiseConfig(0.0, 0.2, seed=3))
    np.testing.assert_array_equal(a["obs_I_M"], b["obs_I_M"])


def test_noise_is_mean_one():
    p = ModelParams()
    draws = np.array([
        generate_dataset(p, duration_days=1, noise=NoiseConfig(0.15, 0.20, seed=s)).table[1]
        for s in range(10_000)
    ])
    truth_md, truth_m = draws[0, 2], draws[0, 4]
    for obs, truth, sigma in ((draws[:, 7], truth_md, 0.15), (draws[:, 8], truth_m, 0.20)):
        se = sigma * truth / np.sqrt(obs.size)
        assert abs(obs.mean() - truth) < 3 * se


def test_large_noise_is_clamped_at_zero(table2):
    ds = generate_dataset(table2, duration_days=200, noise=NoiseConfig(0.9, 0.9, seed=5))
    assert np.all(ds["obs_I_MD"] >= 0)
    assert np.any(ds["obs_I_MD"] == 0)


def test_invalid_inputs(table2):
    with pytest.raises(ValueError):
        NoiseConfig(sigma_diabetic=1.0)
    with pytest.raises(ValueError):
        NoiseConfig(seed=-1)
    with pytest.raises(ValueError):
        generate_dataset(table2, duration_days=0)


def test_csv_roundtrip(tmp_path, noisy_dataset):
    small = Dataset(noisy_dataset.table[:10].copy(), dict(noisy_dataset.provenance))
    path = tmp_path / "d.csv"
    write_csv(small, path)
    assert path.read_text().splitlines()[0] == ",".join(COLUMNS)
    assert read_csv(path) == small


def test_full_roundtrip_is_exact(tmp_path, noisy_dataset):
    path = tmp_path / "d.csv"
    write_csv(noisy_dataset, path)
    back = read_csv(path)
    np.testing.assert_array_equal(back.table, noisy_dataset.table)
    assert back.provenance == noisy_dataset.provenance


def test_empty_body_is_readable(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text(",".join(COLUMNS) + "\n")
    assert len(read_csv(path)) == 0


def test_reordered_header_rejected(tmp_path):
    cols = list(COLUMNS)
    cols[1], cols[2] = cols[2], cols[1]
    path = tmp_path / "bad.csv"
    path.write_text(",".join(cols) + "\n")
    with pytest.raises(DatasetFormatError, match="header"):
        read_csv(path)


def test_non_numeric_cell_names_row_and_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(",".join(COLUMNS) + "\n" + "0,1,2,3,4,5,6,7,8\n" + "1,1,abc,3,4,5,6,7,8\n")
    with pytest.raises(DatasetFormatError, match="row 3, column I_MD"):
        read_csv(path)


def test_non_monotone_time_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(",".join(COLUMNS) + "\n" + "1,1,2,3,4,5,6,7,8\n" + "1,1,2,3,4,5,6,7,8\n")
    with pytest.raises(DatasetFormatError, match="row 3, column time"):
        read_csv(path)
