import struct

import numpy as np
import pytest
from scipy import stats

from coxvae.data import (
    Dataset,
    SyntheticConfig,
    assign_digit_hazards,
    digit_dataset,
    draw_survival,
    generate_blob_dataset,
    load_idx,
    read_dataset,
    read_idx_raw,
    split,
    write_dataset,
    write_idx,
)
from coxvae.errors import ConfigError, FormatError
from coxvae.survstats import SurvivalTable, concordance_index


def test_no_blobs_means_zero_hazard_and_exponential_times():
    ds = generate_blob_dataset(SyntheticConfig(n_samples=300, blob_count_range=(0, 0), seed=1))
    assert np.all(ds.true_loghazard == 0)
    lam = 1 / 365
    _, _, event_time, _ = draw_survival(np.zeros(10_000), lam, 0.17, np.random.default_rng(2))
    assert abs(event_time.mean() - 1 / lam) < 0.05 / lam


def test_generation_is_deterministic():
    cfg = SyntheticConfig(n_samples=50, seed=11)
    a, b = generate_blob_dataset(cfg), generate_blob_dataset(cfg)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.table.time.tobytes() == b.table.time.tobytes()
    assert a.true_loghazard.tobytes() == b.true_loghazard.tobytes()


def test_censor_fraction_near_target(default_blobs):
    frac = 1 - default_blobs.table.event.mean()
    assert 0.14 <= frac <= 0.20


def test_pixels_and_times_valid(default_blobs):
    assert default_blobs.images.min() >= 0 and default_blobs.images.max() <= 1
    assert np.all(default_blobs.table.time > 0)
    assert default_blobs.n_pixels == 256


def test_hazard_orders_event_times(default_blobs):
    ds = default_blobs
    died = ds.table.event == 1
    tau, p = stats.kendalltau(ds.true_loghazard[died], ds.table.time[died])
    assert tau < 0 and p < 1e-12


def test_oracle_cindex_ceiling(default_blobs):
    assert concordance_index(default_blobs.table, default_blobs.true_loghazard) >= 0.75


def test_censoring_times_independent_of_hazard(default_blobs):
    h = default_blobs.true_loghazard
    _, _, _, censor_time = draw_survival(h, 1 / 365, 0.17, np.random.default_rng(5))
    rho = stats.spearmanr(censor_time, h)[0]
    assert abs(rho) < 0.1


def test_invalid_configs():
    with pytest.raises(ConfigError) as info:
        SyntheticConfig(censor_rate_target=1.5).validate()
    assert info.value.field == "censor_rate_target"
    with pytest.raises(ConfigError):
        SyntheticConfig(image_side=6).validate()


def test_unattainable_censor_target():
    # a single record cannot realize 40% censoring within 3 points
    with pytest.raises(ConfigError):
        draw_survival(np.zeros(1), 1 / 365, 0.4, np.random.default_rng(0))


# IDX

def test_idx_hand_built_fixture(tmp_path):
    pixels = [0, 255, 51, 102, 1, 2, 3, 4]
    raw = struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(pixels)
    (tmp_path / "img.idx").write_bytes(raw)
    arr = load_idx(tmp_path / "img.idx")
    assert arr.shape == (2, 2, 2)
    np.testing.assert_array_equal(arr.ravel(), np.array(pixels) / 255.0)
    (tmp_path / "lab.idx").write_bytes(struct.pack(">II", 0x801, 3) + bytes([7, 0, 9]))
    np.testing.assert_array_equal(load_idx(tmp_path / "lab.idx"), [7, 0, 9])


def test_idx_round_trip_bytes(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, size=(3, 5, 4), dtype=np.uint8)
    write_idx(tmp_path / "a.idx", arr)
    _, dims, back = read_idx_raw(tmp_path / "a.idx")
    assert dims == (3, 5, 4)
    write_idx(tmp_path / "b.idx", back)
    assert (tmp_path / "a.idx").read_bytes() == (tmp_path / "b.idx").read_bytes()


def test_idx_truncated_and_bad_magic(tmp_path):
    arr = np.zeros((2, 3, 3), dtype=np.uint8)
    write_idx(tmp_path / "a.idx", arr)
    raw = (tmp_path / "a.idx").read_bytes()
    (tmp_path / "t.idx").write_bytes(raw[:-2])
    with pytest.raises(FormatError, match="offset"):
        load_idx(tmp_path / "t.idx")
    (tmp_path / "m.idx").write_bytes(b"\x00\x00\x09\x03" + raw[4:])
    with pytest.raises(FormatError):
        load_idx(tmp_path / "m.idx")


def test_digit_dataset_from_idx(tmp_path):
    rng = np.random.default_rng(1)
    write_idx(tmp_path / "img", rng.integers(0, 256, size=(40, 8, 8), dtype=np.uint8))
    write_idx(tmp_path / "lab", rng.integers(0, 10, size=40, dtype=np.uint8))
    ds = digit_dataset(tmp_path / "img", tmp_path / "lab")
    assert ds.images.shape == (40, 64) and ds.images.max() <= 1


# digit hazards

def test_digit_hazards_monotone():
    labels = np.repeat(np.arange(10), 100)
    _, h = assign_digit_hazards(labels, spread=1.0)
    means = [h[labels == d].mean() for d in range(10)]
    assert np.argmin(means) == 0 and np.argmax(means) == 9
    assert np.all(np.diff(means) > 0)


def test_digit_spread_zero_gives_chance_cindex():
    labels = np.random.default_rng(3).integers(0, 10, size=1000)
    table, h = assign_digit_hazards(labels, spread=0.0, seed=4)
    assert np.all(h == 0)
    assert abs(concordance_index(table, labels.astype(float)) - 0.5) < 0.03


def test_digit_nine_dies_sooner_than_zero():
    labels = np.repeat([0, 9], 500)
    table, _ = assign_digit_hazards(labels, spread=2.0, seed=6)
    assert np.median(table.time[labels == 9]) < np.median(table.time[labels == 0])


# files

def test_dataset_round_trip(tmp_path, small_blobs):
    write_dataset(small_blobs, tmp_path)
    back = read_dataset(tmp_path)
    assert back.images.tobytes() == small_blobs.images.tobytes()
    assert back.table.time.tobytes() == small_blobs.table.time.tobytes()
    np.testing.assert_array_equal(back.table.event, small_blobs.table.event)
    assert back.true_loghazard.tobytes() == small_blobs.true_loghazard.tobytes()
    raw = (tmp_path / "images.svi").read_bytes()
    assert raw[:4] == b"SVIM" and struct.unpack("<III", raw[4:16]) == (1, 200, 16)


def test_dataset_validation_on_read(tmp_path, small_blobs):
    write_dataset(small_blobs, tmp_path)
    csv_path = tmp_path / "survival.csv"
    lines = csv_path.read_text().splitlines()
    parts = lines[1].split(",")
    parts[1] = "-3.0"
    lines[1] = ",".join(parts)
    csv_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError):
        read_dataset(tmp_path)


def test_dataset_checksum_and_version(tmp_path, small_blobs):
    write_dataset(small_blobs, tmp_path)
    path = tmp_path / "images.svi"
    raw = bytearray(path.read_bytes())
    raw[20] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="checksum"):
        read_dataset(tmp_path)
    raw[20] ^= 0xFF
    raw[4] = 2
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        read_dataset(tmp_path)


def test_missing_truth_column_tolerated(tmp_path, small_blobs):
    real = Dataset(small_blobs.images, small_blobs.table)
    write_dataset(real, tmp_path)
    assert (tmp_path / "survival.csv").read_text().startswith("id,time_days,event\n")
    assert read_dataset(tmp_path).true_loghazard is None


# split

def test_split_properties(small_blobs):
    tr, va = split(small_blobs, 0.25, 0)
    assert len(tr) + len(va) == len(small_blobs) and len(va) == 50
    tr2, va2 = split(small_blobs, 0.25, 0)
    assert va.table.time.tobytes() == va2.table.time.tobytes()
    all_times = np.sort(np.concatenate([tr.table.time, va.table.time]))
    np.testing.assert_array_equal(all_times, np.sort(small_blobs.table.time))
    _, va3 = split(small_blobs, 0.25, 1)
    assert va3.table.time.tobytes() != va.table.time.tobytes()
    with pytest.raises(ConfigError):
        split(small_blobs, 0.001, 0)
    with pytest.raises(ConfigError):
        split(small_blobs, 1.0, 0)
