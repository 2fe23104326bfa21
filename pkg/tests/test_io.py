import numpy as np
import pytest

from conftest import random_spd
from spddl.datasets import PlantedSpec, gen_planted_dataset
from spddl.io import (
    FormatError,
    load_dataset,
    load_dictionary,
    load_spd,
    read_codes,
    save_dataset,
    save_dictionary,
    save_spd,
    write_codes,
)


@pytest.mark.parametrize("suffix", [".spd", ".json"])
def test_spd_round_trip(tmp_path, rng, suffix):
    X = random_spd(rng, 4)
    save_spd(tmp_path / f"x{suffix}", X)
    assert np.array_equal(load_spd(tmp_path / f"x{suffix}"), X)


@pytest.mark.parametrize("suffix", [".spdd", ".json"])
def test_dictionary_round_trip_keeps_order(tmp_path, rng, suffix):
    D = np.stack([random_spd(rng, 3) for _ in range(5)])
    save_dictionary(tmp_path / f"d{suffix}", D)
    assert np.array_equal(load_dictionary(tmp_path / f"d{suffix}"), D)


@pytest.mark.parametrize("suffix", [".spds", ".json"])
def test_dataset_round_trip(tmp_path, suffix):
    _, ds, _ = gen_planted_dataset(PlantedSpec(dim=3, n_atoms=6, n_data=12, active=2, n_classes=3, seed=1))
    save_dataset(tmp_path / f"s{suffix}", ds)
    back = load_dataset(tmp_path / f"s{suffix}", splits=None if suffix == ".json" else ds.splits)
    assert np.array_equal(back.matrices, ds.matrices)
    assert np.array_equal(back.labels, ds.labels)
    assert back.splits == ds.splits


def test_binary_layout(tmp_path):
    save_spd(tmp_path / "x.spd", np.diag([2.0, 3.0]))
    buf = (tmp_path / "x.spd").read_bytes()
    assert buf[:4] == b"SPD1" and int.from_bytes(buf[4:8], "little") == 2 and len(buf) == 8 + 4 * 8


def test_bad_magic(tmp_path, rng):
    save_spd(tmp_path / "x.spd", random_spd(rng, 2))
    with pytest.raises(FormatError, match="magic"):
        load_dictionary(tmp_path / "x.spd")


@pytest.mark.parametrize("cut", [6, 20])
def test_truncation(tmp_path, rng, cut):
    D = np.stack([random_spd(rng, 3) for _ in range(2)])
    save_dictionary(tmp_path / "d.spdd", D)
    buf = (tmp_path / "d.spdd").read_bytes()
    (tmp_path / "d.spdd").write_bytes(buf[:cut])
    with pytest.raises(FormatError, match="truncated"):
        load_dictionary(tmp_path / "d.spdd")


def test_non_spd_rejected(tmp_path):
    (tmp_path / "x.json").write_text('{"dim": 2, "entries": [1, 0, 0, -1]}')
    with pytest.raises(ValueError):
        load_spd(tmp_path / "x.json")


def test_codes_round_trip(tmp_path):
    rows = [{"index": i, "label": 0, "coeffs": np.arange(3.0) * i, "objective": 0.5, "iterations": 3, "wall_ms": 0.0}
            for i in range(3)]
    write_codes(tmp_path / "c.jsonl", rows)
    back = read_codes(tmp_path / "c.jsonl")
    assert [r["index"] for r in back] == [0, 1, 2]
    np.testing.assert_array_equal(back[2]["coeffs"], [0.0, 2.0, 4.0])
