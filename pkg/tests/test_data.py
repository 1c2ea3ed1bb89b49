"""Preset mixtures and labeled-dataset persistence."""

from __future__ import annotations

import math

import numpy as np
import pytest

from eraselab.data import (
    FOUR_CORNERS_PRIORS,
    LabeledDataset,
    four_corners,
    load_dataset,
    make_mixture,
    overlap,
    preset_mixture,
    rings,
    save_dataset,
)


def test_four_corners_layout():
    mix = four_corners()
    assert mix.K == 4 and mix.D == 2
    assert mix.names == ("corner-1", "corner-2", "corner-3", "corner-4")
    np.testing.assert_array_equal(mix.priors, FOUR_CORNERS_PRIORS)
    means = [c.components[0].mean for c in mix.concepts]
    assert means == [(4.0, 4.0), (-4.0, 4.0), (-4.0, -4.0), (4.0, -4.0)]
    # corners sit far apart relative to their spread, so concepts barely mix
    for c in mix.concepts:
        assert c.components[0].var == 0.25


def test_rings_layout():
    mix = rings()
    assert mix.K == 4 and mix.D == 2
    for c in mix.concepts:
        assert len(c.components) == 2
        for comp in c.components:
            assert math.hypot(*comp.mean) == pytest.approx(4.0)


def test_overlap_layout():
    mix = overlap()
    assert mix.K == 2
    shared = [
        comp.mean for c in mix.concepts for comp in c.components if comp.mean == (0.0, 0.0)
    ]
    assert len(shared) == 2


def test_preset_lookup():
    assert preset_mixture("four-corners") == four_corners()
    with pytest.raises(ValueError):
        preset_mixture("unknown")


def test_make_mixture_label_frequencies():
    ds = make_mixture("four-corners", seed=1, n=40_000)
    assert ds.points.shape == (40_000, 2)
    assert ds.labels.dtype == np.int32
    for cid, p in zip((1, 2, 3, 4), FOUR_CORNERS_PRIORS):
        freq = np.mean(ds.labels == cid)
        se = math.sqrt(p * (1 - p) / ds.n)
        assert abs(freq - p) <= 3 * se


def test_make_mixture_is_deterministic():
    a = make_mixture("four-corners", seed=7, n=500)
    b = make_mixture("four-corners", seed=7, n=500)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.labels, b.labels)
    c = make_mixture("four-corners", seed=8, n=500)
    assert not np.array_equal(a.points, c.points)


def test_points_are_read_only():
    ds = make_mixture("four-corners", seed=1, n=10)
    with pytest.raises(ValueError):
        ds.points[0, 0] = 0.0


def test_dataset_round_trip_bit_identical(tmp_path):
    ds = make_mixture("rings", seed=3, n=1000)
    path = tmp_path / "ds.bin"
    save_dataset(path, ds)
    loaded = load_dataset(path)
    np.testing.assert_array_equal(loaded.points, ds.points)
    np.testing.assert_array_equal(loaded.labels, ds.labels)
    assert loaded.mixture == ds.mixture
    assert loaded.seed == ds.seed


def test_dataset_kind_checked(tmp_path):
    from eraselab.container import write_container

    path = tmp_path / "bad.bin"
    write_container(path, {"kind": "other"}, [])
    with pytest.raises(ValueError):
        load_dataset(path)


def test_labels_must_match_mixture():
    ds = make_mixture("overlap", seed=1, n=10)
    with pytest.raises(ValueError):
        LabeledDataset(
            points=ds.points, labels=np.full(10, 9, np.int32), mixture=ds.mixture, seed=1
        )
