import json
import logging
import shutil

import numpy as np
import pytest

from grfkit.dataset import load_devices, load_manifest
from grfkit.preprocess import PREROLL, STEP_CHANNELS, estimate_warps, preprocess_dataset, synchronize


def onsets(steps):
    """First sample of each step where g_z reaches 50 N."""
    return np.array([int(np.argmax(s.column("grf_z") * s.body_weight > 50.0)) for s in steps])


def test_every_measurement_yields_all_steps(small_dataset):
    root, index, result = small_dataset
    assert result.failures == {}
    assert set(result.counts) == set(index.measurements)
    assert all(n == 60 for n in result.counts.values())
    assert len(result.steps) == sum(result.counts.values())


def test_steps_shape_and_provenance(small_dataset):
    _, index, result = small_dataset
    ids = [s.step_id for s in result.steps]
    assert len(set(ids)) == len(ids)
    for s in result.steps:
        assert s.data.shape == (200, 15) and s.channels == STEP_CHANNELS
        m = index.measurements[s.measurement_id]
        assert (s.athlete_id, s.collection_id, s.speed) == (m.athlete_id, m.collection_id, m.speed)
        assert s.body_weight == index.body_weights[s.athlete_id]


def test_sides_match_generator(small_dataset):
    root, index, result = small_dataset
    truth = json.loads((root / "truth.json").read_text())
    for mid in index.measurements:
        sides = [s.side for s in result.steps if s.measurement_id == mid]
        assert sides == truth[mid]["sides"]


def test_stances_share_phase(small_dataset):
    _, index, result = small_dataset
    for mid in index.measurements:
        on = onsets([s for s in result.steps if s.measurement_id == mid])
        assert on.min() >= PREROLL // 2
        assert on.max() - on.min() <= 6
        assert on.max() < 60


def test_grf_in_body_weights(small_dataset):
    _, _, result = small_dataset
    peaks = np.array([s.column("grf_z").max() for s in result.steps])
    assert np.all((peaks > 1.8) & (peaks < 4.5))


def test_clock_warps_recovered(small_dataset):
    root, index, _ = small_dataset
    truth = json.loads((root / "truth.json").read_text())
    for mid in list(index.measurements)[:3]:
        m = index.measurements[mid]
        warps = estimate_warps(load_devices(index, mid), m.jump_windows)
        tau = np.linspace(*m.run_window, 50)
        for dev, (scale, offset) in truth[mid]["clock"].items():
            assert np.max(np.abs(warps[dev](tau) - (scale * tau + offset))) <= 1 / 500


def test_synchronized_grid(small_dataset):
    _, index, _ = small_dataset
    mid = next(iter(index.measurements))
    m = index.measurements[mid]
    sync = synchronize(load_devices(index, mid), index.body_weights[m.athlete_id], m.jump_windows)
    assert sync.rate == 500.0 and len(sync.channels) == 21
    assert sync.start_time * 500 == pytest.approx(round(sync.start_time * 500), abs=1e-9)
    # standing still at the end: 1 BW on the plate
    assert np.median(sync.column("grf_z")[-200:]) == pytest.approx(1.0, abs=0.01)


def test_missing_jump_reference_skips_measurement(small_dataset, tmp_path, caplog):
    root, _, _ = small_dataset
    shutil.copytree(root, tmp_path / "d")
    path = tmp_path / "d" / "manifest.json"
    data = json.loads(path.read_text())
    bad = data["collections"][0]["measurements"][0]
    bad["jump_windows_s"][0] = [0.2, 0.6]  # quiet standing, no landing
    path.write_text(json.dumps(data))
    index = load_manifest(path)
    with caplog.at_level(logging.WARNING, logger="grfkit.preprocess"):
        result = preprocess_dataset(index)
    mid = bad["measurement_id"]
    assert list(result.failures) == [mid]
    assert result.failures[mid].startswith("NoReferenceFoundError")
    assert any(mid in r.getMessage() and "NoReferenceFoundError" in r.getMessage() for r in caplog.records)
    assert len(result.counts) == len(index) - 1
