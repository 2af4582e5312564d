import numpy as np
import pytest

from stagelight import dataset, synth
from stagelight.errors import DataError
from stagelight.lightcodec import LightSequence, LightToken


def record(rid="r0", show="s0", t=220, f=4, seed=0):
    rng = np.random.default_rng(seed)
    return dataset.DatasetRecord(
        record_id=rid,
        show_id=show,
        features=rng.normal(size=(t, f)).astype(np.float32),
        hue=rng.integers(0, 180, size=t),
        value=rng.integers(0, 256, size=t),
        metadata={"venue": "test"},
    )


def test_record_validation():
    with pytest.raises(ValueError, match="share T"):
        dataset.DatasetRecord("r", "s", np.zeros((4, 2), np.float32),
                              np.zeros(3, np.uint16), np.zeros(4, np.uint8))
    with pytest.raises(ValueError, match="hue"):
        dataset.DatasetRecord("r", "s", np.zeros((2, 2), np.float32),
                              np.array([180, 0]), np.zeros(2, np.uint8))
    with pytest.raises(ValueError, match="show id"):
        dataset.DatasetRecord("r", "", np.zeros((2, 2), np.float32),
                              np.zeros(2, np.uint16), np.zeros(2, np.uint8))


def test_container_round_trip_bitwise(tmp_path):
    c = dataset.DatasetContainer([record("a", "s0", seed=1), record("b", "s1", seed=2)])
    p1, p2 = tmp_path / "one.sbl1", tmp_path / "two.sbl1"
    dataset.save_container(p1, c)
    loaded = dataset.load_container(p1)
    dataset.save_container(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.records[0].metadata == {"venue": "test"}
    assert np.array_equal(loaded.records[1].features, c.records[1].features)
    assert loaded.records[1].hue.dtype == np.uint16
    assert loaded.records[1].value.dtype == np.uint8


def test_double_build_identical_bytes(tmp_path):
    c1 = synth.make_corpus(synth.SyntheticRule(), 5, 64, seed=9)
    c2 = synth.make_corpus(synth.SyntheticRule(), 5, 64, seed=9)
    p1, p2 = tmp_path / "a.sbl1", tmp_path / "b.sbl1"
    dataset.save_container(p1, c1)
    dataset.save_container(p2, c2)
    assert p1.read_bytes() == p2.read_bytes()


def test_container_rejects_corruption(tmp_path):
    c = dataset.DatasetContainer([record()])
    p = tmp_path / "c.sbl1"
    dataset.save_container(p, c)
    raw = p.read_bytes()
    p.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(DataError, match="magic"):
        dataset.load_container(p)
    p.write_bytes(raw[: len(raw) // 3])
    with pytest.raises(DataError):
        dataset.load_container(p)
    bad_version = raw[:4] + b"\x63\x00\x00\x00" + raw[8:]
    p.write_bytes(bad_version)
    with pytest.raises(DataError, match="version"):
        dataset.load_container(p)


def test_container_get():
    c = dataset.DatasetContainer([record("x"), record("y", "s1", seed=3)])
    assert c.get("y").record_id == "y"
    with pytest.raises(KeyError):
        c.get("zz")


def test_pair_record_truncates_within_one_frame():
    seq = LightSequence([LightToken(5, 10)] * 301)
    feats = np.zeros((300, 4), np.float32)
    rec = dataset.pair_record("r", "s", seq, feats)
    assert rec.frames == 300
    rec2 = dataset.pair_record("r", "s", LightSequence([LightToken(5, 10)] * 300),
                               np.zeros((301, 4), np.float32))
    assert rec2.frames == 300


def test_pair_record_rejects_larger_mismatch():
    seq = LightSequence([LightToken(5, 10)] * 302)
    with pytest.raises(DataError, match="one frame"):
        dataset.pair_record("r", "s", seq, np.zeros((300, 4), np.float32))


def test_pair_record_drops_short_records():
    # 19 s at 10 Hz = 190 frames: under the 200-frame minimum
    seq = LightSequence([LightToken(5, 10)] * 190)
    with pytest.warns(UserWarning, match="dropped"):
        out = dataset.pair_record("r", "s", seq, np.zeros((190, 4), np.float32))
    assert out is None
    seq300 = LightSequence([LightToken(5, 10)] * 300)  # 30 s -> kept with T=300
    assert dataset.pair_record("r", "s", seq300, np.zeros((300, 4), np.float32)).frames == 300


def test_build_dataset_skips_dropped():
    with pytest.warns(UserWarning):
        recs = [
            dataset.pair_record("short", "s", LightSequence([LightToken(0, 0)] * 150),
                                np.zeros((150, 2), np.float32)),
            dataset.pair_record("long", "s", LightSequence([LightToken(0, 0)] * 250),
                                np.zeros((250, 2), np.float32)),
        ]
    c = dataset.build_dataset(recs)
    assert [r.record_id for r in c.records] == ["long"]


def test_window_sample_pass_through_and_slice():
    rec = record(t=500)
    assert dataset.window_sample(rec, 1024, 0) is rec
    long = record(t=2000, seed=5)
    out = dataset.window_sample(long, 1024, 7)
    assert out.frames == 1024
    again = dataset.window_sample(long, 1024, 7)
    assert np.array_equal(out.features, again.features)
    # the slice is contiguous: find it in the source
    start = np.flatnonzero(long.hue == out.hue[0])
    assert any(np.array_equal(long.hue[s : s + 1024], out.hue) for s in start)


def test_window_sample_start_distribution_uniform():
    long = record(t=2000, seed=6)
    col = long.features[:, 0]  # random floats: first row identifies the start
    starts = np.empty(10_000, dtype=np.int64)
    for seed in range(10_000):
        out = dataset.window_sample(long, 1024, seed)
        hits = np.flatnonzero(col == out.features[0, 0])
        assert len(hits) == 1
        starts[seed] = hits[0]
    counts, _ = np.histogram(starts, bins=25, range=(0, 977))
    expected = 10_000 / 25
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # 24 dof: 51.2 is the 0.001 quantile cut
    assert chi2 < 51.2
    assert starts.min() >= 0 and starts.max() <= 976


def test_light_csv_round_trip(tmp_path):
    seq = LightSequence([LightToken(3, 200), LightToken(179, 0)])
    path = tmp_path / "l.csv"
    dataset.write_light_csv(path, seq)
    assert path.read_text().splitlines()[0] == "frame,hue,value"
    back = dataset.read_light_csv(path)
    assert back.tokens == seq.tokens
    path.write_text("frame,hue\n0,1\n")
    with pytest.raises(DataError):
        dataset.read_light_csv(path)
