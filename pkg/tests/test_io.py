"""File formats and configuration: binary corpus, CSV sidecars, JSON
config with strict keys, seed precedence."""

import csv
import json

import numpy as np
import pytest

from unicardio.errors import ConfigError, FormatError, ParameterError
from unicardio.io import (
    DataConfig,
    ScheduleConfig,
    config_hash,
    load_config,
    load_norm_stats,
    parse_config,
    read_corpus,
    read_corpus_csv,
    read_mask_csv,
    read_raw_streams_csv,
    read_trajectory_csv,
    resolve_seed,
    save_norm_stats,
    write_corpus,
    write_corpus_csv,
    write_manifest,
    write_mask_csv,
    write_removal_report,
    write_trajectory_csv,
)
from unicardio.signals import GateRow, NormStats
from unicardio.tasks import Modality


def tri_signals(n=4, L=8, seed=0):
    rng = np.random.default_rng(seed)
    return {
        m: rng.standard_normal((n, L)).astype(np.float32)
        for m in (Modality.PPG, Modality.ECG, Modality.BP)
    }


# --- binary corpus --------------------------------------------------------

def test_corpus_roundtrip_bitwise(tmp_path):
    signals = tri_signals()
    path = tmp_path / "corpus.ucs1"
    write_corpus(path, signals, fs=32.0)
    got, fs = read_corpus(path)
    assert fs == 32.0
    for m in signals:
        assert got[m].astype(np.float32).tobytes() == signals[m].tobytes()


def test_corpus_write_is_deterministic(tmp_path):
    signals = tri_signals()
    a = tmp_path / "a.ucs1"
    b = tmp_path / "b.ucs1"
    write_corpus(a, signals, fs=32.0)
    write_corpus(b, signals, fs=32.0)
    assert a.read_bytes() == b.read_bytes()


def test_corpus_layout_fields(tmp_path):
    signals = tri_signals(n=3, L=5)
    path = tmp_path / "c.ucs1"
    write_corpus(path, signals, fs=25.5)
    raw = path.read_bytes()
    assert raw[:4] == b"UCS1"
    import struct

    n_mod, n_seg, L, fs_k = struct.unpack("<4I", raw[4:20])
    assert (n_mod, n_seg, L, fs_k) == (3, 3, 5, 25500)
    assert len(raw) == 20 + 3 * 3 * 5 * 4


def test_corpus_prefix_rule(tmp_path):
    # PPG-only is a valid prefix; ECG without PPG is not
    path = tmp_path / "p.ucs1"
    write_corpus(path, {Modality.PPG: np.zeros((2, 4), dtype=np.float32)}, fs=8.0)
    got, _ = read_corpus(path)
    assert set(got) == {Modality.PPG}
    with pytest.raises(ParameterError):
        write_corpus(path, {Modality.ECG: np.zeros((2, 4))}, fs=8.0)
    with pytest.raises(ParameterError):
        write_corpus(path, {Modality.AM: np.zeros((2, 4))}, fs=8.0)
    with pytest.raises(ParameterError):
        write_corpus(path, {}, fs=8.0)


def test_corpus_misaligned_shapes(tmp_path):
    signals = tri_signals()
    signals[Modality.BP] = signals[Modality.BP][:2]
    with pytest.raises(ParameterError):
        write_corpus(tmp_path / "bad.ucs1", signals, fs=32.0)


def test_corpus_rejects_corruption(tmp_path):
    signals = tri_signals()
    path = tmp_path / "c.ucs1"
    write_corpus(path, signals, fs=32.0)
    raw = path.read_bytes()
    bad = tmp_path / "bad.ucs1"

    bad.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError):
        read_corpus(bad)

    bad.write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        read_corpus(bad)

    bad.write_bytes(raw + b"\x00\x00\x00\x00")
    with pytest.raises(FormatError):
        read_corpus(bad)


# --- CSV corpus -------------------------------------------------------------

def test_corpus_csv_roundtrip(tmp_path):
    signals = {m: a.astype(np.float64) for m, a in tri_signals(n=2, L=6).items()}
    path = tmp_path / "corpus.csv"
    write_corpus_csv(path, signals)
    got = read_corpus_csv(path)
    for m in signals:
        np.testing.assert_array_equal(got[m], signals[m])


def test_corpus_csv_rejects_bad_shape_and_header(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("a,b,c\n")
    with pytest.raises(FormatError):
        read_corpus_csv(path)
    path.write_text(
        "segment,modality,index,value\n0,PPG,0,1.0\n0,PPG,2,2.0\n"
    )
    with pytest.raises(FormatError):
        read_corpus_csv(path)
    path.write_text("segment,modality,index,value\n0,EMG,0,1.0\n")
    with pytest.raises(FormatError):
        read_corpus_csv(path)


def test_raw_streams_csv(tmp_path):
    path = tmp_path / "raw.csv"
    t = np.arange(6) / 32.0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "PPG", "ECG"])
        for i, ti in enumerate(t):
            w.writerow([repr(float(ti)), i * 0.1, i * 0.2])
    streams, fs = read_raw_streams_csv(path)
    assert fs == pytest.approx(32.0)
    np.testing.assert_allclose(streams[Modality.ECG], np.arange(6) * 0.2)

    path.write_text("x,PPG\n0,1\n1,2\n")
    with pytest.raises(FormatError):
        read_raw_streams_csv(path)
    path.write_text("t,PPG\n0.0,1\n0.5,2\n0.6,3\n")
    with pytest.raises(FormatError):
        read_raw_streams_csv(path)


# --- config -------------------------------------------------------------------

def test_parse_config_defaults_and_sections():
    cfg = parse_config({})
    assert cfg.model.L == 128
    assert cfg.schedule.n_steps == 50
    assert cfg.curriculum.epochs == 40
    assert cfg.data.n_segments == 512

    cfg = parse_config({
        "model": {"L": 64, "C": 24},
        "schedule": {"n_steps": 10},
        "curriculum": {"epochs": 8, "momentum": 0.9, "grad_clip_norm": 1.0},
        "ablations": {"disable_tam": True},
        "data": {"n_segments": 32, "hr_range_bpm": [60, 70]},
    })
    assert cfg.model.L == 64
    assert cfg.model.n_diffusion_steps == 10  # follows the schedule
    assert cfg.curriculum.momentum == 0.9
    assert cfg.curriculum.disable_tam is True
    assert cfg.data.hr_range_bpm == (60, 70)


def test_parse_config_rejects_unknowns():
    with pytest.raises(ConfigError):
        parse_config({"model": {"hidden": 3}})
    with pytest.raises(ConfigError):
        parse_config({"optimizer": {}})
    with pytest.raises(ConfigError):
        parse_config({"model": "wide"})
    with pytest.raises(ConfigError):
        parse_config([1, 2])


def test_parse_config_wraps_parameter_errors():
    with pytest.raises(ConfigError):
        parse_config({"curriculum": {"epochs": 2}})
    with pytest.raises(ConfigError):
        parse_config({"model": {"C": 7}})


def test_load_config_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"schedule": {"n_steps": 12}}')
    cfg, raw = load_config(str(path))
    assert cfg.schedule.n_steps == 12
    assert raw == {"schedule": {"n_steps": 12}}
    assert load_config(None)[0].schedule.n_steps == 50
    path.write_text("{broken")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_config_hash_stable_and_order_free():
    a = {"model": {"L": 64, "C": 24}}
    b = {"model": {"C": 24, "L": 64}}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({"model": {"L": 65, "C": 24}})
    assert len(config_hash(a)) == 64


def test_resolve_seed_precedence(monkeypatch):
    monkeypatch.delenv("UNICARDIO_SEED", raising=False)
    assert resolve_seed(None, 3) == 3
    assert resolve_seed(9, 3) == 9
    monkeypatch.setenv("UNICARDIO_SEED", "77")
    assert resolve_seed(None, 3) == 77
    assert resolve_seed(9, 3) == 9  # flag wins over env
    monkeypatch.setenv("UNICARDIO_SEED", "soup")
    with pytest.raises(ConfigError):
        resolve_seed(None, 3)


def test_schedule_and_data_config_validation():
    with pytest.raises(ParameterError):
        ScheduleConfig(n_steps=0)
    with pytest.raises(ParameterError):
        DataConfig(n_segments=0)
    with pytest.raises(ParameterError):
        DataConfig(ratios=(0.9, 0.2, 0.1))


# --- sidecars -------------------------------------------------------------------

def test_manifest_contents(tmp_path):
    path = tmp_path / "manifest.json"
    raw = {"model": {"L": 64}}
    got = write_manifest(path, "train", seed=5, raw_config=raw,
                         outputs={"ckpt": "final.uckpt"}, final_loss=0.5)
    on_disk = json.loads(path.read_text())
    assert on_disk == json.loads(json.dumps(got))
    assert on_disk["command"] == "train"
    assert on_disk["seed"] == 5
    assert on_disk["config_hash"] == config_hash(raw)
    assert on_disk["outputs"] == {"ckpt": "final.uckpt"}
    assert on_disk["final_loss"] == 0.5
    assert set(on_disk["versions"]) == {"unicardio", "python", "numpy", "scipy", "torch"}


def test_norm_stats_roundtrip(tmp_path):
    stats = {
        Modality.PPG: NormStats(Modality.PPG, 0.5, 0.1, 0.0, 1.0),
        Modality.BP: NormStats(Modality.BP, 90.0, 9.0, 60.0, 130.0,
                               source_space="mmHg"),
    }
    path = tmp_path / "stats.json"
    save_norm_stats(path, stats)
    got = load_norm_stats(path)
    assert got == stats
    payload = json.loads(path.read_text())
    payload["EMG"] = payload.pop("PPG")
    path.write_text(json.dumps(payload))
    with pytest.raises(FormatError):
        load_norm_stats(path)


def test_removal_report_format(tmp_path):
    rows = [
        GateRow(0, Modality.PPG, 0.15, True),
        GateRow(1, Modality.ECG, 0.45, False),
    ]
    path = tmp_path / "removal.csv"
    write_removal_report(path, rows)
    with open(path, newline="") as fh:
        got = list(csv.DictReader(fh))
    assert got[0] == {"segment_id": "0", "modality": "PPG",
                      "entropy": "0.15", "kept": "1"}
    assert got[1]["kept"] == "0"


def test_mask_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    observed = rng.random((3, 16)) > 0.3
    path = tmp_path / "mask.csv"
    write_mask_csv(path, observed)
    np.testing.assert_array_equal(read_mask_csv(path), observed)
    # 1-D input comes back as one row
    write_mask_csv(path, observed[0])
    got = read_mask_csv(path)
    assert got.shape == (1, 16)
    np.testing.assert_array_equal(got[0], observed[0])


def test_mask_csv_rejects_sparse_and_empty(tmp_path):
    path = tmp_path / "mask.csv"
    path.write_text("segment,index,observed\n0,0,1\n1,1,0\n")
    with pytest.raises(FormatError):
        read_mask_csv(path)
    path.write_text("segment,index,observed\n")
    with pytest.raises(FormatError):
        read_mask_csv(path)
    path.write_text("nope\n")
    with pytest.raises(FormatError):
        read_mask_csv(path)


def test_trajectory_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    trajectory = [
        (8, rng.standard_normal((2, 4))),
        (4, rng.standard_normal((2, 4))),
        (0, rng.standard_normal((2, 4))),
    ]
    path = tmp_path / "trajectory.csv"
    write_trajectory_csv(path, trajectory)
    got = read_trajectory_csv(path)
    assert [t for t, _ in got] == [8, 4, 0]
    for (_, want), (_, arr) in zip(trajectory, got):
        np.testing.assert_array_equal(arr, want)
