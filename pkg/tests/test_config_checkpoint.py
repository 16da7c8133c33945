import struct
import zlib

import numpy as np
import pytest

from gflowout import checkpoint
from gflowout.config import (ConfigFileError, blob_centers, make_dataset, make_deformation,
                             parse_config_text, split_dataset, to_run_config)
from gflowout.numeric import SeededRng
from gflowout.trainer import ConfigError


def test_parse_config():
    text = "# run\nmethod = gflowout\nlayers = 16, 8\nbeta=0.5\n\ndataset = blobs:k=3\nseed = 4  # note\n"
    values = parse_config_text(text)
    assert values == {"method": "gflowout", "layers": (16, 8), "beta": 0.5,
                      "dataset": "blobs:k=3", "seed": 4}
    cfg = to_run_config(values)
    assert cfg.hidden == (16, 8) and cfg.beta == 0.5 and cfg.seed == 4
    assert to_run_config({"dataset": "x", "early_stop_patience": 3}).patience == 3


@pytest.mark.parametrize("text, line, word", [
    ("dataset = blobs\nbogus = 1\n", 2, "bogus"),
    ("dataset = blobs\nseed = 1\nseed = 2\n", 3, "duplicate"),
    ("dataset = blobs\nepochs = ten\n", 2, "epochs"),
    ("dataset = blobs\njust words\n", 2, "key = value"),
])
def test_config_errors_carry_line_numbers(text, line, word):
    with pytest.raises(ConfigFileError) as info:
        parse_config_text(text)
    assert info.value.line == line
    assert word in str(info.value) and f"line {line}" in str(info.value)


def test_missing_dataset_named():
    with pytest.raises(ConfigFileError, match="dataset"):
        parse_config_text("method = none\n")


def test_bad_run_config_values():
    with pytest.raises(ConfigError):
        to_run_config({"dataset": "blobs", "method": "magic"})


def test_blob_centers():
    np.testing.assert_allclose(blob_centers(4, 2.0), [[2, 0], [0, 2], [-2, 0], [0, -2]], atol=1e-15)
    np.testing.assert_allclose(blob_centers(4, 3 * np.sqrt(2), rotate=45),
                               [[3, 3], [-3, 3], [-3, -3], [3, -3]], atol=1e-12)
    np.testing.assert_allclose(blob_centers(2, 1.0, shift=5.0), [[6, 5], [4, 5]], atol=1e-15)


def test_make_dataset_kinds(tmp_path):
    ds = make_dataset("blobs:k=4,n=100,sigma=0,seed=3")
    assert len(ds) == 100 and ds.n_classes == 4
    assert len(np.unique(ds.x, axis=0)) == 4
    assert make_dataset("moons:n=50").n_classes == 2
    fx = make_dataset("fixture:probes=5")
    assert fx.x.shape == (5, 4)
    from gflowout.data import write_idx
    write_idx(tmp_path / "i", np.zeros((3, 2, 2), np.uint8))
    write_idx(tmp_path / "l", np.array([1, 2, 3], np.uint8))
    ds = make_dataset(f"idx:images={tmp_path / 'i'},labels={tmp_path / 'l'}")
    assert ds.grid == (2, 2) and ds.y.tolist() == [1, 2, 3]
    for bad in ("cubes:n=3", "blobs:n=ten", "blobs:nonsense", "idx:images=x"):
        with pytest.raises(ConfigError):
            make_dataset(bad)


def test_make_deformation():
    assert make_deformation("none") is None
    d = make_deformation("gaussian-noise:sigma=0.3,seed=2")
    assert (d.kind, d.intensity, d.seed) == ("gaussian-noise", 0.3, 2)
    assert make_deformation("rotation:angle=30").intensity == 30.0
    with pytest.raises(ConfigError):
        make_deformation("shear:amount=1")


def test_split_dataset_fixed_ratios():
    parts = split_dataset(make_dataset("blobs:n=10"))
    assert [len(p) for p in parts] == [6, 2, 2]


def sample_params():
    rng = SeededRng(0)
    return {"backbone.w1": rng.normal((3, 2)), "backbone.b1": rng.normal(3),
            "policy.z.gamma": np.array([np.pi]), "scalar": np.array(1e-300).reshape(())}


def test_checkpoint_round_trip(tmp_path):
    params = sample_params()
    checkpoint.save(tmp_path / "m.gfo", "method = none\ndataset = x\n", params)
    text, back = checkpoint.load(tmp_path / "m.gfo")
    assert text == "method = none\ndataset = x\n"
    assert list(back) == list(params)
    for k in params:
        assert back[k].shape == params[k].shape
        assert back[k].tobytes() == params[k].astype("<f8").tobytes()


def test_checkpoint_layout():
    blob = checkpoint.encode("ab", {"w": np.array([1.0, 2.0])})
    assert blob[:4] == b"GFO1"
    assert struct.unpack("<HI", blob[4:10]) == (1, 2)
    assert blob[10:12] == b"ab"
    assert struct.unpack("<I", blob[12:16]) == (1,)
    assert blob[16:17] == b"w" and blob[17] == 1
    assert struct.unpack("<I", blob[18:22]) == (2,)
    assert struct.unpack("<2d", blob[22:38]) == (1.0, 2.0)
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4])


def test_checkpoint_corruption_detected():
    blob = bytearray(checkpoint.encode("cfg", sample_params()))
    blob[30] ^= 0x01
    with pytest.raises(checkpoint.CheckpointError, match="CRC"):
        checkpoint.decode(bytes(blob))
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.decode(b"XXXX" + bytes(blob[4:]))
    body = bytearray(checkpoint.encode("cfg", {})[:-4])
    body[4] = 9
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        checkpoint.decode(bytes(body) + struct.pack("<I", zlib.crc32(body)))
    short = checkpoint.encode("cfg", {"w": np.ones(4)})[:-12]
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(short + struct.pack("<I", zlib.crc32(short)))
