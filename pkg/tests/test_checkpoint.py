import numpy as np
import pytest

from planrl.errors import ConfigError
from planrl.nn.checkpoint import load_bundle, save_bundle


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "enc/w0": rng.normal(size=(7, 5)) * 1e10,
        "enc/b0": rng.normal(size=5) * 1e-12,
        "scalar": np.array(np.pi),
        "table": rng.normal(size=(3, 4)),
    }
    comps = [
        {"name": "enc", "widths": [7, 5],
         "tensors": [("enc/w0", arrays["enc/w0"]), ("enc/b0", arrays["enc/b0"])]},
        {"name": "misc", "widths": [],
         "tensors": [("scalar", arrays["scalar"]), ("table", arrays["table"])]},
    ]
    path = tmp_path / "ck.bin"
    save_bundle(path, comps, extra={"global_step": 123, "note": "hello"})
    manifest, loaded = load_bundle(path)
    for name, arr in arrays.items():
        assert loaded[name].tobytes() == np.asarray(arr, dtype=np.float64).tobytes(), name
    assert manifest["format_version"] == 1
    assert manifest["extra"]["global_step"] == 123
    enc = manifest["components"][0]
    assert enc["name"] == "enc"
    assert enc["widths"] == [7, 5]
    assert enc["param_count"] == 7 * 5 + 5


def test_duplicate_tensor_name_rejected(tmp_path):
    comps = [{"name": "a", "widths": [],
              "tensors": [("x", np.zeros(2)), ("x", np.ones(2))]}]
    with pytest.raises(ConfigError):
        save_bundle(tmp_path / "bad.bin", comps)


def test_non_checkpoint_file_rejected(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(ConfigError):
        load_bundle(p)
