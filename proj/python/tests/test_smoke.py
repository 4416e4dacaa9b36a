import io

import numpy as np
import pytest
from PIL import Image

import adjoint_backmap as ab


@pytest.fixture
def tiny64():
    return ab.build_tiny([8, 8, 3], classes=10, seed=4, dtype="float64")


def random_input(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


def test_class_surfaces_reproduce_the_logits(tiny64):
    x = random_input(tiny64.input_shape)
    z = tiny64.logits(x)
    surfaces = tiny64.surfaces(x, "rm0")
    assert [idx["k"] for idx, _ in surfaces] == list(range(10))
    for idx, h in surfaces:
        assert h.shape == x.shape
        assert np.sum(h * x) == pytest.approx(z[idx["k"]], rel=1e-10, abs=1e-12)


def test_gate_scale_does_not_change_surfaces(tiny64):
    x = random_input(tiny64.input_shape, seed=1)
    a = tiny64.surfaces(x, "rm1", layer=1, z_scale=0.125)
    b = tiny64.surfaces(x, "rm1", layer=1, z_scale=3.0)
    for (_, ha), (_, hb) in zip(a, b):
        np.testing.assert_allclose(ha, hb, rtol=0, atol=1e-12)


def test_filters_and_exclusions(tiny64):
    x = random_input(tiny64.input_shape)
    one = tiny64.surfaces(x, "4", layer=1, s=[2], j=[1], i=[3])
    assert len(one) == 1
    assert one[0][0] == {"layer": 1, "s": 2, "j": 1, "i": 3, "k": -1}
    with pytest.raises(ab.UnsupportedError):
        tiny64.surfaces(x, "rm4", layer=0)
    with pytest.raises(ab.AbmError):
        tiny64.surfaces(x, "rm7")


def test_vgg7_shape_ledger_row():
    net = ab.build("vgg7", seed=0)
    rows = {(r["layer"], r["mode"]): r for r in net.shape_ledger()}
    conv1 = rows[("Conv1", "rm4")]
    assert conv1["applicable"]
    assert conv1["extents"] == [32, 32, 32, 32]
    assert int(np.prod(conv1["extents"])) == 1024 * 32 * 32
    assert conv1["surface_shape"] == [32, 32, 3]
    assert not rows[("Conv0", "rm4")]["applicable"]


def test_model_round_trip(tmp_path, tiny64):
    path = tmp_path / "tiny.abm"
    tiny64.save(path)
    back = ab.load_model(path, dtype="float64")
    x = random_input(tiny64.input_shape, seed=2)
    np.testing.assert_array_equal(back.logits(x), tiny64.logits(x))
    assert back.architecture == "tiny"
    assert ab.load_model(path).dtype == "float32"
    (tmp_path / "bad.abm").write_bytes(b"nonsense")
    with pytest.raises(ab.FormatError):
        ab.load_model(tmp_path / "bad.abm")


def test_png_matches_an_independent_decoder():
    surface = np.array([[[-2.0], [0.0]], [[1.0], [0.5]]])
    image = ab.render_surface(surface)
    assert image.dtype == np.uint8
    assert image[:, :, 0].tolist() == [[255, 0], [128, 64]]
    data = ab.encode_png(image)
    decoded = np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))
    np.testing.assert_array_equal(decoded, image)
    np.testing.assert_array_equal(ab.decode_png(data), image)


def test_attacks(tiny64):
    x = random_input(tiny64.input_shape, seed=3)
    label = tiny64.predict(x)
    still = tiny64.untargeted_attack(x, label, epsilon=0.0, steps=5)
    assert not still["success"]
    assert np.all(still["delta"] == 0)
    same = tiny64.targeted_attack(x, label)
    assert same["degenerate"]
    p = tiny64.untargeted_attack(x, label, epsilon=0.05, steps=20)
    assert np.max(np.abs(p["delta"])) <= p["steps"] * 0.05 + 1e-12
    assert p["l2"] == pytest.approx(np.linalg.norm(p["delta"]))
    rows = tiny64.compare_hyperplanes(x, x + p["delta"])
    logits = tiny64.logits(x + p["delta"])
    for k, (forward, fresh, _) in enumerate(rows):
        assert forward == pytest.approx(logits[k], rel=1e-12)
        assert fresh == pytest.approx(forward, rel=1e-9, abs=1e-12)


def test_verify_on_random_inputs(tiny64):
    report = tiny64.verify(random_input([3] + tiny64.input_shape, seed=5))
    assert report["passes"]
    assert report["summary_csv"].startswith("layer,units,")


def test_cli_in_process(tmp_path):
    code, out, _ = ab.run_cli(["verify", "--help"])
    assert code == 0
    assert "--z-scale" in out
    code, _, err = ab.run_cli(["verify", "--model", str(tmp_path / "missing.abm"), "--output", str(tmp_path)])
    assert code == 2
    assert "missing.abm" in err
    code, out, _ = ab.run_cli(["backmap", "--arch", "tiny", "--rm", "0", "--output", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "tiny_rm0_fc.abmh").exists()
