from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from clnet.autodiff import Tensor
from clnet.fileio import ChecksumError, MalformedHeaderError
from clnet.models import (
    SUPPORTED_ETAS,
    assemble_clnet,
    assemble_crnet_baseline,
    build_model,
    codeword_length,
    format_eta,
    load_checkpoint,
    parse_eta,
    save_checkpoint,
)


def test_parse_eta_exact_fractions():
    assert parse_eta("1/4") == Fraction(1, 4)
    assert parse_eta(" 1/64 ") == Fraction(1, 64)
    assert format_eta(Fraction(1, 16)) == "1/16"


@pytest.mark.parametrize("bad", ["0.25", "1/3", "1/128", "quarter", "1/", 0.25])
def test_parse_eta_rejects(bad):
    with pytest.raises(ValueError):
        parse_eta(bad)


def test_codeword_lengths():
    assert codeword_length(32, Fraction(1, 4)) == 512
    assert codeword_length(32, Fraction(1, 64)) == 32
    with pytest.raises(ValueError):
        codeword_length(2, Fraction(1, 64))


def test_clnet_encoder_order():
    m = assemble_clnet("1/4")
    names = [layer.name for layer in m.encoder.layers]
    assert names == ["encoder.center", "encoder.forged_input", "encoder.se", "encoder.sa", "encoder.project", "flatten", "encoder.fc"]
    assert m.params["encoder.forged_input.weight"].shape == (32, 2, 1, 1)
    assert m.params["encoder.sa.weight"].shape == (1, 2, 7, 7)
    assert m.params["decoder.head.weight"].shape == (8, 2, 5, 5)
    assert m.params["decoder.refine1.path_b1.weight"].shape == (8, 8, 1, 3)


def test_baseline_uses_wide_kernels_and_no_attention():
    m = assemble_crnet_baseline("1/4")
    names = m.params.names()
    assert not any(".se." in n or ".sa." in n or "forged" in n for n in names)
    assert m.params["encoder.dual.path_b1.weight"].shape == (2, 2, 1, 9)
    assert m.params["decoder.refine1.path_b2.weight"].shape == (8, 8, 9, 1)


@pytest.mark.parametrize("arch", ["clnet", "crnet-base", "clnet-noattn"])
def test_end_to_end_shape_and_range(arch):
    m = build_model(arch, "1/4", 32, seed=2)
    x = Tensor(np.random.default_rng(0).uniform(size=(3, 2, 32, 32)), dtype=np.float32)
    v = m.encode(x)
    assert v.shape == (3, 512)
    y = m.decode(v)
    assert y.shape == (3, 2, 32, 32)
    assert y.data.min() >= 0 and y.data.max() <= 1


def test_bottleneck_shared_by_both_models():
    for eta in SUPPORTED_ETAS:
        assert assemble_clnet(eta).codeword_length == assemble_crnet_baseline(eta).codeword_length


def test_parameter_count_increases_with_eta():
    for arch in ("clnet", "crnet-base"):
        counts = [build_model(arch, e).params.num_parameters() for e in sorted(SUPPORTED_ETAS)]
        assert all(a < b for a, b in zip(counts, counts[1:]))


def test_unsupported_eta_and_arch():
    with pytest.raises(ValueError):
        assemble_clnet("1/2")
    with pytest.raises(ValueError, match="architecture"):
        build_model("csinet", "1/4")


def test_wrong_input_shape_rejected():
    m = build_model("clnet", "1/4", 8)
    with pytest.raises(ValueError):
        m.encode(Tensor(np.zeros((2, 16, 16))))
    with pytest.raises(ValueError):
        m.decode(Tensor(np.zeros(7)))


def test_seeded_initialization():
    a, b = build_model("clnet", "1/8", seed=3), build_model("clnet", "1/8", seed=3)
    c = build_model("clnet", "1/8", seed=4)
    for k in a.params:
        assert_array_equal(a.params[k].data, b.params[k].data)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params if "weight" in k)


def test_model_id():
    assert build_model("clnet", "1/16", 32).model_id == "clnet-eta1_16-na32"


# --------------------------------------------------------------------------- checkpoints


@pytest.mark.parametrize("arch", ["clnet", "crnet-base", "clnet-noattn"])
def test_checkpoint_roundtrip(tmp_path, arch):
    m = build_model(arch, "1/8", 16, seed=5)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m)
    back = load_checkpoint(path)
    assert (back.arch, back.eta, back.na) == (arch, Fraction(1, 8), 16)
    for k in m.params:
        assert_array_equal(back.params[k].data, m.params[k].data)


def test_checkpoint_extra_arrays_and_state(tmp_path):
    m = build_model("clnet", "1/4", 8)
    extra = {"adam.m/x": np.arange(6, dtype=np.float32).reshape(2, 3)}
    save_checkpoint(tmp_path / "c", m, extra_arrays=extra, state={"epoch": 3})
    _, arrays, state = load_checkpoint(tmp_path / "c", with_state=True)
    assert_array_equal(arrays["adam.m/x"], extra["adam.m/x"])
    assert state == {"epoch": 3}


def test_checkpoint_header_records_config(tmp_path):
    import json

    m = build_model("clnet", "1/4", 8, seed=9)
    save_checkpoint(tmp_path / "c", m)
    header = json.loads((tmp_path / "c").read_bytes().split(b"\n", 1)[0])
    assert header["arch"] == "clnet" and header["eta"] == "1/4"
    assert (header["na"], header["c"], header["c_dec"], header["seed"], header["version"]) == (8, 32, 8, 9, 1)


def test_checkpoint_corruption(tmp_path):
    m = build_model("clnet", "1/4", 8)
    path = tmp_path / "c"
    save_checkpoint(path, m)
    raw = bytearray(path.read_bytes())
    raw[-10] ^= 1
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_checkpoint(path)


def test_checkpoint_architecture_mismatch(tmp_path):
    import json

    from clnet.fileio import write_container

    m = build_model("clnet", "1/4", 8)
    path = tmp_path / "c"
    save_checkpoint(path, m)
    raw = path.read_bytes()
    header, rest = raw.split(b"\n", 1)
    h = json.loads(header)
    h["arch"] = "crnet-base"
    write_container(path, h, rest[:-4])
    with pytest.raises(MalformedHeaderError, match="names"):
        load_checkpoint(path)
