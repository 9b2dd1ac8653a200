import struct

import numpy as np
import pytest

from execution.pnp.formats import (
    FormatError,
    decode_denoise_request,
    decode_image,
    decode_measurements,
    encode_denoise_request,
    encode_image,
    encode_measurements,
    load_json,
    probe_path_for,
    read_image,
    read_measurements,
    save_json,
    write_image,
    write_measurements,
)
from execution.pnp.forward_model import add_shot_noise, forward, make_circular_probe, make_scan_grid


def test_cimg_layout():
    img = np.array([[1 + 2j, 3 - 4j]])
    buf = encode_image(img)
    assert buf[:5] == b"CIMG1"
    assert struct.unpack("<II", buf[5:13]) == (1, 2)
    assert struct.unpack("<4d", buf[13:]) == (1.0, 2.0, 3.0, -4.0)
    assert len(buf) == 13 + 2 * 16


def test_rimg_layout_and_decode():
    img = np.arange(6.0).reshape(2, 3)
    buf = encode_image(img)
    assert buf[:5] == b"RIMG1"
    out, end = decode_image(buf)
    assert end == len(buf)
    assert out.dtype == np.float64
    np.testing.assert_array_equal(out, img)


def test_decode_rejects_bad_input():
    with pytest.raises(FormatError):
        decode_image(b"XIMG1" + struct.pack("<II", 1, 1) + bytes(8))
    with pytest.raises(FormatError):
        decode_image(encode_image(np.ones((3, 3)))[:-1])
    with pytest.raises(FormatError):
        decode_image(b"CIM")


def test_read_image_rejects_trailing_bytes(tmp_path):
    path = tmp_path / "img.cimg"
    path.write_bytes(encode_image(np.ones((2, 2), dtype=complex)) + b"\x00")
    with pytest.raises(FormatError):
        read_image(path)


def test_image_file_round_trip(tmp_path, random_complex):
    img = random_complex(5, 3)
    write_image(tmp_path / "nested" / "x.cimg", img)
    np.testing.assert_array_equal(read_image(tmp_path / "nested" / "x.cimg"), img)


@pytest.fixture
def measurements(random_complex):
    probe = make_circular_probe(16, 6)
    geometry = make_scan_grid(40, 32, 3, 2, 16)
    return forward(random_complex(40, 32), probe, geometry)


def test_pmeas_header(measurements):
    buf = encode_measurements(measurements)
    magic, h, w, n, count = struct.unpack_from("<6sIIII", buf)
    assert (magic, h, w, n, count) == (b"PMEAS1", 40, 32, 16, 6)
    alpha, noiseless, seed = struct.unpack_from("<dBQ", buf, 22 + 6 * 8)
    assert (alpha, noiseless, seed) == (0.0, 1, 0)


def test_measurement_files(tmp_path, measurements):
    noisy = add_shot_noise(measurements, 0.3, 2 ** 63 + 5)
    path = tmp_path / "run" / "meas.pmeas"
    probe_path = write_measurements(path, noisy)
    assert probe_path == probe_path_for(path) == tmp_path / "run" / "meas.probe.cimg"

    loaded = read_measurements(path)
    assert loaded.geometry == noisy.geometry
    assert loaded.seed == 2 ** 63 + 5 and loaded.alpha == 0.3
    assert loaded.amplitudes.tobytes() == noisy.amplitudes.tobytes()
    np.testing.assert_array_equal(loaded.probe.values, noisy.probe.values)


def test_pmeas_rejects_wrong_size(measurements):
    buf = encode_measurements(measurements)
    with pytest.raises(FormatError):
        decode_measurements(buf[:-8], measurements.probe)
    with pytest.raises(FormatError):
        decode_measurements(b"PMEAS2" + buf[6:], measurements.probe)


def test_denoise_request(rng):
    img = rng.standard_normal((3, 4))
    buf = encode_denoise_request(img, 0.25)
    assert buf[:4] == b"DNZ1" and buf[4] == 0
    out, tau = decode_denoise_request(buf)
    assert tau == 0.25
    np.testing.assert_array_equal(out, img)
    assert encode_denoise_request(img + 0j, 0.25)[4] == 1


def test_denoise_request_mode_mismatch(rng):
    buf = bytearray(encode_denoise_request(rng.standard_normal((2, 2)), 1.0))
    buf[4] = 1
    with pytest.raises(FormatError):
        decode_denoise_request(bytes(buf))


def test_json_helpers(tmp_path):
    path = tmp_path / "cfg" / "exp.json"
    save_json(path, {"alphas": [10, 20], "name": "désk"})
    assert load_json(path) == {"alphas": [10, 20], "name": "désk"}
