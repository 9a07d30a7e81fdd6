import struct

import numpy as np
import pytest

import gsvol
from gsvol.errors import FormatError
from gsvol.field import load_field, random_field, save_field
from gsvol.nifti import load_nifti, save_nifti
from gsvol.volume import GridSpec, Volume, load_volume, save_volume


def _random_volume(dims, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    g = GridSpec(dims, (1.0, 1.5, 2.0), (0.5, -1.0, 3.0))
    return Volume(g, rng.uniform(0, 1, size=dims).astype(dtype))


# ------------------------------------------------------------- raw_json


def test_raw_json_round_trip_bit_identical(tmp_path):
    v = _random_volume((4, 4, 4))
    path = str(tmp_path / "vol.json")
    save_volume(v, path)
    back = load_volume(path)
    assert back.grid == v.grid
    np.testing.assert_array_equal(back.data, v.data)


def test_raw_json_missing_key(tmp_path):
    path = tmp_path / "vol.json"
    path.write_text('{"dims": [2,2,2], "spacing": [1,1,1], "origin": [0,0,0]}')
    with pytest.raises(FormatError, match="missing required key"):
        load_volume(str(path))


def test_raw_json_bad_json(tmp_path):
    path = tmp_path / "vol.json"
    path.write_text("{nope")
    with pytest.raises(FormatError, match="not valid JSON"):
        load_volume(str(path))


def test_raw_json_data_length_mismatch(tmp_path):
    v = _random_volume((4, 4, 4))
    path = str(tmp_path / "vol.json")
    save_volume(v, path)
    with open(tmp_path / "vol.bin", "r+b") as fh:
        fh.truncate(100)
    with pytest.raises(FormatError, match="require"):
        load_volume(path)


def test_unknown_extension():
    v = _random_volume((2, 2, 2))
    with pytest.raises(FormatError, match="cannot infer"):
        save_volume(v, "vol.dat")


# ------------------------------------------------------------- NIfTI-1


def test_nifti_round_trip(tmp_path):
    v = _random_volume((6, 5, 4))
    path = str(tmp_path / "vol.nii")
    save_nifti(v, path)
    back = load_nifti(path)
    np.testing.assert_array_equal(back.data, v.data)
    np.testing.assert_allclose(back.grid.spacing, v.grid.spacing)
    np.testing.assert_allclose(back.grid.origin, v.grid.origin)


def _blank_header():
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, 16, 16, 16, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, 16)          # float32
    struct.pack_into("<h", hdr, 72, 32)          # bitpix
    struct.pack_into("<8f", hdr, 76, 1.0, 2.0, 2.0, 2.0, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)      # vox_offset
    struct.pack_into("<4s", hdr, 344, b"n+1\x00")
    return hdr


def test_nifti_header_field_mapping(tmp_path):
    # handwritten header per the standard layout (not via save_nifti)
    hdr = _blank_header()
    path = tmp_path / "hand.nii"
    data = np.arange(16 ** 3, dtype="<f4")
    path.write_bytes(bytes(hdr) + b"\x00" * 4 + data.tobytes())
    v = load_nifti(str(path))
    assert v.grid.dims == (16, 16, 16)
    assert v.grid.spacing == (2.0, 2.0, 2.0)
    assert v.grid.origin == (0.0, 0.0, 0.0)
    np.testing.assert_array_equal(v.linear(), data)


def test_nifti_unsupported_datatype(tmp_path):
    hdr = _blank_header()
    struct.pack_into("<h", hdr, 70, 32)  # complex64
    path = tmp_path / "cplx.nii"
    path.write_bytes(bytes(hdr) + b"\x00" * 4)
    with pytest.raises(FormatError, match="unsupported datatype"):
        load_nifti(str(path))


def test_nifti_non_diagonal_sform(tmp_path):
    hdr = _blank_header()
    struct.pack_into("<h", hdr, 254, 1)  # sform_code
    rows = [2.0, 0.5, 0.0, 0.0,
            0.0, 2.0, 0.0, 0.0,
            0.0, 0.0, 2.0, 0.0]
    struct.pack_into("<12f", hdr, 280, *rows)
    path = tmp_path / "sheared.nii"
    data = np.zeros(16 ** 3, dtype="<f4")
    path.write_bytes(bytes(hdr) + b"\x00" * 4 + data.tobytes())
    with pytest.raises(FormatError, match="srow"):
        load_nifti(str(path))


def test_nifti_rotated_qform(tmp_path):
    hdr = _blank_header()
    struct.pack_into("<h", hdr, 252, 1)            # qform_code
    struct.pack_into("<f", hdr, 256, 0.5)          # quatern_b
    path = tmp_path / "rotated.nii"
    path.write_bytes(bytes(hdr) + b"\x00" * 4 + np.zeros(16 ** 3, dtype="<f4").tobytes())
    with pytest.raises(FormatError, match="quatern"):
        load_nifti(str(path))


def test_nifti_scl_slope_applied(tmp_path):
    hdr = _blank_header()
    struct.pack_into("<h", hdr, 70, 4)   # int16
    struct.pack_into("<h", hdr, 72, 16)
    struct.pack_into("<f", hdr, 112, 0.5)   # scl_slope
    struct.pack_into("<f", hdr, 116, 10.0)  # scl_inter
    data = np.arange(16 ** 3, dtype="<i2")
    path = tmp_path / "scaled.nii"
    path.write_bytes(bytes(hdr) + b"\x00" * 4 + data.tobytes())
    v = load_nifti(str(path))
    np.testing.assert_allclose(v.linear()[:4], [10.0, 10.5, 11.0, 11.5])


def test_nifti_big_endian(tmp_path):
    hdr = bytearray(348)
    struct.pack_into(">i", hdr, 0, 348)
    struct.pack_into(">8h", hdr, 40, 3, 4, 4, 4, 1, 1, 1, 1)
    struct.pack_into(">h", hdr, 70, 16)
    struct.pack_into(">h", hdr, 72, 32)
    struct.pack_into(">8f", hdr, 76, 1.0, 1.0, 1.0, 1.0, 0, 0, 0, 0)
    struct.pack_into(">f", hdr, 108, 352.0)
    struct.pack_into("<4s", hdr, 344, b"n+1\x00")
    data = np.linspace(0, 1, 64, dtype=">f4")
    path = tmp_path / "be.nii"
    path.write_bytes(bytes(hdr) + b"\x00" * 4 + data.tobytes())
    v = load_nifti(str(path))
    np.testing.assert_allclose(v.linear(), data.astype(np.float32))


def test_nifti_rejects_4d(tmp_path):
    hdr = _blank_header()
    struct.pack_into("<8h", hdr, 40, 4, 16, 16, 16, 2, 1, 1, 1)
    path = tmp_path / "fourd.nii"
    path.write_bytes(bytes(hdr) + b"\x00" * 4)
    with pytest.raises(FormatError):
        load_nifti(str(path))


def test_nifti_bad_magic(tmp_path):
    hdr = _blank_header()
    struct.pack_into("<4s", hdr, 344, b"ni1\x00")  # two-file variant unsupported
    path = tmp_path / "pair.nii"
    path.write_bytes(bytes(hdr) + b"\x00" * 4)
    with pytest.raises(FormatError, match="magic"):
        load_nifti(str(path))


def test_nifti_truncated_data(tmp_path):
    hdr = _blank_header()
    path = tmp_path / "short.nii"
    path.write_bytes(bytes(hdr) + b"\x00" * 4 + b"\x00" * 100)
    with pytest.raises(FormatError):
        load_nifti(str(path))


# ------------------------------------------------------------- GSV1


def test_gsv1_round_trip_bit_identical(tmp_path):
    g = GridSpec((16, 16, 16))
    f = random_field(100, g, seed=7)
    path = str(tmp_path / "field.gsv")
    save_field(f, path)
    first = open(path, "rb").read()
    back = load_field(path)
    save_field(back, str(tmp_path / "again.gsv"))
    second = open(tmp_path / "again.gsv", "rb").read()
    assert first == second
    assert back.count == 100
    assert back.amplitude_enabled and back.relax_enabled


def test_gsv1_flags_round_trip(tmp_path):
    g = GridSpec((8, 8, 8))
    f = random_field(3, g, seed=0)
    f.amplitude_enabled = False
    f.relax_enabled = False
    path = str(tmp_path / "flags.gsv")
    save_field(f, path)
    back = load_field(path)
    assert not back.amplitude_enabled
    assert not back.relax_enabled


def test_gsv1_bad_magic(tmp_path):
    path = tmp_path / "bad.gsv"
    path.write_bytes(b"XXXX" + b"\x00" * 60)
    with pytest.raises(FormatError, match="offset 0"):
        load_field(str(path))


def test_gsv1_truncated_records(tmp_path):
    g = GridSpec((8, 8, 8))
    f = random_field(10, g, seed=1)
    path = tmp_path / "trunc.gsv"
    save_field(f, str(path))
    blob = path.read_bytes()
    path.write_bytes(blob[:-48])  # drop the last record
    with pytest.raises(FormatError, match="declares 10 records"):
        load_field(str(path))


def test_gsv1_unknown_flags(tmp_path):
    path = tmp_path / "flags.gsv"
    path.write_bytes(b"GSV1" + struct.pack("<QI", 1, 0x8) + b"\x00" * 48)
    with pytest.raises(FormatError, match="unknown flag bits"):
        load_field(str(path))


def test_gsv1_zero_count(tmp_path):
    path = tmp_path / "empty.gsv"
    path.write_bytes(b"GSV1" + struct.pack("<QI", 0, 0x3))
    with pytest.raises(FormatError, match="zero"):
        load_field(str(path))


def test_gsv1_header_too_short(tmp_path):
    path = tmp_path / "shorthdr.gsv"
    path.write_bytes(b"GSV1" + b"\x00" * 4)
    with pytest.raises(FormatError, match="header truncated"):
        load_field(str(path))
