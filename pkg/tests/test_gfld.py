import numpy as np
import pytest
from numpy.testing import assert_array_equal

from berryfact.gfld import read_gfld, write_gfld
from berryfact.grid import Grid, ScalarField


def test_real_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    g = Grid((4, 3, 5), (0.1, 0.25, 1 / 3), (-0.2, 0.0, -1.0))
    f = ScalarField(g, rng.standard_normal(g.dims))
    p = tmp_path / "field.gfld"
    write_gfld(p, f)
    back = read_gfld(p)
    assert back.grid == g
    assert_array_equal(back.values, f.values)  # 17 digits round-trips doubles


def test_complex_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    g = Grid((6, 6), (0.5, 0.5), (0.0, 0.0))
    f = ScalarField(g, rng.standard_normal(g.dims) + 1j * rng.standard_normal(g.dims))
    p = tmp_path / "c.gfld"
    write_gfld(p, f)
    back = read_gfld(p)
    assert back.is_complex
    assert_array_equal(back.values, f.values)


def test_header_layout(tmp_path):
    g = Grid((3, 4), (1.0, 2.0), (0.0, -4.0))
    f = ScalarField(g, np.arange(12, dtype=float))
    p = tmp_path / "h.gfld"
    write_gfld(p, f)
    lines = p.read_text().splitlines()
    assert lines[0] == "GFLD 1"
    assert lines[1].split() == ["2", "3", "4"]
    assert lines[4] == "real"
    assert len(lines) == 5 + 12


def test_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.gfld"
    p.write_text("NOPE 1\n")
    with pytest.raises(ValueError, match="GFLD"):
        read_gfld(p)


def test_rejects_wrong_value_count(tmp_path):
    p = tmp_path / "short.gfld"
    p.write_text("GFLD 1\n1 4\n0.5\n0\nreal\n1\n2\n3\n")
    with pytest.raises(ValueError, match="value lines"):
        read_gfld(p)


def test_rejects_unknown_kind(tmp_path):
    p = tmp_path / "kind.gfld"
    p.write_text("GFLD 1\n1 3\n0.5\n0\nquaternion\n1\n2\n3\n")
    with pytest.raises(ValueError, match="kind"):
        read_gfld(p)
