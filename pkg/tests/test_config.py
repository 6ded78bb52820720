import math

import pytest

from berryfact.config import ConfigError, PRESETS, RunConfig, dump_config, load_config, parse_config


class TestParse:
    def test_empty_config_is_all_defaults(self):
        cfg = parse_config("")
        assert cfg == RunConfig()
        assert cfg.L == pytest.approx(4 * math.sqrt(3) / 5, rel=1e-15)

    def test_typical_config(self):
        cfg = parse_config("""
[model]
M = 20.0
[electron_grid]
points = 33
[solver]
k = 24
tol = 1e-9
[run]
masses = 10, 20, 50
threads = 2
""")
        assert cfg.M == 20.0
        assert cfg.electron_points == 33
        assert cfg.k == 24
        assert cfg.masses == (10.0, 20.0, 50.0)
        assert cfg.threads == 2
        # untouched defaults survive
        assert cfg.nuclear_points == 33 and cfg.a == 0.5

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="unknown config section"):
            parse_config("[grids]\npoints = 9\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("[model]\nalpha = 1.0\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config("[solver]\nk = three\n")

    def test_even_points_rejected(self):
        with pytest.raises(ConfigError, match="odd"):
            parse_config("[electron_grid]\npoints = 48\n")

    def test_negative_extent_rejected(self):
        with pytest.raises(ConfigError, match="positive"):
            parse_config("[nuclear_grid]\nextent = -4\n")


class TestPresets:
    @pytest.mark.parametrize("name,e,n", [("desk", 33, 25), ("default", 49, 33),
                                          ("fine", 65, 41)])
    def test_preset_point_counts(self, name, e, n):
        cfg = RunConfig().with_preset(name)
        assert cfg.electron_points == e
        assert cfg.nuclear_points == n
        # extents are untouched by presets
        assert cfg.electron_extent == 8.0 and cfg.nuclear_extent == 4.0

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            RunConfig().with_preset("huge")

    def test_preset_names_stable(self):
        assert sorted(PRESETS) == ["default", "desk", "fine"]


class TestGrids:
    def test_zero_is_a_grid_line(self):
        cfg = RunConfig()
        for g in (cfg.electron_grid(), cfg.nuclear_grid()):
            for ax in range(g.ndim):
                assert g.is_symmetric(ax)
                assert min(abs(c) for c in g.axis_coords(ax)) == pytest.approx(0.0, abs=1e-13)

    def test_full_grid_composition(self):
        cfg = RunConfig().with_preset("desk")
        g4 = cfg.full_grid()
        assert g4.dims == (33, 33, 25, 25)
        assert g4.subgrid((0, 1)) == cfg.electron_grid()
        assert g4.subgrid((2, 3)) == cfg.nuclear_grid()


class TestEcho:
    def test_dump_parse_round_trip(self):
        cfg = RunConfig(M=20.0, electron_points=33, k=17, tol=3e-9,
                        seed=99, masses=(1.0, 10.0), out_dir="results",
                        threads=3, nuclear_extent=4.5, nuclear_points=27)
        again = parse_config(dump_config(cfg))
        assert again == cfg

    def test_round_trip_preserves_seventeen_digits(self):
        cfg = RunConfig(L=4 * math.sqrt(3) / 5)
        again = parse_config(dump_config(cfg))
        assert again.L == cfg.L  # bit identical


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.ini")


def test_load_config_with_preset(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[model]\nM = 50.0\n")
    cfg = load_config(p, preset="desk")
    assert cfg.M == 50.0 and cfg.electron_points == 33
