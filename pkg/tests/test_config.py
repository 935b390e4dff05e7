"""
Unit tests for scenario configuration parsing.
"""
import pytest

from config import ScenarioConfig, load_config, parse_config, serialize_config, settings
from models import ConfigError

SCENARIO = """
# harmonic trap, bump density
name=bump-harmonic
rho=bump
rho.radius=1.0
potential=quartic
potential.nu0=1.0
potential.lambda=0.2
init.q1=0.5
init.p2=0.1
field=bump
field.phi_amplitude=0.01
run.h=0.05
run.T=2.0
"""


class TestParseConfig:
    """Test key=value parsing and validation."""

    def setup_method(self):
        self.cfg = parse_config(SCENARIO)

    def test_sections(self):
        assert self.cfg.name == "bump-harmonic"
        assert self.cfg.rho.kind == "bump"
        assert self.cfg.potential.kind == "quartic"
        assert self.cfg.potential.lam == 0.2
        assert self.cfg.field.kind == "bump"
        assert self.cfg.q0 == (0.5, 0.0, 0.0)
        assert self.cfg.p0 == (0.0, 0.1, 0.0)
        assert self.cfg.steps == 40

    def test_default_step_scales_with_radius(self):
        cfg = parse_config("rho.radius=2.0\nrun.T=4.0")
        assert cfg.run.h == pytest.approx(settings.step_fraction * 2.0)
        assert cfg.steps == round(4.0 / cfg.run.h)

    def test_default_step_divides_horizon(self):
        for radius in (0.7, 1.5):
            cfg = parse_config(f"rho=bump\nrho.radius={radius}\nrun.T=100.0")
            assert cfg.run.h <= settings.step_fraction * radius
            assert cfg.run.h > 0.99 * settings.step_fraction * radius
            assert cfg.steps * cfg.run.h == pytest.approx(100.0, rel=1e-12)
            assert parse_config(serialize_config(cfg)) == cfg

    def test_serialized_text_parses_back(self):
        assert parse_config(serialize_config(self.cfg)) == self.cfg

    def test_unknown_key_strict(self):
        with pytest.raises(ConfigError, match="unknown key 'rho.colour'"):
            parse_config("rho.colour=red")

    def test_unknown_key_lenient(self):
        cfg = parse_config("rho.colour=red\nrho.radius=1.5", strict=False)
        assert cfg.rho.radius == 1.5

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("name=x\njust words")

    def test_unknown_catalog_entry(self):
        with pytest.raises(ConfigError, match="rho"):
            parse_config("rho=cube")

    def test_nonpositive_radius(self):
        with pytest.raises(ConfigError, match="rho.radius"):
            parse_config("rho.radius=-1")

    def test_horizon_must_be_multiple_of_step(self):
        with pytest.raises(ConfigError, match="multiple"):
            parse_config("run.h=0.3\nrun.T=1.0")


class TestPlaneMode:
    """Plane runs must start in the symmetry plane."""

    def test_out_of_plane_position_names_condition(self):
        with pytest.raises(ConfigError, match=r"init\.q3.*\(Q\)"):
            parse_config("run.plane=true\ninit.q3=0.5")

    def test_out_of_plane_momentum(self):
        with pytest.raises(ConfigError, match=r"init\.p3"):
            parse_config("run.plane=true\ninit.p3=0.1")

    def test_potential_minimum_off_plane(self):
        with pytest.raises(ConfigError, match=r"\(qVc\)"):
            parse_config("run.plane=true\npotential.center3=1.0")

    def test_planar_configuration_accepted(self):
        cfg = parse_config("run.plane=true\ninit.q1=1.0\ninit.p2=0.2")
        assert cfg.run.plane


class TestLoadConfig:
    """Test reading scenario files."""

    def test_load(self, tmp_path):
        path = tmp_path / "scenario.cfg"
        path.write_text(SCENARIO)
        assert load_config(str(path)) == parse_config(SCENARIO)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(str(tmp_path / "missing.cfg"))

    def test_defaults(self):
        cfg = ScenarioConfig()
        assert cfg.rho.kind == "bump"
        assert cfg.linear.field == "deviation"
        assert cfg.quad.ball_r == settings.ball_order[0]


if __name__ == "__main__":
    pytest.main([__file__])
