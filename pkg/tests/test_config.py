import json
from pathlib import Path

import numpy as np
import pytest

from carleman_lab.config import Config, ConfigError, compile_expression, load, schema
from carleman_lab.grid import build_grid, write_field

ROOT = Path(__file__).resolve().parents[1]


def minimal(**blocks):
    doc = {
        "domain": {"lower": [0.0, 0.0], "upper": [1.0, 1.0]},
        "multiplier": {"x0": [-0.5, 0.5]},
        "time": {"T": 2.0},
        "grid": {"nx": 8},
    }
    doc.update(blocks)
    return doc


def test_shipped_schema_matches_docs_copy():
    assert json.loads((ROOT / "docs" / "config_schema.json").read_text()) == schema()


def test_default_config_loads():
    cfg = load(ROOT / "configs" / "default.json")
    assert cfg.T == 2.0 and cfg.nx == 16 and cfg.seed == 20240611
    assert cfg.params().beta == pytest.approx(0.78125)


def test_defaults_filled():
    cfg = Config.from_dict(minimal())
    assert cfg.cfl == 0.5
    assert cfg.experiment["noise_levels"] == [0.005, 0.01, 0.02, 0.04]
    assert cfg.source() is None
    assert not cfg.override


@pytest.mark.parametrize("doc", [
    minimal(extra=1),
    minimal(grid={"nx": 8, "bogus": 1}),
    minimal(time={"T": -1.0}),
    minimal(grid={"nx": 2}),
    minimal(source={"f": {"expr": "x1", "constant": 1.0}}),
    minimal(experiment={"kind": "other"}),
    {"domain": {"lower": [0.0], "upper": [1.0]}, "multiplier": {"x0": [-0.5, 0.5]},
     "time": {"T": 1.0}, "grid": {"nx": 8}},
    minimal(domain={"lower": [0.0, 1.0], "upper": [1.0, 1.0]}),
])
def test_invalid_documents_rejected(doc):
    with pytest.raises(ConfigError):
        Config.from_dict(doc)


def test_pinned_beta_wins():
    cfg = Config.from_dict(minimal(carleman={"beta": 0.9}))
    assert cfg.params(3.0).beta == 0.9 and cfg.params(3.0).s == 3.0


def test_override_flags():
    assert Config.from_dict(minimal(experiment={"kind": "negative-control"})).override
    assert Config.from_dict(minimal()).with_overrides(override=True).override
    cfg = Config.from_dict(minimal()).with_overrides(seed=7)
    assert cfg.seed == 7


def test_hash_depends_on_content():
    a, b = Config.from_dict(minimal()), Config.from_dict(minimal())
    assert a.hash() == b.hash()
    assert a.hash() != a.with_overrides(seed=1).hash()


def test_expression_evaluation():
    fn = compile_expression("sin(pi*x1) * exp(-t) + where(x2 > 0.5, 1, 0)", ("x1", "x2", "t"))
    x1, x2, t = np.array([0.5, 0.25]), np.array([0.75, 0.25]), np.array([0.0, 1.0])
    assert np.allclose(fn(x1, x2, t), [2.0, np.sin(np.pi / 4) * np.exp(-1)])
    assert fn(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2))).shape == (2, 2)
    assert np.all(compile_expression("3", ("x1",))(np.zeros(4)) == 3.0)


@pytest.mark.parametrize("text", [
    "__import__('os')",
    "x1.real",
    "open('f')",
    "y + 1",
    "lambda: 1",
    "[x1]",
    "'a'",
    "x1 +",
])
def test_expression_whitelist(text):
    with pytest.raises(ConfigError):
        compile_expression(text, ("x1",))


def test_field_specs(tmp_path):
    g = build_grid(Config.from_dict(minimal()).domain, 8, 2.0)
    arr = np.arange(81.0).reshape(9, 9)
    write_field(tmp_path / "c.bin", arr)
    doc = minimal(coefficients={"b": [0.5, {"constant": -1.0}], "d": {"expr": "x1 * x2"},
                                "c": {"file": "c.bin"}, "R": {"modes": [[1, 1, 2.0]]}},
                  source={"f": {"modes": [[1, 2, 1.0]]}})
    cfg = Config.from_dict(doc, base_dir=tmp_path)
    co = cfg.coefficients().sample(g)
    assert np.all(co.b[0] == 0.5) and np.all(co.b[1] == -1.0)
    assert co.d[4, 8] == pytest.approx(0.5)
    assert np.array_equal(co.c, arr)
    x = g.points()
    assert np.allclose(co.R[3], 2 * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]))
    f = cfg.source()
    assert f(0.5, 0.25) == pytest.approx(1.0)


def test_missing_field_file(tmp_path):
    cfg = Config.from_dict(minimal(coefficients={"c": {"file": "nope.bin"}}), base_dir=tmp_path)
    with pytest.raises(ConfigError, match="nope.bin"):
        cfg.coefficients()


def test_unreadable_config(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load(p)
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.json")
