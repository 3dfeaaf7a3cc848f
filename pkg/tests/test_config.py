"""Settings-file parsing: defaults, validation, and digest stability."""

import pytest

from craftchain.config import (
    RunConfig,
    config_digest,
    config_lines,
    load_config,
    parse_config,
)
from craftchain.errors import ConfigError


def test_empty_file_resolves_to_defaults():
    rc = parse_config("")
    assert rc.demos.count == 211
    assert rc.demos.seed == 20_211
    assert rc.demos.noise_level == pytest.approx(0.3)
    assert rc.budget.cap == 200_000
    assert rc.eval.episodes == 200
    assert rc.eval.workers == 4
    assert rc.env.pov_size == 32
    assert rc.choptree.gamma == pytest.approx(0.99)
    assert rc.randomsearch.start == pytest.approx(0.2)
    assert rc.randomsearch.end == pytest.approx(1.0)


def test_overrides_apply_and_defaults_fill_in():
    rc = parse_config("""
[demos]
count = 12
[eval]
episodes = 20
workers = 2
[budget]
cap = 2000
""")
    assert rc.demos.count == 12
    assert rc.demos.seed == 20_211  # untouched key keeps its default
    assert rc.eval.episodes == 20
    assert rc.budget.cap == 2000
    # untouched sections resolve fully
    assert rc.scheduler.holdout_fraction == pytest.approx(0.2)


def test_unknown_section_is_an_error():
    with pytest.raises(ConfigError, match=r"unknown config section \[training\]"):
        parse_config("[training]\nlr = 0.1\n")


def test_unknown_key_is_an_error():
    with pytest.raises(ConfigError, match=r"unknown key 'cuont'"):
        parse_config("[demos]\ncuont = 10\n")


def test_error_messages_list_known_names():
    with pytest.raises(ConfigError, match="agent.choptree"):
        parse_config("[qlearning]\n")
    with pytest.raises(ConfigError, match="noise_level"):
        parse_config("[demos]\nnois = 0.1\n")


def test_bad_scalar_value_is_an_error():
    with pytest.raises(ConfigError, match="cannot parse 'twelve' as int"):
        parse_config("[demos]\ncount = twelve\n")
    with pytest.raises(ConfigError, match="noise_level"):
        parse_config("[demos]\nnoise_level = high\n")


def test_section_validation_still_applies():
    with pytest.raises(ConfigError, match="noise_level"):
        parse_config("[demos]\nnoise_level = 1.5\n")
    with pytest.raises(ConfigError, match="episodes"):
        parse_config("[eval]\nepisodes = 0\n")
    with pytest.raises(ConfigError):
        parse_config("[agent.randomsearch]\nstart = 2.0\n")


def test_pov_size_is_pinned_to_the_network_layout():
    with pytest.raises(ConfigError, match="pov_size"):
        parse_config("[env]\npov_size = 16\n")


def test_malformed_ini_is_a_config_error():
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("demos]\ncount = 3\n")


def test_inline_comments_are_stripped():
    rc = parse_config("[demos]\ncount = 12  # small corpus\n")
    assert rc.demos.count == 12


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.ini")


def test_load_config_reads_bundled_files():
    rc_default = load_config("configs/default.ini")
    rc_smoke = load_config("configs/smoke.ini")
    assert rc_default.demos.count == 211
    assert rc_smoke.demos.count == 12
    # the bundled default file spells every default explicitly
    assert config_digest(rc_default) == config_digest(parse_config(""))


def test_digest_is_stable_and_sensitive():
    a = config_digest(parse_config(""))
    b = config_digest(parse_config(""))
    c = config_digest(parse_config("[demos]\ncount = 210\n"))
    assert a == b
    assert a != c
    assert len(a) == 32


def test_config_lines_cover_every_section():
    lines = config_lines(parse_config(""))
    joined = "\n".join(lines)
    for section in ("env.", "demos.", "actions.", "agent.choptree.",
                    "agent.craftwood.", "agent.digstone.",
                    "agent.randomsearch.", "agent.flatbc.", "scheduler.",
                    "eval.", "budget."):
        assert section in joined
    assert "demos.count = 211" in joined


def test_runconfig_is_a_plain_tree():
    rc = parse_config("")
    assert isinstance(rc, RunConfig)
    assert rc.craftstone is not None  # placeholder section still present
