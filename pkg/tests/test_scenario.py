import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qclosest.classical import ClassicalModel
from qclosest.dynamics import FuzzyModel
from qclosest.scenario import (
    DomainSpec,
    InitSpec,
    IntegratorSpec,
    ModelSpec,
    OutputSpec,
    ParseError,
    Scenario,
    ValidationError,
    build_model,
    initial_state,
    make_rng,
    parse_scenario,
    serialize,
)

MINIMAL = "[model]\nn = 5\nq = 2\nvariant = fuzzy\n[init]\nkind = example1\n"


def test_minimal_file_gives_example_coordinates():
    s = parse_scenario(MINIMAL)
    st_ = initial_state(s)
    np.testing.assert_array_equal(st_.positions, [[0, 0], [1, 0], [1.1, 0], [-1, 0], [-1.1, 0]])
    np.testing.assert_array_equal(st_.velocities, [[0, 0], [0, 1], [0, 1], [0, -1], [0, -1]])
    assert s.integrator == IntegratorSpec("rk4", 1e-3, 1.0)
    assert s.output.stride == 10
    assert isinstance(build_model(s), FuzzyModel)


def test_eta_derives_q():
    s = parse_scenario("[model]\nn = 10\neta = 0.4\n[init]\nkind = uniform_box\n")
    assert s.model.q_value == pytest.approx(4.0)


@pytest.mark.parametrize(
    "text, field",
    [
        ("[model]\nn = 5\nq = 2\neta = 0.4\n[init]\nkind = example1\n", "model.q"),
        ("[model]\nn = 5\nq = 2\n[integrator]\ndt = 0\n[init]\nkind = example1\n", "integrator.dt"),
        ("[model]\nn = 5\nq = 2\n[integrator]\nt_final = -1\n[init]\nkind = example1\n", "integrator.t_final"),
        ("[model]\nn = 5\nq = 2\n[output]\nstride = 0\n[init]\nkind = example1\n", "output.stride"),
        ("[model]\nn = 4\nq = 2\n[init]\nkind = example1\n", "init.kind"),
        ("[model]\nn = 5\nq = 6\n[init]\nkind = example1\n", "model.q"),
        ("[model]\nn = 5\neta = 1.5\n[init]\nkind = example1\n", "model.eta"),
        ("[domain]\nkind = torus\nperiod = 0.1\n[model]\nn = 5\nq = 2\n[init]\nkind = example1\n", "domain.period"),
        ("[model]\nvariant = classical\nn = 5\nq = 2.5\n[init]\nkind = example1\n", "model.q"),
        ("[model]\nn = 5\nq = 2\n[integrator]\nscheme = classical_euler\n[init]\nkind = example1\n", "integrator.scheme"),
    ],
)
def test_validation_errors_name_the_field(text, field):
    with pytest.raises(ValidationError) as err:
        parse_scenario(text)
    assert err.value.field == field


@pytest.mark.parametrize(
    "text, line, field",
    [
        ("[model]\nn = 5\nq = two\n", 3, "model.q"),
        ("[model]\nn = 5\n[modle]\nq = 2\n", 3, "modle"),
        ("[model]\nn = 5\nq = 2\nqq = 1\n", 4, "model.qq"),
        ("[model]\nn = 5\nq = 2\nq = 3\n", 4, "model.q"),
        ("n = 5\n", 1, None),
        ("[model]\nq = 2\n", 1, "model.n"),
        ("[model]\nn = 5\nq = 2\n[init]\nkind = example1\nradius = 2\n", 6, "init.radius"),
    ],
)
def test_parse_errors_carry_location(text, line, field):
    with pytest.raises(ParseError) as err:
        parse_scenario(text)
    assert err.value.line == line
    assert err.value.field == field


def test_classical_scenario_builds_classical_model():
    s = parse_scenario("[model]\nvariant = classical\nn = 5\nq = 2\nrank_self = true\ncomm_weight = cs:0.5\n[init]\nkind = example1\n")
    m = build_model(s)
    assert isinstance(m, ClassicalModel) and m.rank_self and m.q == 2
    assert s.integrator.scheme == "classical_euler"


def test_random_initial_data_is_seeded_and_distinct():
    text = "[domain]\ndim = 3\n[model]\nn = 50\neta = 0.1\n[init]\nkind = two_clusters\nseed = 42\n"
    a, b = initial_state(parse_scenario(text)), initial_state(parse_scenario(text))
    np.testing.assert_array_equal(a.positions, b.positions)
    assert np.unique(a.positions, axis=0).shape[0] == 50
    c = initial_state(parse_scenario(text.replace("seed = 42", "seed = 43")))
    assert not np.array_equal(a.positions, c.positions)
    assert make_rng(7).random() == np.random.Generator(np.random.PCG64(7)).random()


def test_file_initial_data(tmp_path):
    p = tmp_path / "init.csv"
    p.write_text("x1,v1\n0.0,1.0\n0.5,-1.0\n")
    s = parse_scenario(f"[domain]\ndim = 1\n[model]\nn = 2\nq = 1\n[init]\nkind = file\npath = {p}\n")
    np.testing.assert_array_equal(initial_state(s).velocities, [[1.0], [-1.0]])
    s = parse_scenario(f"[domain]\ndim = 1\n[model]\nn = 3\nq = 1\n[init]\nkind = file\npath = {p}\n")
    with pytest.raises(ValidationError):
        initial_state(s)


def test_overrides_revalidate():
    s = parse_scenario(MINIMAL)
    assert s.with_overrides(seed=9, stride=3).init.seed == 9
    with pytest.raises(ValidationError):
        s.with_overrides(stride=0)


finite = st.floats(1e-3, 10.0, allow_nan=False, allow_infinity=False)


@st.composite
def scenarios(draw):
    variant = draw(st.sampled_from(["fuzzy", "classical"]))
    kind = draw(st.sampled_from(["uniform_box", "two_clusters"]))
    dim = draw(st.integers(1, 3))
    n = draw(st.integers(3, 40))
    if variant == "classical":
        q, eta = float(draw(st.integers(1, n - 1))), None
        scheme = draw(st.sampled_from(["classical_euler", "rk4"]))
        rule = draw(st.sampled_from(["lowest_index", "inclusive"]))
        weight = draw(st.sampled_from(["constant_one", "cs:0.5", "exp:2.0"]))
    else:
        use_eta = draw(st.booleans())
        q, eta = (None, draw(st.floats(0.05, 1.0))) if use_eta else (draw(st.floats(0.5, float(n))), None)
        scheme = draw(st.sampled_from(["rk4", "convex_euler"]))
        rule, weight = "lowest_index", "constant_one"
    params = {"low": draw(finite), "speed": draw(finite)} if kind == "uniform_box" else {"separation": draw(finite), "radius": draw(finite), "drift": draw(finite), "jitter": draw(finite)}
    if kind == "uniform_box":
        params["high"] = params["low"] + draw(finite)
    return Scenario(
        DomainSpec("euclidean", dim, None),
        ModelSpec(n, q, eta, variant, draw(st.sampled_from(["bump", "cosine", "quartic"])), draw(st.floats(0.01, 1.0)), 1e-9, rule, weight, draw(st.booleans()) if variant == "classical" and q >= 2 else False),
        IntegratorSpec(scheme, draw(st.floats(1e-4, 0.5)), draw(st.floats(0.0, 100.0))),
        InitSpec(kind, draw(st.integers(0, 2**64 - 1)), params),
        OutputSpec(draw(st.sampled_from(["out", "runs/a b"])), draw(st.integers(1, 100)), tuple(draw(st.sampled_from([["csv"], ["json"], ["csv", "json"]])))),
    )


@settings(max_examples=150, deadline=None)
@given(s=scenarios())
def test_serialize_round_trip(s):
    assert parse_scenario(serialize(s)) == s


def test_torus_example_is_centered():
    s = parse_scenario("[domain]\nkind = torus\nperiod = 4\n[model]\nn = 5\nq = 2\n[init]\nkind = example1\n")
    x = initial_state(s).positions
    assert np.all((x >= 0) & (x < 4))
    np.testing.assert_allclose(x[0], [2.0, 2.0])
