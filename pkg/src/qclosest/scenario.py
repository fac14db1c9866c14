"""Scenario files: a flat INI description of one experiment.

Sections and keys (defaults in parentheses)::

    [domain]      kind (euclidean) | torus, dim (2), period (torus only)
    [model]       variant (fuzzy) | classical, n, q or eta (exactly one),
                  family (quartic), sigma (0.05), quadrature_tol (1e-9),
                  tie_rule (lowest_index), comm_weight (constant_one),
                  rank_self (false)
    [integrator]  scheme (rk4 | convex_euler | classical_euler), dt (1e-3),
                  t_final (1.0)
    [init]        kind (example1 | uniform_box | two_clusters | file),
                  seed (0), kind-specific parameters
    [output]      path (out), stride (10), formats (csv,json)

Initial-data parameters:

* ``example1``: ``epsilon`` (0.0) -- the five-particle two-cluster layout
  with the middle particle lifted to ``(0, epsilon)``; needs ``n = 5``,
  ``dim = 2``.
* ``uniform_box``: ``low`` (0.0), ``high`` (1.0), ``speed`` (1.0) --
  positions uniform in ``[low, high]^d``, velocities uniform in
  ``[-speed, speed]^d``.
* ``two_clusters``: ``separation`` (3.0), ``radius`` (0.25), ``drift``
  (1.0), ``jitter`` (0.1) -- two uniform balls centred at ``0`` and
  ``separation e_1`` moving with ``+drift e_d`` and ``-drift e_d``
  plus uniform velocity noise of half-width ``jitter``; particles alternate
  between the clusters.
* ``file``: ``path`` -- CSV with header ``x1..xd,v1..vd``.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .classical import ClassicalModel, CommWeight, TieRule
from .dynamics import FuzzyModel, PhaseState
from .geometry import DomainGeometry
from .kernel import FAMILIES, BallMassKernel, MollifierSpec

__all__ = [
    "ParseError",
    "ValidationError",
    "DomainSpec",
    "ModelSpec",
    "IntegratorSpec",
    "InitSpec",
    "OutputSpec",
    "Scenario",
    "parse_scenario",
    "load_scenario",
    "serialize",
    "example1_state",
    "draw_particles",
    "make_rng",
    "build_kernel",
    "build_geometry",
    "build_model",
    "initial_state",
]

SCHEMES = ("rk4", "convex_euler", "classical_euler")
INIT_KINDS = ("example1", "uniform_box", "two_clusters", "file")
FORMATS = ("csv", "json")

_INIT_DEFAULTS = {
    "example1": {"epsilon": 0.0},
    "uniform_box": {"low": 0.0, "high": 1.0, "speed": 1.0},
    "two_clusters": {"separation": 3.0, "radius": 0.25, "drift": 1.0, "jitter": 0.1},
    "file": {"path": None},
}


class ParseError(ValueError):
    """Malformed scenario text; carries the offending line and field."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ValidationError(ValueError):
    """Well-formed scenario violating an invariant."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{message} (field {field})" if field else message)


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "euclidean"
    dim: int = 2
    period: float | None = None


@dataclass(frozen=True)
class ModelSpec:
    n: int = 5
    q: float | None = None
    eta: float | None = None
    variant: str = "fuzzy"
    family: str = "quartic"
    sigma: float = 0.05
    quadrature_tol: float = 1e-9
    tie_rule: str = "lowest_index"
    comm_weight: str = "constant_one"
    rank_self: bool = False

    @property
    def q_value(self) -> float:
        """``q``, or ``eta * n`` when the normalized form was given."""
        return float(self.q) if self.q is not None else float(self.eta) * self.n


@dataclass(frozen=True)
class IntegratorSpec:
    scheme: str = "rk4"
    dt: float = 1e-3
    t_final: float = 1.0


@dataclass(frozen=True)
class InitSpec:
    kind: str = "example1"
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __hash__(self):
        return hash((self.kind, self.seed, tuple(sorted(self.params.items()))))


@dataclass(frozen=True)
class OutputSpec:
    path: str = "out"
    stride: int = 10
    formats: tuple = ("csv", "json")


@dataclass(frozen=True)
class Scenario:
    domain: DomainSpec = field(default_factory=DomainSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    integrator: IntegratorSpec = field(default_factory=IntegratorSpec)
    init: InitSpec = field(default_factory=InitSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def with_overrides(self, seed=None, stride=None, **integrator):
        s = self
        if seed is not None:
            s = replace(s, init=replace(s.init, seed=int(seed)))
        if stride is not None:
            s = replace(s, output=replace(s.output, stride=int(stride)))
        if integrator:
            s = replace(s, integrator=replace(s.integrator, **integrator))
        validate(s)
        return s

    def to_dict(self) -> dict:
        """Plain-data echo for reports."""
        m = self.model
        return {
            "domain": {"kind": self.domain.kind, "dim": self.domain.dim, "period": self.domain.period},
            "model": {
                "variant": m.variant,
                "n": m.n,
                "q": m.q,
                "eta": m.eta,
                "q_effective": m.q_value,
                "family": m.family,
                "sigma": m.sigma,
                "quadrature_tol": m.quadrature_tol,
                "tie_rule": m.tie_rule,
                "comm_weight": m.comm_weight,
                "rank_self": m.rank_self,
            },
            "integrator": {"scheme": self.integrator.scheme, "dt": self.integrator.dt, "t_final": self.integrator.t_final},
            "init": {"kind": self.init.kind, "seed": self.init.seed, **self.init.params},
            "output": {"path": self.output.path, "stride": self.output.stride, "formats": list(self.output.formats)},
        }


_KNOWN = {
    "domain": ("kind", "dim", "period"),
    "model": (
        "variant",
        "n",
        "q",
        "eta",
        "family",
        "sigma",
        "quadrature_tol",
        "tie_rule",
        "comm_weight",
        "rank_self",
    ),
    "integrator": ("scheme", "dt", "t_final"),
    "output": ("path", "stride", "formats"),
}


def _line_of(text, section, key=None):
    """1-based line of ``[section]`` or of ``key`` inside it (None if absent)."""
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section:
            k = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            if k == key:
                return no
    return None


class _Reader:
    def __init__(self, text, cp):
        self.text = text
        self.cp = cp

    def raw(self, section, key):
        if self.cp.has_section(section) and self.cp.has_option(section, key):
            return self.cp.get(section, key)
        return None

    def fail(self, section, key, msg):
        raise ParseError(msg, _line_of(self.text, section, key), f"{section}.{key}")

    def get(self, section, key, conv, default):
        value = self.raw(section, key)
        if value is None:
            return default
        try:
            return conv(value.strip())
        except (TypeError, ValueError) as err:
            self.fail(section, key, f"cannot read {value.strip()!r}: {err}")


def _int(text):
    try:
        return int(text)
    except ValueError:
        pass
    # accept integral floats such as 1e3, but never round large integers
    value = float(text)
    if not value.is_integer():
        raise ValueError("expected an integer")
    return int(value)


def _float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("expected a finite number")
    return value


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _word(text):
    return text.strip()


def parse_scenario(text: str) -> Scenario:
    """Parse and validate scenario text; defaults are filled in.

    Raises
    ------
    ParseError
        Syntax errors, unknown sections or keys, unreadable values.
    ValidationError
        Violated invariants (both ``q`` and ``eta``, ``dt <= 0``, ...).
    """
    cp = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as err:
        raise ParseError(f"duplicate key {err.option!r}", err.lineno, f"{err.section}.{err.option}") from None
    except configparser.DuplicateSectionError as err:
        raise ParseError(f"duplicate section {err.section!r}", err.lineno, err.section) from None
    except configparser.MissingSectionHeaderError as err:
        raise ParseError("text before the first [section] header", err.lineno) from None
    except configparser.ParsingError as err:
        line = err.errors[0][0] if err.errors else None
        raise ParseError("unparsable line", line) from None
    except configparser.Error as err:
        raise ParseError(str(err)) from None

    rd = _Reader(text, cp)
    for section in cp.sections():
        if section not in _KNOWN and section != "init":
            raise ParseError(f"unknown section [{section}]", _line_of(text, section), section)
        if section in _KNOWN:
            for key in cp.options(section):
                if key not in _KNOWN[section]:
                    rd.fail(section, key, f"unknown key {key!r}")

    domain = DomainSpec(
        kind=rd.get("domain", "kind", _word, "euclidean"),
        dim=rd.get("domain", "dim", _int, 2),
        period=rd.get("domain", "period", _float, None),
    )
    model = ModelSpec(
        n=rd.get("model", "n", _int, None),
        q=rd.get("model", "q", _float, None),
        eta=rd.get("model", "eta", _float, None),
        variant=rd.get("model", "variant", _word, "fuzzy"),
        family=rd.get("model", "family", _word, "quartic"),
        sigma=rd.get("model", "sigma", _float, 0.05),
        quadrature_tol=rd.get("model", "quadrature_tol", _float, 1e-9),
        tie_rule=rd.get("model", "tie_rule", _word, "lowest_index"),
        comm_weight=rd.get("model", "comm_weight", _word, "constant_one"),
        rank_self=rd.get("model", "rank_self", _bool, False),
    )
    if model.n is None:
        raise ParseError("missing required key", _line_of(text, "model"), "model.n")
    default_scheme = "classical_euler" if model.variant == "classical" else "rk4"
    integrator = IntegratorSpec(
        scheme=rd.get("integrator", "scheme", _word, default_scheme),
        dt=rd.get("integrator", "dt", _float, 1e-3),
        t_final=rd.get("integrator", "t_final", _float, 1.0),
    )
    kind = rd.get("init", "kind", _word, "example1")
    if kind not in INIT_KINDS:
        rd.fail("init", "kind", f"unknown init kind {kind!r}; expected one of {INIT_KINDS}")
    params = {}
    allowed = _INIT_DEFAULTS[kind]
    if cp.has_section("init"):
        for key in cp.options("init"):
            if key not in ("kind", "seed") and key not in allowed:
                rd.fail("init", key, f"unknown key {key!r} for init kind {kind!r}")
    for key, default in allowed.items():
        conv = _word if key == "path" else _float
        params[key] = rd.get("init", key, conv, default)
    seed = rd.get("init", "seed", _int, 0)
    formats = rd.get("output", "formats", lambda t: tuple(f.strip() for f in t.split(",") if f.strip()), FORMATS)
    output = OutputSpec(
        path=rd.get("output", "path", _word, "out"),
        stride=rd.get("output", "stride", _int, 10),
        formats=formats,
    )
    scenario = Scenario(domain, model, integrator, InitSpec(kind, seed, params), output)
    validate(scenario)
    return scenario


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def validate(s: Scenario) -> None:
    """Raise :class:`ValidationError` naming the first violated invariant."""
    d, m, it, ini, out = s.domain, s.model, s.integrator, s.init, s.output
    if d.kind not in ("euclidean", "torus"):
        raise ValidationError(f"domain kind must be euclidean or torus, got {d.kind!r}", "domain.kind")
    if d.dim not in (1, 2, 3):
        raise ValidationError("dim must be 1, 2 or 3", "domain.dim")
    if d.kind == "torus":
        if d.dim != 2:
            raise ValidationError("the torus is two-dimensional", "domain.dim")
        if d.period is None or not d.period > 0:
            raise ValidationError("torus needs a positive period", "domain.period")
        if not d.period > 4 * m.sigma:
            raise ValidationError("torus period must exceed 4 sigma", "domain.period")
    elif d.period is not None:
        raise ValidationError("period is only meaningful on the torus", "domain.period")
    if m.variant not in ("fuzzy", "classical"):
        raise ValidationError(f"variant must be fuzzy or classical, got {m.variant!r}", "model.variant")
    if m.n < 1:
        raise ValidationError("n must be at least 1", "model.n")
    if (m.q is None) == (m.eta is None):
        raise ValidationError("exactly one of q and eta must be given", "model.q")
    if m.eta is not None and not 0 < m.eta <= 1:
        raise ValidationError("eta must lie in (0, 1]", "model.eta")
    if m.q is not None and not m.q > 0:
        raise ValidationError("q must be positive", "model.q")
    if m.q_value > m.n * (1 + 1e-12):
        raise ValidationError("q exceeds n", "model.q")
    if m.family not in FAMILIES:
        raise ValidationError(f"family must be one of {FAMILIES}", "model.family")
    if not m.sigma > 0:
        raise ValidationError("sigma must be positive", "model.sigma")
    if not m.quadrature_tol > 0:
        raise ValidationError("quadrature_tol must be positive", "model.quadrature_tol")
    try:
        TieRule(m.tie_rule)
    except ValueError as err:
        raise ValidationError(str(err), "model.tie_rule") from None
    try:
        CommWeight.parse(m.comm_weight)
    except ValueError as err:
        raise ValidationError(str(err), "model.comm_weight") from None
    if m.variant == "classical":
        q = m.q_value
        lo, hi = (2, m.n) if m.rank_self else (1, m.n - 1)
        if abs(q - round(q)) > 1e-9 or not lo <= round(q) <= hi:
            raise ValidationError(f"classical q must be an integer in [{lo}, {hi}]", "model.q")
    elif m.comm_weight != "constant_one":
        raise ValidationError("communication weights apply to the classical system only", "model.comm_weight")
    if it.scheme not in SCHEMES:
        raise ValidationError(f"scheme must be one of {SCHEMES}", "integrator.scheme")
    if m.variant == "fuzzy" and it.scheme == "classical_euler":
        raise ValidationError("classical_euler integrates the classical system", "integrator.scheme")
    if m.variant == "classical" and it.scheme == "convex_euler":
        raise ValidationError("convex_euler integrates the fuzzy system", "integrator.scheme")
    if not it.dt > 0:
        raise ValidationError("dt must be positive", "integrator.dt")
    if it.scheme in ("convex_euler", "classical_euler") and not it.dt < 1:
        raise ValidationError("Euler schemes need dt < 1", "integrator.dt")
    if not it.t_final >= 0:
        raise ValidationError("t_final must be nonnegative", "integrator.t_final")
    if ini.kind not in INIT_KINDS:
        raise ValidationError(f"init kind must be one of {INIT_KINDS}", "init.kind")
    if not 0 <= ini.seed < 2**64:
        raise ValidationError("seed must be an unsigned 64-bit integer", "init.seed")
    p = ini.params
    if ini.kind == "example1" and (m.n != 5 or d.dim != 2):
        raise ValidationError("example1 needs n = 5 and dim = 2", "init.kind")
    if ini.kind == "uniform_box" and not p["high"] > p["low"]:
        raise ValidationError("uniform_box needs high > low", "init.high")
    if ini.kind == "uniform_box" and p["speed"] < 0:
        raise ValidationError("speed must be nonnegative", "init.speed")
    if ini.kind == "two_clusters" and (p["radius"] < 0 or p["jitter"] < 0):
        raise ValidationError("radius and jitter must be nonnegative", "init.radius")
    if ini.kind == "file" and not p.get("path"):
        raise ValidationError("file init needs a path", "init.path")
    if out.stride < 1:
        raise ValidationError("stride must be at least 1", "output.stride")
    for f in out.formats:
        if f not in FORMATS:
            raise ValidationError(f"unknown output format {f!r}", "output.formats")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(s: Scenario) -> str:
    """Scenario text that parses back to an equal :class:`Scenario`."""
    buf = io.StringIO()
    sections = [
        ("domain", [("kind", s.domain.kind), ("dim", s.domain.dim), ("period", s.domain.period)]),
        (
            "model",
            [
                ("variant", s.model.variant),
                ("n", s.model.n),
                ("q", s.model.q),
                ("eta", s.model.eta),
                ("family", s.model.family),
                ("sigma", s.model.sigma),
                ("quadrature_tol", s.model.quadrature_tol),
                ("tie_rule", s.model.tie_rule),
                ("comm_weight", s.model.comm_weight),
                ("rank_self", s.model.rank_self),
            ],
        ),
        ("integrator", [("scheme", s.integrator.scheme), ("dt", s.integrator.dt), ("t_final", s.integrator.t_final)]),
        ("init", [("kind", s.init.kind), ("seed", s.init.seed)] + sorted(s.init.params.items())),
        ("output", [("path", s.output.path), ("stride", s.output.stride), ("formats", ",".join(s.output.formats))]),
    ]
    for name, items in sections:
        buf.write(f"[{name}]\n")
        for key, value in items:
            if value is not None:
                buf.write(f"{key} = {_fmt(value)}\n")
        buf.write("\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# initial data

EXAMPLE1_POSITIONS = np.array([[0.0, 0.0], [1.0, 0.0], [1.1, 0.0], [-1.0, 0.0], [-1.1, 0.0]])
EXAMPLE1_VELOCITIES = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, -1.0], [0.0, -1.0]])


def example1_state(epsilon: float = 0.0, offset=(0.0, 0.0)) -> PhaseState:
    """Two counter-moving pairs with a resting particle midway, lifted by ``epsilon``."""
    x = EXAMPLE1_POSITIONS + np.asarray(offset, dtype=float)
    x[0, 1] += epsilon
    return PhaseState(x, EXAMPLE1_VELOCITIES.copy())


def make_rng(seed: int) -> np.random.Generator:
    """The single pseudo-random source: PCG64 seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def _ball(rng, n, dim, radius):
    # uniform in the ball: gaussian direction, radius ~ U^(1/d)
    z = rng.normal(size=(n, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * (radius * rng.uniform(size=(n, 1)) ** (1.0 / dim))


def draw_particles(kind: str, params: dict, n: int, dim: int, rng: np.random.Generator, offset: int = 0):
    """``n`` i.i.d. draws (positions, velocities) from a built-in sampler.

    ``offset`` is the index of the first drawn particle; the two-cluster
    sampler alternates clusters by global index so prefixes stay balanced.
    """
    p = {**_INIT_DEFAULTS[kind], **params}
    if kind == "uniform_box":
        x = rng.uniform(p["low"], p["high"], size=(n, dim))
        v = rng.uniform(-p["speed"], p["speed"], size=(n, dim))
        return x, v
    if kind == "two_clusters":
        side = (np.arange(offset, offset + n) % 2).astype(float)
        x = _ball(rng, n, dim, p["radius"])
        x[:, 0] += side * p["separation"]
        v = rng.uniform(-p["jitter"], p["jitter"], size=(n, dim))
        v[:, dim - 1] += p["drift"] * (1.0 - 2.0 * side)
        return x, v
    raise ValueError(f"init kind {kind!r} is not a random sampler")


def sample_distinct(kind, params, n, dim, rng, existing=None):
    """Draw ``n`` particles whose positions differ from each other and from ``existing``.

    Coincident positions are redrawn (a probability-zero event for the
    built-in samplers, rejected so the atoms are pairwise distinct).
    """
    taken = set() if existing is None else {tuple(row) for row in existing}
    xs, vs = [], []
    rejected = 0
    while len(xs) < n:
        x, v = draw_particles(kind, params, 1, dim, rng, offset=len(taken))
        key = tuple(x[0])
        if key in taken:
            rejected += 1
            if rejected > 100 + 10 * n:
                raise ValidationError("the sampler keeps producing coincident positions", "init.kind")
            continue
        taken.add(key)
        xs.append(x[0])
        vs.append(v[0])
    return np.array(xs).reshape(n, dim), np.array(vs).reshape(n, dim)


def _read_file(path, dim):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    want = [f"x{k + 1}" for k in range(dim)] + [f"v{k + 1}" for k in range(dim)]
    if header != want:
        raise ValidationError(f"initial-data file header must be {','.join(want)}", "init.path")
    data = np.array([[float(c) for c in row] for row in rows[1:] if row], dtype=float)
    return data[:, :dim], data[:, dim:]


def initial_state(s: Scenario) -> PhaseState:
    """Initial particles for a scenario (deterministic in the seed)."""
    m, d, ini = s.model, s.domain.dim, s.init
    if ini.kind == "example1":
        state = example1_state(ini.params["epsilon"])
        if s.domain.kind == "torus":
            # centre the layout in the fundamental domain
            state = PhaseState(np.mod(state.positions + 0.5 * s.domain.period, s.domain.period), state.velocities)
        return state
    if ini.kind == "file":
        x, v = _read_file(ini.params["path"], d)
        if x.shape[0] != m.n:
            raise ValidationError(f"file holds {x.shape[0]} particles, scenario says n = {m.n}", "model.n")
        return PhaseState(x, v)
    x, v = sample_distinct(ini.kind, ini.params, m.n, d, make_rng(ini.seed))
    if s.domain.kind == "torus":
        x = np.mod(x, s.domain.period)
    return PhaseState(x, v)


def build_kernel(s: Scenario) -> BallMassKernel:
    m = s.model
    return BallMassKernel(MollifierSpec(m.family, m.sigma, s.domain.dim), quadrature_tol=m.quadrature_tol)


def build_geometry(s: Scenario) -> DomainGeometry:
    return DomainGeometry(s.domain.kind, s.domain.dim, s.domain.period)


def build_model(s: Scenario):
    """:class:`FuzzyModel` or :class:`ClassicalModel` for the scenario."""
    m = s.model
    geo = build_geometry(s)
    if m.variant == "fuzzy":
        return FuzzyModel(build_kernel(s), geo, m.q_value)
    return ClassicalModel(int(round(m.q_value)), m.tie_rule, CommWeight.parse(m.comm_weight), geo, m.rank_self)
