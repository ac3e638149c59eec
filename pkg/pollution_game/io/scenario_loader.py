"""
Scenario files.

A scenario is a YAML document describing the domain, the countries, the model
coefficients, boundary and convection data, the simulation horizon used by the
oracle and the qualitative checks run by ``verify``. The bundled scenarios in
``pollution_game/scenarios`` can be addressed by name (``example1``).
"""
import dataclasses
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml

from ..errors import GeometryError, ScenarioError
from ..spatial.geometry import (BoundaryCondition, BoundarySpec, ConvectionField, ConvectionPiece,
                                HalfPlane, Rectangle, build_grid, build_grid_from_spacing,
                                parse_segment, partition_regions)

logger = logging.getLogger(__name__)

DEFAULT_H = 0.025
FIELD_FORMATS = ("csv", "vtk")
ORACLE_STATES = ("zero", "steady", "random")
# YAML 1.1 loads exponents without a dot (1e-2) as strings
FLOAT_PATTERN = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


@dataclass(frozen=True)
class SimulationSpec:
    """Time-domain oracle settings of a scenario."""
    T: float = 200.0
    dt: float = 0.01
    stride: int = 100
    deviation_scales: Tuple[float, ...] = (0.5, 0.9, 1.1, 2.0)
    deviation_players: Optional[Tuple[int, ...]] = None
    unimodality_scales: Tuple[float, ...] = ()
    oracle_states: Tuple[str, ...] = ()
    transversality: bool = False
    dt_convergence: bool = False


@dataclass(frozen=True)
class Scenario:
    """
    Validated description of one game.

    Players are 1-based in ``checks`` and ``deviation_players``, as in the files.
    ``k``, ``c`` and ``phi`` are a scalar or one value per country.
    """
    name: str
    domain: Tuple[Rectangle, ...]
    regions: Tuple[Tuple[Rectangle, ...], ...]
    h: Optional[float] = DEFAULT_H
    nx: Optional[int] = None
    ny: Optional[int] = None
    k: Union[float, Tuple[float, ...]] = 1.0
    c: Union[float, Tuple[float, ...]] = 0.5
    rho: float = 0.01
    phi: Union[float, Tuple[float, ...]] = 1.0
    boundary: BoundarySpec = BoundarySpec()
    adjoint_boundary: Optional[BoundarySpec] = None
    convection: ConvectionField = ConvectionField()
    simulation: SimulationSpec = SimulationSpec()
    checks: Tuple[Dict[str, Any], ...] = ()
    output_format: Optional[str] = None
    description: str = ""
    source: Optional[str] = field(default=None, compare=False)

    @property
    def n_players(self) -> int:
        return len(self.regions)

    def with_resolution(self, nx: Optional[int] = None, ny: Optional[int] = None,
                        h: Optional[float] = None) -> "Scenario":
        """Copy with another resolution; cell counts win over ``h``."""
        if nx is None and ny is None and h is None:
            return self
        if nx is not None or ny is not None:
            if nx is None or ny is None:
                raise ScenarioError("Both nx and ny must be provided", field="resolution")
            return dataclasses.replace(self, h=None, nx=int(nx), ny=int(ny))
        return dataclasses.replace(self, h=float(h), nx=None, ny=None)

    def build_grid(self):
        if self.nx is not None:
            return build_grid(self.domain, self.nx, self.ny)
        return build_grid_from_spacing(self.domain, self.h)


def _line_index(node, path: Tuple = (), index: Dict = None) -> Dict[Tuple, int]:
    """Maps each key path of a composed YAML document to its 1-based line."""
    if index is None:
        index = {}
    index[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            _line_index(value, path + (key.value,), index)
    elif isinstance(node, yaml.SequenceNode):
        for i, value in enumerate(node.value):
            _line_index(value, path + (i,), index)
    return index


class _Reader:
    """Typed access to the raw document with file/line/field diagnostics."""

    def __init__(self, source: Optional[str], lines: Dict[Tuple, int]):
        self.source = source
        self.lines = lines

    def error(self, message: str, path: Tuple) -> ScenarioError:
        line = None
        for cut in range(len(path), -1, -1):
            line = self.lines.get(tuple(path[:cut]))
            if line is not None:
                break
        return ScenarioError(message, source=self.source, line=line, field=_dotted(path))

    def number(self, value, path, positive=False, non_negative=False) -> float:
        if isinstance(value, str) and FLOAT_PATTERN.fullmatch(value.strip()):
            value = float(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"expected a number, got {value!r}", path)
        value = float(value)
        if positive and not value > 0:
            raise self.error("must be positive", path)
        if non_negative and not value >= 0:
            raise self.error("must be non-negative", path)
        return value

    def numbers(self, value, path, **checks) -> Union[float, Tuple[float, ...]]:
        if isinstance(value, list):
            if not value:
                raise self.error("expected a number or a non-empty list", path)
            return tuple(self.number(v, path + (i,), **checks) for i, v in enumerate(value))
        return self.number(value, path, **checks)

    def rectangle(self, value, path) -> Rectangle:
        if not isinstance(value, list) or len(value) != 4:
            raise self.error(f"expected [x0, x1, y0, y1], got {value!r}", path)
        try:
            return Rectangle(*(self.number(v, path + (i,)) for i, v in enumerate(value)))
        except GeometryError as e:
            raise self.error(str(e), path) from e

    def rectangles(self, value, path) -> Tuple[Rectangle, ...]:
        if not isinstance(value, list) or not value:
            raise self.error("expected a non-empty list of rectangles", path)
        return tuple(self.rectangle(v, path + (i,)) for i, v in enumerate(value))

    def mapping(self, value, path, allowed: Sequence[str]) -> Dict[str, Any]:
        if value is None:
            return {}
        if not isinstance(value, dict):
            raise self.error(f"expected a mapping, got {type(value).__name__}", path)
        unknown = sorted(set(value) - set(allowed))
        if unknown:
            raise self.error(f"unknown keys {unknown}; allowed: {sorted(allowed)}", path + (unknown[0],))
        return value


def _dotted(path: Tuple) -> Optional[str]:
    if not path:
        return None
    text = ""
    for part in path:
        text += f"[{part}]" if isinstance(part, int) else (f".{part}" if text else str(part))
    return text


def _condition(reader: _Reader, value, path) -> BoundaryCondition:
    value = reader.mapping(value, path, ("alpha", "convective", "value", "segment"))
    alpha = reader.number(value.get("alpha", 0.0), path + ("alpha",))
    if alpha < 0:
        raise reader.error("α must be non-negative", path + ("alpha",))
    p_b = reader.number(value.get("value", 0.0), path + ("value",))
    if p_b != 0.0:
        raise reader.error("boundary pollution P_b must be zero", path + ("value",))
    return BoundaryCondition(alpha=alpha, convective=bool(value.get("convective", False)))


def _boundary(reader: _Reader, value, path, require_default: bool = False) -> BoundarySpec:
    value = reader.mapping(value, path, ("default", "segments"))
    segments = []
    for i, entry in enumerate(value.get("segments") or []):
        entry_path = path + ("segments", i)
        if not isinstance(entry, dict) or "segment" not in entry:
            raise reader.error("each segment needs a 'segment' tag such as 'x=0'", entry_path)
        tag = str(entry["segment"])
        try:
            parse_segment(tag)
        except GeometryError as e:
            raise reader.error(str(e), entry_path + ("segment",)) from e
        segments.append((tag, _condition(reader, entry, entry_path)))
    if "default" in value:
        default = _condition(reader, value["default"], path + ("default",))
    elif require_default:
        default = None
    else:
        default = BoundaryCondition()
    return BoundarySpec(segments=tuple(segments), default=default)


def _convection(reader: _Reader, value, path) -> ConvectionField:
    value = reader.mapping(value, path, ("default", "pieces"))

    def vector(v, p):
        if not isinstance(v, list) or len(v) != 2:
            raise reader.error(f"expected [bx, by], got {v!r}", p)
        return reader.number(v[0], p + (0,)), reader.number(v[1], p + (1,))

    pieces = []
    for i, piece in enumerate(value.get("pieces") or []):
        piece_path = path + ("pieces", i)
        piece = reader.mapping(piece, piece_path, ("vector", "rectangles", "halfplanes"))
        if "vector" not in piece:
            raise reader.error("a convection piece needs a 'vector'", piece_path)
        rectangles = ()
        if piece.get("rectangles"):
            rectangles = reader.rectangles(piece["rectangles"], piece_path + ("rectangles",))
        halfplanes = []
        for k, hp in enumerate(piece.get("halfplanes") or []):
            hp_path = piece_path + ("halfplanes", k)
            hp = reader.mapping(hp, hp_path, ("a", "b", "c", "strict"))
            halfplanes.append(HalfPlane(a=reader.number(hp.get("a", 0.0), hp_path + ("a",)),
                                        b=reader.number(hp.get("b", 0.0), hp_path + ("b",)),
                                        c=reader.number(hp.get("c", 0.0), hp_path + ("c",)),
                                        strict=bool(hp.get("strict", False))))
        pieces.append(ConvectionPiece(vector=vector(piece["vector"], piece_path + ("vector",)),
                                      rectangles=rectangles, halfplanes=tuple(halfplanes)))
    default = vector(value["default"], path + ("default",)) if "default" in value else (0.0, 0.0)
    return ConvectionField(pieces=tuple(pieces), default=default)


def _simulation(reader: _Reader, value, path, n_players: int) -> SimulationSpec:
    value = reader.mapping(value, path, ("T", "dt", "stride", "deviation_scales", "deviation_players",
                                         "unimodality_scales", "oracle_states", "transversality",
                                         "dt_convergence"))
    T = reader.number(value.get("T", 200.0), path + ("T",), positive=True)
    dt = reader.number(value.get("dt", 0.01), path + ("dt",), positive=True)
    if T < dt:
        raise reader.error("T must be at least dt", path + ("T",))
    stride = value.get("stride", 100)
    if not isinstance(stride, int) or stride < 1:
        raise reader.error("stride must be a positive integer", path + ("stride",))

    def scales(key):
        raw = value.get(key) or []
        return tuple(reader.number(s, path + (key, i), positive=True) for i, s in enumerate(raw))

    players = value.get("deviation_players")
    if players is not None:
        for i, p in enumerate(players):
            if not isinstance(p, int) or not 1 <= p <= n_players:
                raise reader.error(f"player must be in 1..{n_players}", path + ("deviation_players", i))
        players = tuple(players)
    states = tuple(value.get("oracle_states") or ())
    for i, s in enumerate(states):
        if s not in ORACLE_STATES:
            raise reader.error(f"unknown oracle state '{s}', expected one of {ORACLE_STATES}",
                               path + ("oracle_states", i))
    return SimulationSpec(
        T=T, dt=dt, stride=stride,
        deviation_scales=scales("deviation_scales") if "deviation_scales" in value else SimulationSpec.deviation_scales,
        deviation_players=players,
        unimodality_scales=scales("unimodality_scales"),
        oracle_states=states,
        transversality=bool(value.get("transversality", False)),
        dt_convergence=bool(value.get("dt_convergence", False)),
    )


def _validate_geometry(reader: _Reader, scenario: Scenario, lines_path: Dict[str, Tuple]):
    try:
        grid = scenario.build_grid()
    except GeometryError as e:
        raise reader.error(str(e), lines_path["domain"]) from e
    try:
        partition_regions(grid, scenario.regions)
    except GeometryError as e:
        raise reader.error(str(e), lines_path["regions"]) from e
    for key, spec in (("boundary", scenario.boundary), ("adjoint_boundary", scenario.adjoint_boundary)):
        if spec is None:
            continue
        try:
            spec.resolve(grid)
        except GeometryError as e:
            raise reader.error(str(e), lines_path[key]) from e


TOP_LEVEL_KEYS = ("name", "description", "domain", "regions", "resolution", "coefficients", "boundary",
                  "adjoint_boundary", "convection", "simulation", "checks", "output")


def parse_scenario_text(text: str, source: Optional[str] = None, validate_geometry: bool = True) -> Scenario:
    """
    Parses and validates scenario YAML.

    Args:
        text: The YAML document.
        source: File name used in diagnostics.
        validate_geometry: Build the grid and partition to check lattice alignment.

    Returns:
        Scenario: The validated scenario.

    Raises:
        ScenarioError: On malformed YAML or a field violating its constraints; the
            message names the file, line and field.
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(e, "problem", None) or str(e)
        raise ScenarioError(f"invalid YAML: {problem}", source=source, line=line) from e
    if not isinstance(raw, dict):
        raise ScenarioError("a scenario must be a YAML mapping", source=source, line=1)

    reader = _Reader(source, _line_index(root) if root is not None else {})
    raw = reader.mapping(raw, (), TOP_LEVEL_KEYS)
    for key in ("domain", "regions"):
        if key not in raw:
            raise reader.error(f"missing required section '{key}'", ())

    domain = reader.rectangles(raw["domain"], ("domain",))
    if not isinstance(raw["regions"], list) or not raw["regions"]:
        raise reader.error("expected one rectangle list per country", ("regions",))
    regions = tuple(reader.rectangles(r, ("regions", i)) for i, r in enumerate(raw["regions"]))
    n_players = len(regions)

    resolution = reader.mapping(raw.get("resolution"), ("resolution",), ("h", "nx", "ny"))
    h, nx, ny = DEFAULT_H, None, None
    if "nx" in resolution or "ny" in resolution:
        nx, ny, h = resolution.get("nx"), resolution.get("ny"), None
        for key, value in (("nx", nx), ("ny", ny)):
            if not isinstance(value, int) or value < 2:
                raise reader.error("must be an integer of at least 2", ("resolution", key))
    elif "h" in resolution:
        h = reader.number(resolution["h"], ("resolution", "h"), positive=True)

    coefficients = reader.mapping(raw.get("coefficients"), ("coefficients",), ("k", "c", "rho", "phi"))
    path = ("coefficients",)
    k = reader.numbers(coefficients.get("k", 1.0), path + ("k",))
    c = reader.numbers(coefficients.get("c", 0.5), path + ("c",))
    rho = reader.number(coefficients.get("rho", 0.01), path + ("rho",))
    phi = reader.numbers(coefficients.get("phi", 1.0), path + ("phi",))
    for name, value, test, message in (
            ("k", k, lambda v: v > 0, "k must be positive"),
            ("c", c, lambda v: v >= 0, "c must be non-negative"),
            ("rho", rho, lambda v: v > 0, "ρ must be positive"),
            ("phi", phi, lambda v: v > 0, "φ must be positive")):
        values = value if isinstance(value, tuple) else (value,)
        for i, v in enumerate(values):
            if not test(v):
                where = path + (name, i) if isinstance(value, tuple) else path + (name,)
                raise reader.error(message, where)
        if isinstance(value, tuple) and len(value) != n_players:
            raise reader.error(f"expected 1 or {n_players} values, got {len(value)}", path + (name,))

    boundary = _boundary(reader, raw.get("boundary"), ("boundary",))
    if boundary.is_convective:
        raise reader.error("'convective' conditions belong in adjoint_boundary", ("boundary",))
    adjoint_boundary = None
    if raw.get("adjoint_boundary") is not None:
        adjoint_boundary = _boundary(reader, raw["adjoint_boundary"], ("adjoint_boundary",),
                                     require_default=True)
    convection = _convection(reader, raw.get("convection"), ("convection",))
    simulation = _simulation(reader, raw.get("simulation"), ("simulation",), n_players)

    checks = raw.get("checks") or []
    if not isinstance(checks, list):
        raise reader.error("expected a list of checks", ("checks",))
    for i, check in enumerate(checks):
        if not isinstance(check, dict) or "kind" not in check:
            raise reader.error("each check needs a 'kind'", ("checks", i))

    output = reader.mapping(raw.get("output"), ("output",), ("format",))
    output_format = str(output["format"]).lower() if "format" in output else None
    if output_format is not None and output_format not in FIELD_FORMATS:
        raise reader.error(f"format must be one of {FIELD_FORMATS}", ("output", "format"))

    name = str(raw.get("name") or (Path(source).stem if source else "scenario"))
    scenario = Scenario(
        name=name, domain=domain, regions=regions, h=h, nx=nx, ny=ny,
        k=k, c=c, rho=rho, phi=phi, boundary=boundary, adjoint_boundary=adjoint_boundary,
        convection=convection, simulation=simulation, checks=tuple(checks),
        output_format=output_format, description=str(raw.get("description") or ""), source=source,
    )
    if validate_geometry:
        _validate_geometry(reader, scenario, {"domain": ("domain",), "regions": ("regions",),
                                              "boundary": ("boundary",),
                                              "adjoint_boundary": ("adjoint_boundary",)})
    resolution_text = f"h={h}" if nx is None else f"{nx}x{ny}"
    logger.debug(f"Scenario '{name}' parsed: {n_players} players, resolution {resolution_text}")
    return scenario


def bundled_scenarios() -> List[str]:
    """Names of the scenarios shipped with the package."""
    folder = resources.files("pollution_game.scenarios")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".yaml"))


def parse_scenario(path: Union[str, Path]) -> Scenario:
    """
    Loads a scenario from a file, or a bundled scenario by name.

    Raises:
        ScenarioError: If the file does not exist or fails validation.
    """
    candidate = Path(path)
    if candidate.is_file():
        return parse_scenario_text(candidate.read_text(encoding="utf-8"), source=str(candidate))
    name = candidate.stem if candidate.suffix == ".yaml" else str(path)
    bundled = resources.files("pollution_game.scenarios") / f"{name}.yaml"
    if bundled.is_file():
        return parse_scenario_text(bundled.read_text(encoding="utf-8"), source=f"{name}.yaml")
    raise ScenarioError(f"Scenario '{path}' not found; bundled scenarios: {bundled_scenarios()}")


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def _boundary_dict(spec: BoundarySpec) -> Dict[str, Any]:
    def condition(c: BoundaryCondition) -> Dict[str, Any]:
        out = {"alpha": c.alpha}
        if c.convective:
            out["convective"] = True
        return out

    data = {}
    if spec.default is not None:
        data["default"] = condition(spec.default)
    if spec.segments:
        data["segments"] = [{"segment": tag, **condition(c)} for tag, c in spec.segments]
    return data


def scenario_to_dict(scenario: Scenario) -> Dict[str, Any]:
    """Plain-data form of a scenario, the inverse of ``parse_scenario_text``."""
    resolution = {"h": scenario.h} if scenario.nx is None else {"nx": scenario.nx, "ny": scenario.ny}
    pieces = []
    for piece in scenario.convection.pieces:
        entry = {"vector": list(piece.vector)}
        if piece.rectangles:
            entry["rectangles"] = [r.as_list() for r in piece.rectangles]
        if piece.halfplanes:
            entry["halfplanes"] = [{"a": hp.a, "b": hp.b, "c": hp.c, "strict": hp.strict}
                                   for hp in piece.halfplanes]
        pieces.append(entry)
    sim = scenario.simulation
    simulation = {"T": sim.T, "dt": sim.dt, "stride": sim.stride,
                  "deviation_scales": list(sim.deviation_scales),
                  "unimodality_scales": list(sim.unimodality_scales),
                  "oracle_states": list(sim.oracle_states),
                  "transversality": sim.transversality,
                  "dt_convergence": sim.dt_convergence}
    if sim.deviation_players is not None:
        simulation["deviation_players"] = list(sim.deviation_players)

    data = {
        "name": scenario.name,
        "description": scenario.description,
        "domain": [r.as_list() for r in scenario.domain],
        "regions": [[r.as_list() for r in region] for region in scenario.regions],
        "resolution": resolution,
        "coefficients": {"k": _plain(scenario.k), "c": _plain(scenario.c), "rho": scenario.rho,
                         "phi": _plain(scenario.phi)},
        "boundary": _boundary_dict(scenario.boundary),
        "convection": {"default": list(scenario.convection.default), "pieces": pieces},
        "simulation": simulation,
        "checks": [dict(c) for c in scenario.checks],
    }
    if scenario.output_format is not None:
        data["output"] = {"format": scenario.output_format}
    if scenario.adjoint_boundary is not None:
        data["adjoint_boundary"] = _boundary_dict(scenario.adjoint_boundary)
    return data


def serialize_scenario(scenario: Scenario) -> str:
    """YAML text that parses back to an equal scenario."""
    return yaml.safe_dump(scenario_to_dict(scenario), sort_keys=False, allow_unicode=True,
                          default_flow_style=None)
