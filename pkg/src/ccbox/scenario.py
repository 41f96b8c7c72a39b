"""Scenario files: a versioned JSON document describing one experiment.

The structure is fixed by ``scenarios/schema.json`` (shipped with the
package and copied to ``docs/``).  Parsing validates the whole document
before anything is computed; every error names the offending key and, when
it can be located, the source line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import dynamics as dyn
from .bounds import BoundingBox
from .errors import DomainError, InvariantError, ScenarioError
from .gaussian import GaussianBelief
from .ocp import ConstraintKind, Obstacle, OcpConfig, OcpInstance
from .simulator import (
    CrowdPreset,
    FixedReference,
    PathReference,
    Pedestrian,
    PedestrianSetup,
    SimSetup,
    SocialForceParams,
)

NX, NU = dyn.NX, dyn.NU
SCHEMA_VERSION = 1
PRESETS = ("benchmark", "pedestrian", "crowd")

DEFAULT_STATE_WEIGHTS = np.diag([1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
DEFAULT_INPUT_WEIGHTS = 0.1 * np.eye(NU)


def load_schema() -> dict:
    text = resources.files("ccbox").joinpath("scenarios/schema.json").read_text()
    return json.loads(text)


def preset_path(name: str) -> Path:
    """Filesystem path of a bundled preset (``benchmark``, ``pedestrian``, ``crowd``)."""
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    return Path(str(resources.files("ccbox").joinpath(f"scenarios/{name}.json")))


@dataclass
class SimulationSettings:
    duration: float = 30.0
    substep: float = 0.01
    control_period: float | None = None
    kind: ConstraintKind = ConstraintKind.ELLIPSOID_CC
    accept_violation: float = 1e-3
    planner: bool = True


@dataclass
class Scenario:
    """A validated scenario, converted to library objects."""

    name: str
    seed: int
    output: str | None
    robot: GaussianBelief
    robot_radius: float
    ocp: OcpConfig
    reference: object
    obstacles: list = field(default_factory=list)
    pedestrians: PedestrianSetup | None = None
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    tol: float = 1e-6
    max_iter: int = 100
    document: dict = field(default_factory=dict)

    def ocp_instance(self, t0: float = 0.0) -> OcpInstance:
        """Open-loop problem from the initial belief and the static obstacles."""
        times = t0 + self.ocp.dt * np.arange(1, self.ocp.n_steps + 1)
        cfg = _with_reference(self.ocp, self.reference.states(times))
        return OcpInstance(cfg, self.robot, list(self.obstacles))

    def sim_setup(self) -> SimSetup:
        s = self.simulation
        return SimSetup(
            ocp=self.ocp,
            robot_state=np.array(self.robot.mean),
            robot_cov=np.array(self.robot.cov),
            reference=self.reference,
            pedestrians=self.pedestrians,
            substep=s.substep,
            control_period=s.control_period,
            kind=s.kind,
            tol=self.tol,
            max_iter=self.max_iter,
            robot_radius=self.robot_radius,
            planner=s.planner,
            accept_violation=s.accept_violation,
        )


def _with_reference(cfg: OcpConfig, ref) -> OcpConfig:
    return replace(cfg, reference=ref)


# ---------------------------------------------------------------------------
# source locations


def _line_map(text: str) -> dict:
    """Map key paths (tuples) to 1-based line numbers using the YAML composer.

    JSON is (nearly) a subset of YAML; if composing fails the map is empty
    and errors are reported without line numbers.
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return {}
    lines = {}

    def walk(node, path):
        lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                child = path + (key.value,)
                lines[child] = key.start_mark.line + 1
                walk(value, child)
        elif isinstance(node, yaml.SequenceNode):
            for i, value in enumerate(node.value):
                walk(value, path + (i,))

    if root is not None:
        walk(root, ())
    return lines


def _dotted(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


class _Context:
    def __init__(self, lines, source):
        self.lines, self.source = lines, source

    def fail(self, path, message):
        path = tuple(path)
        line = None
        for k in range(len(path), -1, -1):
            if path[:k] in self.lines:
                line = self.lines[path[:k]]
                break
        raise ScenarioError(message, key=_dotted(path) or None, line=line, source=self.source)


# ---------------------------------------------------------------------------
# conversion helpers


def _cov(ctx, value, n, path, default=None):
    if value is None:
        return np.zeros((n, n)) if default is None else np.array(default, dtype=float)
    m = np.asarray(value, dtype=float)
    if m.ndim == 1:
        m = np.diag(m)
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12):
        ctx.fail(path, "matrix must be symmetric")
    m = 0.5 * (m + m.T)
    if np.linalg.eigvalsh(m)[0] < -1e-10 * max(1.0, np.linalg.norm(m)):
        ctx.fail(path, "matrix must be positive semidefinite")
    return m


def _limits(value, n, fill):
    if value is None:
        return np.full(n, fill)
    return np.array([fill if v is None else float(v) for v in value])


def _bounds(ctx, doc, n, path):
    doc = doc or {}
    lo = _limits(doc.get("lower"), n, -np.inf)
    hi = _limits(doc.get("upper"), n, np.inf)
    if np.any(lo > hi):
        ctx.fail(path, "lower bound exceeds upper bound")
    return lo, hi


def _semi(value):
    return np.array([np.inf if v is None else float(v) for v in value])


def _build(doc: dict, ctx: _Context) -> Scenario:
    rob = doc["robot"]
    p = rob.get("params", {})
    params = dyn.RobotParams(
        k=tuple(p.get("k", (1.0, 1.0, 1.0))),
        k_psi=p.get("k_psi", 1.0),
        tau=tuple(p.get("tau", (0.5, 0.5, 0.5))),
        tau_psi=p.get("tau_psi", 0.5),
    )
    x0 = np.asarray(rob["initial_state"], dtype=float)
    robot = GaussianBelief(x0, _cov(ctx, rob.get("initial_cov"), NX, ("robot", "initial_cov")))
    w = _cov(ctx, rob.get("process_noise"), NX, ("robot", "process_noise"))

    o = doc["ocp"]
    n = o["n_steps"]
    if ("horizon" in o) == ("dt" in o):
        ctx.fail(("ocp",), "give exactly one of 'horizon' and 'dt'")
    dt = o["dt"] if "dt" in o else o["horizon"] / n
    sw = _cov(ctx, o.get("state_weights"), NX, ("ocp", "state_weights"), DEFAULT_STATE_WEIGHTS)
    iw = _cov(ctx, o.get("input_weights"), NU, ("ocp", "input_weights"), DEFAULT_INPUT_WEIGHTS)
    slo, shi = _bounds(ctx, o.get("state_bounds"), NX, ("ocp", "state_bounds"))
    ilo, ihi = _bounds(ctx, o.get("input_bounds"), NU, ("ocp", "input_bounds"))
    if np.any(x0 < slo) or np.any(x0 > shi):
        ctx.fail(("robot", "initial_state"), "initial state violates the state bounds")

    ref_doc = doc.get("reference", {"fixed": [0.0] * NX})
    if ("fixed" in ref_doc) == ("path" in ref_doc):
        ctx.fail(("reference",), "give exactly one of 'fixed' and 'path'")
    if "fixed" in ref_doc:
        reference = FixedReference(np.asarray(ref_doc["fixed"], dtype=float))
    else:
        rp = ref_doc["path"]
        pts = np.asarray(rp["waypoints"], dtype=float)
        if rp.get("loop", True) and len(pts) < 2:
            ctx.fail(("reference", "path", "waypoints"), "a closed path needs at least two vertices")
        reference = PathReference(pts, rp.get("z", 0.0), rp["speed"], rp.get("loop", True),
                                  rp.get("start_offset", 0.0))

    try:
        cfg = OcpConfig(
            n_steps=n, dt=dt, state_weights=sw, input_weights=iw, alpha=o["alpha"],
            reference=reference.states(dt * np.arange(1, n + 1)), params=params,
            state_lower=slo, state_upper=shi, input_lower=ilo, input_upper=ihi,
            robot_noise=w, jacobian_method=o.get("jacobian", "analytic"),
        )
    except InvariantError as exc:
        ctx.fail(("ocp",), str(exc))

    obstacles = []
    for i, ob in enumerate(doc.get("obstacles", [])):
        where = ("obstacles", i)
        belief = GaussianBelief(np.asarray(ob["mean"], dtype=float),
                                _cov(ctx, ob.get("cov"), NX, where + ("cov",)))
        semi = _semi(ob["semi_sizes"])
        if not np.any(np.isfinite(semi)):
            ctx.fail(where + ("semi_sizes",), "at least one semi-size must be finite")
        noise = _cov(ctx, ob.get("process_noise"), NX, where + ("process_noise",))
        obstacles.append(Obstacle(belief, BoundingBox(semi), noise))

    peds = None
    if "pedestrians" in doc:
        pd = doc["pedestrians"]
        sf = SocialForceParams(**pd.get("social_force", {}))
        agents = []
        for i, a in enumerate(pd.get("agents", [])):
            agents.append(Pedestrian(a["position"], a.get("velocity", [0.0, 0.0]), a["waypoints"],
                                     a["desired_speed"], pd.get("radius", 0.3), 0, a.get("loop", True)))
        crowd = None
        if "crowd" in pd:
            c = pd["crowd"]
            if len(c["path"]) < 2:
                ctx.fail(("pedestrians", "crowd", "path"), "a crowd path needs at least two vertices")
            crowd = CrowdPreset(c["count"], np.asarray(c["path"], dtype=float), c.get("desired_speed", 1.0),
                                c.get("speed_jitter", 0.0), c.get("offset_jitter", 0.0),
                                c.get("reverse", False), c.get("phase", 0.5))
        default_init = np.diag([pd.get("measurement_var", 2.5e-3)] * 3 + [1.0] * 3 + [1.0, 1.0])
        peds = PedestrianSetup(
            semi_sizes=np.asarray(pd["semi_sizes"], dtype=float),
            height=pd.get("height", 1.0),
            radius=pd.get("radius", 0.3),
            measurement_var=pd.get("measurement_var", 2.5e-3),
            process_noise=_cov(ctx, pd.get("process_noise"), NX, ("pedestrians", "process_noise")),
            initial_cov=_cov(ctx, pd.get("initial_cov"), NX, ("pedestrians", "initial_cov"), default_init),
            agents=agents,
            crowd=crowd,
            social_force=sf,
        )

    sd = doc.get("simulation", {})
    sim = SimulationSettings(
        duration=sd.get("duration", 30.0),
        substep=sd.get("substep", 0.01),
        control_period=sd.get("control_period"),
        kind=ConstraintKind.parse(sd.get("kind", "ellipsoid_cc")),
        accept_violation=sd.get("accept_violation", 1e-3),
        planner=sd.get("planner", True),
    )
    period = dt if sim.control_period is None else sim.control_period
    ratio = period / sim.substep
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        ctx.fail(("simulation",), "control period must be a positive multiple of the substep")

    return Scenario(
        name=doc.get("name", ""),
        seed=doc.get("seed", 0),
        output=doc.get("output"),
        robot=robot,
        robot_radius=rob.get("radius", 0.3),
        ocp=cfg,
        reference=reference,
        obstacles=obstacles,
        pedestrians=peds,
        simulation=sim,
        tol=o.get("tol", 1e-6),
        max_iter=o.get("max_iter", 100),
        document=doc,
    )


def _schema_message(err) -> str:
    path = tuple(err.absolute_path)
    if path and path[-1] == "alpha":
        return f"alpha must lie in the open interval (0, 1), got {err.instance!r}"
    if err.validator == "additionalProperties":
        return err.message.replace("Additional properties are not allowed", "unknown key")
    if err.validator == "oneOf":
        return f"value {json.dumps(err.instance)[:60]} matches neither allowed form ({err.schema.get('description', '')})"
    return err.message


def parse_text(text: str, source: str | None = None) -> Scenario:
    """Parse and validate scenario ``text``; ``source`` labels error messages."""
    if not text.strip():
        raise ScenarioError("scenario file is empty", source=source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg}", line=exc.lineno, source=source) from None
    ctx = _Context(_line_map(text), source)
    if not isinstance(doc, dict):
        ctx.fail((), "top level must be an object")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        path = tuple(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            if extra:
                path = path + (extra[0],)
        ctx.fail(path, _schema_message(err))
    try:
        return _build(doc, ctx)
    except (InvariantError, DomainError) as exc:
        raise ScenarioError(str(exc), source=source) from None


def parse_scenario(path) -> Scenario:
    """Read, validate and convert the scenario file at ``path``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", source=str(path)) from None
    return parse_text(text, source=str(path))


def schema_help(schema: dict | None = None) -> str:
    """Plain-text listing of every scenario key with its description."""
    schema = load_schema() if schema is None else schema
    out = []

    def walk(node, prefix, required=()):
        props = node.get("properties", {})
        for key, sub in props.items():
            name = f"{prefix}.{key}" if prefix else key
            desc = sub.get("description", "")
            flag = " (required)" if key in required else ""
            out.append(f"  {name}{flag}: {desc}")
            if sub.get("type") == "object":
                walk(sub, name, sub.get("required", ()))
            items = sub.get("items")
            if isinstance(items, dict) and items.get("type") == "object":
                walk(items, name + "[]", items.get("required", ()))

    walk(schema, "", schema.get("required", ()))
    return "\n".join(out)
