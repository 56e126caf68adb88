"""Scene files, snapshot/time-series output and crack post-processing.

A scene is a YAML document whose numeric keys carry their unit in the name
(``dt_s``, ``E_Pa``). Loading fills defaults, applies ``key=value``
overrides and validates; the normalized document is kept on the ``Scene`` so
serialize -> load is idempotent.
"""

import copy
import logging
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .constitutive import MODIFIED_VON_MISES, PRINCIPAL, Material, principal_values
from .dynamics import cfl_limit
from .errors import ConfigurationError, DamSPHError, IngestionError, SceneIOError
from .excitation import G, BoundaryCondition, NoSignal, Sinusoid, load_accelerogram
from .lattice import RegionPolygon, fill_polygon, merge, tag_boundary
from .springs import CHARACTERISTIC_LENGTH, REST_LENGTH

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SHIPPED_SCENES = ("koyna", "koyna-coarse", "koyna-coarse-earthquake", "bar-wave",
                  "plate-tension")
DEFAULT_H_RATIO = 0.9
H_RATIO_RANGE = (0.8, 2.0)


class SceneError(ConfigurationError):
    """Invalid scene content; the message names the field and line when known."""


# ----------------------------------------------------------------- defaults
_NUMERICS = {
    "spacing_m": 0.5,
    "h_m": None,  # 0.9 * spacing
    "dt_s": 5.0e-6,
    "t_end_s": 10.0,
    "cfl_number": 0.3,
    "eta1": 1.0,
    "eta2": 2.0,
    "epsilon_reg": 0.01,
    "alpha_per_s": 1.616,
    "beta_s": 0.0008,
    "plane": "stress",
    "damage_strain_measure": PRINCIPAL,
    "bond_length_scale": REST_LENGTH,
    "verlet_skin_m": None,  # 0.25 * spacing
}

_MATERIAL = {
    "E_Pa": 31.03e9,
    "nu": 0.2,
    "rho0_kg_per_m3": 2643.0,
    "f_t_Pa": 3.19e6,
    "f_c_Pa": 31.9e6,
    "G_f_N_per_m": 100.0,
    "eps0": 1.0e-4,
    "h_c_m": None,  # spacing
}

_PRELOAD = {
    "enabled": True,
    "tolerance_J_per_kg": 1.0e-6,
    "max_steps": 200000,
    "window_steps": 100,
    "damping_per_s": None,  # estimated from the domain size
}

_GRAVITY = {
    "enabled": True,
    "g_m_per_s2": G,
    "direction": [0.0, -1.0],
    "preload": _PRELOAD,
}

_BOUNDARY = {
    "name": "base",
    "region": "foundation",
    "edges": ["bottom"],
    "band_m": None,  # 2 * spacing
    "kind": "prescribed_motion",
    "driven": True,
    "velocity_m_per_s": [0.0, 0.0],
}

_CASES = {
    "none": {"kind": "none"},
    "sinusoid": {"kind": "sinusoid", "amplitude_g": 0.1, "period_s": 0.3,
                 "direction": [1.0, 0.0]},
    "accelerogram": {"kind": "accelerogram", "file": None, "scale": 1.0},
}

_OUTPUT = {
    "directory": "output",
    "snapshot_interval_s": 0.1,
    "log_interval_steps": 100,
    "formats": ["csv", "vtk"],
    "checkpoint_interval_steps": 0,
    "crack_threshold": 0.5,
    "dam_region": "dam",
    "progress_interval_s": 10.0,
    "probes": [],
}

_INITIAL = {"region": None, "box_m": None, "velocity_m_per_s": [0.0, 0.0]}

_TOP = ("schema_version", "name", "description", "numerics", "gravity", "materials",
        "regions", "boundary", "excitation", "initial_conditions", "output")


# ------------------------------------------------------------ line tracking
def _line_map(text):
    """Map dotted key paths to 1-based source lines."""
    lines = {}

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, f"{path}.{k.value}" if path else str(k.value))
                lines.setdefault(f"{path}.{k.value}" if path else str(k.value),
                                 k.start_mark.line + 1)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}.{i}" if path else str(i))

    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return lines
    if root is not None:
        walk(root, "")
    return lines


class _Context:
    def __init__(self, source, lines=None):
        self.source = source
        self.lines = lines or {}

    def error(self, path, message):
        line = None
        p = path
        while p:
            if p in self.lines:
                line = self.lines[p]
                break
            p = p.rpartition(".")[0]
        where = f" (line {line})" if line else ""
        return SceneError(f"{self.source}: {path}{where}: {message}")


# ------------------------------------------------------------ normalization
def _as_float(ctx, path, value, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool):
        raise ctx.error(path, f"expected a number, got {value!r}")
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ctx.error(path, f"expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ctx.error(path, f"expected a finite number, got {value!r}")
    return out


def _as_int(ctx, path, value):
    f = _as_float(ctx, path, value)
    if f != int(f):
        raise ctx.error(path, f"expected an integer, got {value!r}")
    return int(f)


def _as_vec(ctx, path, value, allow_none=False):
    if value is None and allow_none:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ctx.error(path, f"expected a 2-vector, got {value!r}")
    return [_as_float(ctx, f"{path}.{i}", v) for i, v in enumerate(value)]


def _as_bool(ctx, path, value):
    if not isinstance(value, bool):
        raise ctx.error(path, f"expected true/false, got {value!r}")
    return value


def _mapping(ctx, path, value):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ctx.error(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _fill(ctx, path, given, defaults):
    given = _mapping(ctx, path, given)
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ctx.error(f"{path}.{unknown[0]}" if path else unknown[0],
                        f"unknown key (expected one of {', '.join(defaults)})")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def _normalize_value(ctx, path, key, value):
    """Coerce a leaf by its key's unit suffix or known type."""
    if key in ("plane", "damage_strain_measure", "bond_length_scale", "kind", "name",
               "region", "label", "material", "file", "directory", "dam_region", "case"):
        if value is None:
            return None
        if not isinstance(value, str):
            raise ctx.error(path, f"expected text, got {value!r}")
        return value
    if key in ("enabled", "driven"):
        return _as_bool(ctx, path, value)
    if key in ("max_steps", "window_steps", "log_interval_steps", "checkpoint_interval_steps"):
        return _as_int(ctx, path, value)
    if key in ("direction", "velocity_m_per_s", "position_m"):
        return _as_vec(ctx, path, value)
    return _as_float(ctx, path, value, allow_none=True)


def _normalize_block(ctx, path, given, defaults):
    out = _fill(ctx, path, given, defaults)
    for k, v in out.items():
        if isinstance(defaults.get(k), dict):
            continue
        if k in ("edges", "formats", "probes", "box_m"):
            continue
        out[k] = _normalize_value(ctx, f"{path}.{k}", k, v)
    return out


def normalize(raw, source="<scene>", lines=None):
    """Fill defaults and coerce types; returns a new plain-data document."""
    ctx = _Context(source, lines)
    raw = _mapping(ctx, "", raw)
    unknown = sorted(set(raw) - set(_TOP))
    if unknown:
        raise ctx.error(unknown[0], f"unknown top-level key (expected one of {', '.join(_TOP)})")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ctx.error("schema_version", f"unsupported schema version {version!r} "
                                          f"(this build reads {SCHEMA_VERSION})")
    doc = {"schema_version": SCHEMA_VERSION,
           "name": str(raw.get("name", Path(str(source)).stem)),
           "description": str(raw.get("description", ""))}

    doc["numerics"] = _normalize_block(ctx, "numerics", raw.get("numerics"), _NUMERICS)

    grav = _fill(ctx, "gravity", raw.get("gravity"), _GRAVITY)
    grav["preload"] = _normalize_block(ctx, "gravity.preload", grav["preload"], _PRELOAD)
    for k in ("enabled", "g_m_per_s2", "direction"):
        grav[k] = _normalize_value(ctx, f"gravity.{k}", k, grav[k])
    doc["gravity"] = grav

    mats = _mapping(ctx, "materials", raw.get("materials"))
    if not mats:
        raise ctx.error("materials", "at least one material is required")
    doc["materials"] = {str(mid): _normalize_block(ctx, f"materials.{mid}", m, _MATERIAL)
                        for mid, m in mats.items()}

    regions = raw.get("regions")
    if not isinstance(regions, list) or not regions:
        raise ctx.error("regions", "expected a non-empty list of regions")
    doc["regions"] = []
    for i, r in enumerate(regions):
        r = _fill(ctx, f"regions.{i}", r, {"label": None, "material": None, "vertices_m": None})
        for k in ("label", "material"):
            if not isinstance(r[k], str) or not r[k]:
                raise ctx.error(f"regions.{i}.{k}", "required text field")
        if "," in r["label"]:
            raise ctx.error(f"regions.{i}.label", "labels may not contain commas")
        verts = r["vertices_m"]
        if not isinstance(verts, list) or len(verts) < 3:
            raise ctx.error(f"regions.{i}.vertices_m", "expected a list of at least 3 [x, y] points")
        r["vertices_m"] = [_as_vec(ctx, f"regions.{i}.vertices_m.{k}", v)
                           for k, v in enumerate(verts)]
        doc["regions"].append(r)

    bnd = raw.get("boundary", [])
    if not isinstance(bnd, list):
        raise ctx.error("boundary", "expected a list of boundary groups")
    doc["boundary"] = []
    for i, b in enumerate(bnd):
        b = _normalize_block(ctx, f"boundary.{i}", b, _BOUNDARY)
        edges = b["edges"]
        if isinstance(edges, str):
            edges = [edges]
        if not isinstance(edges, list) or not edges:
            raise ctx.error(f"boundary.{i}.edges", "expected a list of edges")
        for e in edges:
            if e not in ("bottom", "top", "left", "right"):
                raise ctx.error(f"boundary.{i}.edges", f"unknown edge {e!r}")
        b["edges"] = list(edges)
        if b["kind"] not in ("prescribed_motion", "fixed"):
            raise ctx.error(f"boundary.{i}.kind", f"unknown kind {b['kind']!r}")
        doc["boundary"].append(b)

    exc = _mapping(ctx, "excitation", raw.get("excitation"))
    unknown = sorted(set(exc) - {"case", "cases"})
    if unknown:
        raise ctx.error(f"excitation.{unknown[0]}", "unknown key (expected case, cases)")
    cases = _mapping(ctx, "excitation.cases", exc.get("cases"))
    doc_cases = {}
    for name, c in cases.items():
        c = _mapping(ctx, f"excitation.cases.{name}", c)
        kind = c.get("kind")
        if kind not in _CASES:
            raise ctx.error(f"excitation.cases.{name}.kind",
                            f"unknown excitation kind {kind!r} (expected {', '.join(_CASES)})")
        doc_cases[str(name)] = _normalize_block(ctx, f"excitation.cases.{name}", c, _CASES[kind])
    case = exc.get("case", "none" if not doc_cases else next(iter(doc_cases)))
    doc["excitation"] = {"case": _normalize_value(ctx, "excitation.case", "case", case),
                         "cases": doc_cases}

    init = raw.get("initial_conditions", [])
    if not isinstance(init, list):
        raise ctx.error("initial_conditions", "expected a list")
    doc["initial_conditions"] = []
    for i, ic in enumerate(init):
        ic = _normalize_block(ctx, f"initial_conditions.{i}", ic, _INITIAL)
        if ic["box_m"] is not None:
            box = ic["box_m"]
            if not isinstance(box, list) or len(box) != 2:
                raise ctx.error(f"initial_conditions.{i}.box_m", "expected [[xmin, ymin], [xmax, ymax]]")
            ic["box_m"] = [_as_vec(ctx, f"initial_conditions.{i}.box_m.{k}", v)
                           for k, v in enumerate(box)]
        doc["initial_conditions"].append(ic)

    out = _normalize_block(ctx, "output", raw.get("output"), _OUTPUT)
    fmts = out["formats"]
    if isinstance(fmts, str):
        fmts = [fmts]
    for f_ in fmts:
        if f_ not in ("csv", "vtk"):
            raise ctx.error("output.formats", f"unknown snapshot format {f_!r}")
    out["formats"] = list(fmts)
    probes = out["probes"]
    if not isinstance(probes, list):
        raise ctx.error("output.probes", "expected a list of probes")
    out["probes"] = [
        _normalize_block(ctx, f"output.probes.{i}", p, {"name": f"probe{i}", "position_m": None})
        for i, p in enumerate(probes)
    ]
    for i, p in enumerate(out["probes"]):
        if p["position_m"] is None:
            raise ctx.error(f"output.probes.{i}.position_m", "required")
    doc["output"] = out
    return doc


# ---------------------------------------------------------------- overrides
def _leaf_paths(doc, prefix=""):
    if isinstance(doc, dict):
        for k, v in doc.items():
            yield from _leaf_paths(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(doc, list) and doc and all(isinstance(v, dict) for v in doc):
        for i, v in enumerate(doc):
            yield from _leaf_paths(v, f"{prefix}.{i}")
    else:
        yield prefix


def _resolve_key(doc, key):
    paths = list(_leaf_paths(doc))
    if key in paths:
        return key
    matches = [p for p in paths if p == key or p.endswith("." + key)]
    if not matches:
        raise SceneError(f"override {key!r} does not name an existing scene key")
    if len(matches) > 1:
        raise SceneError(f"override {key!r} is ambiguous: {', '.join(matches)}")
    return matches[0]


def apply_overrides(doc, overrides):
    """Return a copy of ``doc`` with ``key=value`` overrides applied.

    Keys are dotted paths (``numerics.dt_s``) or unique leaf names (``dt_s``).
    Values are parsed as YAML scalars.
    """
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise SceneError(f"override {item!r} is not of the form key=value")
        key, _, text = item.partition("=")
        path = _resolve_key(doc, key.strip())
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise SceneError(f"override {item!r}: cannot parse value ({exc})") from None
        if isinstance(value, str):
            # YAML 1.1 reads 1e-6 (no dot) as a string
            try:
                value = float(value)
            except ValueError:
                pass
        node = doc
        parts = path.split(".")
        for p in parts[:-1]:
            node = node[int(p)] if isinstance(node, list) else node[p]
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    return doc


# -------------------------------------------------------------------- scene
@dataclass
class Probe:
    name: str
    position: tuple


@dataclass
class BoundaryGroup:
    name: str
    region: str
    edges: tuple
    band: float
    kind: str
    driven: bool
    velocity: tuple


@dataclass
class OutputSpec:
    directory: str
    snapshot_interval: float
    log_interval_steps: int
    formats: tuple
    checkpoint_interval_steps: int
    crack_threshold: float
    dam_region: str
    progress_interval: float
    probes: tuple


@dataclass
class Scene:
    """Validated scene. ``data`` is the normalized document it was built from."""

    data: dict
    name: str
    numerics: object  # solver.Numerics
    materials: dict
    regions: tuple
    gravity: tuple
    preload: dict
    boundary: tuple
    excitation_case: str
    signal: object
    initial_conditions: tuple
    output: OutputSpec
    source: str = ""
    base_dir: str = "."

    def __eq__(self, other):
        return isinstance(other, Scene) and self.data == other.data

    @property
    def spacing(self):
        return self.numerics.spacing

    @property
    def g(self):
        return self.data["gravity"]["g_m_per_s2"]

    def cfl_limit(self):
        c = max(m.sound_speed for m in self.materials.values())
        v = [ic["velocity_m_per_s"] for ic in self.data["initial_conditions"]]
        v += [b["velocity_m_per_s"] for b in self.data["boundary"]]
        vel = np.asarray(v, dtype=float).reshape(-1, 2)
        return cfl_limit(self.numerics.h, c, vel, self.numerics.cfl)

    def estimated_steps(self):
        return int(round(self.numerics.t_end / self.numerics.dt))


_MATERIAL_KEYS = {"E": "E_Pa", "nu": "nu", "rho0": "rho0_kg_per_m3", "G_f": "G_f_N_per_m",
                  "eps0": "eps0", "h_c": "h_c_m"}


def _build(doc, source, base_dir, lines=None):
    from .solver import Numerics

    ctx = _Context(source, lines)
    num = doc["numerics"]
    spacing = num["spacing_m"]
    if spacing is None or not spacing > 0:
        raise ctx.error("numerics.spacing_m", "must be positive")
    h = num["h_m"]
    if h is None:
        h = DEFAULT_H_RATIO * spacing
        log.info("%s: h not given, using %.4g m (%.2f x spacing)", source, h, DEFAULT_H_RATIO)
    ratio = h / spacing
    if not (H_RATIO_RANGE[0] - 1e-12 <= ratio <= H_RATIO_RANGE[1] + 1e-12):
        raise ctx.error("numerics.h_m", f"h/spacing = {ratio:.4g} outside the allowed range "
                                        f"[{H_RATIO_RANGE[0]}, {H_RATIO_RANGE[1]}]")
    for k in ("dt_s", "cfl_number"):
        if num[k] is None or not num[k] > 0:
            raise ctx.error(f"numerics.{k}", "must be positive")
    if num["t_end_s"] is None or num["t_end_s"] < 0:
        raise ctx.error("numerics.t_end_s", "must be non-negative")
    for k in ("eta1", "eta2", "epsilon_reg", "alpha_per_s", "beta_s"):
        if num[k] is None or num[k] < 0:
            raise ctx.error(f"numerics.{k}", "must be non-negative")
    if num["plane"] not in ("stress", "strain"):
        raise ctx.error("numerics.plane", "expected 'stress' or 'strain'")
    if num["damage_strain_measure"] not in (PRINCIPAL, MODIFIED_VON_MISES):
        raise ctx.error("numerics.damage_strain_measure",
                        f"expected {PRINCIPAL!r} or {MODIFIED_VON_MISES!r}")
    if num["bond_length_scale"] not in (REST_LENGTH, CHARACTERISTIC_LENGTH):
        raise ctx.error("numerics.bond_length_scale",
                        f"expected {REST_LENGTH!r} or {CHARACTERISTIC_LENGTH!r}")
    numerics = Numerics(
        spacing=spacing, h=h, dt=num["dt_s"], t_end=num["t_end_s"], cfl=num["cfl_number"],
        eta1=num["eta1"], eta2=num["eta2"], epsilon_reg=num["epsilon_reg"],
        alpha=num["alpha_per_s"], beta=num["beta_s"], plane=num["plane"],
        measure=num["damage_strain_measure"], bond_length_scale=num["bond_length_scale"],
        skin=num["verlet_skin_m"],
    )

    materials = {}
    for mid, m in doc["materials"].items():
        for k, v in m.items():
            if v is None and k != "h_c_m":
                raise ctx.error(f"materials.{mid}.{k}", "required")
        try:
            materials[mid] = Material(
                name=mid, E=m["E_Pa"], nu=m["nu"], rho0=m["rho0_kg_per_m3"], f_t=m["f_t_Pa"],
                f_c=m["f_c_Pa"], G_f=m["G_f_N_per_m"], eps0=m["eps0"],
                h_c=spacing if m["h_c_m"] is None else m["h_c_m"])
        except ConfigurationError as exc:
            key = _MATERIAL_KEYS.get(getattr(exc, "fields", [None])[0])
            path = f"materials.{mid}.{key}" if key else f"materials.{mid}"
            raise ctx.error(path, str(exc)) from None

    regions = []
    labels = set()
    for i, r in enumerate(doc["regions"]):
        if r["material"] not in materials:
            raise ctx.error(f"regions.{i}.material",
                            f"unknown material id {r['material']!r} "
                            f"(defined: {', '.join(materials)})")
        if r["label"] in labels:
            raise ctx.error(f"regions.{i}.label", f"duplicate region label {r['label']!r}")
        labels.add(r["label"])
        try:
            regions.append(RegionPolygon(tuple(map(tuple, r["vertices_m"])), r["material"],
                                         r["label"]))
        except ConfigurationError as exc:
            raise ctx.error(f"regions.{i}.vertices_m", str(exc)) from None

    grav = doc["gravity"]
    gvec = (0.0, 0.0)
    if grav["enabled"]:
        d = np.asarray(grav["direction"], dtype=float)
        if not np.linalg.norm(d) > 0:
            raise ctx.error("gravity.direction", "must be non-zero")
        gvec = tuple((grav["g_m_per_s2"] * d / np.linalg.norm(d)).tolist())
    pre = grav["preload"]
    if not pre["tolerance_J_per_kg"] > 0:
        raise ctx.error("gravity.preload.tolerance_J_per_kg", "must be positive")
    if pre["max_steps"] < 1 or pre["window_steps"] < 1:
        raise ctx.error("gravity.preload.max_steps", "step counts must be positive")

    groups = []
    for i, b in enumerate(doc["boundary"]):
        band = 2.0 * spacing if b["band_m"] is None else b["band_m"]
        if band < spacing:
            raise ctx.error(f"boundary.{i}.band_m",
                            f"band {band} m is smaller than the particle spacing {spacing} m")
        groups.append(BoundaryGroup(b["name"], b["region"], tuple(b["edges"]), band, b["kind"],
                                    b["driven"], tuple(b["velocity_m_per_s"])))

    exc = doc["excitation"]
    case = exc["case"]
    if case != "none" and case not in exc["cases"]:
        raise ctx.error("excitation.case", f"unknown case {case!r} "
                                           f"(defined: {', '.join(exc['cases']) or 'none'})")
    signal = _make_signal(ctx, exc["cases"].get(case, {"kind": "none"}), case,
                          grav["g_m_per_s2"], base_dir)

    for i, ic in enumerate(doc["initial_conditions"]):
        if ic["region"] is not None and ic["region"] not in labels:
            raise ctx.error(f"initial_conditions.{i}.region", f"unknown region {ic['region']!r}")

    out = doc["output"]
    if not out["snapshot_interval_s"] or out["snapshot_interval_s"] <= 0:
        raise ctx.error("output.snapshot_interval_s", "must be positive")
    if out["log_interval_steps"] < 1:
        raise ctx.error("output.log_interval_steps", "must be at least 1")
    if out["checkpoint_interval_steps"] < 0:
        raise ctx.error("output.checkpoint_interval_steps", "must be non-negative")
    if not 0.0 < out["crack_threshold"] <= 1.0:
        raise ctx.error("output.crack_threshold", "must lie in (0, 1]")
    output = OutputSpec(
        directory=out["directory"], snapshot_interval=out["snapshot_interval_s"],
        log_interval_steps=out["log_interval_steps"], formats=tuple(out["formats"]),
        checkpoint_interval_steps=out["checkpoint_interval_steps"],
        crack_threshold=out["crack_threshold"], dam_region=out["dam_region"],
        progress_interval=out["progress_interval_s"],
        probes=tuple(Probe(p["name"], tuple(p["position_m"])) for p in out["probes"]),
    )

    scene = Scene(doc, doc["name"], numerics, materials, tuple(regions), gvec, dict(pre),
                  tuple(groups), case, signal, tuple(doc["initial_conditions"]), output,
                  source=str(source), base_dir=str(base_dir))
    limit = scene.cfl_limit()
    if numerics.dt > limit:
        raise ctx.error("numerics.dt_s", f"dt = {numerics.dt:.4g} s exceeds cfl_limit = "
                                         f"{limit:.4g} s (C_CFL * h / (c_max + v_max))")
    return scene


def _make_signal(ctx, case, name, g, base_dir):
    kind = case["kind"]
    path = f"excitation.cases.{name}"
    if kind == "none":
        return NoSignal()
    if kind == "sinusoid":
        try:
            return Sinusoid(case["amplitude_g"], case["period_s"], tuple(case["direction"]), g)
        except ConfigurationError as exc:
            raise ctx.error(path, str(exc)) from None
    if case["file"] is None:
        raise ctx.error(f"{path}.file", "accelerogram file required")
    fpath = Path(case["file"])
    if not fpath.is_absolute():
        fpath = Path(base_dir) / fpath
    if not fpath.exists():
        raise ctx.error(f"{path}.file", f"accelerogram file not found: {fpath}")
    try:
        return load_accelerogram(fpath, g=g, scale=case["scale"])
    except IngestionError as exc:
        raise IngestionError(f"{ctx.source}: {path}.file: {exc}") from None


def parse_scene(text, source="<scene>", base_dir=".", overrides=()):
    """Parse scene text; see :func:`load_scene`."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise SceneError(f"{source}{where}: parse error: {problem}") from None
    lines = _line_map(text)
    doc = normalize(raw, source, lines)
    if overrides:
        doc = normalize(apply_overrides(doc, overrides), source, lines)
    return _build(doc, source, base_dir, lines)


def load_scene(path, overrides=()):
    """Load, default-fill, override and validate a scene file."""
    path = Path(path)
    if not path.exists():
        raise SceneError(f"scene not found: {path}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise SceneIOError(f"cannot read scene {path}: {exc}") from None
    return parse_scene(text, str(path), str(path.parent), overrides)


def dump_scene(scene):
    """Serialize the normalized document as YAML text."""
    return yaml.safe_dump(scene.data, sort_keys=False, default_flow_style=None, width=100)


def write_scene(scene, path):
    Path(path).write_text(dump_scene(scene))


def shipped_scene_path(name):
    """Path of a canonical scene shipped with the package."""
    if name.endswith(".scene"):
        name = name[:-6]
    if name not in SHIPPED_SCENES:
        raise SceneError(f"no shipped scene {name!r} (available: {', '.join(SHIPPED_SCENES)})")
    return Path(str(resources.files("damsph") / "data" / f"{name}.scene"))


def shipped_files(name):
    """Shipped scene plus any data files it references."""
    path = shipped_scene_path(name)
    files = [path]
    doc = yaml.safe_load(path.read_text())
    for case in (doc.get("excitation") or {}).get("cases", {}).values():
        if case.get("file"):
            files.append(path.parent / case["file"])
    return files


# ------------------------------------------------------------ construction
@dataclass
class Model:
    particles: object  # ParticleSet
    groups: dict  # boundary group name -> mask


def build_particles(scene):
    """Fill the scene regions and flag boundary groups."""
    names = list(scene.materials)
    mats = [scene.materials[k] for k in names]
    sets = [fill_polygon(r, scene.spacing, scene.materials[r.material_id])
            for r in scene.regions]
    p = merge(sets)
    # keep the scene's material ordering so indices are stable across scenes
    order = [names.index(m.name) for m in p.materials]
    p.material = np.asarray(order, dtype=np.int64)[p.material]
    p.materials = mats

    groups = {}
    for g in scene.boundary:
        blank = p.copy()
        blank.boundary[:] = False
        fallback = scene.output.dam_region
        mask = tag_boundary(blank, g.band, g.region, g.edges, fallback=fallback).boundary
        groups[g.name] = mask & ~p.boundary
        p.boundary |= mask

    for ic in scene.initial_conditions:
        sel = np.ones(len(p), dtype=bool)
        if ic["region"] is not None:
            sel &= p.mask(ic["region"])
        if ic["box_m"] is not None:
            (x0, y0), (x1, y1) = ic["box_m"]
            x, y = p.position[:, 0], p.position[:, 1]
            sel &= (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        p.velocity[sel] = np.asarray(ic["velocity_m_per_s"], dtype=float)
    return Model(p, groups)


def boundary_conditions(scene, model):
    bcs = []
    for g in scene.boundary:
        mask = model.groups[g.name]
        signal = scene.signal if (g.driven and g.kind == "prescribed_motion") else NoSignal()
        bcs.append(BoundaryCondition(mask, g.kind, signal, g.velocity, g.name))
    return bcs


def build_solver(scene, threads=1, model=None):
    from .solver import Solver

    model = build_particles(scene) if model is None else model
    solver = Solver(model.particles, scene.numerics, gravity=scene.gravity,
                    boundary_conditions=boundary_conditions(scene, model), threads=threads)
    return solver, model


# ---------------------------------------------------------------- snapshots
SNAPSHOT_FIELDS = (
    ("id", "-"), ("x", "m"), ("y", "m"), ("vx", "m/s"), ("vy", "m/s"), ("rho", "kg/m^3"),
    ("sigma_xx", "Pa"), ("sigma_yy", "Pa"), ("sigma_xy", "Pa"),
    ("sigma_max", "Pa"), ("sigma_min", "Pa"), ("damage", "-"),
    ("connectivity_damage", "-"), ("region", "label"), ("boundary", "flag"),
)


@dataclass
class Snapshot:
    time: float
    step: int
    fields: dict
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.fields["id"])


def principal_stresses(stress):
    """Principal stresses (max, min) of [xx, yy, xy] rows."""
    return principal_values(stress)


@dataclass
class CrackGeometry:
    spacing: float
    interface_y: float
    height: float

    @classmethod
    def from_particles(cls, particles, dam_label="dam"):
        if dam_label in particles.region_bounds:
            xmin, ymin, xmax, ymax = particles.region_bounds[dam_label]
        else:
            ymin = float(particles.position[:, 1].min())
            ymax = float(particles.position[:, 1].max())
        return cls(float(particles.spacing), float(ymin), float(ymax - ymin))


def snapshot_from_solver(solver, geometry=None):
    s, p = solver.state, solver.particles
    stress = s.material.effective_stress()
    smax, smin = principal_stresses(stress)
    labels = np.asarray(p.labels, dtype=object)
    fields = {
        "id": np.arange(s.n), "x": s.x[:, 0].copy(), "y": s.x[:, 1].copy(),
        "vx": s.v[:, 0].copy(), "vy": s.v[:, 1].copy(), "rho": s.rho.copy(),
        "sigma_xx": stress[:, 0].copy(), "sigma_yy": stress[:, 1].copy(),
        "sigma_xy": stress[:, 2].copy(), "sigma_max": smax, "sigma_min": smin,
        "damage": s.material.damage.copy(),
        "connectivity_damage": solver.network.connectivity_damage(),
        "region": labels[p.region], "boundary": p.boundary.astype(np.int64),
    }
    meta = {"spacing_m": p.spacing}
    if geometry is not None:
        meta.update(interface_y_m=geometry.interface_y, dam_height_m=geometry.height)
    return Snapshot(float(s.time), int(s.step), fields, meta)


def _fmt(v):
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def write_snapshot_csv(snap, path):
    names = [n for n, _ in SNAPSHOT_FIELDS]
    cols = [snap.fields[n] for n in names]
    lines = [f"# time_s={snap.time!r}", f"# step={snap.step}"]
    lines += [f"# {k}={v!r}" if isinstance(v, float) else f"# {k}={v}"
              for k, v in sorted(snap.metadata.items())]
    lines.append(",".join(f"{n}_{u}" if u not in ("-", "label", "flag") else n
                          for n, u in SNAPSHOT_FIELDS))
    int_cols = {"id", "boundary"}
    for k in range(len(snap)):
        row = []
        for n, c in zip(names, cols):
            v = c[k]
            row.append(str(int(v)) if n in int_cols else _fmt(v))
        lines.append(",".join(row))
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise SceneIOError(f"cannot write snapshot {path}: {exc}") from None


def _strip_unit(col):
    for n, u in SNAPSHOT_FIELDS:
        if col == n or col == f"{n}_{u}":
            return n
    return col


def read_snapshot_csv(path):
    meta = {}
    try:
        with open(path) as fh:
            text = fh.read().splitlines()
    except OSError as exc:
        raise SceneIOError(f"cannot read snapshot {path}: {exc}") from None
    k = 0
    while k < len(text) and text[k].startswith("#"):
        key, _, val = text[k][1:].strip().partition("=")
        meta[key] = val
        k += 1
    if k >= len(text):
        raise SceneIOError(f"{path}: missing header row")
    header = [_strip_unit(c) for c in text[k].split(",")]
    rows = [line.split(",") for line in text[k + 1:] if line]
    cols = list(zip(*rows)) if rows else [[] for _ in header]
    fields = {}
    for name, col in zip(header, cols):
        if name == "region":
            fields[name] = np.asarray(col, dtype=object)
        elif name in ("id", "boundary"):
            fields[name] = np.asarray(col, dtype=np.int64)
        else:
            fields[name] = np.asarray(col, dtype=float)
    time = float(meta.pop("time_s", "nan"))
    step = int(meta.pop("step", "-1"))
    parsed = {}
    for key, val in meta.items():
        try:
            parsed[key] = float(val)
        except ValueError:
            parsed[key] = val
    return Snapshot(time, step, fields, parsed)


def write_snapshot_vtk(snap, path):
    n = len(snap)
    f = snap.fields
    out = ["# vtk DataFile Version 3.0",
           f"damsph snapshot step {snap.step} time {snap.time!r} s",
           "ASCII", "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    out += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in zip(f["x"], f["y"])]
    out.append(f"CELLS {n} {2 * n}")
    out += [f"1 {k}" for k in range(n)]
    out.append(f"CELL_TYPES {n}")
    out += ["1"] * n
    out.append(f"POINT_DATA {n}")
    out.append("VECTORS velocity double")
    out += [f"{_fmt(a)} {_fmt(b)} 0" for a, b in zip(f["vx"], f["vy"])]
    for name in ("rho", "sigma_xx", "sigma_yy", "sigma_xy", "sigma_max", "sigma_min",
                 "damage", "connectivity_damage"):
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [_fmt(v) for v in f[name]]
    _, region_id = np.unique(f["region"].astype(str), return_inverse=True)
    for name, vals in (("region_id", region_id), ("boundary", f["boundary"]), ("id", f["id"])):
        out += [f"SCALARS {name} int 1", "LOOKUP_TABLE default"]
        out += [str(int(v)) for v in vals]
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise SceneIOError(f"cannot write snapshot {path}: {exc}") from None


def write_failed_bonds(path, network, positions, reference, fail_step=None):
    """Failed bonds with reference and current midpoints."""
    idx = np.flatnonzero(network.failed)
    i, j = network.i[idx], network.j[idx]
    mid0 = 0.5 * (reference[i] + reference[j])
    mid = 0.5 * (positions[i] + positions[j])
    fs = np.full(len(idx), -1, dtype=np.int64) if fail_step is None else fail_step[idx]
    lines = ["i,j,mid_x0_m,mid_y0_m,mid_x_m,mid_y_m,fail_step"]
    for row in zip(i, j, mid0[:, 0], mid0[:, 1], mid[:, 0], mid[:, 1], fs):
        lines.append(",".join([str(int(row[0])), str(int(row[1]))]
                              + [_fmt(v) for v in row[2:6]] + [str(int(row[6]))]))
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise SceneIOError(f"cannot write bond file {path}: {exc}") from None


def read_failed_bonds(path):
    try:
        with open(path) as fh:
            rows = fh.read().splitlines()[1:]
    except OSError as exc:
        raise SceneIOError(f"cannot read bond file {path}: {exc}") from None
    rows = [r for r in rows if r]
    data = np.array([r.split(",") for r in rows], dtype=float).reshape(-1, 7)
    return {
        "i": data[:, 0].astype(np.int64), "j": data[:, 1].astype(np.int64),
        "mid0": data[:, 2:4], "mid": data[:, 4:6], "fail_step": data[:, 6].astype(np.int64),
    }


def write_snapshot(solver, scene, directory, tag=None, geometry=None, fail_step=None):
    """Write CSV and/or VTK snapshot plus failed-bond file; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if geometry is None:
        geometry = CrackGeometry.from_particles(solver.particles, scene.output.dam_region)
    snap = snapshot_from_solver(solver, geometry)
    snap.metadata.update(scene=scene.name, dam_region=scene.output.dam_region,
                         crack_threshold=scene.output.crack_threshold)
    stem = tag or f"snapshot_{snap.step:09d}"
    paths = []
    if "csv" in scene.output.formats:
        paths.append(directory / f"{stem}.csv")
        write_snapshot_csv(snap, paths[-1])
    if "vtk" in scene.output.formats:
        paths.append(directory / f"{stem}.vtk")
        write_snapshot_vtk(snap, paths[-1])
    paths.append(directory / f"{stem}.bonds.csv")
    write_failed_bonds(paths[-1], solver.network, solver.state.x, solver.particles.position,
                       fail_step)
    return paths


# -------------------------------------------------------------------- cracks
@dataclass
class CrackProfile:
    bond_midpoints: np.ndarray
    damaged_particles: np.ndarray
    threshold: float
    base_extent: float
    neck_elevation: float  # nan without neck-band failures
    zones: dict  # region label -> (xmin, ymin, xmax, ymax)
    failed_bonds: int

    def summary(self):
        return {
            "failed_bonds": int(self.failed_bonds),
            "damaged_particles": int(len(self.damaged_particles)),
            "threshold": float(self.threshold),
            "base_extent_m": float(self.base_extent),
            "neck_elevation_m": None if math.isnan(self.neck_elevation)
            else float(self.neck_elevation),
            "zones": {k: [float(v) for v in b] for k, b in self.zones.items()},
        }


def largest_cluster(points, radius):
    """Indices of the largest single-linkage cluster at ``radius``."""
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = cKDTree(points).query_pairs(radius * (1.0 + 1e-9), output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, lab = connected_components(graph, directed=False)
    sizes = np.bincount(lab)
    # ties go to the lowest label, which is the cluster holding the lowest index
    return np.flatnonzero(lab == int(np.argmax(sizes)))


def crack_profile(midpoints, bond_labels, connectivity, threshold, geometry):
    """Crack metrics from failed-bond midpoints and per-particle connectivity damage."""
    if not 0.0 < threshold <= 1.0:
        raise ConfigurationError(f"crack threshold must lie in (0, 1], got {threshold!r}")
    mid = np.asarray(midpoints, dtype=float).reshape(-1, 2)
    damaged = np.flatnonzero(np.asarray(connectivity) >= threshold)
    dp = geometry.spacing
    base = mid[np.abs(mid[:, 1] - geometry.interface_y) <= 2.0 * dp * (1.0 + 1e-9)]
    base_extent = float(base[:, 0].max() - base[:, 0].min()) if len(base) else 0.0
    neck = mid[mid[:, 1] >= geometry.interface_y + 0.6 * geometry.height]
    if len(neck):
        members = largest_cluster(neck, 2.0 * dp)
        neck_elev = float(neck[members, 1].mean() - geometry.interface_y)
    else:
        neck_elev = math.nan
    zones = {}
    labels = np.asarray(bond_labels, dtype=object)
    for lab in sorted(set(labels.tolist())):
        pts = mid[labels == lab]
        zones[lab] = (*pts.min(axis=0), *pts.max(axis=0))
    return CrackProfile(mid, damaged, threshold, base_extent, neck_elev, zones, len(mid))


def _bond_labels(network, particles, idx):
    lab = np.asarray(particles.labels, dtype=object)
    ri, rj = particles.region[network.i[idx]], particles.region[network.j[idx]]
    out = lab[ri].copy()
    out[ri != rj] = "interface"
    return out


def extract_cracks(state, network, threshold, geometry, particles=None, reference=None):
    """Crack profile of the current network.

    Midpoints use ``reference`` positions when given (so metrics cannot
    shrink as the body moves), otherwise the current ``state.x``.
    """
    x = state.x if reference is None else np.asarray(reference)
    idx = np.flatnonzero(network.failed)
    mid = 0.5 * (x[network.i[idx]] + x[network.j[idx]])
    if particles is not None:
        labels = _bond_labels(network, particles, idx)
    else:
        labels = np.full(len(idx), "all", dtype=object)
    return crack_profile(mid, labels, network.connectivity_damage(), threshold, geometry)


# --------------------------------------------------------------- time series
class TimeSeriesLog:
    """Comma-separated log of probe motion and global energy terms."""

    def __init__(self, path, solver, probes, interval_steps, append=False):
        if interval_steps < 1:
            raise ConfigurationError("log interval must be at least one step")
        self.path = Path(path)
        self.interval = int(interval_steps)
        self.probes = list(probes)
        x0 = solver.particles.position
        tree = cKDTree(x0)
        reach = solver.particles.spacing * math.sqrt(0.5) * (1.0 + 1e-9)
        self.index = []
        for p in self.probes:
            d, k = tree.query(np.asarray(p.position, dtype=float))
            if d > reach:
                raise ConfigurationError(
                    f"probe {p.name!r} at {tuple(p.position)} lies outside the domain "
                    f"(nearest particle {d:.3g} m away)")
            self.index.append(int(k))
        self.index = np.asarray(self.index, dtype=np.int64)
        self.columns = ["time_s", "step"]
        for p in self.probes:
            self.columns += [f"{p.name}_ux_m", f"{p.name}_uy_m", f"{p.name}_vx_m_per_s",
                             f"{p.name}_vy_m_per_s"]
        self.columns += ["kinetic_J", "strain_J", "damage_dissipated_J",
                         "viscosity_dissipated_J", "damping_dissipated_J", "external_work_J",
                         "residual_J", "max_damage", "failed_bonds"]
        self.records = 0
        if not append or not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w") as fh:
                fh.write(",".join(self.columns) + "\n")

    def truncate_after(self, step):
        """Drop records later than ``step`` (used when resuming)."""
        lines = self.path.read_text().splitlines()
        keep = [lines[0]] + [ln for ln in lines[1:] if ln and int(ln.split(",")[1]) <= step]
        self.path.write_text("\n".join(keep) + "\n")
        self.records = len(keep) - 1

    def due(self, step):
        return step % self.interval == 0

    def record(self, solver):
        rec = time_series_record(solver, self.index)
        with open(self.path, "a") as fh:
            fh.write(",".join(_fmt(v) for v in rec) + "\n")
        self.records += 1
        return rec


def time_series_record(solver, probe_index):
    s = solver.state
    u = s.x[probe_index] - solver.particles.position[probe_index]
    v = s.v[probe_index]
    rec = [float(s.time), int(s.step)]
    for k in range(len(probe_index)):
        rec += [u[k, 0], u[k, 1], v[k, 0], v[k, 1]]
    e = solver.energy_report()
    rec += [e["kinetic_J"], e["strain_J"], e["damage_dissipated_J"], e["viscosity_dissipated_J"],
            e["damping_dissipated_J"], e["external_work_J"], e["residual_J"],
            float(s.material.damage.max()) if s.n else 0.0,
            int(np.count_nonzero(solver.network.failed))]
    return rec


def time_series_log(solver, log):
    """Append the current record of ``solver`` to ``log``."""
    return log.record(solver)


def read_time_series(path):
    data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    return data


def list_snapshots(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise SceneIOError(f"not a directory: {directory}")
    return sorted(p for p in directory.glob("*.csv")
                  if not p.name.endswith(".bonds.csv") and p.name.startswith("snapshot_"))


def ensure_directory(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise SceneIOError(f"cannot create output directory {path}: {exc}") from None
    return Path(path)


__all__ = [
    "Scene", "SceneError", "load_scene", "parse_scene", "dump_scene", "write_scene",
    "apply_overrides", "normalize", "build_particles", "build_solver", "Snapshot",
    "write_snapshot", "write_snapshot_csv", "read_snapshot_csv", "write_snapshot_vtk",
    "principal_stresses", "CrackGeometry", "CrackProfile", "extract_cracks", "crack_profile",
    "TimeSeriesLog", "time_series_log", "shipped_scene_path", "DamSPHError",
]
