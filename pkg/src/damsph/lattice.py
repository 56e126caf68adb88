"""Square-lattice particle generation inside closed polygons."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EmptyRegionError

THICKNESS = 1.0  # m, out-of-plane


@dataclass(frozen=True)
class RegionPolygon:
    vertices: tuple
    material_id: str
    label: str

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise ConfigurationError(f"region {self.label!r}: need at least 3 vertices")
        if _self_intersects(verts):
            raise ConfigurationError(f"region {self.label!r}: polygon is self-intersecting")
        object.__setattr__(self, "vertices", tuple(map(tuple, verts.tolist())))

    @property
    def array(self):
        return np.asarray(self.vertices, dtype=float)

    @property
    def area(self):
        return polygon_area(self.array)

    @property
    def bounds(self):
        v = self.array
        return (*v.min(axis=0), *v.max(axis=0))


@dataclass
class ParticleSet:
    position: np.ndarray
    velocity: np.ndarray
    mass: np.ndarray
    volume: np.ndarray
    density: np.ndarray
    material: np.ndarray  # index into ``materials``
    region: np.ndarray  # index into ``labels``
    boundary: np.ndarray
    spacing: float
    materials: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    region_bounds: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.mass)

    def count(self, label):
        if label not in self.labels:
            return 0
        return int(np.count_nonzero(self.region == self.labels.index(label)))

    def mask(self, label):
        if label not in self.labels:
            return np.zeros(len(self), dtype=bool)
        return self.region == self.labels.index(label)

    def copy(self):
        return ParticleSet(
            *(getattr(self, n).copy() for n in
              ("position", "velocity", "mass", "volume", "density",
               "material", "region", "boundary")),
            spacing=self.spacing,
            materials=list(self.materials),
            labels=list(self.labels),
            region_bounds=dict(self.region_bounds),
        )


def polygon_area(vertices):
    """Shoelace area (absolute value)."""
    x, y = np.asarray(vertices, dtype=float).T
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _segments_cross(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def _self_intersects(verts):
    n = len(verts)
    for a in range(n):
        for b in range(a + 2, n):
            if a == 0 and b == n - 1:
                continue
            if _segments_cross(verts[a], verts[(a + 1) % n], verts[b], verts[(b + 1) % n]):
                return True
    return False


def points_in_polygon(points, vertices, tol=1e-9):
    """Crossing-number test; points on an edge count as inside."""
    pts = np.asarray(points, dtype=float)
    v = np.asarray(vertices, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    on_edge = np.zeros(len(pts), dtype=bool)
    for k in range(len(v)):
        (x1, y1), (x2, y2) = v[k], v[(k + 1) % len(v)]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)

        ex, ey = x2 - x1, y2 - y1
        seg2 = ex * ex + ey * ey
        # zero-length edges reduce to the vertex itself
        t = np.clip(((x - x1) * ex + (y - y1) * ey) / seg2, 0.0, 1.0) if seg2 > 0 else 0.0
        dist2 = (x - x1 - t * ex) ** 2 + (y - y1 - t * ey) ** 2
        on_edge |= dist2 <= tol * tol
    return inside | on_edge


def lattice_sites(bounds, spacing):
    """Row-major square-lattice sites anchored at bbox minimum + spacing/2."""
    xmin, ymin, xmax, ymax = bounds
    eps = 1e-9 * spacing
    nx = int(np.floor((xmax - xmin - 0.5 * spacing) / spacing + eps)) + 1
    ny = int(np.floor((ymax - ymin - 0.5 * spacing) / spacing + eps)) + 1
    xs = xmin + spacing * (0.5 + np.arange(max(nx, 0)))
    ys = ymin + spacing * (0.5 + np.arange(max(ny, 0)))
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


def fill_polygon(region, spacing, material, material_index=0):
    """Fill ``region`` with lattice particles of the given material."""
    if not spacing > 0:
        raise ConfigurationError(f"spacing must be positive, got {spacing!r}")
    if region.area < spacing * spacing:
        raise EmptyRegionError(
            f"region {region.label!r} area {region.area:.4g} m^2 is below spacing^2"
        )
    sites = lattice_sites(region.bounds, spacing)
    pos = sites[points_in_polygon(sites, region.array)]
    n = len(pos)
    if n == 0:
        raise EmptyRegionError(f"region {region.label!r} contains no lattice sites")
    vol = np.full(n, spacing * spacing * THICKNESS)
    return ParticleSet(
        position=pos,
        velocity=np.zeros((n, 2)),
        mass=material.rho0 * vol,
        volume=vol,
        density=np.full(n, float(material.rho0)),
        material=np.full(n, material_index, dtype=np.int64),
        region=np.zeros(n, dtype=np.int64),
        boundary=np.zeros(n, dtype=bool),
        spacing=float(spacing),
        materials=[material],
        labels=[region.label],
        region_bounds={region.label: region.bounds},
    )


def merge(sets):
    """Concatenate particle sets, unifying material and label tables."""
    if not sets:
        raise EmptyRegionError("no particle sets to merge")
    spacing = sets[0].spacing
    materials, labels, bounds = [], [], {}
    parts = {k: [] for k in ("position", "velocity", "mass", "volume", "density",
                             "material", "region", "boundary")}
    for s in sets:
        if s.spacing != spacing:
            raise ConfigurationError("cannot merge particle sets with different spacing")
        mat_map = []
        for m in s.materials:
            if m not in materials:
                materials.append(m)
            mat_map.append(materials.index(m))
        lab_map = []
        for lab in s.labels:
            if lab not in labels:
                labels.append(lab)
            lab_map.append(labels.index(lab))
        bounds.update(s.region_bounds)
        for k in parts:
            val = getattr(s, k)
            if k == "material":
                val = np.asarray(mat_map, dtype=np.int64)[val]
            elif k == "region":
                val = np.asarray(lab_map, dtype=np.int64)[val]
            parts[k].append(val)
    return ParticleSet(**{k: np.concatenate(v) for k, v in parts.items()},
                       spacing=spacing, materials=materials, labels=labels,
                       region_bounds=bounds)


def tag_boundary(particles, band, label="foundation", edges=("bottom",),
                 fallback="dam"):
    """Flag particles within ``band`` of the named edges of a region's bbox.

    Without a ``label`` region the bottom of ``fallback`` is used instead.
    Returns a new ParticleSet; the input is not modified.
    """
    if band < particles.spacing:
        raise ConfigurationError(
            f"boundary band {band} m is smaller than the particle spacing {particles.spacing} m"
        )
    out = particles.copy()
    if label not in out.labels:
        label, edges = fallback, ("bottom",)
        if label not in out.labels:
            raise ConfigurationError(f"no region {label!r} to attach boundary conditions to")
    mask = out.mask(label)
    xmin, ymin, xmax, ymax = out.region_bounds[label]
    x, y = out.position[:, 0], out.position[:, 1]
    dist = {
        "bottom": y - ymin,
        "top": ymax - y,
        "left": x - xmin,
        "right": xmax - x,
    }
    sel = np.zeros(len(out), dtype=bool)
    for e in edges:
        if e not in dist:
            raise ConfigurationError(f"unknown boundary edge {e!r}")
        sel |= dist[e] <= band * (1.0 + 1e-12)
    out.boundary = out.boundary | (sel & mask)
    return out
