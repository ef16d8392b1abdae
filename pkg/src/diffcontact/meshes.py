"""Tetrahedral mesh generators and the minimal tet text format.

Every generator returns ``(nodes, tets)`` with positively oriented tets.
Prisms are split into three tets with the Dompierre rule so that shared
quadrilateral faces are cut consistently.
"""

from __future__ import annotations

import numpy as np

# vertex permutations of a prism (0,1,2 bottom; 3,4,5 top) bringing the
# chosen smallest index to position 0
_PRISM_PERM = {
    0: (0, 1, 2, 3, 4, 5),
    1: (1, 2, 0, 4, 5, 3),
    2: (2, 0, 1, 5, 3, 4),
    3: (3, 5, 4, 0, 2, 1),
    4: (4, 3, 5, 1, 0, 2),
    5: (5, 4, 3, 2, 1, 0),
}


def tet_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    x = nodes[tets]
    d = x[:, 1:] - x[:, :1]
    return np.linalg.det(d.transpose(0, 2, 1)) / 6.0


def orient(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
    neg = tet_volumes(nodes, tets) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


def split_prism(v: tuple[int, ...]) -> list[tuple[int, int, int, int]]:
    """Split prism ``v = (b0, b1, b2, t0, t1, t2)`` into three tets."""
    k = int(np.argmin(v))
    p = [v[i] for i in _PRISM_PERM[k]]
    if min(p[1], p[5]) < min(p[2], p[4]):
        return [(p[0], p[1], p[2], p[5]), (p[0], p[1], p[5], p[4]), (p[0], p[4], p[5], p[3])]
    return [(p[0], p[1], p[2], p[4]), (p[0], p[4], p[2], p[5]), (p[0], p[4], p[5], p[3])]


def box(size=(1.0, 1.0, 1.0), divisions=(1, 1, 1), center=(0.0, 0.0, 0.0)):
    """Axis-aligned box split into 6 tets per cell (Kuhn triangulation)."""
    size = np.asarray(size, float)
    nx, ny, nz = divisions
    xs = [np.linspace(-size[i] / 2, size[i] / 2, n + 1) for i, n in enumerate((nx, ny, nz))]
    grid = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, 3)
    nodes = grid + np.asarray(center, float)

    def idx(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    paths = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for path in paths:
                    cur = [i, j, k]
                    chain = [idx(*cur)]
                    for ax in path:
                        cur[ax] += 1
                        chain.append(idx(*cur))
                    tets.append(chain)
    return nodes, orient(nodes, tets)


def cube5(size: float = 1.0, center=(0.0, 0.0, 0.0)):
    """Single cube split into five tets (one central, four corners)."""
    h = size / 2.0
    nodes = np.array(
        [[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)], dtype=float
    ) + np.asarray(center, float)
    # index = 4*ix + 2*iy + iz
    tets = [(0, 3, 5, 6), (1, 0, 3, 5), (2, 0, 3, 6), (4, 0, 5, 6), (7, 3, 5, 6)]
    return nodes, orient(nodes, tets)


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    return v, f


def icosphere(radius: float = 1.0, center=(0.0, 0.0, 0.0), refine: int = 0):
    """Ball meshed as a center node fanned to an (optionally refined) icosahedron.

    ``refine=0`` gives 13 nodes and 20 tets.  ``refine=1`` subdivides the
    surface once and adds an inner shell at half radius, split into prisms.
    """
    v, faces = _icosahedron()
    if refine == 0:
        nodes = np.vstack([np.zeros((1, 3)), v * radius]) + np.asarray(center, float)
        tets = [(0, a + 1, b + 1, c + 1) for a, b, c in faces]
        return nodes, orient(nodes, tets)
    verts = [p for p in v]
    cache: dict[tuple[int, int], int] = {}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            m = verts[a] + verts[b]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    surf = np.array(verts)
    ns = len(surf)
    # node 0 center, 1..ns inner shell (r/2), ns+1..2ns outer shell
    nodes = np.vstack([np.zeros((1, 3)), 0.5 * radius * surf, radius * surf])
    nodes += np.asarray(center, float)
    tets = []
    for a, b, c in new_faces:
        tets.append((0, a + 1, b + 1, c + 1))
        tets += split_prism((a + 1, b + 1, c + 1, a + 1 + ns, b + 1 + ns, c + 1 + ns))
    return nodes, orient(nodes, tets)


def cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 8, layers: int = 1,
             center=(0.0, 0.0, 0.0), axis: int = 2):
    """Cylinder as a fan of triangular prisms around the axis."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    per = segments + 1
    nodes = []
    for L in range(layers + 1):
        z = -height / 2 + height * L / layers
        nodes.append([0.0, 0.0, z])
        nodes += [[x, y, z] for x, y in ring]
    nodes = np.array(nodes)
    tets = []
    for L in range(layers):
        b, t = L * per, (L + 1) * per
        for s in range(segments):
            i, j = 1 + s, 1 + (s + 1) % segments
            tets += split_prism((b, b + i, b + j, t, t + i, t + j))
    nodes = _to_axis(nodes, axis) + np.asarray(center, float)
    return nodes, orient(nodes, tets)


def torus(major: float = 1.0, minor: float = 0.3, segments: int = 8, sides: int = 4,
          center=(0.0, 0.0, 0.0), axis: int = 2):
    """Torus lattice: each tube section is a polygon fan; sections joined by prisms."""
    phi = 2 * np.pi * np.arange(segments) / segments
    psi = 2 * np.pi * np.arange(sides) / sides
    per = sides + 1
    nodes = []
    for a in phi:
        d = np.array([np.cos(a), np.sin(a), 0.0])
        nodes.append(major * d)
        for b in psi:
            nodes.append((major + minor * np.cos(b)) * d + np.array([0, 0, minor * np.sin(b)]))
    nodes = np.array(nodes)
    tets = []
    for s in range(segments):
        b, t = s * per, ((s + 1) % segments) * per
        for k in range(sides):
            i, j = 1 + k, 1 + (k + 1) % sides
            tets += split_prism((b, b + i, b + j, t, t + i, t + j))
    nodes = _to_axis(nodes, axis) + np.asarray(center, float)
    return nodes, orient(nodes, tets)


def _to_axis(nodes, axis):
    if axis == 2:
        return nodes
    if axis == 0:
        return nodes[:, [2, 0, 1]]
    return nodes[:, [1, 2, 0]]


def surface_nodes(tets: np.ndarray) -> np.ndarray:
    """Indices of nodes on boundary faces (faces owned by exactly one tet)."""
    faces = np.sort(
        np.concatenate([tets[:, [0, 1, 2]], tets[:, [0, 1, 3]], tets[:, [0, 2, 3]], tets[:, [1, 2, 3]]]),
        axis=1,
    )
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1])


def read_tet(text: str):
    nodes, tets = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v" and len(parts) == 4:
            nodes.append([float(x) for x in parts[1:]])
        elif parts[0] == "t" and len(parts) == 5:
            tets.append([int(x) for x in parts[1:]])
        else:
            raise ValueError(f"line {lineno}: cannot parse {line!r}")
    nodes = np.array(nodes, dtype=float).reshape(-1, 3)
    tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
    if tets.size and (tets.min() < 0 or tets.max() >= len(nodes)):
        raise ValueError("tet references a missing node")
    return nodes, tets


def write_tet(nodes, tets) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(nodes, float).tolist()]
    lines += [f"t {a} {b} {c} {d}" for a, b, c, d in np.asarray(tets, int).tolist()]
    return "\n".join(lines) + "\n"
