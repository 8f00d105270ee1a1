"""Image I/O, level-set initialization, synthetic scenarios, contour
extraction and quality metrics.

Images are grayscale float64 fields in [0, 1]. On disk they are 8-bit
binary PGM (P5) or grayscale PNG; loaders normalize by 255 and savers
invert that. File kind is detected from magic bytes, not the extension.
"""

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError

from .model import LandmarkSet

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


# ---------------------------------------------------------------------------
# image files


def _parse_pgm(data):
    # header: P5, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed, then a single whitespace byte before raster
    if data[:2] != b"P5":
        if data[:1] == b"P":
            raise ValueError(f"unsupported image format {data[:2]!r} (want P5)")
        raise ValueError("malformed PGM header")
    pos = 2
    tokens = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise ValueError("malformed PGM header: truncated")
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            tokens.append(int(data[start:pos]))
        else:
            raise ValueError(f"malformed PGM header near byte {pos}")
    width, height, maxval = tokens
    if maxval != 255:
        raise ValueError(f"unsupported bit depth: maxval {maxval} (want 255)")
    pos += 1  # single whitespace after maxval
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise ValueError("malformed PGM: raster shorter than header promises")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def decode_image(data):
    """Decode P5 PGM or grayscale PNG bytes into a float field in [0, 1]."""
    if data[:2] == b"P5" or data[:1] == b"P":
        raw = _parse_pgm(data)
    elif data[:8] == _PNG_MAGIC:
        try:
            with Image.open(io.BytesIO(data)) as img:
                if img.mode in ("I", "I;16", "I;16B"):
                    raise ValueError(f"unsupported bit depth: PNG mode {img.mode}")
                if img.mode != "L":
                    raise ValueError(f"unsupported image format: PNG mode {img.mode} (want grayscale)")
                raw = np.asarray(img, dtype=np.uint8)
        except UnidentifiedImageError as exc:
            raise ValueError("malformed PNG data") from exc
    else:
        raise ValueError("unsupported image format (want P5 PGM or grayscale PNG)")
    return raw.astype(np.float64) / 255.0


def load_image(path):
    """Read a P5 PGM or grayscale PNG into a float field in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return decode_image(data)
    except ValueError as exc:
        raise ValueError(f"{exc} [{path}]") from None


def save_image(f, path):
    """Write a [0, 1] field as 8-bit PGM or PNG, chosen by extension."""
    f = np.asarray(f, dtype=np.float64)
    raw = np.rint(np.clip(f, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = str(path)
    if path.endswith(".pgm"):
        h, w = raw.shape
        with open(path, "wb") as fh:
            fh.write(b"P5\n%d %d\n255\n" % (w, h))
            fh.write(raw.tobytes())
    elif path.endswith(".png"):
        Image.fromarray(raw, mode="L").save(path)
    else:
        raise ValueError(f"unsupported image extension for {path} (want .pgm or .png)")


# ---------------------------------------------------------------------------
# level-set initialization


def init_phi(spec, dims):
    """Signed-distance initialization, positive inside.

    spec is "circle:row,col,radius" or "box:r0,c0,r1,c1" (box corners
    inclusive). The zero level must cross the image.
    """
    m, n = dims
    ii, jj = np.meshgrid(np.arange(m, dtype=np.float64),
                         np.arange(n, dtype=np.float64), indexing="ij")
    kind, _, rest = str(spec).partition(":")
    try:
        args = [float(x) for x in rest.split(",")] if rest else []
    except ValueError:
        raise ValueError(f"bad init spec {spec!r}")
    if kind == "circle":
        if len(args) != 3:
            raise ValueError(f"circle init wants row,col,radius, got {spec!r}")
        r0, c0, radius = args
        if radius <= 0:
            raise ValueError(f"circle radius must be positive, got {radius}")
        phi = radius - np.sqrt((ii - r0) ** 2 + (jj - c0) ** 2)
    elif kind == "box":
        if len(args) != 4:
            raise ValueError(f"box init wants r0,c0,r1,c1, got {spec!r}")
        r0, c0, r1, c1 = args
        if r1 <= r0 or c1 <= c0:
            raise ValueError(f"degenerate box {spec!r}")
        qr = np.maximum(r0 - ii, ii - r1)
        qc = np.maximum(c0 - jj, jj - c1)
        outside = np.sqrt(np.maximum(qr, 0.0) ** 2 + np.maximum(qc, 0.0) ** 2)
        phi = -(outside + np.minimum(np.maximum(qr, qc), 0.0))
    else:
        raise ValueError(f"unknown init kind {kind!r} (want circle or box)")
    if not (phi.min() < 0 and phi.max() >= 0):
        raise ValueError(f"init {spec!r} does not cross the {m}x{n} image")
    return phi


# ---------------------------------------------------------------------------
# synthetic scenarios


@dataclass
class Scenario:
    name: str
    image: np.ndarray
    truth_mask: np.ndarray
    suggested_landmarks: LandmarkSet
    geometry: dict = field(default_factory=dict)


def _pick_stride(candidates, count):
    # floor(k*L/count) indexing: picks for smaller counts are subsets of
    # picks for 2x/4x larger counts, which keeps landmark studies nested
    length = len(candidates)
    if count >= length:
        return list(candidates)
    return [candidates[(k * length) // count] for k in range(count)]


def _disk(dims, rng, noise_sigma, n_landmarks):
    m, n = dims
    center = (m / 2.0, n / 2.0)
    radius = 0.3 * min(m, n)
    ii, jj = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    dist = np.sqrt((ii - center[0]) ** 2 + (jj - center[1]) ** 2)
    truth = (dist <= radius).astype(np.float64)
    geometry = {"center": list(center), "radius": radius}
    return truth, truth.copy(), [], geometry


def _broken_circle(dims, rng, noise_sigma, n_landmarks):
    m, n = dims
    center = (m / 2.0, n / 2.0)
    radius = 0.3125 * min(m, n)
    half_angle = math.pi / 6.0  # 60 degree occluded sector, centered east
    ii, jj = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    di, dj = ii - center[0], jj - center[1]
    dist = np.sqrt(di ** 2 + dj ** 2)
    angle = np.arctan2(di, dj)
    truth = (dist <= radius).astype(np.float64)
    occluded = (np.abs(angle) < half_angle) & (dist <= radius + 1.0)
    image = truth.copy()
    image[occluded] = 0.0
    band = np.abs(dist - radius) < 0.5
    cand = np.argwhere(band & (np.abs(angle) < half_angle))
    cand = sorted(map(tuple, cand), key=lambda rc: math.atan2(rc[0] - center[0], rc[1] - center[1]))
    points = _pick_stride(cand, 5 if n_landmarks is None else n_landmarks)
    geometry = {"center": list(center), "radius": radius,
                "occluded_half_angle": half_angle,
                "occluded_arc_length": 2.0 * half_angle * radius}
    return truth, image, points, geometry


def _point_segment_distance(pt, a, b):
    ap = (pt[0] - a[0], pt[1] - a[1])
    ab = (b[0] - a[0], b[1] - a[1])
    denom = ab[0] ** 2 + ab[1] ** 2
    t = max(0.0, min(1.0, (ap[0] * ab[0] + ap[1] * ab[1]) / denom))
    return math.hypot(ap[0] - t * ab[0], ap[1] - t * ab[1]), t


def _broken_triangle(dims, rng, noise_sigma, n_landmarks):
    m, n = dims
    apex = (0.2 * m, 0.5 * n)
    left = (0.78 * m, 0.2 * n)
    right = (0.78 * m, 0.8 * n)
    ii, jj = np.meshgrid(np.arange(m, dtype=np.float64),
                         np.arange(n, dtype=np.float64), indexing="ij")

    def half_plane(a, b):
        # >= 0 on the inner side for counterclockwise (apex, left, right)
        return (b[0] - a[0]) * (jj - a[1]) - (b[1] - a[1]) * (ii - a[0])

    s1, s2, s3 = half_plane(apex, left), half_plane(left, right), half_plane(right, apex)
    inside = ((s1 <= 0) & (s2 <= 0) & (s3 <= 0)) | ((s1 >= 0) & (s2 >= 0) & (s3 >= 0))
    truth = inside.astype(np.float64)
    occ_radius = 0.22 * min(m, n)
    occluded = (ii - apex[0]) ** 2 + (jj - apex[1]) ** 2 <= occ_radius ** 2
    image = truth.copy()
    image[occluded] = 0.0

    edges = [(apex, left), (apex, right), (left, right)]
    cand = []
    rows, cols = np.nonzero(occluded)
    for r, c in zip(rows.tolist(), cols.tolist()):
        best = min(range(3), key=lambda k: _point_segment_distance((r, c), *edges[k])[0])
        d, t = _point_segment_distance((r, c), *edges[best])
        if d < 0.5 and best < 2:
            # parameter runs along edge apex->left (negative) then
            # apex->right (positive), so sorting walks through the apex
            arclen = t * math.dist(*edges[best])
            cand.append((-arclen if best == 0 else arclen, (r, c)))
    cand.sort()
    points = _pick_stride([rc for _, rc in cand], 8 if n_landmarks is None else n_landmarks)
    geometry = {"apex": list(apex), "left": list(left), "right": list(right),
                "occlusion_radius": occ_radius}
    return truth, image, points, geometry


def _broken_letters(dims, rng, noise_sigma, n_landmarks):
    m, n = dims
    truth = np.zeros((m, n))
    top, bottom = round(0.3 * m), round(0.7 * m)
    slot = n / 4.0
    t = max(2, round(0.05 * n))

    def bar(r0, r1, c0, c1):
        truth[max(r0, 0):r1, max(c0, 0):c1] = 1.0

    gaps = []
    for k, letter in enumerate(("U", "C", "L", "A")):
        c0 = round(k * slot + 0.15 * slot)
        c1 = round((k + 1) * slot - 0.15 * slot)
        if letter == "U":
            bar(top, bottom, c0, c0 + t)
            bar(top, bottom, c1 - t, c1)
            bar(bottom - t, bottom, c0, c1)
            gaps.append((top + (bottom - top) // 2, c0 - 1, t + 2))
        elif letter == "C":
            bar(top, bottom, c0, c0 + t)
            bar(top, top + t, c0, c1)
            bar(bottom - t, bottom, c0, c1)
            gaps.append((top - 1, c0 + (c1 - c0) // 2, t + 2))
        elif letter == "L":
            bar(top, bottom, c0, c0 + t)
            bar(bottom - t, bottom, c0, c1)
            gaps.append((bottom - 1, c0 + (c1 - c0) // 2, t + 2))
        else:
            bar(top, bottom, c0, c0 + t)
            bar(top, bottom, c1 - t, c1)
            bar(top, top + t, c0, c1)
            mid = top + (bottom - top) // 2
            bar(mid, mid + t, c0, c1)
            gaps.append((mid + t // 2, c1 - 1, t + 2))

    image = truth.copy()
    gap_rects = []
    for gr, gc, half in gaps:
        r0, r1 = max(gr - half, 0), min(gr + half + 1, m)
        c0, c1 = max(gc - half, 0), min(gc + half + 1, n)
        image[r0:r1, c0:c1] = 0.0
        gap_rects.append([r0, c0, r1, c1])

    # boundary pixels of truth: foreground with a 4-neighbor background
    pad = np.pad(truth, 1, mode="constant")
    nb_min = np.minimum(np.minimum(pad[:-2, 1:-1], pad[2:, 1:-1]),
                        np.minimum(pad[1:-1, :-2], pad[1:-1, 2:]))
    boundary = (truth > 0) & (nb_min == 0)
    points = []
    for r0, c0, r1, c1 in gap_rects:
        local = np.argwhere(boundary[r0:r1, c0:c1])
        if len(local):
            mid = local[len(local) // 2]
            points.append((int(mid[0]) + r0, int(mid[1]) + c0))
    if n_landmarks is not None:
        points = _pick_stride(points, n_landmarks)
    geometry = {"gap_rects": gap_rects}
    return truth, image, points, geometry


_SCENARIOS = {
    "disk": _disk,
    "broken_circle": _broken_circle,
    "broken_triangle": _broken_triangle,
    "broken_letters": _broken_letters,
}


def synth_scenario(name, dims, noise_sigma=0.0, seed=0, n_landmarks=None) -> Scenario:
    """Deterministic synthetic test image with ground truth and suggested
    landmarks on the occluded part of the true boundary.

    Same arguments give identical scenarios; noise is the only stochastic
    ingredient and is drawn from a generator seeded with `seed`.
    """
    if name not in _SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}, expected one of {sorted(_SCENARIOS)}")
    m, n = dims
    if m < 16 or n < 16:
        raise ValueError(f"dims {dims} too small for scenario synthesis")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    truth, image, points, geometry = _SCENARIOS[name]((m, n), rng, noise_sigma, n_landmarks)
    if noise_sigma > 0:
        image = np.clip(image + rng.normal(0.0, noise_sigma, (m, n)), 0.0, 1.0)
    return Scenario(name=name, image=image, truth_mask=truth,
                    suggested_landmarks=LandmarkSet(points=points),
                    geometry=geometry)


# ---------------------------------------------------------------------------
# contours


@dataclass
class Contour:
    """Sub-pixel zero-level polylines in (row, col) coordinates."""

    polylines: list = field(default_factory=list)
    closed: list = field(default_factory=list)


def extract_contour(phi) -> Contour:
    """Marching squares on the phi >= 0 region with linear interpolation.

    Ambiguous saddle cells (both diagonals alternating) are split by the
    sign of the cell average: a nonnegative average connects the inside
    diagonal. Each crossing lies on a unique grid edge, so polylines are
    stitched by shared edge identity; a polyline is closed when the walk
    returns to its first edge.
    """
    phi = np.asarray(phi, dtype=np.float64)
    m, n = phi.shape
    inside = phi >= 0

    def crossing(a, b):
        # zero of the linear interpolant between nodes a and b
        fa, fb = phi[a], phi[b]
        t = fa / (fa - fb)
        return (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))

    points = {}

    def edge_point(eid):
        if eid not in points:
            kind, i, j = eid
            other = (i, j + 1) if kind == "h" else (i + 1, j)
            points[eid] = crossing((i, j), other)
        return points[eid]

    adjacency = {}

    def add_segment(e1, e2):
        edge_point(e1)
        edge_point(e2)
        adjacency.setdefault(e1, []).append(e2)
        adjacency.setdefault(e2, []).append(e1)

    for i in range(m - 1):
        for j in range(n - 1):
            s00, s01 = inside[i, j], inside[i, j + 1]
            s10, s11 = inside[i + 1, j], inside[i + 1, j + 1]
            top, bottom = ("h", i, j), ("h", i + 1, j)
            left, right = ("v", i, j), ("v", i, j + 1)
            crossed = []
            if s00 != s01:
                crossed.append(top)
            if s01 != s11:
                crossed.append(right)
            if s10 != s11:
                crossed.append(bottom)
            if s00 != s10:
                crossed.append(left)
            if len(crossed) == 2:
                add_segment(*crossed)
            elif len(crossed) == 4:
                avg = 0.25 * (phi[i, j] + phi[i, j + 1] + phi[i + 1, j] + phi[i + 1, j + 1])
                hug_outside = (avg >= 0) == bool(s00)
                if hug_outside:
                    add_segment(top, right)
                    add_segment(left, bottom)
                else:
                    add_segment(top, left)
                    add_segment(bottom, right)

    visited = set()

    def walk(start):
        path = [start]
        visited.add(start)
        while True:
            nxt = [e for e in adjacency[path[-1]] if e not in visited]
            if not nxt:
                break
            nxt.sort()
            path.append(nxt[0])
            visited.add(nxt[0])
        return path

    contour = Contour()
    open_ends = sorted(e for e, nbs in adjacency.items() if len(nbs) == 1)
    for e in open_ends:
        if e in visited:
            continue
        path = walk(e)
        contour.polylines.append(np.array([edge_point(x) for x in path]))
        contour.closed.append(False)
    for e in sorted(adjacency):
        if e in visited:
            continue
        path = walk(e)
        closed = path[0] in adjacency[path[-1]]
        contour.polylines.append(np.array([edge_point(x) for x in path]))
        contour.closed.append(closed)
    return contour


def contour_to_json(contour: Contour) -> dict:
    return {
        "polylines": [[[float(r), float(c)] for r, c in poly] for poly in contour.polylines],
        "closed": [bool(c) for c in contour.closed],
    }


def save_contour(contour: Contour, path):
    with open(path, "w") as fh:
        json.dump(contour_to_json(contour), fh, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# masks and metrics


def mask_from_phi(phi) -> np.ndarray:
    """Binary mask of the nonnegative side of phi (threshold is
    eps-independent for the arctan mollifier)."""
    return (np.asarray(phi) >= 0).astype(np.float64)


def dice(mask_a, mask_b) -> float:
    """Overlap score 2|A.B| / (|A|+|B|); 1.0 when both masks are empty."""
    a = np.asarray(mask_a) > 0
    b = np.asarray(mask_b) > 0
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def hausdorff(contour_a: Contour, contour_b: Contour) -> float:
    """Symmetric vertex-based Hausdorff distance between two contours."""
    va = np.concatenate(contour_a.polylines) if contour_a.polylines else np.empty((0, 2))
    vb = np.concatenate(contour_b.polylines) if contour_b.polylines else np.empty((0, 2))
    if len(va) == 0 and len(vb) == 0:
        return 0.0
    if len(va) == 0 or len(vb) == 0:
        return float("inf")
    d2 = ((va[:, None, :] - vb[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(max(d2.min(axis=1).max(), d2.min(axis=0).max())))


# ---------------------------------------------------------------------------
# landmarks on disk


def load_landmarks(path) -> LandmarkSet:
    """Landmark JSON: an array of {"row": int, "col": int} objects."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError(f"landmark file {path} must hold a JSON array")
    points = []
    for entry in data:
        try:
            points.append((int(entry["row"]), int(entry["col"])))
        except (TypeError, KeyError) as exc:
            raise ValueError(f"bad landmark entry {entry!r} in {path}") from exc
    return LandmarkSet(points=points)


def save_landmarks(landmarks: LandmarkSet, path):
    with open(path, "w") as fh:
        json.dump([{"row": r, "col": c} for r, c in landmarks.points],
                  fh, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# overlay and trace


def overlay_image(image, contour: Contour, landmarks: LandmarkSet):
    """RGB image with the contour burned in red and landmarks as green
    crosses. With nothing to draw, pixels equal the input image."""
    raw = np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    img = Image.fromarray(raw, mode="L").convert("RGB")
    draw = ImageDraw.Draw(img)
    for poly, closed in zip(contour.polylines, contour.closed):
        xy = [(float(c), float(r)) for r, c in poly]
        if closed and len(xy) > 2:
            xy.append(xy[0])
        if len(xy) >= 2:
            draw.line(xy, fill=(255, 0, 0), width=1)
        elif xy:
            draw.point(xy, fill=(255, 0, 0))
    m, n = raw.shape
    px = img.load()
    for r, c in landmarks.points:
        for dr, dc in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < m and 0 <= cc < n:
                px[cc, rr] = (0, 255, 0)
    return img


def render_overlay(image, contour: Contour, landmarks: LandmarkSet, path):
    """Write overlay_image as a PNG file."""
    overlay_image(image, contour, landmarks).save(path, format="PNG")


TRACE_HEADER = "iter,T1,T2,T3,T4,Phi,Sigma,energy"


def trace_csv(report) -> str:
    """Convergence trace as CSV text; floats keep full round-trip precision."""
    lines = [TRACE_HEADER]
    for k in range(report.iterations):
        row = [str(k + 1)] + [repr(float(v)) for v in
                              (report.t1[k], report.t2[k], report.t3[k], report.t4[k],
                               report.phi_change[k], report.sigma[k], report.energy[k])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def export_trace(report, path):
    """Write the convergence trace as a CSV file."""
    with open(path, "w", newline="") as fh:
        fh.write(trace_csv(report))
