import json
import math
import os
import tempfile

import numpy as np

from Core.errors import InvalidSpec, UnsupportedDimension
from Core.geometry import HalfspaceSpec, polytope_from_halfspaces
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2

logger = get_logger()


def read_json(path):
    """Load a JSON document. Undecodable content is a validation error; OSError propagates."""
    with open(path, "r") as f:
        text = f.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidSpec(f"{path}: malformed JSON ({e.msg} at line {e.lineno})") from e


def _clean(value):
    """JSON-safe copy: numpy scalars and arrays become Python values, NaN and inf become null."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.debug_at_level(DEBUG_L1, "SaveUtils", f"Wrote {path}")


def write_json(path, data):
    _atomic_write(path, json.dumps(_clean(data), sort_keys=True, indent=2) + "\n")


def write_jsonl(path, records):
    _atomic_write(path, "".join(json.dumps(_clean(r), sort_keys=True) + "\n" for r in records))


def write_obj(path, P):
    """Wavefront OBJ of a 3D polytope; each facet is fanned from its centroid."""
    if P.n != 3:
        raise UnsupportedDimension("OBJ export needs a 3D polytope")
    lines = [f"# {len(P.vertices)} vertices, {sum(f.active for f in P.facets)} facets"]
    lines += [f"v {x:.12g} {y:.12g} {z:.12g}" for x, y, z in P.vertices]
    count = len(P.vertices)
    faces = []
    for facet in P.facets:
        if not facet.active:
            continue
        on = np.flatnonzero(np.abs(P.vertices @ facet.normal - facet.offset) <= 1e-7 * max(1.0, abs(facet.offset)))
        if len(on) < 3:
            continue
        pts = P.vertices[on]
        centre = pts.mean(axis=0)
        # order the facet vertices counter-clockwise seen from outside
        e1 = pts[0] - centre
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(facet.normal, e1)
        order = on[np.argsort(np.arctan2((pts - centre) @ e2, (pts - centre) @ e1))]
        count += 1
        lines.append(f"v {centre[0]:.12g} {centre[1]:.12g} {centre[2]:.12g}")
        for a, b in zip(order, np.roll(order, -1)):
            faces.append(f"f {count} {a + 1} {b + 1}")
    _atomic_write(path, "\n".join(lines + faces) + "\n")
    logger.debug_at_level(DEBUG_L2, "SaveUtils", f"- OBJ with {len(faces)} triangles")


def save_field_npz(filepath, field):
    """
    Save an equilibrium potential into a compressed .npz file.

    Returns:
        bool: Success status
    """
    try:
        np.savez_compressed(
            filepath,
            values     = field.values,
            mask       = field.mask,
            spacing    = field.spacing,
            box_radius = field.box_radius,
            pexp       = field.pexp,
            energy     = field.energy,
            tail       = field.tail,
        )
        logger.debug_at_level(DEBUG_L1, "SaveUtils", f"Saved field to {filepath}")
        logger.debug_at_level(DEBUG_L2, "SaveUtils", f"- Values shape: {field.values.shape}")
        return True
    except (OSError, ValueError) as e:
        logger.error("SaveUtils", f"Error saving field to {filepath}: {e}")
        return False


# ─── Body schema ───

def body_from_dict(data):
    """{"n": int, "halfspaces": [{"dir": [...], "offset": f}, ...]} -> Polytope."""
    try:
        n = int(data["n"])
        dirs = np.array([hs["dir"] for hs in data["halfspaces"]], dtype=float)
        offsets = np.array([hs["offset"] for hs in data["halfspaces"]], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidSpec(f"malformed body: {e}") from e
    if dirs.ndim != 2 or dirs.shape[1] != n:
        raise InvalidSpec(f"halfspace directions do not have dimension {n}")
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms == 0):
        raise InvalidSpec("zero halfspace direction")
    correction = float(np.max(np.abs(norms - 1.0)))
    if correction > 1e-6:
        logger.warning("SaveUtils", f"normalizing halfspace directions (max correction {correction:.3g})")
        offsets = offsets / norms
        dirs = dirs / norms[:, None]
    return polytope_from_halfspaces(HalfspaceSpec(dirs, offsets))


def body_to_dict(P):
    return {"n": P.n, "halfspaces": [{"dir": d.tolist(), "offset": float(h)}
                                     for d, h in zip(P.directions, P.offsets)]}
