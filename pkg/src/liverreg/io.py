"""Plain-text file formats.

All writers emit the shortest decimal that round-trips a 64-bit float, so
``load(save(x)) == x`` exactly and identical inputs give identical bytes.

Formats
-------
point cloud      ASCII PLY, ``element vertex N`` with double x y z
landmark curves  blocks of ``curve <kind> <n> [forward|reversed]`` then n lines
features         ``dim <d>`` then one vector per line
overlap scores   ``scores <n>`` then ``score uncertainty`` per line
mask             binary PGM (P5), 0 background, 255 foreground
pose             R row-major on three lines, then t on a fourth line
correspondences  ``pairs <M>`` then ``i3d i2d X Y Z u v sim`` per line
deformation      ``displacements <N>`` then ``dx dy dz`` per line
trace            header ``step L_s L_cre L_iso L_def`` then one row per step
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from liverreg.correspondence import CorrespondenceSet, OverlapScores
from liverreg.errors import InvariantViolation, IoFailure, ParseError, RegistrationError
from liverreg.geom import RigidPose, as_points
from liverreg.pseudolabels import LandmarkCurve


def fmt(x) -> str:
    """Shortest round-trip decimal; integral values drop the trailing '.0'."""
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def _row(values) -> str:
    return " ".join(fmt(v) for v in values)


def _write(path, text: str):
    try:
        Path(path).write_text(text, encoding="ascii")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_lines(path):
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ParseError(path, 1, "file is not ASCII text") from exc
    return text.splitlines()


def _content(path):
    """Yield (line_number, tokens) for non-blank, non-comment lines."""
    for no, line in enumerate(_read_lines(path), start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            yield no, stripped.split()


def _floats(path, no, tokens, count=None):
    if count is not None and len(tokens) != count:
        raise ParseError(path, no, f"expected {count} numbers, got {len(tokens)}")
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(path, no, f"not a number: {exc}") from exc


def _header_count(path, it, keyword):
    try:
        no, tok = next(it)
    except StopIteration:
        raise ParseError(path, 1, f"missing '{keyword} <n>' header") from None
    if len(tok) != 2 or tok[0] != keyword:
        raise ParseError(path, no, f"expected '{keyword} <n>' header")
    try:
        n = int(tok[1])
    except ValueError:
        raise ParseError(path, no, f"bad count {tok[1]!r}") from None
    if n < 0:
        raise ParseError(path, no, "negative count")
    return n


def _expect_end(path, it):
    for no, _ in it:
        raise ParseError(path, no, "unexpected trailing data")


# -- point clouds ---------------------------------------------------------------


def save_cloud(points, path):
    P = as_points(points)
    lines = ["ply", "format ascii 1.0", f"element vertex {P.shape[0]}",
             "property double x", "property double y", "property double z", "end_header"]
    lines += [_row(p) for p in P]
    _write(path, "\n".join(lines) + "\n")


def load_cloud(path) -> np.ndarray:
    lines = _read_lines(path)
    if not lines or lines[0].strip() != "ply":
        raise ParseError(path, 1, "missing 'ply' magic")
    n = None
    props = []
    body = None
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if tok[1:2] != ["ascii"]:
                raise ParseError(path, i, "only ASCII PLY is supported")
        elif tok[0] == "element":
            if len(tok) != 3 or tok[1] != "vertex":
                raise ParseError(path, i, "only a single vertex element is supported")
            try:
                n = int(tok[2])
            except ValueError:
                raise ParseError(path, i, f"bad vertex count {tok[2]!r}") from None
        elif tok[0] == "property":
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body = i
            break
        else:
            raise ParseError(path, i, f"unexpected header line {line!r}")
    if body is None or n is None:
        raise ParseError(path, len(lines), "incomplete PLY header")
    if props != ["x", "y", "z"]:
        raise ParseError(path, body, f"expected properties x y z, got {props}")
    rows = []
    for i in range(body, len(lines)):
        tok = lines[i].split()
        if not tok:
            continue
        if len(rows) == n:
            raise ParseError(path, i + 1, "more vertices than declared")
        rows.append(_floats(path, i + 1, tok, 3))
    if len(rows) != n:
        raise ParseError(path, len(lines), f"expected {n} vertices, found {len(rows)}")
    P = np.array(rows, dtype=float).reshape(-1, 3)
    bad = np.flatnonzero(~np.all(np.isfinite(P), axis=1))
    if bad.size:
        raise InvariantViolation("PointCloud", f"non-finite coordinate at index {bad[0]}")
    return as_points(P)


# -- curves ---------------------------------------------------------------------


def save_curves(curves, path):
    lines = []
    for c in curves:
        head = f"curve {c.kind} {len(c)}"
        if c.orientation is not None:
            head += f" {c.orientation}"
        lines.append(head)
        lines += [_row(p) for p in c.points]
    _write(path, "\n".join(lines) + "\n" if lines else "")


def load_curves(path) -> list:
    it = _content(path)
    curves = []
    for no, tok in it:
        if tok[0] != "curve" or len(tok) not in (3, 4):
            raise ParseError(path, no, "expected 'curve <kind> <n> [orientation]'")
        kind = tok[1]
        try:
            n = int(tok[2])
        except ValueError:
            raise ParseError(path, no, f"bad point count {tok[2]!r}") from None
        orientation = tok[3] if len(tok) == 4 else None
        pts, dim = [], None
        for _ in range(n):
            try:
                pno, ptok = next(it)
            except StopIteration:
                raise ParseError(path, no, f"curve declares {n} points but the file ends") from None
            if dim is None:
                dim = len(ptok)
                if dim not in (2, 3):
                    raise ParseError(path, pno, "curve points need 2 or 3 coordinates")
            pts.append(_floats(path, pno, ptok, dim))
        try:
            curves.append(LandmarkCurve(kind, np.array(pts).reshape(n, dim or 2), orientation))
        except InvariantViolation as exc:
            raise ParseError(path, no, str(exc)) from exc
    return curves


# -- features and scores --------------------------------------------------------


def save_features(features, path):
    F = np.asarray(features, dtype=float)
    lines = [f"dim {F.shape[1]}"] + [_row(f) for f in F]
    _write(path, "\n".join(lines) + "\n")


def load_features(path) -> np.ndarray:
    it = _content(path)
    d = _header_count(path, it, "dim")
    if d < 1:
        raise ParseError(path, 1, "dimension must be >= 1")
    rows = []
    for no, tok in it:
        if len(tok) != d:
            raise ParseError(path, no, f"vector has {len(tok)} entries, expected {d}")
        rows.append(_floats(path, no, tok))
    F = np.array(rows, dtype=float).reshape(-1, d)
    if not np.all(np.isfinite(F)):
        raise InvariantViolation("FeatureSet", "non-finite embedding entry")
    zero = np.flatnonzero(np.linalg.norm(F, axis=1) == 0)
    if zero.size:
        raise InvariantViolation("FeatureSet", f"zero-norm vector at index {zero[0]}")
    return F


def save_scores(scores: OverlapScores, path):
    lines = [f"scores {len(scores)}"] + [_row(r) for r in zip(scores.score, scores.uncertainty)]
    _write(path, "\n".join(lines) + "\n")


def load_scores(path) -> OverlapScores:
    it = _content(path)
    n = _header_count(path, it, "scores")
    rows = [_floats(path, no, tok, 2) for no, tok in it]
    if len(rows) != n:
        raise ParseError(path, n + 1, f"expected {n} rows, found {len(rows)}")
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    try:
        return OverlapScores(arr[:, 0], arr[:, 1])
    except RegistrationError as exc:
        raise InvariantViolation("OverlapScores", str(exc)) from exc


# -- masks ----------------------------------------------------------------------


def save_mask(mask, path):
    m = np.asarray(mask)
    img = np.where(m.astype(bool), 255, 0).astype(np.uint8) if m.dtype == bool or m.max(initial=0) <= 1 else m.astype(np.uint8)
    save_pgm(img, path)


def save_pgm(image, path):
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    try:
        with open(path, "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            f.write(img.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_pgm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(path, 1, "truncated PGM header")
        fields.append(data[start:pos].decode("ascii", "replace"))
    if fields[0] != "P5":
        raise ParseError(path, 1, f"expected binary PGM magic P5, got {fields[0]!r}")
    try:
        w, h, maxval = (int(v) for v in fields[1:])
    except ValueError:
        raise ParseError(path, 1, "bad PGM size or maxval") from None
    if maxval != 255:
        raise ParseError(path, 1, "only 8-bit PGM (maxval 255) is supported")
    pos += 1
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise ParseError(path, 1, f"expected {w * h} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def load_mask(path) -> np.ndarray:
    img = load_pgm(path)
    bad = np.flatnonzero((img != 0) & (img != 255))
    if bad.size:
        raise InvariantViolation("mask", f"pixel {bad[0]} is neither 0 nor 255")
    return img == 255


# -- poses, correspondences, deformations ---------------------------------------


def save_pose(pose: RigidPose, path):
    lines = [_row(r) for r in pose.R] + [_row(pose.t)]
    _write(path, "\n".join(lines) + "\n")


def load_pose(path) -> RigidPose:
    vals = []
    last = 1
    for no, tok in _content(path):
        vals += _floats(path, no, tok)
        last = no
    if len(vals) != 12:
        raise ParseError(path, last, f"pose needs 12 numbers, found {len(vals)}")
    return RigidPose(np.array(vals[:9]).reshape(3, 3), np.array(vals[9:]))


def save_correspondences(cs: CorrespondenceSet, path):
    lines = [f"pairs {len(cs)}"]
    for k in range(len(cs)):
        lines.append(" ".join([str(int(cs.index3d[k])), str(int(cs.index2d[k])),
                               _row(cs.points3d[k]), _row(cs.pixels[k]), fmt(cs.similarity[k])]))
    _write(path, "\n".join(lines) + "\n")


def load_correspondences(path) -> CorrespondenceSet:
    it = _content(path)
    m = _header_count(path, it, "pairs")
    i3, i2, X, x, s = [], [], [], [], []
    for no, tok in it:
        if len(tok) != 8:
            raise ParseError(path, no, f"expected 8 fields, got {len(tok)}")
        try:
            i3.append(int(tok[0]))
            i2.append(int(tok[1]))
        except ValueError:
            raise ParseError(path, no, "indices must be integers") from None
        v = _floats(path, no, tok[2:])
        X.append(v[:3])
        x.append(v[3:5])
        s.append(v[5])
    if len(i3) != m:
        raise ParseError(path, m + 1, f"expected {m} pairs, found {len(i3)}")
    return CorrespondenceSet(i3, i2, np.array(X).reshape(-1, 3), np.array(x).reshape(-1, 2), s)


def save_deformation(displacements, path):
    D = np.asarray(displacements, dtype=float).reshape(-1, 3)
    lines = [f"displacements {D.shape[0]}"] + [_row(d) for d in D]
    _write(path, "\n".join(lines) + "\n")


def load_deformation(path) -> np.ndarray:
    it = _content(path)
    n = _header_count(path, it, "displacements")
    rows = [_floats(path, no, tok, 3) for no, tok in it]
    if len(rows) != n:
        raise ParseError(path, n + 1, f"expected {n} rows, found {len(rows)}")
    D = np.array(rows, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(D)):
        raise InvariantViolation("DeformationField", "non-finite displacement")
    return D


def save_trace(trace, path):
    lines = ["step L_s L_cre L_iso L_def"]
    lines += [f"{int(r[0])} " + _row(r[1:]) for r in trace]
    _write(path, "\n".join(lines) + "\n")


def load_trace(path) -> list:
    lines = _read_lines(path)
    if not lines or lines[0].split() != ["step", "L_s", "L_cre", "L_iso", "L_def"]:
        raise ParseError(path, 1, "missing trace header")
    out = []
    for no, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        v = _floats(path, no, tok, 5)
        out.append((int(v[0]), *v[1:]))
    return out
