"""Versioned text formats for states, toppling counts, profiles, fields and patterns.

Every format starts with ``<TAG> v1`` and ends with ``END``.  Decoders read
the whole text before building anything, so a malformed file never yields a
partial object.  Errors name the offending line (1-based).
"""

from __future__ import annotations

from collections import Counter
from typing import Sequence

import numpy as np

from .engine import Domain, SandpileState, TopplingFunction
from .errors import ParseError, ValidationError
from .lattice import Box, IntField, MinAffine, identity_graph, kernel_quotient
from .patterns import PatternSpec, SolitonProfile, quotient_laplacian

VERSION = "v1"
STATE_TAG = "SANDPILE"
TOPPLING_TAG = "TOPPLING"
DOMAIN_TAG = "DOMAIN"
PROFILE_TAG = "SOLITON"
FIELD_TAG = "FIELD"
PATTERN_TAG = "PATTERN"


class _Lines:
    """Cursor over non-empty lines, keeping 1-based line numbers."""

    def __init__(self, text: str):
        if isinstance(text, bytes):
            text = text.decode("utf-8")
        self.items = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines()) if ln.strip()]
        self.pos = 0

    def peek(self):
        return self.items[self.pos] if self.pos < len(self.items) else (None, None)

    def next(self, what: str):
        if self.pos >= len(self.items):
            last = self.items[-1][0] if self.items else 0
            raise ParseError(f"unexpected end of input, expected {what}", last + 1)
        item = self.items[self.pos]
        self.pos += 1
        return item

    def keyword(self, key: str, count: int | None = None) -> tuple[int, list[int]]:
        ln, text = self.next(f"'{key}'")
        parts = text.split()
        if parts[0] != key:
            raise ParseError(f"expected '{key}', found '{parts[0]}'", ln)
        vals = _ints(parts[1:], ln)
        if count is not None and len(vals) != count:
            raise ParseError(f"'{key}' needs {count} integers, got {len(vals)}", ln)
        return ln, vals

    def header(self, tag: str):
        ln, text = self.next("format header")
        parts = text.split()
        if len(parts) != 2 or parts[0] != tag:
            raise ParseError(f"expected header '{tag} {VERSION}'", ln)
        if parts[1] != VERSION:
            raise ParseError(f"unsupported version '{parts[1]}'", ln)

    def end(self):
        ln, text = self.next("'END'")
        if text != "END":
            raise ParseError(f"expected 'END', found '{text}'", ln)
        if self.pos != len(self.items):
            raise ParseError("content after 'END'", self.items[self.pos][0])


def _ints(tokens, ln) -> list[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-integer token in {' '.join(tokens)!r}", ln) from None


def _fmt(vals) -> str:
    return " ".join(str(int(v)) for v in vals)


# ---------------------------------------------------------------------------
# domains, states and toppling counts


def _domain_lines(domain: Domain) -> list[str]:
    out = [f"n {domain.n}", f"min {_fmt(domain.box.lo)}", f"max {_fmt(domain.box.hi)}"]
    out += [f"halfspace {_fmt(a)} {b}" for a, b in domain.halfspaces]
    return out


def _read_domain(cur: _Lines) -> Domain:
    ln, (n,) = cur.keyword("n", 1)
    if n < 1:
        raise ParseError("dimension must be positive", ln)
    _, lo = cur.keyword("min", n)
    ln, hi = cur.keyword("max", n)
    if any(h < l for l, h in zip(lo, hi)):
        raise ParseError("box max is below min", ln)
    hs = []
    while cur.peek()[1] is not None and cur.peek()[1].startswith("halfspace"):
        ln, vals = cur.keyword("halfspace", n + 1)
        hs.append((tuple(vals[:n]), vals[n]))
    try:
        return Domain(n, Box(tuple(lo), tuple(hi)), tuple(hs))
    except ValidationError as exc:
        raise ParseError(str(exc), ln) from None


def default_height(domain: Domain, values: np.ndarray) -> int:
    """Most common value over the domain, smallest on ties."""
    counts = Counter(values[domain.mask].tolist())
    return min(counts, key=lambda v: (-counts[v], v))


def _encode_grid(tag: str, domain: Domain, values: np.ndarray, default: int | None) -> str:
    if default is None:
        default = default_height(domain, values)
    mask = domain.mask & (values != default)
    idx = np.argwhere(mask)  # C order is lexicographic in coordinates
    lo = np.array(domain.box.lo)
    lines = [f"{tag} {VERSION}", *_domain_lines(domain), f"default {default}", f"cells {len(idx)}"]
    lines += [f"{_fmt(i + lo)} {values[tuple(i)]}" for i in idx]
    lines.append("END")
    return "\n".join(lines) + "\n"


def _decode_grid(tag: str, text: str) -> tuple[Domain, np.ndarray]:
    cur = _Lines(text)
    cur.header(tag)
    domain = _read_domain(cur)
    _, (default,) = cur.keyword("default", 1)
    ln, (count,) = cur.keyword("cells", 1)
    if count < 0:
        raise ParseError("negative cell count", ln)
    if default < 0:
        raise ParseError("negative default height", ln)
    values = np.where(domain.mask, default, 0).astype(np.int64)
    seen = set()
    n = domain.n
    for _ in range(count):
        ln, line = cur.next("cell record")
        if line == "END":
            raise ParseError(f"expected {count} cell records, found {len(seen)}", ln)
        vals = _ints(line.split(), ln)
        if len(vals) != n + 1:
            raise ParseError(f"cell record needs {n + 1} integers", ln)
        z, h = tuple(vals[:n]), vals[n]
        if not domain.contains(z):
            raise ParseError(f"cell {z} is outside the domain", ln)
        if h < 0:
            raise ParseError(f"negative height {h}", ln)
        if z in seen:
            raise ParseError(f"duplicate cell {z}", ln)
        seen.add(z)
        values[domain.box.index(z)] = h
    ln, line = cur.peek()
    if line is not None and line != "END":
        raise ParseError(f"more than {count} cell records", ln)
    cur.end()
    return domain, values


def encode_state(state: SandpileState, default: int | None = None) -> str:
    return _encode_grid(STATE_TAG, state.domain, state.heights, default)


def decode_state(text: str) -> SandpileState:
    domain, values = _decode_grid(STATE_TAG, text)
    return SandpileState(domain, values)


def encode_toppling(H: TopplingFunction) -> str:
    return _encode_grid(TOPPLING_TAG, H.domain, H.counts, 0)


def decode_toppling(text: str) -> TopplingFunction:
    domain, values = _decode_grid(TOPPLING_TAG, text)
    return TopplingFunction(domain, values)


def encode_domain(domain: Domain) -> str:
    return "\n".join([f"{DOMAIN_TAG} {VERSION}", *_domain_lines(domain), "END"]) + "\n"


def decode_domain(text: str) -> Domain:
    """Reads a DOMAIN file, or the domain header of a state file."""
    cur = _Lines(text)
    first = cur.peek()[1] or ""
    if first.startswith(STATE_TAG):
        return decode_state(text).domain
    cur.header(DOMAIN_TAG)
    domain = _read_domain(cur)
    cur.end()
    return domain


# ---------------------------------------------------------------------------
# soliton profiles


def encode_profile(profile: SolitonProfile) -> str:
    lines = [f"{PROFILE_TAG} {VERSION}", f"n {profile.n}", f"p {_fmt(profile.p)}",
             f"N {profile.N}", f"range {profile.t_min} {profile.t_max}",
             f"g {_fmt(profile.g)}", f"phi {_fmt(profile.phi)}", "END"]
    return "\n".join(lines) + "\n"


def decode_profile(text: str) -> SolitonProfile:
    cur = _Lines(text)
    cur.header(PROFILE_TAG)
    _, (n,) = cur.keyword("n", 1)
    ln, p = cur.keyword("p", n)
    if not any(p):
        raise ParseError("direction must be nonzero", ln)
    _, (N,) = cur.keyword("N", 1)
    ln, (t0, t1) = cur.keyword("range", 2)
    if t1 < t0:
        raise ParseError("empty t range", ln)
    size = t1 - t0 + 1
    ln_g, g = cur.keyword("g", size)
    ln_phi, phi = cur.keyword("phi", size)
    cur.end()
    try:
        profile = SolitonProfile(tuple(p), n, t0, t1, np.array(g, dtype=np.int64), N,
                                 np.array(phi, dtype=np.int64))
        field = profile.field
    except ValidationError as exc:
        raise ParseError(str(exc), ln_g) from None
    ts = np.arange(t0, t1 + 1)
    expect = 2 * n - 1 + quotient_laplacian(profile.graph, field.evaluate, ts[:, None])
    bad = np.flatnonzero(expect != profile.phi)
    if len(bad):
        raise ParseError(f"phi disagrees with 2n-1+Laplacian(g) at t={t0 + int(bad[0])}", ln_phi)
    return profile


# ---------------------------------------------------------------------------
# fields on quotients of a min-affine reference


def field_graph(forms: Sequence[tuple[Sequence[int], int]], n: int):
    slopes = [tuple(s) for s, _ in forms]
    diffs = [tuple(a - b for a, b in zip(s, slopes[0])) for s in slopes[1:]]
    diffs = [d for d in diffs if any(d)]
    return kernel_quotient(diffs) if diffs else identity_graph(n)


def quotient_reference(forms, n: int):
    """Graph and quotient-coordinate MinAffine for ``min_j (s_j . z + c_j)`` on ``Z^n``.

    The first form is subtracted so the rest descends to the quotient.
    """
    graph = field_graph(forms, n)
    s0, c0 = forms[0]
    q_forms = tuple((graph.descend_slope(tuple(a - b for a, b in zip(s, s0))), c - c0)
                    for s, c in forms)
    return graph, MinAffine(q_forms)


def encode_field(forms, field: IntField) -> str:
    """FIELD file: the Z^n forms, then the normalized quotient table."""
    n = field.graph.n
    lines = [f"{FIELD_TAG} {VERSION}", f"n {n}"]
    lines += [f"form {_fmt(s)} {c}" for s, c in forms]
    lines += [f"min {_fmt(field.box.lo)}", f"max {_fmt(field.box.hi)}"]
    rows = field.values.reshape(-1, field.values.shape[-1])
    lines.append(f"values {rows.shape[0]}")
    lines += [_fmt(r) for r in rows]
    lines.append("END")
    return "\n".join(lines) + "\n"


def decode_field(text: str):
    """Returns ``(forms, IntField)``; without a values block the reference is tabulated."""
    cur = _Lines(text)
    cur.header(FIELD_TAG)
    _, (n,) = cur.keyword("n", 1)
    forms = []
    while (cur.peek()[1] or "").startswith("form"):
        ln, vals = cur.keyword("form", n + 1)
        forms.append((tuple(vals[:n]), vals[n]))
    if not forms:
        raise ParseError("at least one form is required", cur.peek()[0] or 1)
    graph, ref = quotient_reference(forms, n)
    d = graph.d
    ln, lo = cur.keyword("min", d)
    ln, hi = cur.keyword("max", d)
    box = Box(tuple(lo), tuple(hi))
    if box.empty:
        raise ParseError("empty window", ln)
    values = None
    if (cur.peek()[1] or "").startswith("values"):
        ln, (rows,) = cur.keyword("values", 1)
        width = box.shape[-1]
        if rows * width != box.size:
            raise ParseError(f"window needs {box.size // width} rows, header says {rows}", ln)
        data = []
        for _ in range(rows):
            ln, line = cur.next("value row")
            vals = _ints(line.split(), ln)
            if len(vals) != width:
                raise ParseError(f"value row needs {width} integers", ln)
            data.extend(vals)
        values = np.array(data, dtype=np.int64).reshape(box.shape)
    cur.end()
    try:
        field = (IntField.from_spec(graph, box, ref) if values is None
                 else IntField(graph, box, values, ref))
    except ValidationError as exc:
        raise ParseError(str(exc), ln) from None
    if not field.ring_consistent():
        raise ParseError("boundary ring of the table disagrees with the forms", ln)
    return forms, field


# ---------------------------------------------------------------------------
# pattern specifications


def encode_pattern(spec: PatternSpec) -> str:
    lines = [f"{PATTERN_TAG} {VERSION}", f"n {spec.n}"]
    lines += [f"vertex {_fmt(a)} {c}" for a, c in zip(spec.A, spec.c)]
    lines.append("END")
    return "\n".join(lines) + "\n"


def decode_pattern(text: str) -> PatternSpec:
    cur = _Lines(text)
    cur.header(PATTERN_TAG)
    _, (n,) = cur.keyword("n", 1)
    A, c = [], []
    ln = None
    while (cur.peek()[1] or "").startswith("vertex"):
        ln, vals = cur.keyword("vertex", n + 1)
        A.append(tuple(vals[:n]))
        c.append(vals[n])
    cur.end()
    try:
        return PatternSpec(tuple(A), tuple(c))
    except ValidationError as exc:
        raise ParseError(str(exc), ln or 1) from None
