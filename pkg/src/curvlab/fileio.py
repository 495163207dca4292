"""Text formats.

Model files (INI)::

    [model]
    kind = flat-torus | bolza | revolution | synthetic | preset
    # flat-torus: L1, L2
    # revolution: coeffs = c0 c1 ..., umin, umax, step
    # synthetic:  K = constant curvature (<= 0)
    # preset:     name = flat-torus | bolza | catenoid-profile

Roof files (INI)::

    [roof]
    K = 2
    eta = 0.1            (optional)
    eps0 = 0.5           (optional)
    f0.0 = 3/10 7/10     (row i of f0; '-' marks an absent pair)
    f.0  = 0 1/10

Numbers in roof files are read as exact rationals (``3/10`` and ``0.3``
both give Fraction(3, 10)).

Measures and word families are JSON lines: ``{"word": [0, 1, 1], "mass": 0.125}``
and ``{"word": [0, 1, 1]}``, one record per line, preceded by a header
record ``{"K": 2, ...}``.
"""

from __future__ import annotations

import configparser
import io
import json
from fractions import Fraction
from typing import Iterable

from .entropy import CylinderMeasure
from .errors import ValidationError
from .surface import FlatTorus, HyperbolicQuotient, Revolution, SyntheticProfile, preset
from .symbolic import RoofFunction


def _parser(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed key-value file: {exc}") from exc
    return cp


def parse_model(text: str):
    cp = _parser(text)
    if "model" not in cp:
        raise ValidationError("model file needs a [model] section")
    sec = cp["model"]
    kind = sec.get("kind", "preset").strip()
    try:
        if kind == "preset":
            return preset(sec.get("name", "").strip())
        if kind == "flat-torus":
            return FlatTorus(sec.getfloat("L1", 1.0), sec.getfloat("L2", 1.0))
        if kind == "bolza":
            return HyperbolicQuotient.bolza()
        if kind == "revolution":
            coeffs = [float(v) for v in sec.get("coeffs", "").split()]
            return Revolution(coeffs, sec.getfloat("umin", -60.0), sec.getfloat("umax", 60.0),
                              sec.getfloat("step", 0.01))
        if kind == "synthetic":
            return SyntheticProfile.constant(sec.getfloat("K"))
    except ValueError as exc:
        raise ValidationError(f"bad model parameter: {exc}") from exc
    raise ValidationError(f"unknown model kind {kind!r}")


def load_model(path_or_name: str):
    """Preset name or path to a model file."""
    try:
        return preset(path_or_name)
    except ValidationError:
        pass
    try:
        with open(path_or_name) as fh:
            return parse_model(fh.read())
    except FileNotFoundError as exc:
        raise ValidationError(f"no preset or model file named {path_or_name!r}") from exc


def _frac(tok: str):
    tok = tok.strip()
    if tok == "-":
        return None
    try:
        return Fraction(tok)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValidationError(f"bad roof entry {tok!r}") from exc


def parse_roof(text: str) -> RoofFunction:
    cp = _parser(text)
    if "roof" not in cp:
        raise ValidationError("roof file needs a [roof] section")
    sec = cp["roof"]
    try:
        K = sec.getint("K")
    except (TypeError, ValueError) as exc:
        raise ValidationError("roof file needs an integer K") from exc
    if K is None or K < 1:
        raise ValidationError("roof file needs K >= 1")

    def rows(prefix):
        out = []
        for i in range(K):
            key = f"{prefix}.{i}"
            if key not in sec:
                raise ValidationError(f"missing row {key}")
            row = [_frac(t) for t in sec[key].split()]
            if len(row) != K:
                raise ValidationError(f"row {key} has {len(row)} entries, expected {K}")
            out.append(row)
        return out

    f0 = rows("f0")
    f = rows("f") if "f.0" in sec else [[None if v is None else Fraction(0) for v in r] for r in f0]
    eta = sec.getfloat("eta") if "eta" in sec else None
    eps0 = sec.getfloat("eps0") if "eps0" in sec else None
    roof = RoofFunction(f0, f, eta, eps0)
    bad = roof.validate()
    if bad:
        raise ValidationError("; ".join(bad))
    return roof


def load_roof(path: str) -> RoofFunction:
    try:
        with open(path) as fh:
            return parse_roof(fh.read())
    except FileNotFoundError as exc:
        raise ValidationError(f"roof file {path!r} not found") from exc


# ---------------------------------------------------------------------------
def dump_measure(mu: CylinderMeasure, fh) -> None:
    fh.write(json.dumps({"K": mu.K, "max_depth": mu.max_depth}) + "\n")
    for w, m in mu.records():
        fh.write(json.dumps({"word": list(w), "mass": m}) + "\n")


def parse_measure(text: str) -> CylinderMeasure:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValidationError("empty measure file")
    try:
        head = json.loads(lines[0])
        K = int(head["K"])
        table = {}
        for ln in lines[1:]:
            rec = json.loads(ln)
            table[tuple(int(a) for a in rec["word"])] = float(rec["mass"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"malformed measure record: {exc}") from exc
    return CylinderMeasure.from_mapping(K, table)


def load_measure(path: str) -> CylinderMeasure:
    try:
        with open(path) as fh:
            return parse_measure(fh.read())
    except FileNotFoundError as exc:
        raise ValidationError(f"measure file {path!r} not found") from exc


def dump_words(words: Iterable, fh, header: dict) -> None:
    fh.write(json.dumps(header) + "\n")
    for w in words:
        fh.write(json.dumps({"word": list(w)}) + "\n")


def words_text(words: Iterable, header: dict) -> str:
    buf = io.StringIO()
    dump_words(words, buf, header)
    return buf.getvalue()
