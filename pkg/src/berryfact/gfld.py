"""GFLD, the plain-text field format every tool in this repo reads and writes.

Layout::

    GFLD 1
    ndim d1 d2 ...
    h1 h2 ...
    o1 o2 ...
    real|complex
    v1
    v2
    ...

One value per line (real part and imaginary part on the same line for complex
fields), printed with 17 significant digits so round-trips are bit-exact for
doubles.
"""

from __future__ import annotations

import numpy as np

from .grid import Grid, ScalarField

_MAGIC = "GFLD 1"


def write_gfld(path, field: ScalarField) -> None:
    g = field.grid
    flat = field.ravel()
    with open(path, "w") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"{g.ndim} " + " ".join(str(d) for d in g.dims) + "\n")
        fh.write(" ".join(format(h, ".17g") for h in g.spacing) + "\n")
        fh.write(" ".join(format(o, ".17g") for o in g.origin) + "\n")
        if field.is_complex:
            fh.write("complex\n")
            for v in flat:
                fh.write(f"{v.real:.17g} {v.imag:.17g}\n")
        else:
            fh.write("real\n")
            for v in flat:
                fh.write(f"{v:.17g}\n")


def read_gfld(path) -> ScalarField:
    with open(path) as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0].strip() != _MAGIC:
        raise ValueError(f"{path}: not a GFLD file (missing '{_MAGIC}' header)")
    try:
        dim_tokens = lines[1].split()
        ndim = int(dim_tokens[0])
        dims = tuple(int(t) for t in dim_tokens[1:])
        spacing = tuple(float(t) for t in lines[2].split())
        origin = tuple(float(t) for t in lines[3].split())
        kind = lines[4].strip()
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed GFLD header") from exc
    if len(dims) != ndim or len(spacing) != ndim or len(origin) != ndim:
        raise ValueError(f"{path}: header arity mismatch (ndim={ndim})")
    if kind not in ("real", "complex"):
        raise ValueError(f"{path}: kind must be 'real' or 'complex', got {kind!r}")
    grid = Grid(dims, spacing, origin)
    n = grid.npoints
    body = [ln for ln in lines[5:] if ln.strip()]
    if len(body) != n:
        raise ValueError(f"{path}: expected {n} value lines, found {len(body)}")
    if kind == "real":
        values = np.array([float(ln) for ln in body])
    else:
        values = np.empty(n, dtype=complex)
        for i, ln in enumerate(body):
            re, im = ln.split()
            values[i] = complex(float(re), float(im))
    return ScalarField(grid, values)
