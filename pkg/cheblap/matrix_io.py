"""Text format for adjacency matrices and Laplacian dumps.

An adjacency file is a line ``n`` followed by n lines of n decimals. A Laplacian
dump prefixes that with ``# kind=<KIND> rescaled=<0|1> lmin=<v> lmax=<v>``.
Values are written with ``repr`` so reading back is bit-exact.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from exports import export

from cheblap.graph import LaplacianKind, LaplacianOperator
from cheblap.utils.errors import MissingFile, ParseError


def format_row(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def parse_floats(text: str, path: str, line: int) -> list[float]:
    try:
        return [float(token) for token in text.split()]
    except ValueError as e:
        raise ParseError(f"malformed number ({e})", path, line) from None


def read_lines(path: str | Path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path} does not exist")
    return path.read_text().splitlines()


@export
def write_matrix(path: str | Path, M: np.ndarray, header: str | None = None) -> None:
    M = np.asarray(M, dtype=float)
    lines = []
    if header is not None:
        lines.append(f"# {header}")
    lines.append(str(M.shape[0]))
    lines.extend(format_row(row) for row in M)
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_matrix(lines: list[str], path: str) -> tuple[np.ndarray, dict[str, str]]:
    header: dict[str, str] = {}
    numbered = [(i + 1, line.strip()) for i, line in enumerate(lines) if line.strip()]
    while numbered and numbered[0][1].startswith("#"):
        for token in numbered[0][1].lstrip("#").split():
            if "=" in token:
                key, value = token.split("=", 1)
                header[key] = value
        numbered = numbered[1:]
    if not numbered:
        raise ParseError("empty matrix file", path)

    line_no, first = numbered[0]
    try:
        n = int(first)
    except ValueError:
        raise ParseError(f"expected the node count, got {first!r}", path, line_no) from None
    rows = numbered[1:]
    if len(rows) != n:
        raise ParseError(f"expected {n} rows, found {len(rows)}", path, line_no)

    M = np.empty((n, n))
    for r, (line_no, text) in enumerate(rows):
        values = parse_floats(text, path, line_no)
        if len(values) != n:
            raise ParseError(f"expected {n} values, found {len(values)}", path, line_no)
        M[r] = values
    return M, header


@export
def read_matrix(path: str | Path) -> np.ndarray:
    return _parse_matrix(read_lines(path), str(path))[0]


@export
def write_laplacian(path: str | Path, L: LaplacianOperator) -> None:
    kind = str(L.kind) if L.kind is not None else "MIXED"
    lmin = repr(L.lambda_min) if L.rescaled else "nan"
    lmax = repr(L.lambda_max) if L.rescaled else "nan"
    header = f"kind={kind} rescaled={int(L.rescaled)} lmin={lmin} lmax={lmax}"
    write_matrix(path, L.matrix, header=header)


@export
def read_laplacian(path: str | Path) -> LaplacianOperator:
    M, header = _parse_matrix(read_lines(path), str(path))
    for key in ("kind", "rescaled", "lmin", "lmax"):
        if key not in header:
            raise ParseError(f"Laplacian header lacks {key!r}", str(path), 1)
    rescaled = header["rescaled"] == "1"
    return LaplacianOperator(
        matrix=M,
        kind=None if header["kind"] == "MIXED" else LaplacianKind.parse(header["kind"]),
        rescaled=rescaled,
        lambda_min=float(header["lmin"]) if rescaled else None,
        lambda_max=float(header["lmax"]) if rescaled else None,
    )
