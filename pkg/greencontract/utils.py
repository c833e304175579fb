# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Utilitarian functions

This module defines utilitarian members used across the library: name-case
conversions for report export and configuration keys, type-hint inspection for
report classes, symmetric-matrix packing and small numerical helpers.
"""
import functools
import json
import re
import typing
from pathlib import Path
from typing import Any
from typing import Union

import numpy as np


def snake_to_camel_case(text: str, dontformat: bool = False) -> str:
    """Convert a snake_case string into camelCase format if needed.

    This function doesnt check that passed text is in snake_case.
    If dontformat is True, return text.
    """
    if dontformat:
        return text
    first, *others = text.split("_")
    return first + "".join(map(str.capitalize, others))


def camel_to_snake_case(text: str) -> str:
    """Convert a camelCase string into snake_case format.

    Used on configuration keys so that `nPaths` and `n_paths` are accepted
    alike. Keys already in snake_case are returned unchanged.
    """
    return re.sub(r"([a-z0-9])([A-Z])", r"\1_\2", text).lower()


@functools.lru_cache
def is_an_optional_type_hint(type_hint) -> bool:
    """Check if typing.Optional wraps the type hint.

    This is an utilitarian function for `greencontract.base.BaseReport.__init__`.

    ###### Parameters ######

    * `type_hint`: type hint to check

    For a given class `C`, the following expressions is evaluated to `True`:

    ```python
    is_an_optional_type_hint(Optional[C])
    ```

    ###### Returned value ######

    `True` in the shown case, `False` otherwise.
    """
    origin = typing.get_origin(type_hint)
    if origin is None:
        return False
    type_args = typing.get_args(type_hint)
    if origin is Union:
        # in case of Optional field, check if it is Union[..., None]
        if len(type_args) != 2:
            return False
        return type(None) in type_args
    return False


def to_builtin(value: Any) -> Any:
    """Recursively convert numpy scalars and arrays into JSON-friendly builtins."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {k: to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    return value


###########################################################################
#                     S Y M M E T R I C   M A T R I C E S                 #
###########################################################################


def upper_size(dim: int) -> int:
    """Number of entries in the upper triangle (diagonal included) of a `dim`×`dim` matrix."""
    return dim * (dim + 1) // 2


def pack_upper(matrix: np.ndarray) -> np.ndarray:
    """Row-major upper triangle of a square matrix."""
    rows, cols = np.triu_indices(matrix.shape[0])
    return np.asarray(matrix, dtype=float)[rows, cols]


def unpack_upper(values: np.ndarray, dim: int) -> np.ndarray:
    """Symmetric matrix whose upper triangle is `values` (see `pack_upper()`)."""
    values = np.asarray(values, dtype=float)
    if values.shape != (upper_size(dim),):
        raise ValueError(f"Expected {upper_size(dim)} upper-triangle entries, got {values.shape[0]}.")
    matrix = np.zeros((dim, dim))
    rows, cols = np.triu_indices(dim)
    matrix[rows, cols] = values
    matrix[cols, rows] = values
    return matrix


def upper_labels(names: typing.Sequence[str]) -> typing.List[str]:
    """Labels `a_b` of the upper-triangle entries, in `pack_upper()` order."""
    rows, cols = np.triu_indices(len(names))
    return [f"{names[i]}_{names[j]}" for i, j in zip(rows, cols)]


###########################################################################
#                                 M I S C                                 #
###########################################################################


def trapezoid(values: np.ndarray, times: np.ndarray) -> float:
    """Trapezoidal integral of nodal values along the first axis."""
    values = np.asarray(values, dtype=float)
    dt = np.diff(np.asarray(times, dtype=float))
    return np.tensordot(dt, 0.5 * (values[1:] + values[:-1]), axes=(0, 0))


def trapezoid_mean(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Time average of nodal values with trapezoidal weights."""
    times = np.asarray(times, dtype=float)
    return trapezoid(values, times) / (times[-1] - times[0])


###########################################################################
#                            C S V   T A B L E S                          #
###########################################################################


def write_csv(path, frame, provenance: typing.Optional[dict] = None):
    """Write a data frame as CSV, after a `# key=value ...` line when `provenance` is given.

    Read it back with `pandas.read_csv(path, comment="#")`.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as stream:
        if provenance:
            stream.write("# " + " ".join(f"{key}={value}" for key, value in provenance.items()) + "\n")
        frame.to_csv(stream, index=False, float_format="%.12g")
    return path


###########################################################################
#                          F L A T   B I N A R Y                          #
###########################################################################


def write_flat_binary(path, header: dict, arrays: typing.Sequence[np.ndarray]) -> None:
    """Write a JSON header (length-prefixed) followed by row-major float64 arrays."""
    header = {**to_builtin(header), "shapes": [list(np.shape(a)) for a in arrays]}
    encoded = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as stream:
        stream.write(np.uint64(len(encoded)).tobytes())
        stream.write(encoded)
        for array in arrays:
            stream.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def read_flat_binary(path) -> typing.Tuple[dict, typing.List[np.ndarray]]:
    """Read back a file written by `write_flat_binary()`."""
    with open(path, "rb") as stream:
        size = int(np.frombuffer(stream.read(8), dtype=np.uint64)[0])
        header = json.loads(stream.read(size).decode())
        body = stream.read()
    arrays = []
    offset = 0
    for shape in header["shapes"]:
        count = int(np.prod(shape)) if shape else 1
        arrays.append(np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape).copy())
        offset += 8 * count
    return header, arrays
