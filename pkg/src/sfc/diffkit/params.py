"""Named parameter storage, initialization, and the text checkpoint format."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from ..errors import ArgumentError, DimensionError, ParseError
from .tensor import Tensor


@dataclass
class ParamEntry:
    shape: tuple[int, ...]
    values: np.ndarray
    grads: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        if any(n <= 0 for n in self.shape):
            raise DimensionError(f"shape entries must be positive, got {self.shape}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        size = int(np.prod(self.shape))
        if self.values.size != size:
            raise DimensionError(f"{self.values.size} values for shape {self.shape}")
        if self.grads is None:
            self.grads = np.zeros(size)

    @property
    def array(self) -> np.ndarray:
        """Shaped view of ``values`` (writes go through)."""
        return self.values.reshape(self.shape)


def _stream_seed(seed: int, name: str) -> list[int]:
    return [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]


class ParameterSet:
    """Mapping from unique names to shaped float64 arrays with gradient accumulators.

    Iteration is in lexicographic name order regardless of insertion order.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._entries: dict[str, ParamEntry] = {}

    @classmethod
    def union(cls, *sets: "ParameterSet") -> "ParameterSet":
        """A set sharing (not copying) the entries of ``sets``; names must be disjoint."""
        out = cls(sets[0].seed if sets else 0)
        for ps in sets:
            for name, e in ps.items():
                if name in out._entries:
                    raise ArgumentError(f"duplicate parameter name {name!r}")
                out._entries[name] = e
        return out

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> ParamEntry:
        return self._entries[name]

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def items(self) -> Iterator[tuple[str, ParamEntry]]:
        for name in self.names():
            yield name, self._entries[name]

    def add(self, name: str, shape, init: str = "xavier", values=None) -> ParamEntry:
        """Register a new entry.

        ``init`` is ``"xavier"`` (uniform, bound sqrt(6/(fan_in+fan_out)), drawn from
        an RNG stream keyed by this set's seed and the entry name), ``"zeros"``, or
        ignored when explicit ``values`` are given.
        """
        if name in self._entries:
            raise ArgumentError(f"duplicate parameter name {name!r}")
        shape = tuple(int(n) for n in shape)
        size = int(np.prod(shape))
        if values is None:
            if init == "xavier":
                fan_in = shape[0]
                fan_out = shape[1] if len(shape) > 1 else shape[0]
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                rng = np.random.default_rng(_stream_seed(self.seed, name))
                values = rng.uniform(-bound, bound, size=size)
            elif init == "zeros":
                values = np.zeros(size)
            else:
                raise ArgumentError(f"unknown init {init!r}")
        entry = ParamEntry(shape, np.array(values, dtype=np.float64))
        self._entries[name] = entry
        return entry

    def tensor(self, name: str) -> Tensor:
        """Fresh trainable leaf bound to the named entry."""
        entry = self._entries[name]
        return Tensor(entry.array, requires_grad=True, entry=entry)

    def num_values(self) -> int:
        return sum(e.values.size for e in self._entries.values())

    def zero_grad(self) -> None:
        for e in self._entries.values():
            e.grads[:] = 0.0

    def fill(self, value: float) -> None:
        for e in self._entries.values():
            e.values[:] = value

    def copy(self) -> "ParameterSet":
        out = ParameterSet(self.seed)
        for name, e in self.items():
            out._entries[name] = ParamEntry(e.shape, e.values.copy())
        return out

    def assign(self, other: "ParameterSet") -> None:
        """Copy values from ``other`` (same names and shapes) in place."""
        self._check_aligned(other)
        for name, e in self.items():
            e.values[:] = other[name].values

    def soft_update(self, source: "ParameterSet", tau: float) -> None:
        """values <- (1 - tau) * values + tau * source.values."""
        self._check_aligned(source)
        for name, e in self.items():
            e.values *= 1.0 - tau
            e.values += tau * source[name].values

    def flat(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([e.values for _, e in self.items()])

    def flat_grads(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([e.grads for _, e in self.items()])

    def _check_aligned(self, other: "ParameterSet") -> None:
        if self.names() != other.names():
            raise DimensionError("parameter sets have different entry names")
        for name, e in self.items():
            if e.shape != other[name].shape:
                raise DimensionError(f"entry {name!r}: shape {e.shape} vs {other[name].shape}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParameterSet) or self.names() != other.names():
            return False
        return all(e.shape == other[n].shape and np.array_equal(e.values, other[n].values)
                   for n, e in self.items())


def format_real(x: float) -> str:
    """17 significant digits: enough for a bit-exact float64 round-trip."""
    return "%.17g" % x


def save_checkpoint(params: ParameterSet, path) -> None:
    """Write ``name dim0 dim1 ...`` then one line of values per entry, sorted by name."""
    lines = []
    for name, e in params.items():
        if not name or any(c.isspace() for c in name):
            raise ArgumentError(f"parameter name {name!r} cannot contain whitespace")
        lines.append(" ".join([name, *map(str, e.shape)]))
        lines.append(" ".join(format_real(v) for v in e.values))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_checkpoint(path, seed: int = 0) -> ParameterSet:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if len(lines) % 2:
        raise ParseError("header line without a values line", line=len(lines), path=path)
    params = ParameterSet(seed)
    for i in range(0, len(lines), 2):
        header = lines[i].split()
        if len(header) < 2:
            raise ParseError("expected 'name dim0 ...'", line=i + 1, path=path)
        try:
            shape = tuple(int(n) for n in header[1:])
            values = np.array([float(v) for v in lines[i + 1].split()])
        except ValueError as exc:
            raise ParseError(str(exc), line=i + 2, path=path) from None
        if values.size != int(np.prod(shape)):
            raise ParseError(f"{values.size} values for shape {shape}", line=i + 2, path=path)
        params.add(header[0], shape, values=values)
    return params


def load_into(params: ParameterSet, path) -> None:
    """Load a checkpoint into an existing set with matching names and shapes."""
    params.assign(load_checkpoint(path))
