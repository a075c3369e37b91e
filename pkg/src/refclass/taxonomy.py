"""Subject-category universe, multidisciplinary flags and the category -> broad-area map.

A taxonomy file is UTF-8 TSV with the header ``label<TAB>broad_area<TAB>multidisciplinary``.
An empty ``broad_area`` means the category has no broad area; ``multidisciplinary`` is
``0`` or ``1``. Optional ``# area: <name>`` lines before the header declare the broad
areas (and their order); when present, every category's area must be declared.
"""

from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, TextIO, Union

import numpy as np

HEADER = ("label", "broad_area", "multidisciplinary")
AREA_DIRECTIVE = "# area:"
DEFAULT_NAME = "default"

Source = Union[str, os.PathLike, TextIO, None]


class TaxonomyError(ValueError):
    """Raised when a taxonomy file is malformed."""


def canonical_label(label: str) -> str:
    return label.strip()


@dataclass(frozen=True, eq=False)
class Taxonomy:
    labels: tuple[str, ...]
    multidisciplinary: np.ndarray  # bool, one per category
    broad_area: np.ndarray  # int32, -1 where the category has no broad area
    areas: tuple[str, ...]
    _index: dict[str, int] = field(repr=False)
    _area_index: dict[str, int] = field(repr=False)

    @classmethod
    def build(
        cls,
        rows: Iterable[tuple[str, str | None, bool]],
        areas: Iterable[str] | None = None,
    ) -> "Taxonomy":
        """Build from ``(label, broad_area or None, multidisciplinary)`` rows.

        When ``areas`` is None the area list is taken from the rows in order of
        first appearance.
        """
        rows = [(canonical_label(lab), None if a is None or not a.strip() else a.strip(), bool(md))
                for lab, a, md in rows]
        declared = areas is not None
        area_list: list[str] = [a.strip() for a in areas] if declared else []
        if len(set(area_list)) != len(area_list):
            raise TaxonomyError("duplicate broad area declaration")
        area_index = {a: i for i, a in enumerate(area_list)}
        index: dict[str, int] = {}
        broad = np.full(len(rows), -1, dtype=np.int32)
        multi = np.zeros(len(rows), dtype=bool)
        for i, (lab, area, md) in enumerate(rows):
            if not lab:
                raise TaxonomyError(f"category {i}: empty label")
            if lab in index:
                raise TaxonomyError(f"duplicate category label {lab!r}")
            index[lab] = i
            if area is not None:
                if area not in area_index:
                    if declared:
                        raise TaxonomyError(f"category {lab!r}: unknown broad area {area!r}")
                    area_index[area] = len(area_list)
                    area_list.append(area)
                broad[i] = area_index[area]
            multi[i] = md
        broad.setflags(write=False)
        multi.setflags(write=False)
        return cls(
            labels=tuple(lab for lab, _, _ in rows),
            multidisciplinary=multi,
            broad_area=broad,
            areas=tuple(area_list),
            _index=index,
            _area_index=area_index,
        )

    @property
    def n_categories(self) -> int:
        return len(self.labels)

    @property
    def n_areas(self) -> int:
        return len(self.areas)

    def category_id(self, label: str) -> int:
        try:
            return self._index[canonical_label(label)]
        except KeyError:
            raise KeyError(f"unknown subject category {label!r}") from None

    def find(self, label: str) -> int | None:
        return self._index.get(canonical_label(label))

    def area_id(self, label: str) -> int:
        try:
            return self._area_index[label.strip()]
        except KeyError:
            raise KeyError(f"unknown broad area {label!r}") from None

    def label(self, cat: int) -> str:
        self._check(cat)
        return self.labels[cat]

    def is_multidisciplinary(self, cat: int) -> bool:
        self._check(cat)
        return bool(self.multidisciplinary[cat])

    def _check(self, cat: int) -> None:
        if not 0 <= int(cat) < len(self.labels):
            raise KeyError(f"category id {cat} not in taxonomy")

    def names(self, level: str) -> tuple[str, ...]:
        """Label names for a level: ``"subject"`` or ``"broad"``."""
        return self.labels if str(level) == "subject" else self.areas

    def lex_rank(self, level: str) -> np.ndarray:
        """Rank of every label id in codepoint order of its name (0 = smallest)."""
        names = self.names(level)
        order = sorted(range(len(names)), key=names.__getitem__)
        rank = np.empty(len(names), dtype=np.int64)
        rank[order] = np.arange(len(names))
        return rank

    def without_area(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.broad_area < 0)]


def broad_area_of(cat: int, t: Taxonomy) -> int | None:
    """Broad-area id of a category, or None when the category has none."""
    t._check(cat)
    area = int(t.broad_area[cat])
    return None if area < 0 else area


def _open_source(source: Source) -> tuple[TextIO, bool]:
    if source is None or (isinstance(source, str) and source == DEFAULT_NAME):
        text = resources.files("refclass").joinpath("data/wos_categories.tsv").read_text("utf-8")
        return io.StringIO(text), True
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8", newline=""), True
    return source, False


def load_taxonomy(source: Source = None) -> Taxonomy:
    """Load a taxonomy file; ``None`` or ``"default"`` gives the shipped WoS table."""
    fh, owned = _open_source(source)
    try:
        lines = fh.read().splitlines()
    finally:
        if owned:
            fh.close()

    areas: list[str] = []
    header_seen = False
    rows: list[tuple[str, str | None, bool]] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        if not header_seen:
            if line.startswith(AREA_DIRECTIVE):
                areas.append(line[len(AREA_DIRECTIVE):].strip())
                continue
            if not line.strip() or line.startswith("#"):
                continue
            if tuple(c.strip() for c in line.split("\t")) != HEADER:
                raise TaxonomyError(f"line {lineno}: expected header {'<TAB>'.join(HEADER)!r}")
            header_seen = True
            continue
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise TaxonomyError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
        label, area, flag = (p.strip() for p in parts)
        if flag not in ("0", "1"):
            raise TaxonomyError(f"line {lineno}: multidisciplinary must be 0 or 1, got {flag!r}")
        if not label:
            raise TaxonomyError(f"line {lineno}: empty label")
        if label in seen:
            raise TaxonomyError(f"line {lineno}: duplicate label {label!r} (first on line {seen[label]})")
        seen[label] = lineno
        if areas and area and area not in areas:
            raise TaxonomyError(f"line {lineno}: unknown broad area {area!r}")
        if flag == "0" and "multidisciplinary" in label.lower():
            warnings.warn(
                f"line {lineno}: {label!r} looks multidisciplinary but is flagged 0",
                stacklevel=2,
            )
        rows.append((label, area or None, flag == "1"))
    if not header_seen:
        raise TaxonomyError("missing header row")
    if not rows:
        raise TaxonomyError("taxonomy has no categories")
    return Taxonomy.build(rows, areas=areas or None)


def serialize_taxonomy(t: Taxonomy) -> str:
    out = [f"{AREA_DIRECTIVE} {a}" for a in t.areas]
    out.append("\t".join(HEADER))
    for i, label in enumerate(t.labels):
        area = t.broad_area[i]
        out.append(f"{label}\t{t.areas[area] if area >= 0 else ''}\t{int(t.multidisciplinary[i])}")
    return "\n".join(out) + "\n"


def write_taxonomy(t: Taxonomy, path: str | os.PathLike) -> None:
    Path(path).write_text(serialize_taxonomy(t), encoding="utf-8")


def default_taxonomy() -> Taxonomy:
    return load_taxonomy(None)
