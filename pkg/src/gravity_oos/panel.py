"""Bilateral trade panel: ingestion, validation and the balanced-panel filter."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

REAL_FIELDS = ("ln_gdp_o", "ln_gdp_d", "ln_dist")
BINARY_FIELDS = ("eu", "cu", "rta", "contig", "comlang", "colony", "sanction")
COVARIATES = REAL_FIELDS + BINARY_FIELDS
FIELDS = ("exporter", "importer", "year", "trade") + COVARIATES

# log fields that may be ingested in levels and logged at load time
_LEVEL_NAMES = {"ln_gdp_o": "gdp_o", "ln_gdp_d": "gdp_d", "ln_dist": "dist"}


class PanelError(ValueError):
    """Invalid panel input. ``row`` is the 1-based data row (header excluded) when known."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass(frozen=True)
class Observation:
    exporter: str
    importer: str
    year: int
    trade: float
    ln_gdp_o: float
    ln_gdp_d: float
    ln_dist: float
    eu: int
    cu: int
    rta: int
    contig: int
    comlang: int
    colony: int
    sanction: int


@dataclass(frozen=True)
class Schema:
    """Map from panel field to CSV column name.

    Fields listed in ``levels`` are read from columns holding levels (GDP, distance)
    and log-transformed on load. Trade is never logged.
    """

    columns: Mapping[str, str] = field(default_factory=lambda: {f: f for f in FIELDS})
    levels: frozenset[str] = frozenset()

    def __post_init__(self):
        missing = [f for f in FIELDS if f not in self.columns]
        if missing:
            raise PanelError(f"schema does not map fields {missing}")
        bad = set(self.levels) - set(_LEVEL_NAMES)
        if bad:
            raise PanelError(f"only {sorted(_LEVEL_NAMES)} can be read in levels, got {sorted(bad)}")

    @classmethod
    def default(cls, levels: Iterable[str] = ()) -> "Schema":
        cols = {f: f for f in FIELDS}
        for f in levels:
            cols[f] = _LEVEL_NAMES[f]
        return cls(cols, frozenset(levels))


class TradePanel:
    """Immutable columnar collection of bilateral observations.

    Rows keep their input order. ``pair_index`` maps each (exporter, importer) to its
    row positions sorted by year. A panel built with ``masked=True`` carries no
    outcomes (``trade`` is all NaN); it is what prediction code receives for test rows.
    """

    def __init__(
        self,
        exporter: Sequence[str],
        importer: Sequence[str],
        year: Sequence[int],
        trade: Sequence[float],
        covariates: Mapping[str, Sequence[float]],
        *,
        masked: bool = False,
        validate: bool = True,
    ):
        self.exporter = _frozen(np.asarray(exporter, dtype=object))
        self.importer = _frozen(np.asarray(importer, dtype=object))
        self.year = _frozen(np.asarray(year, dtype=np.int64))
        self.trade = _frozen(np.asarray(trade, dtype=np.float64))
        self.covariates = {
            name: _frozen(np.asarray(covariates[name], dtype=np.float64 if name in REAL_FIELDS else np.int8))
            for name in COVARIATES
        }
        self.masked = masked
        n = len(self.year)
        for name, arr in [("exporter", self.exporter), ("importer", self.importer), ("trade", self.trade)] + list(
            self.covariates.items()
        ):
            if len(arr) != n:
                raise PanelError(f"column {name} has length {len(arr)}, expected {n}")
        if validate:
            self._validate()
        self._build_index()

    def _validate(self) -> None:
        if np.any(self.exporter == self.importer):
            row = int(np.flatnonzero(self.exporter == self.importer)[0]) + 1
            raise PanelError("exporter equals importer", row)
        if not self.masked:
            bad = ~np.isfinite(self.trade) | (self.trade < 0)
            if bad.any():
                row = int(np.flatnonzero(bad)[0]) + 1
                raise PanelError(f"trade must be finite and non-negative, got {self.trade[row - 1]}", row)
        for name in REAL_FIELDS:
            bad = ~np.isfinite(self.covariates[name])
            if bad.any():
                raise PanelError(f"{name} must be finite", int(np.flatnonzero(bad)[0]) + 1)
        for name in BINARY_FIELDS:
            bad = (self.covariates[name] != 0) & (self.covariates[name] != 1)
            if bad.any():
                raise PanelError(f"{name} must be 0 or 1", int(np.flatnonzero(bad)[0]) + 1)

    def _build_index(self) -> None:
        n = len(self.year)
        if n == 0:
            self.pair_codes = _frozen(np.zeros(0, dtype=np.int64))
            self.pairs: list[tuple[str, str]] = []
            self.pair_index: dict[tuple[str, str], np.ndarray] = {}
            self.year_range = None
            return
        keys = np.char.add(np.char.add(self.exporter.astype(str), "\x1f"), self.importer.astype(str))
        uniq, first, codes = np.unique(keys, return_index=True, return_inverse=True)
        # pairs numbered in order of first appearance
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        self.pair_codes = _frozen(rank[codes].astype(np.int64))
        self.pairs = [(self.exporter[first[o]], self.importer[first[o]]) for o in order]
        sort = np.lexsort((self.year, self.pair_codes))
        sorted_codes = self.pair_codes[sort]
        sorted_years = self.year[sort]
        dup = (np.diff(sorted_codes) == 0) & (np.diff(sorted_years) == 0)
        if dup.any():
            row = int(sort[np.flatnonzero(dup)[0] + 1]) + 1
            raise PanelError("duplicate (exporter, importer, year)", row)
        bounds = np.flatnonzero(np.diff(sorted_codes)) + 1
        self.pair_index = {
            self.pairs[c]: _frozen(chunk)
            for c, chunk in zip(range(len(self.pairs)), np.split(sort, bounds))
        }
        self.year_range = (int(self.year.min()), int(self.year.max()))

    # -- views -----------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.year)

    def __iter__(self) -> Iterator[Observation]:
        for i in range(len(self)):
            yield self.row(i)

    @property
    def observations(self) -> list[Observation]:
        return list(self)

    def row(self, i: int) -> Observation:
        return Observation(
            exporter=str(self.exporter[i]),
            importer=str(self.importer[i]),
            year=int(self.year[i]),
            trade=float(self.trade[i]),
            **{n: float(self.covariates[n][i]) for n in REAL_FIELDS},
            **{n: int(self.covariates[n][i]) for n in BINARY_FIELDS},
        )

    def column(self, name: str) -> np.ndarray:
        if name in self.covariates:
            return self.covariates[name]
        return getattr(self, name)

    def subset(self, rows: Sequence[int] | np.ndarray) -> "TradePanel":
        rows = np.asarray(rows, dtype=np.int64)
        return TradePanel(
            self.exporter[rows],
            self.importer[rows],
            self.year[rows],
            self.trade[rows],
            {n: c[rows] for n, c in self.covariates.items()},
            masked=self.masked,
            validate=False,
        )

    def without_outcomes(self) -> "TradePanel":
        """Copy with every trade value replaced by NaN."""
        return TradePanel(
            self.exporter,
            self.importer,
            self.year,
            np.full(len(self), np.nan),
            self.covariates,
            masked=True,
            validate=False,
        )

    def _keys(self, a: str, b: str) -> np.ndarray:
        cache = self.__dict__.setdefault("_key_cache", {})
        if (a, b) not in cache:
            cache[(a, b)] = _frozen(_join_keys(getattr(self, a), getattr(self, b)))
        return cache[(a, b)]

    def exporter_year_keys(self) -> np.ndarray:
        return self._keys("exporter", "year")

    def importer_year_keys(self) -> np.ndarray:
        return self._keys("importer", "year")

    def pair_keys(self) -> np.ndarray:
        return self._keys("exporter", "importer")

    def summary(self) -> str:
        if len(self) == 0:
            return "pairs: 0\nobservations: 0"
        zeros = "n/a (masked)" if self.masked else str(int(np.sum(self.trade == 0)))
        lo, hi = self.year_range
        return (
            f"pairs: {len(self.pairs)}\n"
            f"observations: {len(self)}\n"
            f"years: {lo}-{hi}\n"
            f"exporters: {len(set(self.exporter))}\n"
            f"importers: {len(set(self.importer))}\n"
            f"zero flows: {zeros}"
        )

    def equals(self, other: "TradePanel") -> bool:
        return (
            len(self) == len(other)
            and np.array_equal(self.exporter, other.exporter)
            and np.array_equal(self.importer, other.importer)
            and np.array_equal(self.year, other.year)
            and np.array_equal(self.trade, other.trade, equal_nan=True)
            and all(np.array_equal(self.covariates[n], other.covariates[n]) for n in COVARIATES)
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _join_keys(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.char.add(np.char.add(a.astype(str), "|"), b.astype(str)).astype(object)


def load_panel(path: str | Path, schema: Schema | None = None, on_invalid: str = "raise") -> TradePanel:
    """Read a comma-separated panel file with a header row.

    ``on_invalid="raise"`` stops at the first bad row; ``"skip"`` drops rows that
    violate observation invariants (missing covariates included) and logs each one.
    Duplicate triples always raise.
    """
    if on_invalid not in ("raise", "skip"):
        raise ValueError("on_invalid must be 'raise' or 'skip'")
    schema = schema or Schema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"panel file not found: {path}")

    cols: dict[str, list] = {f: [] for f in FIELDS}
    rejected = 0
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PanelError(f"{path} is empty") from None
        pos = {}
        for f in FIELDS:
            name = schema.columns[f]
            if name not in header:
                raise PanelError(f"missing column '{name}' (field {f})")
            pos[f] = header.index(name)
        for rownum, rec in enumerate(reader, start=1):
            if not rec:
                continue
            try:
                parsed = _parse_row(rec, pos, schema)
            except PanelError as err:
                if on_invalid == "raise":
                    raise PanelError(str(err), rownum) from None
                log.warning("rejected row %d: %s", rownum, err)
                rejected += 1
                continue
            for f in FIELDS:
                cols[f].append(parsed[f])
    if rejected:
        log.warning("%d rows rejected from %s", rejected, path)
    return TradePanel(
        cols["exporter"],
        cols["importer"],
        cols["year"],
        cols["trade"],
        {n: cols[n] for n in COVARIATES},
    )


def _parse_row(rec: list[str], pos: dict[str, int], schema: Schema) -> dict:
    out: dict = {}
    for f, i in pos.items():
        raw = rec[i].strip() if i < len(rec) else ""
        if raw == "" or raw.lower() in ("na", "nan", "."):
            raise PanelError(f"missing value for {f}")
        if f in ("exporter", "importer"):
            out[f] = raw
            continue
        try:
            val = float(raw)
        except ValueError:
            raise PanelError(f"non-numeric {f}: {raw!r}") from None
        if f == "year":
            if val != int(val):
                raise PanelError(f"non-integer year {raw!r}")
            val = int(val)
        elif f == "trade":
            if not math.isfinite(val) or val < 0:
                raise PanelError(f"trade must be finite and non-negative, got {raw}")
        elif f in schema.levels:
            if not val > 0:
                raise PanelError(f"{f} level must be positive to take logs, got {raw}")
            val = math.log(val)
        elif f in BINARY_FIELDS:
            if val not in (0.0, 1.0):
                raise PanelError(f"{f} must be 0 or 1, got {raw}")
            val = int(val)
        elif not math.isfinite(val):
            raise PanelError(f"{f} must be finite")
        out[f] = val
    if out["exporter"] == out["importer"]:
        raise PanelError("exporter equals importer")
    return out


def write_panel(panel: TradePanel, path: str | Path, schema: Schema | None = None) -> None:
    """Write ``panel`` as CSV. Reals use ``repr`` so they round-trip exactly."""
    schema = schema or Schema()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([schema.columns[f] for f in FIELDS])
        for i in range(len(panel)):
            rec = [panel.exporter[i], panel.importer[i], int(panel.year[i]), repr(float(panel.trade[i]))]
            for n in REAL_FIELDS:
                v = float(panel.covariates[n][i])
                rec.append(repr(math.exp(v)) if n in schema.levels else repr(v))
            rec.extend(int(panel.covariates[n][i]) for n in BINARY_FIELDS)
            w.writerow(rec)


def balance_panel(panel: TradePanel, window: tuple[int, int], required_count: int) -> TradePanel:
    """Keep pairs with exactly ``required_count`` observations inside ``window`` (inclusive)."""
    lo, hi = window
    if required_count < 1:
        raise ValueError("required_count must be >= 1")
    if lo > hi:
        raise ValueError(f"invalid window {window}")
    inside = (panel.year >= lo) & (panel.year <= hi)
    counts = np.bincount(panel.pair_codes[inside], minlength=len(panel.pairs))
    keep = inside & (counts[panel.pair_codes] == required_count)
    if not keep.any():
        raise PanelError(f"no pair has {required_count} observations in {lo}-{hi}")
    return panel.subset(np.flatnonzero(keep))
