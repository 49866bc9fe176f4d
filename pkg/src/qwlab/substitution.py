"""Substitution words, fixed-point prefixes, and finite subshift windows.

Everything works over the binary alphabet {0, 1}, represented as plain
'0'/'1' strings.  The symbols double as the index that selects which of
the two coin angles acts at a site.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

DEFAULT_WORD_CAP = 1 << 24

# A factor of length l that occurs anywhere in the fixed point recurs within
# a bounded multiple of l (linear recurrence).  Searching 16*l symbols leaves
# a comfortable margin over the known recurrence constants.
LEGALITY_SEARCH_FLOOR = 64
LEGALITY_SEARCH_FACTOR = 16

_SYMBOLS = frozenset("01")


class ResourceCapError(RuntimeError):
    """A requested word would exceed the configured memory cap."""


def _require_binary(word: str, what: str = "word") -> None:
    if not _SYMBOLS.issuperset(word):
        raise ValueError(f"{what} must consist of '0'/'1' symbols, got {word!r}")


@dataclass(frozen=True)
class SubstitutionRule:
    """Binary substitution sending each symbol to a nonempty word."""

    image_of_0: str
    image_of_1: str

    def __post_init__(self) -> None:
        for name, image in (("image_of_0", self.image_of_0), ("image_of_1", self.image_of_1)):
            if not image:
                raise ValueError(f"{name} must be nonempty")
            _require_binary(image, name)

    def image(self, symbol: str) -> str:
        if symbol == "0":
            return self.image_of_0
        if symbol == "1":
            return self.image_of_1
        raise ValueError(f"symbol must be '0' or '1', got {symbol!r}")


THUE_MORSE = SubstitutionRule(image_of_0="01", image_of_1="10")
FIBONACCI = SubstitutionRule(image_of_0="01", image_of_1="0")


def apply_substitution(rule: SubstitutionRule, word: str,
                       max_length: int = DEFAULT_WORD_CAP) -> str:
    """Apply the substitution to every symbol of ``word`` and concatenate."""
    _require_binary(word)
    n0 = word.count("0")
    out_len = n0 * len(rule.image_of_0) + (len(word) - n0) * len(rule.image_of_1)
    if out_len > max_length:
        raise ResourceCapError(
            f"substituted word would have length {out_len} > cap {max_length}")
    return "".join(rule.image(s) for s in word)


def iterate(rule: SubstitutionRule, seed: str, n: int,
            max_length: int = DEFAULT_WORD_CAP) -> str:
    """Return the n-fold substitution image of a single seed symbol."""
    if n < 0:
        raise ValueError("iteration count must be nonnegative")
    _require_binary(seed, "seed")
    word = seed
    for _ in range(n):
        word = apply_substitution(rule, word, max_length=max_length)
    return word


# Longest prefix computed so far, per rule.  Entries only ever grow, and the
# words are immutable, so concurrent readers are safe.
_PREFIX_CACHE: dict[SubstitutionRule, str] = {}


def _disk_cache_path(rule: SubstitutionRule) -> Path | None:
    cache_dir = os.environ.get("QW_CACHE_DIR")
    if not cache_dir:
        return None
    return Path(cache_dir) / f"fixedpoint_{rule.image_of_0}-{rule.image_of_1}.txt"


def fixed_point_prefix(rule: SubstitutionRule, min_length: int,
                       max_length: int = DEFAULT_WORD_CAP) -> str:
    """Return a prefix of the one-sided fixed point, of length >= min_length.

    Requires a rule whose image of '0' starts with '0' and grows it, so that
    iterating on the seed '0' produces a nested tower of prefixes.  Calls with
    growing ``min_length`` are prefix-consistent.  Prefixes are memoized in
    memory and, when QW_CACHE_DIR is set, on disk.
    """
    if min_length < 1:
        raise ValueError("min_length must be >= 1")
    if min_length > max_length:
        raise ResourceCapError(f"requested prefix length {min_length} > cap {max_length}")
    if not rule.image_of_0.startswith("0"):
        raise ValueError("rule is not prefix-compatible: image of '0' must start with '0'")
    if len(rule.image_of_0) < 2:
        raise ValueError("image of '0' must have length >= 2 for the prefix to grow")

    word = _PREFIX_CACHE.get(rule, "0")
    if len(word) < min_length:
        path = _disk_cache_path(rule)
        if path is not None and path.is_file():
            try:
                cached = path.read_text()
            except OSError:
                cached = ""
            if len(cached) >= len(word) and cached.startswith(word):
                word = cached
    while len(word) < min_length:
        word = apply_substitution(rule, word, max_length=max_length)
    if len(word) > len(_PREFIX_CACHE.get(rule, "")):
        _PREFIX_CACHE[rule] = word
        path = _disk_cache_path(rule)
        if path is not None:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(word)
            except OSError:
                pass  # disk cache is best-effort
    return word


def is_legal_factor(word: str, rule: SubstitutionRule = THUE_MORSE) -> bool:
    """True iff ``word`` occurs as a contiguous block of the fixed point."""
    _require_binary(word)
    if not word:
        return True
    search_len = max(LEGALITY_SEARCH_FLOOR, LEGALITY_SEARCH_FACTOR * len(word))
    return word in fixed_point_prefix(rule, search_len)


@dataclass(frozen=True)
class SubshiftWindow:
    """Finite symbol window: symbol_at(n) = w[offset + n] for a source word w.

    ``offset + n_min >= 0`` keeps the window inside a one-sided sequence.
    """

    offset: int
    n_min: int
    n_max: int
    symbols: str

    def __post_init__(self) -> None:
        if self.n_max < self.n_min:
            raise ValueError("window range is empty")
        if self.offset + self.n_min < 0:
            raise ValueError("offset + n_min must be >= 0")
        span = self.n_max - self.n_min + 1
        if len(self.symbols) != span:
            raise ValueError(f"expected {span} symbols, got {len(self.symbols)}")
        _require_binary(self.symbols, "symbols")

    def symbol_at(self, n: int) -> str:
        if not self.n_min <= n <= self.n_max:
            raise ValueError(f"site {n} outside window [{self.n_min}, {self.n_max}]")
        return self.symbols[n - self.n_min]

    def slice_symbols(self, lo: int, hi: int) -> str:
        """Symbols for the inclusive site range [lo, hi]."""
        if not (self.n_min <= lo and hi <= self.n_max and lo <= hi):
            raise ValueError(f"range [{lo}, {hi}] outside window [{self.n_min}, {self.n_max}]")
        return self.symbols[lo - self.n_min: hi - self.n_min + 1]

    def to_json(self) -> dict:
        return {"offset": self.offset, "n_min": self.n_min,
                "n_max": self.n_max, "symbols": self.symbols}

    @classmethod
    def from_json(cls, data: dict) -> "SubshiftWindow":
        return cls(offset=data["offset"], n_min=data["n_min"],
                   n_max=data["n_max"], symbols=data["symbols"])


def sequence_window(offset: int, n_min: int, n_max: int,
                    rule: SubstitutionRule = THUE_MORSE,
                    max_length: int = DEFAULT_WORD_CAP) -> SubshiftWindow:
    """Cut the window symbol_at(n) = w[offset + n] out of the fixed point."""
    if offset + n_min < 0:
        raise ValueError(f"offset + n_min = {offset + n_min} < 0: window leaves the "
                         "one-sided fixed point")
    prefix = fixed_point_prefix(rule, offset + n_max + 1, max_length=max_length)
    symbols = prefix[offset + n_min: offset + n_max + 1]
    return SubshiftWindow(offset=offset, n_min=n_min, n_max=n_max, symbols=symbols)


@dataclass(frozen=True)
class CoinAngles:
    """Pair of coin rotation angles, both strictly inside (0, pi/2)."""

    theta: float
    phi: float

    def __post_init__(self) -> None:
        for name, value in (("theta", self.theta), ("phi", self.phi)):
            if not 0.0 < value < math.pi / 2:
                raise ValueError(f"{name} must lie strictly in (0, pi/2), got {value}")


def angle_at(window: SubshiftWindow, n: int, angles: CoinAngles) -> float:
    """Rotation angle at site n: phi where the symbol is '0', theta where '1'."""
    return angles.phi if window.symbol_at(n) == "0" else angles.theta
