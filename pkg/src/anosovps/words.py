"""Free-group combinatorics: reduced words, tree geodesics, word shadows.

The word-hyperbolic model is a free group of rank r >= 2 (the Schottky
case), where geodesics are unique, the hyperbolicity constant is 0 and the
Gromov product is the longest-common-prefix length.  Letters are integers
0..2r-1 with inverse pairing i <-> i^1 (xor with 1); serialization uses
"a..z" for generators and "A..Z" for their inverses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union


class WordError(ValueError):
    """Invalid letter sequence or alphabet mismatch."""


@dataclass(frozen=True)
class Alphabet:
    """Symmetric generating set of a free group: 2r letters, inverse closed."""

    rank: int

    def __post_init__(self):
        if self.rank < 2:
            raise WordError("free rank must be >= 2")
        if self.rank > 26:
            raise WordError("letter serialization supports rank <= 26")

    @property
    def size(self) -> int:
        return 2 * self.rank

    def inverse_letter(self, letter: int) -> int:
        return letter ^ 1

    def letter_to_char(self, letter: int) -> str:
        base = letter // 2
        return chr(65 + base) if letter & 1 else chr(97 + base)

    def char_to_letter(self, ch: str) -> int:
        if "a" <= ch <= "z":
            letter = 2 * (ord(ch) - 97)
        elif "A" <= ch <= "Z":
            letter = 2 * (ord(ch) - 65) + 1
        else:
            raise WordError(f"unknown symbol {ch!r}")
        if letter >= self.size:
            raise WordError(f"symbol {ch!r} outside alphabet of rank {self.rank}")
        return letter


def _reduce_letters(letters: Iterable[int]) -> tuple[int, ...]:
    out: list[int] = []
    for x in letters:
        if out and out[-1] == (x ^ 1):
            out.pop()
        else:
            out.append(x)
    return tuple(out)


@dataclass(frozen=True)
class Word:
    """Reduced word in the free group."""

    alphabet: Alphabet
    letters: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for x in self.letters:
            if not 0 <= x < self.alphabet.size:
                raise WordError(f"letter {x} outside alphabet")
        for a, b in zip(self.letters, self.letters[1:]):
            if a == (b ^ 1):
                raise WordError("word is not reduced")

    def __len__(self) -> int:
        return len(self.letters)

    def __str__(self) -> str:
        return "".join(self.alphabet.letter_to_char(x) for x in self.letters)

    @staticmethod
    def parse(alphabet: Alphabet, text: str) -> "Word":
        return reduce(alphabet, [alphabet.char_to_letter(c) for c in text])

    def __mul__(self, other: "Word") -> "Word":
        return reduce(self.alphabet, self.letters + other.letters)

    def inverse(self) -> "Word":
        inv = tuple(x ^ 1 for x in reversed(self.letters))
        return Word(self.alphabet, inv)

    def prefix(self, n: int) -> "Word":
        return Word(self.alphabet, self.letters[:n])

    def is_prefix_of(self, other: Union["Word", "BoundaryWord"]) -> bool:
        o = other.letters if isinstance(other, Word) else other.prefix.letters
        return o[: len(self.letters)] == self.letters


@dataclass(frozen=True)
class BoundaryWord:
    """Boundary point of the free group: an infinite reduced word truncated
    at a finite depth (default 64).  All downstream computations inherit a
    truncation error of order contraction^depth."""

    prefix: Word

    def __post_init__(self):
        if len(self.prefix) == 0:
            raise WordError("boundary word needs a nonempty prefix")

    @property
    def alphabet(self) -> Alphabet:
        return self.prefix.alphabet

    @property
    def depth(self) -> int:
        return len(self.prefix)

    def __str__(self) -> str:
        return str(self.prefix) + "..."


DEFAULT_BOUNDARY_DEPTH = 64


def reduce(alphabet: Alphabet, raw: Sequence[int]) -> Word:
    """Free-group normal form of a raw letter sequence."""
    for x in raw:
        if not 0 <= int(x) < alphabet.size:
            raise WordError(f"letter {x} outside alphabet")
    return Word(alphabet, _reduce_letters(int(x) for x in raw))


def _letters_of(x: Union[Word, BoundaryWord]) -> tuple[int, ...]:
    return x.letters if isinstance(x, Word) else x.prefix.letters


def word_gromov_product(x: Union[Word, BoundaryWord], y: Union[Word, BoundaryWord]) -> int:
    """(x|y)_e = (|x| + |y| - d(x,y)) / 2 = longest common prefix length.

    For boundary words the value is exact below the truncation depth; two
    boundary words sharing their whole truncated prefix return the depth.
    """
    a, b = _letters_of(x), _letters_of(y)
    n = 0
    for p, q in zip(a, b):
        if p != q:
            break
        n += 1
    return n


def word_distance(g1: Word, g2: Word) -> int:
    return len(g1.inverse() * g2)


def geodesic_segment(g1: Word, g2: Word) -> list[Word]:
    """The unique tree geodesic from g1 to g2: back up to the common prefix
    vertex, then descend.  Contains d(g1,g2) + 1 points."""
    c = word_gromov_product(g1, g2)
    points = [g1.prefix(n) for n in range(len(g1), c, -1)]
    points.extend(g2.prefix(n) for n in range(c, len(g2) + 1))
    return points


def _geodesic_toward(g1: Word, x: Union[Word, BoundaryWord]) -> list[Word]:
    """Vertices of the tree geodesic from g1 toward x (all of it for a
    finite target, the truncated part for a boundary target)."""
    target = _letters_of(x)
    c = 0
    for p, q in zip(g1.letters, target):
        if p != q:
            break
        c += 1
    alphabet = g1.alphabet
    points = [g1.prefix(n) for n in range(len(g1), c, -1)]
    points.extend(Word(alphabet, target[:n]) for n in range(c, len(target) + 1))
    return points


def word_shadow_membership(x: BoundaryWord, g1: Word, g2: Word, radius: int) -> bool:
    """True iff the tree geodesic from g1 toward x passes within word
    distance ``radius`` of g2."""
    if radius < 0:
        raise WordError("shadow radius must be >= 0")
    return min(word_distance(p, g2) for p in _geodesic_toward(g1, x)) <= radius


def projection_to_geodesic(
    g: Word,
    x: Union[Word, BoundaryWord],
    y: Union[Word, BoundaryWord],
) -> Word:
    """Nearest point on the tree geodesic [x, y] (unique in a tree).

    For boundary endpoints the geodesic is the bi-infinite line through
    their branch point; only the truncated part is scanned, which contains
    the projection whenever g is shallower than the truncation depth.
    """
    ax, ay = _letters_of(x), _letters_of(y)
    if ax == ay:
        raise WordError("geodesic endpoints coincide")
    c = word_gromov_product(x, y)
    alphabet = g.alphabet
    candidates = [Word(alphabet, ax[:n]) for n in range(c, len(ax) + 1)]
    candidates.extend(Word(alphabet, ay[:n]) for n in range(c + 1, len(ay) + 1))
    best = min(candidates, key=lambda p: (word_distance(g, p), len(p)))
    return best
