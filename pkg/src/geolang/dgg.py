"""Hierarchical discrete global grid compatible with the S2 cell layout.

Cells are 64-bit ids: 3 face bits, 2 Hilbert-position bits per level and a
trailing marker bit.  Tokens are the lowercase hex rendering of the id with
trailing zeros stripped.  On top of the grid sits the multi-level geocode
codec that packs the tokens of levels 1..22 into 33 hex characters, three
characters per pair of consecutive levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

MAX_LEVEL = 30
POS_BITS = 2 * MAX_LEVEL + 1
MAX_SIZE = 1 << MAX_LEVEL
MAX_SI = 1 << (MAX_LEVEL + 1)

CODE_LEVELS = 22
CODE_LENGTH = 3 * CODE_LEVELS // 2
HEX_ALPHABET = "0123456789abcdef"

_LOOKUP_BITS = 4
_SWAP_MASK = 0x01
_INVERT_MASK = 0x02
_POS_TO_IJ = ((0, 1, 3, 2), (0, 2, 3, 1), (3, 2, 0, 1), (3, 1, 0, 2))
_POS_TO_ORIENTATION = (_SWAP_MASK, 0, 0, _INVERT_MASK | _SWAP_MASK)
_LOOKUP_POS = [0] * (1 << (2 * _LOOKUP_BITS + 2))
_LOOKUP_IJ = [0] * (1 << (2 * _LOOKUP_BITS + 2))
_U64 = (1 << 64) - 1


class GridError(ValueError):
    """Invalid coordinate, level or cell."""


class TokenParseError(GridError):
    """Malformed token or geocode text."""


class CodeConsistencyError(GridError):
    """A geocode decodes to a ladder of tokens that cannot exist."""


def _init_lookup(level, i, j, orig_orientation, pos, orientation):
    if level == _LOOKUP_BITS:
        ij = (i << _LOOKUP_BITS) + j
        _LOOKUP_POS[(ij << 2) + orig_orientation] = (pos << 2) + orientation
        _LOOKUP_IJ[(pos << 2) + orig_orientation] = (ij << 2) + orientation
        return
    r = _POS_TO_IJ[orientation]
    for index in range(4):
        _init_lookup(level + 1, (i << 1) + (r[index] >> 1), (j << 1) + (r[index] & 1),
                     orig_orientation, (pos << 2) + index,
                     orientation ^ _POS_TO_ORIENTATION[index])


for _o in (0, _SWAP_MASK, _INVERT_MASK, _SWAP_MASK | _INVERT_MASK):
    _init_lookup(0, 0, 0, _o, 0, _o)


@dataclass(frozen=True)
class LatLng:
    """A point on the sphere in degrees."""

    lat: float
    lng: float

    def __post_init__(self):
        lat, lng = float(self.lat), float(self.lng)
        if not (math.isfinite(lat) and math.isfinite(lng)):
            raise GridError(f"non-finite coordinate ({self.lat}, {self.lng})")
        if not -90.0 <= lat <= 90.0:
            raise GridError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lng <= 180.0:
            raise GridError(f"longitude {lng} outside [-180, 180]")
        if lng == -180.0:
            lng = 180.0
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lng", lng)


def _check_level(level):
    if not isinstance(level, int) or isinstance(level, bool) or not 0 <= level <= MAX_LEVEL:
        raise GridError(f"level must be an integer in [0, {MAX_LEVEL}], got {level!r}")


def _lsb_for_level(level):
    return 1 << (2 * (MAX_LEVEL - level))


@dataclass(frozen=True, order=True)
class CellId:
    id: int

    def __post_init__(self):
        if not isinstance(self.id, int) or not 0 < self.id <= _U64 or not _is_valid_id(self.id):
            raise GridError(f"invalid cell id {self.id!r}")

    @property
    def face(self) -> int:
        return self.id >> POS_BITS

    @property
    def lsb(self) -> int:
        return self.id & -self.id

    def level(self) -> int:
        return MAX_LEVEL - ((self.lsb.bit_length() - 1) >> 1)

    def is_leaf(self) -> bool:
        return self.id & 1 == 1

    def parent(self, level: int | None = None) -> "CellId":
        return parent(self, self.level() - 1 if level is None else level)

    def children(self) -> list["CellId"]:
        if self.is_leaf():
            raise GridError("leaf cells have no children")
        new_lsb = self.lsb >> 2
        first = self.id - self.lsb + new_lsb
        return [CellId(first + 2 * k * new_lsb) for k in range(4)]

    def range_min(self) -> int:
        return self.id - (self.lsb - 1)

    def range_max(self) -> int:
        return self.id + (self.lsb - 1)

    def contains(self, other: "CellId") -> bool:
        return self.range_min() <= other.id <= self.range_max()

    def token(self) -> str:
        return cell_token(self)

    def center(self) -> LatLng:
        return cell_center(self)

    def __repr__(self):
        return f"CellId({self.token()!r}, level={self.level()})"


def _is_valid_id(n):
    return (n >> POS_BITS) < 6 and ((n & -n) & 0x1555555555555555) != 0


# -- projection ------------------------------------------------------------

def _uv_to_st(u):
    if u >= 0.0:
        return 0.5 * math.sqrt(1.0 + 3.0 * u)
    return 1.0 - 0.5 * math.sqrt(1.0 - 3.0 * u)


def _st_to_uv(s):
    if s >= 0.5:
        return (1.0 / 3.0) * (4.0 * s * s - 1.0)
    return (1.0 / 3.0) * (1.0 - 4.0 * (1.0 - s) * (1.0 - s))


def _st_to_ij(s):
    return max(0, min(MAX_SIZE - 1, int(math.floor(MAX_SIZE * s))))


def _xyz_to_face_uv(x, y, z):
    ax, ay, az = abs(x), abs(y), abs(z)
    if ax > ay:
        face = 0 if ax > az else 2
    else:
        face = 1 if ay > az else 2
    if (x, y, z)[face] < 0:
        face += 3
    if face == 0:
        u, v = y / x, z / x
    elif face == 1:
        u, v = -x / y, z / y
    elif face == 2:
        u, v = -x / z, -y / z
    elif face == 3:
        u, v = z / x, y / x
    elif face == 4:
        u, v = z / y, -x / y
    else:
        u, v = -y / z, -x / z
    return face, u, v


def _face_uv_to_xyz(face, u, v):
    if face == 0:
        return 1.0, u, v
    if face == 1:
        return -u, 1.0, v
    if face == 2:
        return -u, -v, 1.0
    if face == 3:
        return -1.0, -v, -u
    if face == 4:
        return v, -1.0, -u
    return v, u, -1.0


def _from_face_ij(face, i, j):
    n = face << (POS_BITS - 1)
    bits = face & _SWAP_MASK
    mask = (1 << _LOOKUP_BITS) - 1
    for k in range(7, -1, -1):
        bits += ((i >> (k * _LOOKUP_BITS)) & mask) << (_LOOKUP_BITS + 2)
        bits += ((j >> (k * _LOOKUP_BITS)) & mask) << 2
        bits = _LOOKUP_POS[bits]
        n |= (bits >> 2) << (k * 2 * _LOOKUP_BITS)
        bits &= _SWAP_MASK | _INVERT_MASK
    return n * 2 + 1


def _to_face_ij(n):
    i = j = 0
    face = n >> POS_BITS
    bits = face & _SWAP_MASK
    for k in range(7, -1, -1):
        nbits = MAX_LEVEL - 7 * _LOOKUP_BITS if k == 7 else _LOOKUP_BITS
        bits += ((n >> (k * 2 * _LOOKUP_BITS + 1)) & ((1 << (2 * nbits)) - 1)) << 2
        bits = _LOOKUP_IJ[bits]
        i += (bits >> (_LOOKUP_BITS + 2)) << (k * _LOOKUP_BITS)
        j += ((bits >> 2) & ((1 << _LOOKUP_BITS) - 1)) << (k * _LOOKUP_BITS)
        bits &= _SWAP_MASK | _INVERT_MASK
    return face, i, j


# -- public operations -----------------------------------------------------

def latlng_to_cell(point: LatLng, level: int = MAX_LEVEL) -> CellId:
    """Return the cell at ``level`` containing ``point``."""
    if not isinstance(point, LatLng):
        point = LatLng(*point)
    _check_level(level)
    lat, lng = math.radians(point.lat), math.radians(point.lng)
    x = math.cos(lat) * math.cos(lng)
    y = math.cos(lat) * math.sin(lng)
    z = math.sin(lat)
    face, u, v = _xyz_to_face_uv(x, y, z)
    leaf = _from_face_ij(face, _st_to_ij(_uv_to_st(u)), _st_to_ij(_uv_to_st(v)))
    return parent(CellId(leaf), level)


def parent(cell: CellId, level: int) -> CellId:
    _check_level(level)
    if level > cell.level():
        raise GridError(f"requested parent level {level} is finer than cell level {cell.level()}")
    new_lsb = _lsb_for_level(level)
    return CellId((cell.id & -new_lsb) | new_lsb)


def cell_center(cell: CellId) -> LatLng:
    """Center of the cell, computed in (s, t) space as S2 does."""
    face, i, j = _to_face_ij(cell.id)
    if cell.is_leaf():
        delta = 1
    elif (i ^ (cell.id >> 2)) & 1:
        delta = 2
    else:
        delta = 0
    si, ti = 2 * i + delta, 2 * j + delta
    u = _st_to_uv(si / MAX_SI)
    v = _st_to_uv(ti / MAX_SI)
    x, y, z = _face_uv_to_xyz(face, u, v)
    lat = math.degrees(math.atan2(z, math.sqrt(x * x + y * y)))
    lng = math.degrees(math.atan2(y, x))
    return LatLng(lat, lng)


def cell_token(cell: CellId) -> str:
    return f"{cell.id:016x}".rstrip("0")


def token_to_cell(token: str) -> CellId:
    if not isinstance(token, str) or not 0 < len(token) <= 16:
        raise TokenParseError(f"token must be 1-16 hex characters, got {token!r}")
    text = token.lower()
    if any(ch not in HEX_ALPHABET for ch in text):
        raise TokenParseError(f"non-hex character in token {token!r}")
    n = int(text.ljust(16, "0"), 16)
    if n == 0 or not _is_valid_id(n):
        raise TokenParseError(f"token {token!r} is not a valid cell")
    return CellId(n)


def token_length(level: int) -> int:
    return 1 + (level + 1) // 2


def token_ladder(cell: CellId, levels=range(1, CODE_LEVELS + 1)) -> list[str]:
    return [cell_token(parent(cell, lv)) for lv in levels]


# -- multi-level geocode ----------------------------------------------------

def encode_2lt3c(cell: CellId) -> str:
    """Pack the tokens of levels 1..22 of a level-22 cell into 33 characters.

    Each pair of levels (2n-1, 2n) contributes, in order, the last character
    of the odd-level token, the last character of the even-level token and
    their shared penultimate character.
    """
    if cell.level() != CODE_LEVELS:
        raise GridError(f"geocode needs a level-{CODE_LEVELS} cell, got level {cell.level()}")
    return encode_levels(cell, CODE_LEVELS)


def encode_levels(cell: CellId, max_level: int) -> str:
    """Geocode groups for levels 1..max_level (even), a prefix of the full code."""
    if max_level % 2 or not 2 <= max_level <= cell.level():
        raise GridError(f"cannot encode levels 1..{max_level} of a level-{cell.level()} cell")
    out = []
    for n in range(1, max_level // 2 + 1):
        odd = cell_token(parent(cell, 2 * n - 1))
        even = cell_token(parent(cell, 2 * n))
        out.append(odd[-1] + even[-1] + even[-2])
    return "".join(out)


def decode_2lt3c(code: str, allow_partial: bool = False) -> list[str]:
    """Rebuild the token ladder from a geocode.

    Returns tokens for levels 1..2k where k is the number of 3-character
    groups (11 for a full code).  ``allow_partial`` accepts any whole number
    of groups up to 11.
    """
    if not isinstance(code, str):
        raise TokenParseError(f"geocode must be a string, got {type(code).__name__}")
    text = code.replace(" ", "").lower() if allow_partial else code
    if allow_partial:
        if not text or len(text) % 3 or len(text) > CODE_LENGTH:
            raise TokenParseError(f"partial geocode must have 3..{CODE_LENGTH} chars in groups of 3")
    elif len(text) != CODE_LENGTH:
        raise TokenParseError(f"geocode must have {CODE_LENGTH} characters, got {len(text)}")
    if any(ch not in HEX_ALPHABET for ch in text):
        raise TokenParseError(f"geocode has characters outside [0-9a-f]: {code!r}")

    tokens = []
    prefix = ""
    previous = None
    for n in range(len(text) // 3):
        last_odd, last_even, penult = text[3 * n:3 * n + 3]
        odd = prefix + penult + last_odd
        even = prefix + penult + last_even
        for level, tok in ((2 * n + 1, odd), (2 * n + 2, even)):
            try:
                cell = token_to_cell(tok)
            except TokenParseError as exc:
                raise CodeConsistencyError(f"level {level} decodes to invalid token {tok!r}") from exc
            if cell.level() != level:
                raise CodeConsistencyError(
                    f"level {level} decodes to {tok!r}, which is a level-{cell.level()} cell")
            if previous is not None and not previous.contains(cell):
                raise CodeConsistencyError(f"level {level} token {tok!r} escapes its parent")
            previous = cell
            tokens.append(tok)
        prefix = even[:-1]
    return tokens


def deepest_consistent(code: str) -> tuple[CellId, bool]:
    """Deepest cell reachable from a possibly damaged geocode.

    Walks the levels in order and stops at the first one that does not
    decode to a valid child of the previous level.  Returns the cell and a
    flag that is True when all 22 levels decoded.
    """
    best = None
    prefix = ""
    for n in range(len(code) // 3):
        group = code[3 * n:3 * n + 3].lower()
        for level, last in ((2 * n + 1, group[0]), (2 * n + 2, group[1])):
            try:
                cell = token_to_cell(prefix + group[2] + last)
            except TokenParseError:
                cell = None
            if cell is None or cell.level() != level or (best is not None and not best.contains(cell)):
                if best is None:
                    raise CodeConsistencyError(f"geocode {code!r} has no decodable level")
                return best, False
            best = cell
        prefix = prefix + group[2]
    if best is None:
        raise CodeConsistencyError(f"geocode {code!r} has no decodable level")
    return best, best.level() == CODE_LEVELS


def format_code(code: str) -> str:
    """Display form with a space between 3-character groups."""
    return " ".join(code[k:k + 3] for k in range(0, len(code), 3))
