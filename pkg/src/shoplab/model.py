"""Core data model for multi-item position auctions.

An auction has n bidders, each with a catalog of items, and K slots with
non-increasing click-through rates. Items are addressed by (bidder, index)
pairs in catalog order. Every numeric field accepts int, float, or
fractions.Fraction; downstream computations stay in whatever arithmetic the
instance carries, so feeding Fractions keeps all mechanism accounting exact.

All types here are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from typing import Iterator, Sequence, Union

Scalar = Union[int, float, Fraction]
Item = tuple[int, int]

# Tie-break distributions must have probabilities summing to 1 within this.
PROB_TOL = 1e-12


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class CombinatorialBlowupError(RuntimeError):
    """An enumeration would exceed the caller-supplied limit."""

    def __init__(self, count: int, limit: int):
        super().__init__(f"{count} valid allocations exceed limit {limit}")
        self.count = count
        self.limit = limit


class ContractViolationError(RuntimeError):
    """A cross-module contract was broken (e.g. invalid allocation in a distribution)."""


class Mechanism(Enum):
    GSP = "gsp"
    VCG = "vcg"


def _is_non_increasing(xs: Sequence[Scalar]) -> bool:
    return all(xs[i] >= xs[i + 1] for i in range(len(xs) - 1))


@dataclass(frozen=True)
class AuctionInstance:
    """Immutable auction description: values, CTRs, multiplier cap, payment rule.

    values[i][j] is bidder i's true value for their j-th item, non-increasing
    in j. ctrs holds the K slot click-through rates, non-increasing with
    ctrs[0] <= 1 and ctrs[-1] > 0. K may exceed the total item count; trailing
    slots then stay empty with zero value and zero payment.
    """

    values: tuple[tuple[Scalar, ...], ...]
    ctrs: tuple[Scalar, ...]
    cap: Scalar
    mechanism: Mechanism = Mechanism.GSP
    self_pricing: bool = False
    bidder_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(tuple(v) for v in self.values))
        object.__setattr__(self, "ctrs", tuple(self.ctrs))
        if self.bidder_ids is not None:
            object.__setattr__(self, "bidder_ids", tuple(self.bidder_ids))
        if len(self.values) == 0:
            raise InvalidInputError("instance needs at least one bidder")
        for i, vals in enumerate(self.values):
            if len(vals) == 0:
                raise InvalidInputError(f"bidder {i} has no items")
            if any(v < 0 for v in vals):
                raise InvalidInputError(f"bidder {i} has a negative value")
            if not _is_non_increasing(vals):
                raise InvalidInputError(f"bidder {i} values are not non-increasing")
        if len(self.ctrs) > 0:
            if self.ctrs[0] > 1:
                raise InvalidInputError("ctrs[0] must be <= 1")
            if self.ctrs[-1] <= 0:
                raise InvalidInputError("ctrs must be positive")
            if not _is_non_increasing(self.ctrs):
                raise InvalidInputError("ctrs are not non-increasing")
        if self.cap < 1:
            raise InvalidInputError("multiplier cap must be >= 1")
        if self.bidder_ids is not None and len(self.bidder_ids) != len(self.values):
            raise InvalidInputError("bidder_ids length mismatch")

    @property
    def num_bidders(self) -> int:
        return len(self.values)

    @property
    def items_per_bidder(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.values)

    @property
    def num_items(self) -> int:
        return sum(len(v) for v in self.values)

    @property
    def num_slots(self) -> int:
        return len(self.ctrs)

    @property
    def ids(self) -> tuple[str, ...]:
        if self.bidder_ids is not None:
            return self.bidder_ids
        return tuple(f"b{i}" for i in range(self.num_bidders))

    def items(self) -> Iterator[Item]:
        """All item ids in bidder-major catalog order."""
        for i, vals in enumerate(self.values):
            for j in range(len(vals)):
                yield (i, j)

    def value(self, item: Item) -> Scalar:
        return self.values[item[0]][item[1]]

    @property
    def max_value(self) -> Scalar:
        return max(max(v) for v in self.values)

    def as_float(self) -> "AuctionInstance":
        """Copy of the instance with every scalar converted to float."""
        return AuctionInstance(
            values=tuple(tuple(float(v) for v in vals) for vals in self.values),
            ctrs=tuple(float(c) for c in self.ctrs),
            cap=float(self.cap),
            mechanism=self.mechanism,
            self_pricing=self.self_pricing,
            bidder_ids=self.bidder_ids,
        )

    def as_exact(self) -> "AuctionInstance":
        """Copy with every scalar as an exact Fraction (floats keep their
        exact binary value), so downstream arithmetic is exact."""
        return AuctionInstance(
            values=tuple(tuple(Fraction(v) for v in vals) for vals in self.values),
            ctrs=tuple(Fraction(c) for c in self.ctrs),
            cap=Fraction(self.cap),
            mechanism=self.mechanism,
            self_pricing=self.self_pricing,
            bidder_ids=self.bidder_ids,
        )


@dataclass(frozen=True)
class BidProfile:
    """One bid per item, mirroring the instance's per-bidder catalog shape."""

    bids: tuple[tuple[Scalar, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "bids", tuple(tuple(b) for b in self.bids))

    def of(self, item: Item) -> Scalar:
        return self.bids[item[0]][item[1]]

    def items(self) -> Iterator[Item]:
        for i, row in enumerate(self.bids):
            for j in range(len(row)):
                yield (i, j)

    @property
    def num_items(self) -> int:
        return sum(len(row) for row in self.bids)


@dataclass(frozen=True)
class Allocation:
    """A full ranking of all items; the first K entries are the allocated slots."""

    ranking: tuple[Item, ...]

    def __post_init__(self):
        object.__setattr__(self, "ranking", tuple(tuple(it) for it in self.ranking))

    def __len__(self) -> int:
        return len(self.ranking)

    def at(self, k: int) -> Item:
        """Item at 1-based rank k."""
        return self.ranking[k - 1]


@dataclass(frozen=True)
class TieBreakDistribution:
    """Finite distribution over allocations, used as a tie-breaking rule."""

    support: tuple[tuple[Allocation, Scalar], ...]

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(self.support))
        if len(self.support) == 0:
            raise InvalidInputError("empty tie-break distribution")
        total = 0
        for alloc, p in self.support:
            if p <= 0:
                raise InvalidInputError("tie-break probabilities must be positive")
            total = total + p
        if abs(total - 1) > PROB_TOL:
            raise InvalidInputError(f"tie-break probabilities sum to {total}, not 1")

    @classmethod
    def point_mass(cls, allocation: Allocation) -> "TieBreakDistribution":
        return cls(support=((allocation, 1),))

    def check_valid_under(self, bids: BidProfile) -> None:
        """Raise ContractViolationError unless every supported allocation is valid."""
        for idx, (alloc, _) in enumerate(self.support):
            if not is_valid(alloc, bids):
                raise ContractViolationError(
                    f"supported allocation #{idx} is not valid under the bids"
                )


def check_multipliers(instance: AuctionInstance, alpha: Sequence[Scalar]) -> tuple[Scalar, ...]:
    """Validate a multiplier vector against the instance; returns it as a tuple."""
    alpha = tuple(alpha)
    if len(alpha) != instance.num_bidders:
        raise InvalidInputError(
            f"{len(alpha)} multipliers for {instance.num_bidders} bidders"
        )
    for i, a in enumerate(alpha):
        if a < 1 or a > instance.cap:
            raise InvalidInputError(f"multiplier {a} for bidder {i} outside [1, cap]")
    return alpha


def induce_bids(instance: AuctionInstance, alpha: Sequence[Scalar]) -> BidProfile:
    """Uniform bidding: bidder i bids alpha[i] * value on each of their items."""
    alpha = check_multipliers(instance, alpha)
    return BidProfile(
        bids=tuple(
            tuple(alpha[i] * v for v in vals) for i, vals in enumerate(instance.values)
        )
    )


def is_valid(allocation: Allocation, bids: BidProfile) -> bool:
    """True iff the ranking orders items by non-increasing bid."""
    items = set(bids.items())
    if set(allocation.ranking) != items or len(allocation.ranking) != len(items):
        raise InvalidInputError("allocation does not cover exactly the bid items")
    seq = [bids.of(it) for it in allocation.ranking]
    return _is_non_increasing(seq)


def enumerate_valid_allocations(bids: BidProfile, limit: int = 10_000) -> list[Allocation]:
    """All rankings consistent with non-increasing bids.

    These are exactly the products of within-tie-group permutations, so the
    count is the product of factorials of tie-group sizes. Raises
    CombinatorialBlowupError (carrying the exact count) when that product
    exceeds `limit`.
    """
    items = sorted(bids.items(), key=lambda it: (-bids.of(it),) + it)
    groups: list[list[Item]] = []
    for _, grp in itertools.groupby(items, key=bids.of):
        groups.append(list(grp))
    count = 1
    for g in groups:
        count *= math.factorial(len(g))
    if count > limit:
        raise CombinatorialBlowupError(count, limit)
    out = []
    for combo in itertools.product(*(itertools.permutations(g) for g in groups)):
        out.append(Allocation(ranking=tuple(itertools.chain.from_iterable(combo))))
    return out


def prefix_set(allocation: Allocation, k: int) -> frozenset[Item]:
    """Items holding the first k slots; empty for k = 0."""
    if k < 0 or k > len(allocation.ranking):
        raise InvalidInputError(f"prefix length {k} outside [0, {len(allocation.ranking)}]")
    return frozenset(allocation.ranking[:k])


# ---------------------------------------------------------------------------
# Instance file format (see docs/schemas.md for the field-by-field contract)
# ---------------------------------------------------------------------------


def _exact_decimal(x: Fraction) -> str | None:
    """Exact decimal string for a Fraction, or None if it does not terminate."""
    num, den = x.numerator, x.denominator
    if den == 1:
        return str(num)
    d = den
    e2 = e5 = 0
    while d % 2 == 0:
        d //= 2
        e2 += 1
    while d % 5 == 0:
        d //= 5
        e5 += 1
    if d != 1:
        return None
    k = max(e2, e5)
    scaled = abs(num) * (10**k // den)
    s = str(scaled).rjust(k + 1, "0")
    return ("-" if num < 0 else "") + s[:-k] + "." + s[-k:]


def format_scalar(x: Scalar) -> str:
    """Deterministic text form of a scalar, exact for ints and decimal Fractions."""
    if isinstance(x, bool):  # bools are ints; reject early
        raise InvalidInputError("boolean is not a scalar")
    if isinstance(x, int):
        return str(x)
    if isinstance(x, Fraction):
        dec = _exact_decimal(x)
        return dec if dec is not None else repr(float(x))
    if isinstance(x, float):
        if not math.isfinite(x):
            return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
        return repr(x)
    raise InvalidInputError(f"unsupported scalar type {type(x)!r}")


def _parse_number(token: str) -> Fraction | int:
    frac = Fraction(Decimal(token))
    return int(frac) if frac.denominator == 1 else frac


def parse_instance(text: str, arith: str = "rational") -> AuctionInstance:
    """Parse an instance file body.

    arith="rational" reads decimal literals exactly as Fractions; "float"
    reads them as doubles.
    """
    if arith == "rational":
        obj = json.loads(text, parse_float=_parse_number, parse_int=_parse_number)
    elif arith == "float":
        obj = json.loads(text, parse_int=float)
    else:
        raise InvalidInputError(f"unknown arithmetic mode {arith!r}")
    if not isinstance(obj, dict):
        raise InvalidInputError("instance file must hold a single object")
    try:
        ctrs = obj["ctrs"]
        cap = obj["cap"]
        mechanism = Mechanism(str(obj["mechanism"]).lower())
        bidders = obj["bidders"]
    except KeyError as e:
        raise InvalidInputError(f"instance file missing field {e.args[0]!r}") from None
    except ValueError:
        raise InvalidInputError(f"unknown mechanism {obj.get('mechanism')!r}") from None
    self_pricing = bool(obj.get("self_pricing", False))
    if not isinstance(bidders, list) or not bidders:
        raise InvalidInputError("field 'bidders' must be a non-empty list")
    ids = []
    values = []
    for idx, b in enumerate(bidders):
        try:
            ids.append(str(b["id"]))
            values.append(tuple(b["values"]))
        except (KeyError, TypeError):
            raise InvalidInputError(f"bidders[{idx}] needs 'id' and 'values'") from None
    return AuctionInstance(
        values=tuple(values),
        ctrs=tuple(ctrs),
        cap=cap,
        mechanism=mechanism,
        self_pricing=self_pricing,
        bidder_ids=tuple(ids),
    )


def dumps_instance(instance: AuctionInstance) -> str:
    """Canonical instance file body: fixed field order, deterministic bytes."""
    lines = ["{"]
    ctrs = ", ".join(format_scalar(c) for c in instance.ctrs)
    lines.append(f'  "ctrs": [{ctrs}],')
    lines.append(f'  "cap": {format_scalar(instance.cap)},')
    lines.append(f'  "mechanism": "{instance.mechanism.value}",')
    lines.append(f'  "self_pricing": {"true" if instance.self_pricing else "false"},')
    lines.append('  "bidders": [')
    rows = []
    for i, vals in enumerate(instance.values):
        vs = ", ".join(format_scalar(v) for v in vals)
        rows.append(f'    {{"id": {json.dumps(instance.ids[i])}, "values": [{vs}]}}')
    lines.append(",\n".join(rows))
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def load_instance(path, arith: str = "rational") -> AuctionInstance:
    with open(path, "r", encoding="utf-8") as f:
        return parse_instance(f.read(), arith=arith)


def save_instance(instance: AuctionInstance, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_instance(instance))
