"""Instance generators: the worked two-bidder example, random instances for
sweeps, and random multiplier draws.

Random instances use small decimal grids (tenths and hundredths) so that the
rational arithmetic path stays exact and fast; float-mode consumers can
convert with AuctionInstance.as_float().
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .model import AuctionInstance, InvalidInputError, Mechanism, Scalar


def example1_instance(
    mechanism: Mechanism = Mechanism.GSP, self_pricing: bool = False
) -> AuctionInstance:
    """Two bidders, two ads each, three slots with CTRs 1.0/0.7/0.5.

    Bidder 1 values (10, 8), bidder 2 values (15, 6). At identity multipliers
    this produces the classic outcome: allocation B1, A1, A2; second-price
    payments 7.2 and 10; externality payments 4.2 and 4.6.
    """
    return AuctionInstance(
        values=((10, 8), (15, 6)),
        ctrs=(1, Fraction(7, 10), Fraction(1, 2)),
        cap=10,
        mechanism=mechanism,
        self_pricing=self_pricing,
        bidder_ids=("bidder1", "bidder2"),
    )


def random_instance(
    rng: np.random.Generator,
    max_bidders: int = 3,
    max_items: int = 3,
    max_slots: int = 4,
    max_total_items: int | None = None,
    mechanism: Mechanism | None = None,
    allow_zero_values: bool = True,
    cap_range: tuple[float, float] = (1, 10),
) -> AuctionInstance:
    """Random small instance on a decimal value grid.

    Values are multiples of 1/10 in [0, 10], CTRs multiples of 1/100 in
    (0, 1], and the cap a multiple of 1/10 drawn from `cap_range`.
    `max_total_items` caps the catalog union size by redrawing per-bidder
    counts.
    """
    n = int(rng.integers(1, max_bidders + 1))
    while True:
        counts = [int(rng.integers(1, max_items + 1)) for _ in range(n)]
        if max_total_items is None or sum(counts) <= max_total_items:
            break
    lo = 0 if allow_zero_values else 1
    values = []
    for m in counts:
        vals = sorted(
            (Fraction(int(rng.integers(lo, 101)), 10) for _ in range(m)), reverse=True
        )
        values.append(tuple(vals))
    k = int(rng.integers(1, max_slots + 1))
    ctrs = sorted(
        (Fraction(int(rng.integers(1, 101)), 100) for _ in range(k)), reverse=True
    )
    cap_lo = max(10, int(round(cap_range[0] * 10)))
    cap_hi = max(cap_lo, int(round(cap_range[1] * 10)))
    cap = Fraction(int(rng.integers(cap_lo, cap_hi + 1)), 10)
    if mechanism is None:
        mechanism = Mechanism.GSP if rng.integers(2) == 0 else Mechanism.VCG
    return AuctionInstance(
        values=tuple(values), ctrs=tuple(ctrs), cap=cap, mechanism=mechanism
    )


def random_multipliers(
    rng: np.random.Generator, instance: AuctionInstance, denominator: int = 20
) -> tuple[Scalar, ...]:
    """Random rational multipliers on a uniform grid over [1, cap]."""
    cap = Fraction(instance.cap)
    out = []
    for _ in range(instance.num_bidders):
        t = Fraction(int(rng.integers(0, denominator + 1)), denominator)
        out.append(1 + (cap - 1) * t)
    return tuple(out)
