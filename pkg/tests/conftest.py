"""Shared fixtures: repo paths and a seeded random-graph generator."""

from __future__ import annotations

import random
from pathlib import Path

import pytest

from threatforge import dfd

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES = REPO_ROOT / "fixtures"

_WORDS = (
    "Teller", "Vault", "Ledger", "Gateway", "Router", "Archive", "Portal",
    "Clerk", "Desk", "Branch", "Wire", "Card", "Audit", "Batch", "Kiosk",
)


@pytest.fixture
def bank_account_source() -> str:
    return (FIXTURES / "bank_account.dfd").read_text(encoding="utf-8")


@pytest.fixture
def bank_account_graph(bank_account_source) -> dfd.DfdGraph:
    return dfd.parse_dfd(bank_account_source)


def make_random_graph(rng: random.Random) -> dfd.DfdGraph:
    """A random valid graph: unique ids, consistent references, elements
    in at most one boundary, self-loops always marked."""
    n_elements = rng.randint(1, 6)
    kinds = [rng.choice(list(dfd.ElementKind)) for _ in range(n_elements)]
    names = [f"{rng.choice(_WORDS)} {i + 1}" for i in range(n_elements)]
    elements = []
    for name, kind in zip(names, kinds):
        attrs = []
        for key, values in dfd.ATTRIBUTE_VALUES.items():
            if rng.random() < 0.4:
                attrs.append((key, rng.choice(sorted(values))))
        elements.append(dfd.DfdElement(name, name, kind, tuple(attrs)))

    boundaries = []
    if n_elements >= 2 and rng.random() < 0.6:
        pool = names[:]
        rng.shuffle(pool)
        cut = rng.randint(1, len(pool))
        members = tuple(pool[:cut])
        boundaries.append(dfd.TrustBoundary("Zone A", "Zone A", members))
        if len(pool) - cut >= 2 and rng.random() < 0.5:
            boundaries.append(dfd.TrustBoundary("Zone B", "Zone B", tuple(pool[cut:])))
    boundary_ids = [b.id for b in boundaries]

    flows = []
    for i in range(rng.randint(0, 5)):
        source = rng.choice(names)
        sink = rng.choice(names)
        crosses = tuple(b for b in boundary_ids if rng.random() < 0.4)
        flows.append(
            dfd.DataFlow(
                id=f"Flow {i + 1}",
                name=f"Flow {i + 1}",
                source=source,
                sink=sink,
                crosses=crosses,
                self_loop=source == sink,
            )
        )

    return dfd.DfdGraph(
        title=f"{rng.choice(_WORDS)} System",
        elements=tuple(elements),
        flows=tuple(flows),
        boundaries=tuple(boundaries),
    )
