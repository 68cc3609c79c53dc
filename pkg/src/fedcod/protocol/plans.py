"""Static routing decisions: upload block placement, AGR mapping, HierFL trees."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidConfig, InvalidParameter
from .variants import SERVER, Upload, Variant, upload_mode


def agr_relay(j: int, n: int) -> int:
    """Client responsible for aggregating block index ``j``."""
    return j % n


def upload_plan(client: int, n: int, k: int, r: int, variant) -> list[tuple[int, int]]:
    """``(destination, block_index)`` for each of the client's ``k + r`` blocks.

    The destination is ``SERVER``, another client, or ``client`` itself when a
    Coded-AGR index maps back onto the sender (aggregate locally).
    """
    if r < 0:
        raise InvalidParameter(f"redundancy must be >= 0, got {r}")
    if not 0 <= client < n:
        raise InvalidParameter(f"client {client} outside [0, {n})")
    mode = upload_mode(Variant(variant))
    if mode in (Upload.AGR_WAIT, Upload.AGR_NOWAIT):
        return [(agr_relay(j, n), j) for j in range(k + r)]
    if mode == Upload.RELAY:
        plan = [(SERVER, j) for j in range(k)]
        neighbours = [(client + 1 + q) % n for q in range(n - 1)]
        for m in range(r):
            dest = neighbours[m % len(neighbours)] if neighbours else SERVER
            plan.append((dest, k + m))
        return plan
    return [(SERVER, 0)]


def aggregation_weights(sizes=None, n: Optional[int] = None) -> tuple:
    """Dataset-size weights normalised to sum to one (uniform when ``sizes`` is None)."""
    if sizes is None:
        if not n:
            raise InvalidParameter("need sizes or n")
        return tuple([1.0 / n] * n)
    sizes = np.asarray(sizes, dtype=np.float64)
    if (sizes < 0).any() or sizes.sum() <= 0:
        raise InvalidParameter("weights must be nonnegative with a positive sum")
    return tuple((sizes / sizes.sum()).tolist())


@dataclass
class Route:
    """Where a node pulls the model from and pushes its upload to."""

    parent: int = SERVER
    children: list = field(default_factory=list)
    cluster: Optional[str] = None

    @property
    def is_center(self) -> bool:
        return bool(self.children) or self.parent == SERVER


def hierfl_route(clients, clusters: dict) -> dict:
    """Routing table for hierarchical aggregation.

    ``clusters`` maps a cluster name to ``(center, members)``; members may
    list the center too. Returns ``{node: Route}`` including an entry for
    ``SERVER`` whose children are the centers.
    """
    clients = list(clients)
    table = {SERVER: Route(parent=SERVER, children=[])}
    seen = {}
    for name, (center, members) in clusters.items():
        members = [m for m in members if m != center]
        if center not in clients:
            raise InvalidConfig(f"cluster {name!r}: center {center} is not a client")
        for node in [center, *members]:
            if node in seen:
                raise InvalidConfig(f"client {node} in clusters {seen[node]!r} and {name!r}")
            seen[node] = name
        table[SERVER].children.append(center)
        table[center] = Route(parent=SERVER, children=list(members), cluster=name)
        for m in members:
            table[m] = Route(parent=center, children=[], cluster=name)
    if not clusters:
        raise InvalidConfig("hierfl needs at least one cluster")
    missing = [c for c in clients if c not in seen]
    if missing:
        raise InvalidConfig(f"clients {missing} belong to no cluster")
    return table


def cluster_members(routes: dict, center: int) -> list:
    return [center, *routes[center].children]
