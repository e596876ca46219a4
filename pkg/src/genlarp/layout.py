"""Tile-grid scene layout: place locations so declared adjacency is physical.

`layout_scene` is a deterministic exhaustive backtracking solver;
`verify_layout` is an independent constraint checker kept free of solver
code so tests can use it as an oracle against solver output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .worldspec import LocationSpec, Violation

OVERLAP = "OVERLAP"
UNPLACED = "UNPLACED"
ADJACENCY_UNMET = "ADJACENCY_UNMET"
OUT_OF_BOUNDS = "OUT_OF_BOUNDS"
UNKNOWN_LOCATION = "UNKNOWN_LOCATION"


class GridTooSmall(Exception):
    """Grid holds fewer tiles than locations; no injective placement exists."""

    def __init__(self, tile_count: int, location_count: int):
        self.tile_count = tile_count
        self.location_count = location_count
        super().__init__(f"grid has {tile_count} tiles for {location_count} locations")


@dataclass(frozen=True)
class SceneLayout:
    grid_size: tuple[int, int]  # (width, height)
    placements: dict[str, tuple[int, int]]  # location id -> (x, y)


def default_grid_size(location_count: int) -> tuple[int, int]:
    """Smallest square whose tile count is at least twice the location count."""
    if location_count <= 0:
        return (0, 0)
    width = math.isqrt(2 * location_count)
    if width * width < 2 * location_count:
        width += 1
    return (width, width)


def _undirected_pairs(locations: list[LocationSpec]) -> set[frozenset]:
    """Adjacency pairs with both endpoints among the given locations.

    A world spec declares adjacency per location; placement constraints are
    undirected.
    """
    ids = {loc.id for loc in locations}
    pairs: set[frozenset] = set()
    for loc in locations:
        for neighbor in loc.adjacent_to:
            if neighbor in ids and neighbor != loc.id:
                pairs.add(frozenset((loc.id, neighbor)))
    return pairs


def layout_scene(
    locations: list[LocationSpec], grid_size: tuple[int, int] | None = None
) -> SceneLayout | None:
    """Place every location on a distinct tile with adjacent pairs touching.

    Locations are processed in id order and candidate tiles in row-major
    order with depth-first backtracking, so identical inputs yield identical
    layouts. Returns None only when the exhaustive search finds no placement.
    """
    if grid_size is None:
        grid_size = default_grid_size(len(locations))
    width, height = grid_size
    if width * height < len(locations):
        raise GridTooSmall(width * height, len(locations))

    neighbors: dict[str, set[str]] = {loc.id: set() for loc in locations}
    for pair in _undirected_pairs(locations):
        first, second = tuple(pair)
        neighbors[first].add(second)
        neighbors[second].add(first)

    order = sorted(neighbors)
    tiles = [(x, y) for y in range(height) for x in range(width)]
    placements: dict[str, tuple[int, int]] = {}
    used: set[tuple[int, int]] = set()

    def fits(location_id: str, tile: tuple[int, int]) -> bool:
        for other in neighbors[location_id]:
            placed = placements.get(other)
            if placed is None:
                continue
            if abs(placed[0] - tile[0]) + abs(placed[1] - tile[1]) != 1:
                return False
        return True

    def place(index: int) -> bool:
        if index == len(order):
            return True
        location_id = order[index]
        for tile in tiles:
            if tile in used or not fits(location_id, tile):
                continue
            placements[location_id] = tile
            used.add(tile)
            if place(index + 1):
                return True
            del placements[location_id]
            used.discard(tile)
        return False

    if place(0):
        return SceneLayout(grid_size=(width, height), placements=dict(placements))
    return None


def verify_layout(layout: SceneLayout, locations: list[LocationSpec]) -> list[Violation]:
    """Check overlap, bounds, completeness, and every adjacency independently."""
    violations: list[Violation] = []
    width, height = layout.grid_size
    ids = {loc.id for loc in locations}

    for location_id in sorted(layout.placements):
        if location_id not in ids:
            violations.append(
                Violation(
                    UNKNOWN_LOCATION,
                    location_id,
                    f"placement for undeclared location {location_id!r}",
                )
            )

    tile_owners: dict[tuple[int, int], str] = {}
    for location_id in sorted(layout.placements):
        tile = tuple(layout.placements[location_id])
        x, y = tile
        if not (0 <= x < width and 0 <= y < height):
            violations.append(
                Violation(
                    OUT_OF_BOUNDS,
                    location_id,
                    f"location {location_id!r} placed at {tile} outside {width}x{height} grid",
                )
            )
        if tile in tile_owners:
            violations.append(
                Violation(
                    OVERLAP,
                    location_id,
                    f"locations {tile_owners[tile]!r} and {location_id!r} share tile {tile}",
                )
            )
        else:
            tile_owners[tile] = location_id

    for loc in sorted(locations, key=lambda item: item.id):
        if loc.id not in layout.placements:
            violations.append(
                Violation(UNPLACED, loc.id, f"location {loc.id!r} has no placement")
            )

    for loc in sorted(locations, key=lambda item: item.id):
        for neighbor in loc.adjacent_to:
            if neighbor not in ids or neighbor == loc.id:
                continue  # dangling and self references are the validator's job
            first = layout.placements.get(loc.id)
            second = layout.placements.get(neighbor)
            if first is None or second is None:
                continue  # already reported as UNPLACED
            distance = abs(first[0] - second[0]) + abs(first[1] - second[1])
            if distance != 1:
                violations.append(
                    Violation(
                        ADJACENCY_UNMET,
                        f"{loc.id}->{neighbor}",
                        f"adjacent locations {loc.id!r} and {neighbor!r} placed "
                        f"at distance {distance}",
                    )
                )
    return violations


def layout_to_dict(layout: SceneLayout) -> dict:
    """Export shape consumed by the map view: {grid: [w, h], tiles: [...]}."""
    return {
        "grid": [layout.grid_size[0], layout.grid_size[1]],
        "tiles": [
            {"id": location_id, "x": tile[0], "y": tile[1]}
            for location_id, tile in sorted(layout.placements.items())
        ],
    }
