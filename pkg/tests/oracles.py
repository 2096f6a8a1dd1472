"""Independent oracles the tests score the pipeline against.

Nothing here touches the planner, the graph, or the executor: the BFS
searches raw primitives against its own success predicates, the assignment
oracle enumerates permutations, and the signature example is worked by hand.
"""

from __future__ import annotations

import itertools
import math
from collections import deque

from tableplan.world import ARM_CLASS, Primitive, WorldState, apply_primitive


# -- minimal-solution search ----------------------------------------------------


def _task_params(world: WorldState, task: str, variant: str) -> dict:
    if task == "pnp_twice":
        cube = world.by_class("cube")[0]
        start = cube.container_of
        other = [p.id for p in world.by_class("plate") if p.id != start][0]
        return {"cube": cube.id, "start": start, "other": other}
    if task == "place_and_stack":
        cube = world.by_class("cube")[0]
        cups = sorted(world.by_class("cup"),
                      key=lambda c: math.hypot(c.x - cube.x, c.y - cube.y))
        return {"cube": cube.id, "near": cups[0].id, "other": cups[1].id}
    if task == "swap_cups":
        cups = world.by_class("cup")
        first = [c for c in cups if c.attribute("color") == variant][0]
        second = [c for c in cups if c.id != first.id][0]
        return {"first": first.id, "second": second.id,
                "first_src": first.container_of,
                "second_src": second.container_of}
    raise ValueError(task)


def _success(world: WorldState, task: str, params: dict, extra: tuple) -> bool:
    if task == "pnp_twice":
        visited = extra[0]
        return visited and world.get(params["cube"]).container_of == params["start"]
    if task == "place_and_stack":
        return (world.get(params["cube"]).container_of == params["near"]
                and world.get(params["other"]).support_of == params["near"])
    first_picked = extra[0]
    return (world.get(params["first"]).container_of == params["second_src"]
            and world.get(params["second"]).container_of == params["first_src"]
            and first_picked == params["first"])


def _advance_extra(task: str, params: dict, extra: tuple, prim: Primitive,
                   world_after: WorldState) -> tuple:
    if task == "pnp_twice":
        if world_after.get(params["cube"]).container_of == params["other"]:
            return (True,)
        return extra
    if task == "swap_cups":
        if (extra[0] is None and prim.kind == "pick"
                and prim.target in (params["first"], params["second"])):
            return (prim.target,)
        return extra
    return extra


def _state_key(world: WorldState, extra: tuple) -> tuple:
    topo = tuple((o.id, o.container_of, o.support_of) for o in world.objects)
    return (world.gripper.held, topo, extra)


def _legal_moves(world: WorldState) -> list:
    ids = [o.id for o in world.objects if o.class_name != ARM_CLASS]
    occupied = {o.container_of for o in world.objects
                if o.container_of is not None}
    moves = []
    if world.gripper.free:
        moves += [Primitive(kind="pick", target=i) for i in ids]
    else:
        held = world.gripper.held
        for i in ids:
            if i == held:
                continue
            # containers take one occupant at a time; a second place_in
            # would physically stack, which no sane plan relies on
            if i not in occupied:
                moves.append(Primitive(kind="place_in", target=i))
            moves.append(Primitive(kind="place_on", target=i))
    return moves


def bfs_min_acts(world0: WorldState, task: str, variant: str = "black",
                 max_depth: int = 8):
    """Fewest pick/place primitives that complete the task, or None.

    Breadth-first over containment topology; the simulator's own transition
    function supplies the dynamics, the success predicate is re-derived here.
    """
    params = _task_params(world0, task, variant)
    extra0 = (False,) if task == "pnp_twice" else \
        ((None,) if task == "swap_cups" else ())
    queue = deque([(world0, extra0, 0)])
    seen = {_state_key(world0, extra0)}
    while queue:
        world, extra, depth = queue.popleft()
        if _success(world, task, params, extra):
            return depth
        if depth == max_depth:
            continue
        for prim in _legal_moves(world):
            world2, result = apply_primitive(world, prim)
            if not result.ok:
                continue
            extra2 = _advance_extra(task, params, extra, prim, world2)
            key = _state_key(world2, extra2)
            if key in seen:
                continue
            seen.add(key)
            queue.append((world2, extra2, depth + 1))
    return None


# -- assignment oracle ------------------------------------------------------------


def min_cost_assignment(cost: list) -> set:
    """Exhaustive minimal-total-cost injection of rows into columns.

    cost is an n x m nested list; returns {(row, col), ...} covering the
    smaller side.  Ties keep the lexicographically first permutation.
    """
    n = len(cost)
    m = len(cost[0]) if n else 0
    if n == 0 or m == 0:
        return set()
    if n > m:
        flipped = [[cost[i][j] for i in range(n)] for j in range(m)]
        return {(i, j) for j, i in min_cost_assignment(flipped)}
    best_total = None
    best = None
    for perm in itertools.permutations(range(m), n):
        total = sum(cost[i][perm[i]] for i in range(n))
        if best_total is None or total < best_total:
            best_total = total
            best = {(i, perm[i]) for i in range(n)}
    return best


# -- hand-worked signature example -------------------------------------------------

# Point (6, 8) against anchors (0, 0) and (10, 0):
#   d1 = sqrt(36 + 64) = 10,  d2 = sqrt(16 + 64) = sqrt(80)
#   normalized by max -> [1, sqrt(80)/10]
HAND_POINT = (6.0, 8.0)
HAND_ANCHORS = [(0.0, 0.0), (10.0, 0.0)]
HAND_SIGNATURE = (1.0, math.sqrt(80.0) / 10.0)
