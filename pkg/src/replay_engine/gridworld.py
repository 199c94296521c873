"""Two-chamber DoorKey gridworld with symbolic full-grid observations.

A vertical wall with a single locked door splits the grid. The agent spawns
in the left chamber with the key; the goal sits in the right chamber. Reaching
the goal yields 1 - 0.9 * (step / max_steps); every other step yields 0.

Observation encoding (N x N x 3, uint8), cell-major (row, col):
  channel 0, object id: 0 empty, 1 wall, 2 key, 3 door, 4 goal, 5 agent
  channel 1, color id:  0 none, 1 grey (wall), 2 yellow (key/door),
                        3 green (goal), 4 red (agent)
  channel 2, state: door cell holds the door state (0 locked, 1 closed,
                    2 open); the agent cell holds its orientation (0..3);
                    all other cells hold 0.
The agent overdraws the cell it occupies (it can only ever stand on floor or
an open door, so nothing ambiguous is hidden).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from .scorers import EventTag

VALID_SIZES = (6, 8, 12, 16)

# object ids
EMPTY, WALL, KEY, DOOR, GOAL, AGENT = 0, 1, 2, 3, 4, 5
# color ids
C_NONE, C_GREY, C_YELLOW, C_GREEN, C_RED = 0, 1, 2, 3, 4


class Action(IntEnum):
    LEFT = 0
    RIGHT = 1
    FORWARD = 2
    PICKUP = 3
    TOGGLE = 4


class Orientation(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


# (row delta, col delta) per orientation
DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))


class DoorState(IntEnum):
    LOCKED = 0
    CLOSED_UNLOCKED = 1
    OPEN = 2


class InvalidSize(ValueError):
    pass


class EpisodeOver(RuntimeError):
    pass


class Unsolvable(RuntimeError):
    pass


@dataclass
class GridState:
    size: int
    wall_col: int
    agent_row: int
    agent_col: int
    orientation: int
    key_pos: Optional[tuple[int, int]]  # None once carried
    door_cell: tuple[int, int]
    door_state: int
    goal_pos: tuple[int, int]
    carrying_key: bool
    step: int
    max_steps: int
    done: bool = False


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    events: EventTag


def default_max_steps(size: int) -> int:
    return 10 * size * size


def reset(seed: int, size: int, max_steps: Optional[int] = None) -> tuple[GridState, np.ndarray]:
    """Generate a seeded layout and return its initial state and observation."""
    if size not in VALID_SIZES:
        raise InvalidSize(f"size must be one of {VALID_SIZES}, got {size}")
    rng = np.random.default_rng(seed)
    wall_col = int(rng.integers(2, size - 2))
    door_row = int(rng.integers(1, size - 1))

    left = [(r, c) for r in range(1, size - 1) for c in range(1, wall_col)]
    right = [(r, c) for r in range(1, size - 1) for c in range(wall_col + 1, size - 1)]
    agent_i = int(rng.integers(len(left)))
    agent_row, agent_col = left[agent_i]
    orientation = int(rng.integers(4))
    left_rest = left[:agent_i] + left[agent_i + 1 :]
    key_pos = left_rest[int(rng.integers(len(left_rest)))]
    goal_pos = right[int(rng.integers(len(right)))]

    state = GridState(
        size=size,
        wall_col=wall_col,
        agent_row=agent_row,
        agent_col=agent_col,
        orientation=orientation,
        key_pos=key_pos,
        door_cell=(door_row, wall_col),
        door_state=DoorState.LOCKED,
        goal_pos=goal_pos,
        carrying_key=False,
        step=0,
        max_steps=max_steps if max_steps is not None else default_max_steps(size),
    )
    return state, encode(state)


def _is_wall(state: GridState, r: int, c: int) -> bool:
    if r == 0 or c == 0 or r == state.size - 1 or c == state.size - 1:
        return True
    return c == state.wall_col and (r, c) != state.door_cell


def _forward_cell(state: GridState) -> tuple[int, int]:
    dr, dc = DELTAS[state.orientation]
    return state.agent_row + dr, state.agent_col + dc


def step(state: GridState, action: int) -> StepResult:
    """Advance the episode by one action, mutating state in place."""
    if state.done:
        raise EpisodeOver("step() called after the episode ended")
    action = Action(action)
    state.step += 1

    picked = False
    opened = False
    reached = False

    if action is Action.LEFT:
        state.orientation = (state.orientation - 1) % 4
    elif action is Action.RIGHT:
        state.orientation = (state.orientation + 1) % 4
    elif action is Action.FORWARD:
        fr, fc = _forward_cell(state)
        blocked = (
            _is_wall(state, fr, fc)
            or ((fr, fc) == state.door_cell and state.door_state != DoorState.OPEN)
            or (state.key_pos is not None and (fr, fc) == state.key_pos)
        )
        if not blocked:
            state.agent_row, state.agent_col = fr, fc
            if (fr, fc) == state.goal_pos:
                reached = True
    elif action is Action.PICKUP:
        if state.key_pos is not None and _forward_cell(state) == state.key_pos:
            state.key_pos = None
            state.carrying_key = True
            picked = True
    elif action is Action.TOGGLE:
        if _forward_cell(state) == state.door_cell:
            if state.door_state == DoorState.LOCKED:
                if state.carrying_key:
                    state.door_state = DoorState.OPEN
                    opened = True
            elif state.door_state == DoorState.OPEN:
                state.door_state = DoorState.CLOSED_UNLOCKED
            else:
                state.door_state = DoorState.OPEN
                opened = True

    reward = 0.0
    terminated = False
    truncated = False
    if reached:
        terminated = True
        reward = 1.0 - 0.9 * (state.step / state.max_steps)
    elif state.step >= state.max_steps:
        truncated = True
    state.done = terminated or truncated

    return StepResult(
        obs=encode(state),
        reward=reward,
        terminated=terminated,
        truncated=truncated,
        events=EventTag(key_picked_up=picked, door_opened=opened, goal_reached=reached),
    )


def encode(state: GridState) -> np.ndarray:
    obs = np.zeros((state.size, state.size, 3), dtype=np.uint8)
    obj, color, extra = obs[:, :, 0], obs[:, :, 1], obs[:, :, 2]
    for sl in ((0, slice(None)), (-1, slice(None)), (slice(None), 0), (slice(None), -1)):
        obj[sl] = WALL
        color[sl] = C_GREY
    obj[:, state.wall_col] = WALL
    color[:, state.wall_col] = C_GREY
    dr, dc = state.door_cell
    obj[dr, dc] = DOOR
    color[dr, dc] = C_YELLOW
    extra[dr, dc] = state.door_state
    if state.key_pos is not None:
        kr, kc = state.key_pos
        obj[kr, kc] = KEY
        color[kr, kc] = C_YELLOW
    gr, gc = state.goal_pos
    obj[gr, gc] = GOAL
    color[gr, gc] = C_GREEN
    obj[state.agent_row, state.agent_col] = AGENT
    color[state.agent_row, state.agent_col] = C_RED
    extra[state.agent_row, state.agent_col] = state.orientation
    return obs


def state_to_json(state: GridState) -> str:
    d = {
        "size": state.size,
        "wall_col": state.wall_col,
        "agent": [state.agent_row, state.agent_col, int(state.orientation)],
        "key_pos": list(state.key_pos) if state.key_pos is not None else None,
        "door_cell": list(state.door_cell),
        "door_state": int(state.door_state),
        "goal_pos": list(state.goal_pos),
        "carrying_key": state.carrying_key,
        "step": state.step,
        "max_steps": state.max_steps,
        "done": state.done,
    }
    return json.dumps(d, sort_keys=True)


def state_from_json(payload: str) -> GridState:
    d = json.loads(payload)
    return GridState(
        size=d["size"],
        wall_col=d["wall_col"],
        agent_row=d["agent"][0],
        agent_col=d["agent"][1],
        orientation=d["agent"][2],
        key_pos=tuple(d["key_pos"]) if d["key_pos"] is not None else None,
        door_cell=tuple(d["door_cell"]),
        door_state=d["door_state"],
        goal_pos=tuple(d["goal_pos"]),
        carrying_key=d["carrying_key"],
        step=d["step"],
        max_steps=d["max_steps"],
        done=d["done"],
    )


def solve_optimal(state: GridState) -> list[int]:
    """Shortest action sequence to the goal via BFS over (pose, key, door).

    The search replays the exact movement rules of step(); layouts produced
    by reset() are always solvable, so Unsolvable indicates a generator bug.
    """
    if state.done:
        raise EpisodeOver("cannot plan from a finished episode")
    key_home = state.key_pos
    start = (state.agent_row, state.agent_col, int(state.orientation), state.carrying_key, int(state.door_state))
    parents: dict[tuple, tuple] = {start: None}
    queue = deque([start])
    goal_node = None
    while queue:
        node = queue.popleft()
        r, c, o, carrying, door = node
        for action in Action:
            nr, nc, no, ncar, ndoor = r, c, o, carrying, door
            hit_goal = False
            if action is Action.LEFT:
                no = (o - 1) % 4
            elif action is Action.RIGHT:
                no = (o + 1) % 4
            elif action is Action.FORWARD:
                dr, dc = DELTAS[o]
                fr, fc = r + dr, c + dc
                if _is_wall(state, fr, fc):
                    continue
                if (fr, fc) == state.door_cell and door != DoorState.OPEN:
                    continue
                if not carrying and key_home is not None and (fr, fc) == key_home:
                    continue
                nr, nc = fr, fc
                hit_goal = (fr, fc) == state.goal_pos
            elif action is Action.PICKUP:
                dr, dc = DELTAS[o]
                if carrying or key_home is None or (r + dr, c + dc) != key_home:
                    continue
                ncar = True
            else:  # TOGGLE
                dr, dc = DELTAS[o]
                if (r + dr, c + dc) != state.door_cell:
                    continue
                if door == DoorState.LOCKED:
                    if not carrying:
                        continue
                    ndoor = int(DoorState.OPEN)
                elif door == DoorState.OPEN:
                    ndoor = int(DoorState.CLOSED_UNLOCKED)
                else:
                    ndoor = int(DoorState.OPEN)
            nxt = (nr, nc, no, ncar, ndoor)
            if nxt in parents:
                continue
            parents[nxt] = (node, int(action))
            if hit_goal:
                goal_node = nxt
                queue.clear()
                break
            queue.append(nxt)
    if goal_node is None:
        raise Unsolvable("no action sequence reaches the goal")
    plan = []
    node = goal_node
    while parents[node] is not None:
        node, action = parents[node]
        plan.append(action)
    plan.reverse()
    return plan
