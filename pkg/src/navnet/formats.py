"""On-disk formats.

Environment dataset (``.jsonl``), one JSON object per line::

    {"M": 10, "N": 10, "furniture": "0010...", "goal": [x, y], "seed": 7, "walls": "1111..."}

``walls`` and ``furniture`` are row-major 0/1 strings of length ``M * N`` (row ``y``
occupies characters ``y*M .. y*M+M-1``). Keys are sorted and separators compact,
so equal data always serializes to equal bytes.

Trajectory dataset (``.jsonl``), one demonstration per line::

    {"maze_seed": 7, "variant": "A", "start": [x, y, theta], "goal": [x, y],
     "steps": [{"obs": [a, r, b, l], "action": k, "pose": [x, y, theta], "collided": false}, ...],
     "final_pose": [x, y, theta], "success": true}

Weight file (binary, little-endian)::

    b"NAVW" | u32 version | u32 record count |
    per record: u32 name length | name (utf-8) | u32 rank | u32 dims[rank] | f64 payload

Training log (``.jsonl``): one object per epoch with stage, epoch, step, loss,
val_success and wall_time.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .gridworld import Maze, Pose, as_variant
from .model import NavNetParams
from .oracle import Trajectory

MAGIC = b"NAVW"
VERSION = 1
OPTIMIZER_MAGIC = b"NAVO"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _bits(a: np.ndarray) -> str:
    return "".join("1" if v else "0" for v in a.ravel())


def _unbits(s: str, M: int, N: int) -> np.ndarray:
    if len(s) != M * N or set(s) - {"0", "1"}:
        raise FormatError(f"bitmap must be {M * N} characters of 0/1")
    return (np.frombuffer(s.encode(), dtype=np.uint8) == ord("1")).reshape(N, M)


# ---------------------------------------------------------------------------
# environments


def maze_to_record(maze: Maze) -> dict:
    return {
        "seed": int(maze.seed),
        "M": maze.width,
        "N": maze.height,
        "walls": _bits(maze.walls),
        "furniture": _bits(maze.furniture),
        "goal": [int(v) for v in maze.goal],
    }


def maze_from_record(rec: dict) -> Maze:
    try:
        M, N = int(rec["M"]), int(rec["N"])
        return Maze(
            _unbits(rec["walls"], M, N),
            _unbits(rec["furniture"], M, N),
            (int(rec["goal"][0]), int(rec["goal"][1])),
            int(rec["seed"]),
        )
    except (KeyError, TypeError, IndexError, ValueError) as e:
        raise FormatError(f"bad environment record: {e}") from None


def write_envs(path, mazes) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for m in mazes:
            f.write(_dumps(maze_to_record(m)) + "\n")


def read_envs(path) -> list[Maze]:
    out = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(maze_from_record(json.loads(line)))
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{n}: {e}") from None
    return out


# ---------------------------------------------------------------------------
# trajectories


def _pose(p: Pose) -> list[int]:
    return [int(p.x), int(p.y), int(p.theta)]


def trajectory_to_record(t: Trajectory) -> dict:
    return {
        "maze_seed": int(t.maze.seed),
        "variant": t.variant.value,
        "start": _pose(t.start),
        "goal": [int(v) for v in t.goal],
        "steps": [
            {"obs": [int(b) for b in o], "action": int(a), "pose": _pose(p), "collided": bool(c)}
            for o, a, p, c in zip(t.observations, t.actions, t.poses, t.collisions)
        ],
        "final_pose": _pose(t.poses[-1]) if t.poses else _pose(t.start),
        "success": bool(t.success),
    }


def trajectory_from_record(rec: dict, mazes: dict[int, Maze]) -> Trajectory:
    try:
        maze = mazes[int(rec["maze_seed"])]
        goal = (int(rec["goal"][0]), int(rec["goal"][1]))
        t = Trajectory(maze.with_goal(goal), as_variant(rec["variant"]), Pose(*rec["start"]), goal)
        for s in rec["steps"]:
            t.observations.append(tuple(int(b) for b in s["obs"]))
            t.actions.append(int(s["action"]))
            t.poses.append(Pose(*s["pose"]))
            t.collisions.append(bool(s["collided"]))
        t.poses.append(Pose(*rec["final_pose"]))
        t.success = bool(rec["success"])
        return t
    except KeyError as e:
        raise FormatError(f"trajectory record refers to unknown maze or lacks field {e}") from None
    except (TypeError, ValueError, IndexError) as e:
        raise FormatError(f"bad trajectory record: {e}") from None


def write_trajectories(path, trajectories) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for t in trajectories:
            f.write(_dumps(trajectory_to_record(t)) + "\n")


def read_trajectories(path, mazes) -> list[Trajectory]:
    by_seed = {m.seed: m for m in mazes}
    out = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(trajectory_from_record(json.loads(line), by_seed))
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{n}: {e}") from None
    return out


# ---------------------------------------------------------------------------
# weights


def encode_arrays(arrays: dict[str, np.ndarray], magic: bytes = MAGIC, version: int = VERSION) -> bytes:
    parts = [magic, struct.pack("<II", version, len(arrays))]
    for name, a in arrays.items():
        a = np.asarray(a, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode_arrays(data: bytes, magic: bytes = MAGIC, version: int = VERSION) -> dict[str, np.ndarray]:
    r = _Reader(data)
    if len(data) < 4:
        raise FormatError("truncated file")
    if r.take(4) != magic:
        raise FormatError("bad magic")
    got = r.u32()
    if got != version:
        raise FormatError(f"unsupported version {got} (expected {version})")
    out = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        n = int(np.prod(dims)) if dims else 1
        out[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(data):
        raise FormatError("trailing bytes after last record")
    return out


def _known(name: str) -> bool:
    return name.split(".", 1)[0] in NavNetParams.COMPONENTS


def save_weights(params: NavNetParams, path) -> None:
    Path(path).write_bytes(encode_arrays(params))


def load_weights(path) -> NavNetParams:
    data = Path(path).read_bytes()
    arrays = decode_arrays(data)
    unknown = sorted(k for k in arrays if not _known(k))
    if unknown:
        raise FormatError(f"unknown weight records: {', '.join(unknown)}")
    return NavNetParams(arrays)


def save_optimizer(state, path) -> None:
    arrays = {"step": np.array([float(state.step)])}
    arrays.update({f"m/{k}": v for k, v in state.m.items()})
    arrays.update({f"v/{k}": v for k, v in state.v.items()})
    Path(path).write_bytes(encode_arrays(arrays, OPTIMIZER_MAGIC))


def load_optimizer(path):
    from .training import OptimizerState

    arrays = decode_arrays(Path(path).read_bytes(), OPTIMIZER_MAGIC)
    m = {k[2:]: v for k, v in arrays.items() if k.startswith("m/")}
    v = {k[2:]: a for k, a in arrays.items() if k.startswith("v/")}
    return OptimizerState(m, v, int(arrays["step"][0]))


def append_log(path, record: dict) -> None:
    with open(path, "a", encoding="utf-8", newline="\n") as f:
        f.write(_dumps(record) + "\n")
