"""
Cryogenic multiplexer model.

Each of the two multiplexers (rows and columns) is a binary tree of
``depth`` levels. Level k carries two complementary gate lines; the line
matching bit k of the zero-based address (most significant bit first) is
open and its partner depleting. A branch conducts when the line of its bit
is open, unless a fault pins it.
"""

import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

from errors import MuxFault, QpcError
from models import DeviceId, SaddleDevice


logger = logging.getLogger(__name__)

OPEN = "open"
DEPLETING = "depleting"
TREES = ("row", "column")
FAULT_KINDS = ("stuck_open", "stuck_depleted")

LineKey = Tuple[int, int]


@dataclass(frozen=True)
class MuxAddress:
    """Device coordinate on a chip, 1-based."""

    row: int
    column: int
    size: int = 16

    def __post_init__(self):
        for name, value in (('row', self.row), ('column', self.column)):
            if not 1 <= value <= self.size:
                raise ValueError(f"{name} must lie in 1..{self.size}, got {value}")

    @property
    def label(self) -> str:
        return f"QFET ({self.row}, {self.column})"

    def device_id(self, chip: int) -> DeviceId:
        return DeviceId(chip, self.row, self.column)


@dataclass(frozen=True)
class BranchFault:
    """A branch pinned open or depleted regardless of its gate line."""

    tree: str
    level: int
    prefix: Tuple[int, ...]
    bit: int
    kind: str = "stuck_open"

    def __post_init__(self):
        if self.tree not in TREES:
            raise ValueError(f"Unknown tree: {self.tree}")
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"Unknown fault kind: {self.kind}")
        if self.bit not in (0, 1):
            raise ValueError("Branch bit must be 0 or 1")
        if len(self.prefix) != self.level - 1:
            raise ValueError("Branch prefix must hold one bit per level above the branch")
        object.__setattr__(self, 'prefix', tuple(int(b) for b in self.prefix))

    def to_dict(self) -> dict:
        return {'tree': self.tree, 'level': self.level, 'prefix': list(self.prefix),
                'bit': self.bit, 'kind': self.kind}

    @classmethod
    def from_dict(cls, data: dict) -> 'BranchFault':
        return cls(data['tree'], int(data['level']), tuple(data.get('prefix', ())),
                   int(data['bit']), data.get('kind', "stuck_open"))


@dataclass
class LineState:
    """Open/depleting state of every addressing line of both multiplexers."""

    row_lines: Dict[LineKey, str] = field(default_factory=dict)
    column_lines: Dict[LineKey, str] = field(default_factory=dict)

    def lines(self, tree: str) -> Dict[LineKey, str]:
        return self.row_lines if tree == "row" else self.column_lines

    def is_valid(self) -> bool:
        """Within each level exactly one of the two lines is depleting."""
        for lines in (self.row_lines, self.column_lines):
            levels = {level for level, _ in lines}
            for level in levels:
                states = (lines.get((level, 0)), lines.get((level, 1)))
                if sorted(states, key=str) != sorted((OPEN, DEPLETING)):
                    return False
        return True

    def signature(self) -> Tuple:
        return (tuple(sorted(self.row_lines.items())), tuple(sorted(self.column_lines.items())))

    def to_dict(self) -> dict:
        def named(prefix, lines):
            return {f"{prefix}{level}b{bit}": state
                    for (level, bit), state in sorted(lines.items())}
        return {**named("R", self.row_lines), **named("C", self.column_lines)}


@dataclass(frozen=True)
class ActivePath:
    """Leaves that conduct in each tree."""

    rows: FrozenSet[int]
    columns: FrozenSet[int]

    @property
    def device_count(self) -> int:
        return len(self.rows) * len(self.columns)

    def devices(self) -> List[Tuple[int, int]]:
        return sorted(product(self.rows, self.columns))


class MuxTree:
    """Addressing and conduction model of a pair of binary-tree multiplexers."""

    def __init__(self, depth: int = 4):
        if depth < 0:
            raise ValueError("MUX depth must be >= 0")
        self.depth = depth

    @property
    def leaf_count(self) -> int:
        return 2 ** self.depth

    @property
    def lines_per_mux(self) -> int:
        return 2 * self.depth

    @property
    def contact_count(self) -> int:
        """Address lines of both multiplexers plus source, drain and gate."""
        return 2 * self.lines_per_mux + 3

    def bits(self, index: int) -> Tuple[int, ...]:
        """Bits of a zero-based leaf index, most significant first."""
        return tuple((index >> (self.depth - 1 - k)) & 1 for k in range(self.depth))

    def address_to_lines(self, addr: MuxAddress) -> LineState:
        if addr.size != self.leaf_count:
            raise ValueError(f"Address grid {addr.size} does not match {self.leaf_count} leaves")
        state = LineState()
        for tree, index in (("row", addr.row - 1), ("column", addr.column - 1)):
            lines = state.lines(tree)
            for level, bit in enumerate(self.bits(index), start=1):
                lines[(level, bit)] = OPEN
                lines[(level, 1 - bit)] = DEPLETING
        return state

    def _branch_conducts(self, tree: str, lines: Mapping[LineKey, str], level: int,
                         prefix: Tuple[int, ...], bit: int,
                         faults: Mapping[Tuple[str, int, Tuple[int, ...], int], str]) -> bool:
        kind = faults.get((tree, level, prefix, bit))
        if kind == "stuck_open":
            return True
        if kind == "stuck_depleted":
            return False
        return lines.get((level, bit)) == OPEN

    def active_leaves(self, tree: str, lines: Mapping[LineKey, str],
                      faults: Iterable[BranchFault] = ()) -> FrozenSet[int]:
        """One-based leaves whose whole root-to-leaf path conducts."""
        table = {(f.tree, f.level, f.prefix, f.bit): f.kind for f in faults}
        active = set()
        for index in range(self.leaf_count):
            path = self.bits(index)
            if all(self._branch_conducts(tree, lines, level, path[:level - 1], path[level - 1],
                                         table)
                   for level in range(1, self.depth + 1)):
                active.add(index + 1)
        return frozenset(active)

    def conduction_path(self, lines: LineState, faults: Iterable[BranchFault] = ()) -> ActivePath:
        faults = list(faults)
        return ActivePath(self.active_leaves("row", lines.row_lines, faults),
                          self.active_leaves("column", lines.column_lines, faults))

    def select(self, addr: MuxAddress, faults: Iterable[BranchFault] = ()) -> ActivePath:
        """
        Address one device and check that exactly that device conducts.

        Raises:
            MuxFault: If several devices or none conduct
        """
        path = self.conduction_path(self.address_to_lines(addr), faults)
        count = path.device_count
        if count > 1:
            raise MuxFault(f"{addr.label}: {count} devices conduct", "multi_activation", count)
        if count == 0:
            raise MuxFault(f"{addr.label}: no conduction path", "open_circuit", 0)
        return path


@dataclass
class LogEntry:
    """One visited address in a measurement sweep."""

    chip: int
    row: int
    column: int
    lines: Dict[str, str]
    active_count: int
    outcome: str
    fault_class: str = ""
    result_path: str = ""
    error_kind: str = ""

    @property
    def label(self) -> str:
        return f"QFET ({self.row}, {self.column})"

    def to_dict(self) -> dict:
        return {
            'chip': self.chip,
            'row': self.row,
            'column': self.column,
            'device': self.label,
            'lines': self.lines,
            'active_count': self.active_count,
            'outcome': self.outcome,
            'fault_class': self.fault_class,
            'result_path': self.result_path,
            'error_kind': self.error_kind,
        }


def schedule_sweep(chip: int, devices: Mapping[Tuple[int, int], SaddleDevice],
                   measure: Callable[[SaddleDevice], Optional[str]],
                   tree: Optional[MuxTree] = None,
                   faults: Iterable[BranchFault] = ()) -> List[LogEntry]:
    """
    Visit every address of a chip in row-major order.

    Functional devices reached through a healthy path are handed to
    ``measure``, which returns the path of the stored result. Addressing
    faults, nonfunctional devices and measurement errors are logged instead.

    Args:
        chip: Chip number
        devices: Devices keyed by (row, column)
        measure: Per-device measurement; QpcError is logged as an error outcome
        tree: MUX geometry; depth 4 when omitted
        faults: Branch faults of this chip

    Returns:
        One log entry per address
    """
    tree = tree or MuxTree()
    faults = list(faults)
    log = []
    for row in range(1, tree.leaf_count + 1):
        for column in range(1, tree.leaf_count + 1):
            addr = MuxAddress(row, column, tree.leaf_count)
            lines = tree.address_to_lines(addr)
            path = tree.conduction_path(lines, faults)
            entry = LogEntry(chip, row, column, lines.to_dict(), path.device_count, "measured")
            try:
                tree.select(addr, faults)
            except MuxFault as fault:
                entry.outcome = "fault"
                entry.fault_class = fault.fault_class
                logger.warning("Chip %d %s: %s", chip, addr.label, fault)
                log.append(entry)
                continue
            device = devices.get((row, column))
            if device is None or not device.functional:
                entry.outcome = "nonfunctional"
                log.append(entry)
                continue
            try:
                entry.result_path = measure(device) or ""
            except QpcError as e:
                entry.outcome = "error"
                entry.error_kind = e.kind
                logger.warning("Chip %d %s: %s", chip, addr.label, e)
            log.append(entry)
    logger.info("Chip %d sweep: %d addresses, %d measured, %d faults", chip, len(log),
                sum(e.outcome == "measured" for e in log), sum(e.outcome == "fault" for e in log))
    return log
