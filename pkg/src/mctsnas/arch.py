"""Cell search space, decision encoding and network expansion.

An architecture is chosen by filling a fixed sequence of decision slots,
five per cell (two inputs, two operations, one combination) for the
normal, reduction and upsample cells.  A terminal decision sequence is turned
into an :class:`ArchitectureSpec`, which can be expanded into a flat
:class:`Graph` of layers with symbolic shapes and exact parameter counts.

Input source 0 is the previous cell's output, source 1 the one before it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Sequence


class OpKind(str, Enum):
    IDENTITY = "identity"
    CONV3X3 = "conv3x3"
    CONV5X5 = "conv5x5"
    SEPCONV3X3 = "sepconv3x3"
    SEPCONV5X5 = "sepconv5x5"
    DILCONV3X3 = "dilconv3x3"
    MAXPOOL3X3 = "maxpool3x3"
    AVGPOOL3X3 = "avgpool3x3"


OPS: tuple[OpKind, ...] = tuple(OpKind)
COMBINES = ("add", "concat")
INPUTS = (0, 1)
CELL_KINDS = ("normal", "reduction", "upsample")
CELL_FIELDS = ("input_a", "input_b", "op_a", "op_b", "combine")

# extended space: macro hyperparameters decided before the cells
DEPTH_CHOICES = (1, 2, 3)
WIDTH_CHOICES = (8, 16, 24, 32)
HYPER_FIELDS = ("depth", "width")

_FIELD_CHOICES = {
    "input_a": len(INPUTS),
    "input_b": len(INPUTS),
    "op_a": len(OPS),
    "op_b": len(OPS),
    "combine": len(COMBINES),
    "depth": len(DEPTH_CHOICES),
    "width": len(WIDTH_CHOICES),
}
# fields sharing a key type are interchangeable for all-moves-as-first credit
_FIELD_TYPE = {
    "input_a": "input",
    "input_b": "input",
    "op_a": "op",
    "op_b": "op",
    "combine": "combine",
    "depth": "depth",
    "width": "width",
}

FORMAT_VERSION = 1


class TerminalStateError(ValueError):
    pass


class IllegalMoveError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class SpecParseError(ValueError):
    pass


def phase_fields(extended: bool = False) -> tuple[tuple[str | None, str], ...]:
    """(cell kind or None, field name) for every decision slot, in order."""
    slots: list[tuple[str | None, str]] = []
    if extended:
        slots += [(None, f) for f in HYPER_FIELDS]
    for kind in CELL_KINDS:
        slots += [(kind, f) for f in CELL_FIELDS]
    return tuple(slots)


_PHASES = {False: phase_fields(False), True: phase_fields(True)}


def branching_factors(extended: bool = False) -> tuple[int, ...]:
    return tuple(_FIELD_CHOICES[f] for _, f in _PHASES[extended])


@dataclass(frozen=True)
class ArchState:
    """Partial architecture: the decisions made so far (a game position)."""

    decisions: tuple[int, ...] = ()
    extended: bool = False

    @property
    def n_decisions(self) -> int:
        return len(_PHASES[self.extended])

    @property
    def depth(self) -> int:
        return len(self.decisions)

    @property
    def is_terminal(self) -> bool:
        return len(self.decisions) == self.n_decisions

    @property
    def phase(self) -> tuple[str | None, str]:
        if self.is_terminal:
            raise TerminalStateError("terminal state has no phase")
        return _PHASES[self.extended][len(self.decisions)]

    def legal_moves(self) -> list[int]:
        return legal_moves(self)

    def play(self, move: int) -> "ArchState":
        return apply_move(self, move)


def legal_moves(state: ArchState) -> list[int]:
    if state.is_terminal:
        raise TerminalStateError("no legal moves: state is terminal")
    _, name = state.phase
    return list(range(_FIELD_CHOICES[name]))


def apply_move(state: ArchState, move: int) -> ArchState:
    if state.is_terminal:
        raise TerminalStateError(f"cannot play move {move}: state is terminal")
    kind, name = state.phase
    if not (0 <= move < _FIELD_CHOICES[name]):
        where = f"{kind}.{name}" if kind else name
        raise IllegalMoveError(f"illegal move {move} at phase {where} (depth {state.depth})")
    return ArchState(state.decisions + (move,), state.extended)


def move_key(depth: int, move: int, extended: bool = False) -> tuple[str, int]:
    """Identity of a move for all-moves-as-first statistics.

    Two decisions share a key when they pick the same choice for the same
    type of slot (e.g. ``conv3x3`` for any operation slot in any cell).
    """
    _, name = _PHASES[extended][depth]
    return (_FIELD_TYPE[name], move)


def enumerate_terminals(state: ArchState) -> Iterator[ArchState]:
    if state.is_terminal:
        yield state
        return
    for m in legal_moves(state):
        yield from enumerate_terminals(apply_move(state, m))


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class BlockSpec:
    input_a: int
    input_b: int
    op_a: OpKind
    op_b: OpKind
    combine: str

    def __post_init__(self):
        if self.input_a not in INPUTS or self.input_b not in INPUTS:
            raise ValueError(f"input sources must be in {INPUTS}")
        if self.combine not in COMBINES:
            raise ValueError(f"combine must be one of {COMBINES}, got {self.combine!r}")
        object.__setattr__(self, "op_a", OpKind(self.op_a))
        object.__setattr__(self, "op_b", OpKind(self.op_b))


@dataclass(frozen=True)
class CellSpec:
    kind: str
    block: BlockSpec

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}")


@dataclass(frozen=True)
class MacroConfig:
    R: int = 2
    normals_per_stage: int = 1
    base_channels: int = 16
    in_channels: int = 1
    stem: bool = True

    def __post_init__(self):
        if self.R < 0 or self.normals_per_stage < 0:
            raise ValueError("R and normals_per_stage must be non-negative")
        if self.base_channels < 1 or self.in_channels < 1:
            raise ValueError("channel counts must be positive")


@dataclass(frozen=True)
class ArchitectureSpec:
    normal: CellSpec
    reduction: CellSpec
    upsample: CellSpec
    macro: MacroConfig = field(default_factory=MacroConfig)
    head: bool = True

    def cell(self, kind: str) -> CellSpec:
        return {"normal": self.normal, "reduction": self.reduction, "upsample": self.upsample}[kind]


def block_from_moves(moves: Sequence[int]) -> BlockSpec:
    ia, ib, oa, ob, comb = moves
    return BlockSpec(INPUTS[ia], INPUTS[ib], OPS[oa], OPS[ob], COMBINES[comb])


def build_spec(
    state: ArchState, macro: MacroConfig | None = None, head: bool = True
) -> ArchitectureSpec:
    if not state.is_terminal:
        raise TerminalStateError(
            f"build_spec needs a terminal state ({state.depth}/{state.n_decisions} decisions)"
        )
    macro = macro or MacroConfig()
    moves = list(state.decisions)
    if state.extended:
        d, w = moves[:2]
        moves = moves[2:]
        macro = replace(macro, R=DEPTH_CHOICES[d], base_channels=WIDTH_CHOICES[w])
    cells = [CellSpec(kind, block_from_moves(moves[5 * i : 5 * i + 5])) for i, kind in enumerate(CELL_KINDS)]
    spec = ArchitectureSpec(*cells, macro=macro, head=head)
    expand(spec)  # raises ShapeError on an inconsistent spec
    return spec


def spec_to_decisions(spec: ArchitectureSpec) -> tuple[int, ...]:
    out: list[int] = []
    for kind in CELL_KINDS:
        b = spec.cell(kind).block
        out += [INPUTS.index(b.input_a), INPUTS.index(b.input_b), OPS.index(b.op_a),
                OPS.index(b.op_b), COMBINES.index(b.combine)]
    return tuple(out)


# ---------------------------------------------------------------------------
# expansion into a layer graph


def conv_params(k: int, cin: int, cout: int, bias: bool = True) -> int:
    return k * k * cin * cout + (cout if bias else 0)


def sepconv_params(k: int, cin: int, cout: int) -> int:
    # depthwise without bias, pointwise with bias
    return k * k * cin + cin * cout + cout


@dataclass(frozen=True)
class Node:
    """One layer of an expanded network.

    ``shape`` is the output (channels, height, width).  Conv-like nodes with
    ``relu=True`` are ReLU sites: their output is post-activation.
    """

    op: str
    inputs: tuple[int, ...]
    shape: tuple[int, int, int]
    kernel: int = 1
    stride: int = 1
    dilation: int = 1
    relu: bool = False
    params: int = 0
    name: str = ""


@dataclass(frozen=True)
class Graph:
    nodes: tuple[Node, ...]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.nodes[0].shape

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.nodes[-1].shape

    @property
    def params(self) -> int:
        return sum(n.params for n in self.nodes)

    @property
    def relu_units(self) -> int:
        return sum(math.prod(n.shape) for n in self.nodes if n.relu)


class _Builder:
    def __init__(self, in_shape):
        self.nodes: list[Node] = [Node("input", (), tuple(in_shape), name="input")]

    def shape(self, i):
        return self.nodes[i].shape

    def add(self, node: Node) -> int:
        c, h, w = node.shape
        if c < 1 or h < 1 or w < 1:
            raise ShapeError(f"{node.name or node.op}: empty output shape {node.shape}")
        self.nodes.append(node)
        return len(self.nodes) - 1

    def conv(self, x, cout, k=3, stride=1, dilation=1, relu=True, name=""):
        c, h, w = self.shape(x)
        pad = dilation * (k - 1) // 2
        ho = (h + 2 * pad - dilation * (k - 1) - 1) // stride + 1
        wo = (w + 2 * pad - dilation * (k - 1) - 1) // stride + 1
        return self.add(Node("conv", (x,), (cout, ho, wo), k, stride, dilation, relu,
                             conv_params(k, c, cout), name))

    def sepconv(self, x, cout, k=3, stride=1, name=""):
        c, h, w = self.shape(x)
        pad = (k - 1) // 2
        ho = (h + 2 * pad - k) // stride + 1
        wo = (w + 2 * pad - k) // stride + 1
        return self.add(Node("sepconv", (x,), (cout, ho, wo), k, stride, 1, True,
                             sepconv_params(k, c, cout), name))

    def pool(self, x, kind, stride=1, name=""):
        c, h, w = self.shape(x)
        ho = (h + 2 - 3) // stride + 1
        wo = (w + 2 - 3) // stride + 1
        return self.add(Node(kind, (x,), (c, ho, wo), 3, stride, name=name))

    def subsample(self, x, name=""):
        c, h, w = self.shape(x)
        return self.add(Node("subsample", (x,), (c, (h + 1) // 2, (w + 1) // 2), 1, 2, name=name))

    def downsample(self, x, name=""):
        c, h, w = self.shape(x)
        if h % 2 or w % 2:
            raise ShapeError(f"{name}: cannot halve odd spatial size {(h, w)}")
        return self.add(Node("avgpool2", (x,), (c, h // 2, w // 2), 2, 2, name=name))

    def upsample(self, x, name=""):
        c, h, w = self.shape(x)
        return self.add(Node("upsample", (x,), (c, 2 * h, 2 * w), name=name))

    def tconv(self, x, cout, name=""):
        c, h, w = self.shape(x)
        return self.add(Node("tconv", (x,), (cout, 2 * h, 2 * w), 2, 2,
                             params=4 * c * cout + cout, name=name))

    def combine(self, a, b, mode, name=""):
        (ca, ha, wa), (cb, hb, wb) = self.shape(a), self.shape(b)
        if (ha, wa) != (hb, wb):
            raise ShapeError(f"{name}: spatial mismatch {(ha, wa)} vs {(hb, wb)}")
        if mode == "concat":
            return self.add(Node("concat", (a, b), (ca + cb, ha, wa), name=name))
        if ca != cb:
            raise ShapeError(f"{name}: add with {ca} vs {cb} channels")
        return self.add(Node("add", (a, b), (ca, ha, wa), name=name))

    def graph(self) -> Graph:
        return Graph(tuple(self.nodes))


def _apply_op(b: _Builder, x: int, op: OpKind, cout: int, stride: int, name: str) -> int:
    if op is OpKind.IDENTITY:
        return b.subsample(x, name) if stride == 2 else x
    if op is OpKind.CONV3X3:
        return b.conv(x, cout, 3, stride, name=name)
    if op is OpKind.CONV5X5:
        return b.conv(x, cout, 5, stride, name=name)
    if op is OpKind.DILCONV3X3:
        return b.conv(x, cout, 3, stride, dilation=2, name=name)
    if op is OpKind.SEPCONV3X3:
        return b.sepconv(x, cout, 3, stride, name=name)
    if op is OpKind.SEPCONV5X5:
        return b.sepconv(x, cout, 5, stride, name=name)
    if op is OpKind.MAXPOOL3X3:
        return b.pool(x, "maxpool", stride, name)
    if op is OpKind.AVGPOOL3X3:
        return b.pool(x, "avgpool", stride, name)
    raise ValueError(op)


def _align(b: _Builder, x: int, hw: tuple[int, int], name: str) -> int:
    _, h, w = b.shape(x)
    if (h, w) == hw:
        return x
    if (h, w) == (2 * hw[0], 2 * hw[1]):
        return b.downsample(x, name)
    if (2 * h, 2 * w) == hw:
        return b.upsample(x, name)
    raise ShapeError(f"{name}: cannot align {(h, w)} to {hw}")


def _cell(b: _Builder, cell: CellSpec, prev: int, prev_prev: int, cout: int, tag: str) -> int:
    blk = cell.block
    hw = b.shape(prev)[1:]
    sources = {0: prev}
    if 1 in (blk.input_a, blk.input_b):
        sources[1] = _align(b, prev_prev, hw, f"{tag}.align")
    stride = 2 if cell.kind == "reduction" else 1
    if cell.kind == "upsample":
        sources = {i: b.upsample(x, f"{tag}.up{i}") for i, x in sources.items()}
    ya = _apply_op(b, sources[blk.input_a], blk.op_a, cout, stride, f"{tag}.a")
    yb = _apply_op(b, sources[blk.input_b], blk.op_b, cout, stride, f"{tag}.b")
    if blk.combine == "add":
        ca, cb = b.shape(ya)[0], b.shape(yb)[0]
        # thinner branch is projected to the wider one
        if ca < cb:
            ya = b.conv(ya, cb, 1, name=f"{tag}.proj_a")
        elif cb < ca:
            yb = b.conv(yb, ca, 1, name=f"{tag}.proj_b")
    return b.combine(ya, yb, blk.combine, f"{tag}.out")


def expand(spec: ArchitectureSpec, input_hw: tuple[int, int] = (128, 128)) -> Graph:
    """Expand a spec into a U-Net-like layer graph with checked shapes."""
    m = spec.macro
    h, w = input_hw
    if h % (2 ** m.R) or w % (2 ** m.R):
        raise ShapeError(f"input {input_hw} not divisible by 2**R = {2 ** m.R}")
    b = _Builder((m.in_channels, h, w))
    x = b.conv(0, m.base_channels, 3, name="stem") if m.stem else 0
    states = [x, x]
    skips = []
    chans = [m.base_channels * 2 ** s for s in range(m.R + 1)]

    def normals(c, stage):
        for j in range(m.normals_per_stage):
            states.append(_cell(b, spec.normal, states[-1], states[-2], c, f"{stage}.normal{j}"))

    for s in range(m.R):
        normals(chans[s], f"enc{s}")
        skips.append(states[-1])
        states.append(_cell(b, spec.reduction, states[-1], states[-2], chans[s + 1], f"enc{s}.reduce"))
    normals(chans[m.R], "mid")
    for s in reversed(range(m.R)):
        up = _cell(b, spec.upsample, states[-1], states[-2], chans[s], f"dec{s}.upsample")
        states.append(b.combine(up, skips[s], "concat", f"dec{s}.skip"))
        normals(chans[s], f"dec{s}")
    if spec.head:
        b.conv(states[-1], 1, 1, relu=False, name="head")
    g = b.graph()
    if g.output_shape[1:] != (h, w):
        raise ShapeError(f"output size {g.output_shape[1:]} != input size {(h, w)}")
    return g


def count_params(spec: ArchitectureSpec | Graph) -> int:
    g = spec if isinstance(spec, Graph) else expand(spec, (2 ** spec.macro.R,) * 2)
    return g.params


# Widths tuned so the count equals the baseline U-Net figure (120441); only the
# count is meaningful, it serves as the default parameter bound.
BASELINE_UNET_WIDTHS = (15, 20, 31, 56)
BASELINE_PARAMS = 120441


def reference_unet(
    widths: Sequence[int] = BASELINE_UNET_WIDTHS, in_channels: int = 1, input_hw=(128, 128)
) -> Graph:
    """Plain U-Net: two 3x3 convs per level, 2x2 transposed-conv upsampling."""
    b = _Builder((in_channels, *input_hw))
    x = 0
    skips = []
    for i, c in enumerate(widths):
        x = b.conv(b.conv(x, c, name=f"down{i}.conv1"), c, name=f"down{i}.conv2")
        if i < len(widths) - 1:
            skips.append(x)
            x = b.pool(x, "maxpool", 2, f"down{i}.pool")
    for i in reversed(range(len(widths) - 1)):
        c = widths[i]
        x = b.tconv(x, c, name=f"up{i}.tconv")
        x = b.combine(x, skips[i], "concat", f"up{i}.skip")
        x = b.conv(b.conv(x, c, name=f"up{i}.conv1"), c, name=f"up{i}.conv2")
    b.conv(x, 1, 1, relu=False, name="head")
    return b.graph()


# ---------------------------------------------------------------------------
# architecture documents


def spec_to_dict(spec: ArchitectureSpec) -> dict:
    cells = {}
    for kind in CELL_KINDS:
        blk = spec.cell(kind).block
        cells[kind] = {
            "input_a": blk.input_a,
            "input_b": blk.input_b,
            "op_a": blk.op_a.value,
            "op_b": blk.op_b.value,
            "combine": blk.combine,
        }
    m = spec.macro
    return {
        "version": FORMAT_VERSION,
        "cells": cells,
        "macro": {
            "R": m.R,
            "normals_per_stage": m.normals_per_stage,
            "base_channels": m.base_channels,
            "in_channels": m.in_channels,
            "stem": m.stem,
        },
        "head": {"kind": "conv1x1", "out_channels": 1, "activation": "sigmoid"} if spec.head else None,
    }


def serialize_spec(spec: ArchitectureSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2, sort_keys=True)


def _get(d, key, where, types):
    if not isinstance(d, dict):
        raise SpecParseError(f"{where}: expected an object")
    if key not in d:
        raise SpecParseError(f"{where}: missing field {key!r}")
    v = d[key]
    if not isinstance(v, types) or (isinstance(v, bool) and bool not in types):
        raise SpecParseError(f"{where}.{key}: unexpected type {type(v).__name__}")
    return v


def spec_from_dict(doc: dict) -> ArchitectureSpec:
    version = _get(doc, "version", "$", (int,))
    if version != FORMAT_VERSION:
        raise SpecParseError(f"$.version: unsupported version {version}")
    cells_doc = _get(doc, "cells", "$", (dict,))
    cells = []
    for kind in CELL_KINDS:
        c = _get(cells_doc, kind, "$.cells", (dict,))
        where = f"$.cells.{kind}"
        try:
            blk = BlockSpec(
                _get(c, "input_a", where, (int,)),
                _get(c, "input_b", where, (int,)),
                _get(c, "op_a", where, (str,)),
                _get(c, "op_b", where, (str,)),
                _get(c, "combine", where, (str,)),
            )
        except ValueError as e:
            if isinstance(e, SpecParseError):
                raise
            raise SpecParseError(f"{where}: {e}") from None
        cells.append(CellSpec(kind, blk))
    md = _get(doc, "macro", "$", (dict,))
    try:
        macro = MacroConfig(
            R=_get(md, "R", "$.macro", (int,)),
            normals_per_stage=_get(md, "normals_per_stage", "$.macro", (int,)),
            base_channels=_get(md, "base_channels", "$.macro", (int,)),
            in_channels=md.get("in_channels", 1),
            stem=md.get("stem", True),
        )
    except ValueError as e:
        if isinstance(e, SpecParseError):
            raise
        raise SpecParseError(f"$.macro: {e}") from None
    if "head" not in doc:
        raise SpecParseError("$: missing field 'head'")
    return ArchitectureSpec(*cells, macro=macro, head=doc["head"] is not None)


def deserialize_spec(text: str) -> ArchitectureSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecParseError(f"line {e.lineno} column {e.colno}: {e.msg}") from None
    return spec_from_dict(doc)
