"""Cell DAGs, search-space vocabularies, token/adjacency encodings and the
networks assembled from searched cells.

A cell with ``B`` intermediate nodes reads two inputs (slots 0 and 1: the
outputs of the two previous cells). Node ``i`` (slot ``i + 2``) sums
``op1(slot[p1]) + op2(slot[p2])`` with ``p1, p2 < i + 2``. The cell output
concatenates every intermediate node that no other node consumes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from . import nn
from . import tensor as T
from .pseudo import PseudoLayerConfig, PseudoMorphLayer
from .tensor import Tensor

SEP3, SEP5 = "sep_conv_3x3", "sep_conv_5x5"
AVG, MAX = "avg_pool_3x3", "max_pool_3x3"
IDENTITY = "identity"
CONV3, CWEIGHT = "conv_3x3", "cweight_3x3"
P_DIL, P_ERO, P_GRAD = "pseudo_dilation_3x3", "pseudo_erosion_3x3", "pseudo_gradient_3x3"
TCONV = "transpose_conv"

CONCAT_CODE = 7


@dataclass(frozen=True)
class SearchSpace:
    name: str
    ops: tuple[str, ...]

    def index(self, op: str) -> int:
        try:
            return self.ops.index(op)
        except ValueError:
            raise ValueError(f"operation {op!r} is not in search space {self.name!r}") from None


_CLS_BASE = (SEP3, SEP5, AVG, MAX, IDENTITY)
_EDGE_BASE = (CWEIGHT, SEP3, CONV3, AVG, MAX)

SEARCH_SPACES: dict[str, SearchSpace] = {
    s.name: s
    for s in (
        SearchSpace("cls-plain", _CLS_BASE),
        SearchSpace("cls-dilation", _CLS_BASE + (P_DIL,)),
        SearchSpace("cls-erosion", _CLS_BASE + (P_ERO,)),
        SearchSpace("edge-plain", _EDGE_BASE + (SEP5,)),
        SearchSpace("edge-dilation", _EDGE_BASE + (P_DIL,)),
        SearchSpace("edge-gradient", _EDGE_BASE + (P_GRAD,)),
        SearchSpace("upsc", (SEP3, SEP5, AVG, MAX, P_GRAD, TCONV)),
    )
}


def get_space(name: str | SearchSpace) -> SearchSpace:
    if isinstance(name, SearchSpace):
        return name
    if name not in SEARCH_SPACES:
        raise ValueError(f"unknown search space {name!r}; choose from {', '.join(SEARCH_SPACES)}")
    return SEARCH_SPACES[name]


CELL_KINDS = ("normal", "reduction", "DownSC", "UpSC")


@dataclass(frozen=True)
class CellGraph:
    nodes: tuple[tuple[int, str, int, str], ...]
    kind: str = "normal"
    space: str = "cls-dilation"

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(tuple(n) for n in self.nodes))
        self.validate()

    @property
    def B(self) -> int:
        return len(self.nodes)

    def validate(self) -> None:
        space = get_space(self.space)
        if self.kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        for i, node in enumerate(self.nodes):
            if len(node) != 4:
                raise ValueError(f"node{i} must be (pred1, op1, pred2, op2)")
            p1, op1, p2, op2 = node
            for p in (p1, p2):
                if not isinstance(p, (int, np.integer)) or not 0 <= p < i + 2:
                    raise ValueError(f"node{i}: predecessor {p} must be in [0, {i + 1}]")
            space.index(op1)
            space.index(op2)

    def loose_ends(self) -> list[int]:
        used = {p for n in self.nodes for p in (n[0], n[2])}
        return [i for i in range(self.B) if i + 2 not in used]

    def ops(self) -> list[str]:
        return [op for n in self.nodes for op in (n[1], n[3])]

    def to_text(self) -> str:
        parts = [f"B={self.B}"]
        parts += [f"node{i}=({p1},{o1},{p2},{o2})" for i, (p1, o1, p2, o2) in enumerate(self.nodes)]
        parts += [f"kind={self.kind}", f"space={self.space}"]
        return "; ".join(parts)

    def __str__(self) -> str:
        return self.to_text()


_NODE_RE = re.compile(r"^node(\d+)=\((\d+),([A-Za-z0-9_]+),(\d+),([A-Za-z0-9_]+)\)$")


def parse_cell(text: str) -> CellGraph:
    """Inverse of :meth:`CellGraph.to_text`."""
    fields = [f.strip() for f in text.strip().split(";") if f.strip()]
    b = None
    kind = space = None
    nodes: dict[int, tuple] = {}
    for f in fields:
        m = _NODE_RE.match(f.replace(" ", ""))
        if m:
            i, p1, o1, p2, o2 = m.groups()
            nodes[int(i)] = (int(p1), o1, int(p2), o2)
        elif f.startswith("B="):
            b = int(f[2:])
        elif f.startswith("kind="):
            kind = f[5:]
        elif f.startswith("space="):
            space = f[6:]
        else:
            raise ValueError(f"unrecognised cell field {f!r}")
    if b is None or kind is None or space is None:
        raise ValueError("cell text needs B=, kind= and space= fields")
    if sorted(nodes) != list(range(b)):
        raise ValueError(f"cell text declares B={b} but has nodes {sorted(nodes)}")
    return CellGraph(tuple(nodes[i] for i in range(b)), kind, space)


# ---------------------------------------------------------------------------
# encodings
# ---------------------------------------------------------------------------


def alphabet_size(B: int, space: str | SearchSpace) -> int:
    """Predecessor symbols 0..B followed by one symbol per operation."""
    return B + 1 + len(get_space(space).ops)


def encode_cell(cell: CellGraph) -> list[int]:
    space = get_space(cell.space)
    base = cell.B + 1
    tokens: list[int] = []
    for p1, o1, p2, o2 in cell.nodes:
        tokens += [p1, base + space.index(o1), p2, base + space.index(o2)]
    return tokens


def decode_cell(tokens: Sequence[int], B: int, space: str, kind: str = "normal") -> CellGraph:
    sp = get_space(space)
    tokens = [int(t) for t in tokens]
    if len(tokens) != 4 * B:
        raise ValueError(f"expected {4 * B} tokens for B={B}, got {len(tokens)}")
    size = alphabet_size(B, sp)
    base = B + 1
    nodes = []
    for i in range(B):
        p1, o1, p2, o2 = tokens[4 * i : 4 * i + 4]
        for t in (p1, o1, p2, o2):
            if not 0 <= t < size:
                raise ValueError(f"token {t} outside alphabet of size {size}")
        if p1 >= base or p2 >= base:
            raise ValueError(f"node{i}: operation symbol in a predecessor position")
        if o1 < base or o2 < base:
            raise ValueError(f"node{i}: predecessor symbol in an operation position")
        nodes.append((p1, sp.ops[o1 - base], p2, sp.ops[o2 - base]))
    return CellGraph(tuple(nodes), kind, space)


def adjacency_matrix(cell: CellGraph) -> np.ndarray:
    """(B+3) x (B+3) op-code matrix: inputs 0-1, nodes 2..B+1, output B+2.

    Entry (u, v) holds ``index + 1`` of the op on edge u -> v (0 = no edge);
    loose-end nodes link to the output with code 7 (concatenate). When both
    inputs of a node read the same predecessor the first op is kept.
    """
    space = get_space(cell.space)
    n = cell.B + 3
    m = np.zeros((n, n), dtype=np.int64)
    for i, (p1, o1, p2, o2) in enumerate(cell.nodes):
        m[p1, i + 2] = space.index(o1) + 1
        if p2 != p1:
            m[p2, i + 2] = space.index(o2) + 1
    for i in cell.loose_ends():
        m[i + 2, n - 1] = CONCAT_CODE
    return m


def random_cell(
    space: str, B: int, rng: np.random.Generator, kind: str = "normal", ops: Sequence[str] | None = None
) -> CellGraph:
    """Uniform predecessors and operations; ``ops`` restricts the draw to a subset of the space."""
    if B < 1:
        raise ValueError("random cells need B >= 1")
    if ops is None:
        ops = get_space(space).ops
    elif not ops:
        raise ValueError("ops subset must not be empty")
    nodes = []
    for i in range(B):
        p1, p2 = (int(p) for p in rng.integers(0, i + 2, size=2))
        o1, o2 = (ops[int(k)] for k in rng.integers(0, len(ops), size=2))
        nodes.append((p1, o1, p2, o2))
    return CellGraph(tuple(nodes), kind, space)


# ---------------------------------------------------------------------------
# backbones and architectures
# ---------------------------------------------------------------------------

BACKBONES = ("cifar-stack", "unet-search", "multiscale-decoder")


@dataclass(frozen=True)
class Backbone:
    kind: str
    N: int = 1
    F: int = 8
    B: int = 5
    num_classes: int = 10
    in_channels: int = 3
    width: int = 42  # S_0 / S_1 feature maps of the multi-scale decoder

    def __post_init__(self):
        if self.kind not in BACKBONES:
            raise ValueError(f"unknown backbone {self.kind!r}; choose from {', '.join(BACKBONES)}")
        if self.N < 0 or self.F < 1 or self.B < 1:
            raise ValueError("backbone needs N >= 0, F >= 1, B >= 1")

    @property
    def task(self) -> str:
        return "classification" if self.kind == "cifar-stack" else "edge"

    def cell_roles(self) -> tuple[str, ...]:
        """Kinds of the cells the search optimises for this backbone."""
        return {
            "cifar-stack": ("normal", "reduction"),
            "unet-search": ("DownSC", "UpSC"),
            "multiscale-decoder": ("normal",),
        }[self.kind]

    def role_spaces(self, space: str) -> tuple[str, ...]:
        return tuple("upsc" if role == "UpSC" else space for role in self.cell_roles())


@dataclass(frozen=True)
class Architecture:
    """The searched cells of one candidate, in :meth:`Backbone.cell_roles` order."""

    cells: tuple[CellGraph, ...]

    def tokens(self) -> list[int]:
        return [t for c in self.cells for t in encode_cell(c)]

    def to_text(self) -> str:
        return " | ".join(c.to_text() for c in self.cells)

    @classmethod
    def from_text(cls, text: str) -> "Architecture":
        return cls(tuple(parse_cell(part) for part in text.split("|")))

    @classmethod
    def from_tokens(cls, tokens: Sequence[int], B: int, spaces: Sequence[str], kinds: Sequence[str]):
        per = 4 * B
        if len(tokens) != per * len(spaces):
            raise ValueError(f"expected {per * len(spaces)} tokens, got {len(tokens)}")
        return cls(
            tuple(
                decode_cell(tokens[k * per : (k + 1) * per], B, sp, kind)
                for k, (sp, kind) in enumerate(zip(spaces, kinds))
            )
        )


def random_architecture(backbone: Backbone, space: str, rng: np.random.Generator) -> Architecture:
    return Architecture(
        tuple(
            random_cell(sp, backbone.B, rng, kind)
            for sp, kind in zip(backbone.role_spaces(space), backbone.cell_roles())
        )
    )


# ---------------------------------------------------------------------------
# candidate operations
# ---------------------------------------------------------------------------


class ReLUConvBN(nn.Module):
    def __init__(self, c_in, c_out, k, stride=1, rng=None):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, k, stride, k // 2, bias=False, rng=rng)
        self.bn = nn.BatchNorm2d(c_out)

    def forward(self, x):
        return self.bn(self.conv(T.relu(x)))


class SepConv(nn.Module):
    """ReLU -> depthwise k x k -> pointwise 1 x 1 -> BN."""

    def __init__(self, c, k, stride=1, rng=None):
        super().__init__()
        self.dw = nn.Conv2d(c, c, k, stride, k // 2, groups=c, bias=False, rng=rng)
        self.pw = nn.Conv2d(c, c, 1, bias=False, rng=rng)
        self.bn = nn.BatchNorm2d(c)

    def forward(self, x):
        return self.bn(self.pw(self.dw(T.relu(x))))


class Pool(nn.Module):
    def __init__(self, mode, stride=1):
        super().__init__()
        self.mode, self.stride = mode, stride

    def forward(self, x):
        return T.pool2d(x, self.mode, 3, self.stride, padding=1)


class CWeight(nn.Module):
    """ReLU -> 3x3 conv -> BN, gated per channel by a squeeze-and-excitation branch."""

    def __init__(self, c, stride=1, reduction=4, rng=None):
        super().__init__()
        self.body = ReLUConvBN(c, c, 3, stride, rng=rng)
        hidden = max(1, c // reduction)
        self.fc1 = nn.Linear(c, hidden, rng=rng)
        self.fc2 = nn.Linear(hidden, c, rng=rng)

    def forward(self, x):
        y = self.body(x)
        n, c = y.shape[:2]
        z = y.mean(axis=(2, 3))
        gate = T.sigmoid(self.fc2(T.relu(self.fc1(z)))).reshape(n, c, 1, 1)
        return y * gate


class PseudoOp(nn.Module):
    """Pseudo-morphological layer adapted to a cell slot's resolution change."""

    def __init__(self, variant, c, mode, r=3, rng=None):
        super().__init__()
        self.variant, self.mode = variant, mode
        if variant == "dilation" and mode == "down":
            layer_variant = "pooling"
        elif mode == "up" and variant in ("dilation", "gradient"):
            layer_variant = "upsampling"
        else:
            layer_variant = variant
        s = 2 if layer_variant == "upsampling" else 1
        self.layer = PseudoMorphLayer(PseudoLayerConfig(layer_variant, c, r=r, s=s), rng=rng)

    def forward(self, x):
        y = self.layer(x)
        if self.mode == "up":
            if self.variant == "gradient":
                return y - T.upsample_nearest(x, 2)
            if self.variant == "erosion":
                return T.upsample_bilinear(y, (2 * x.shape[2], 2 * x.shape[3]))
            return y
        if self.mode == "down" and self.variant != "dilation":
            y = T.pool2d(y, "max", 2, 2)
        return y


class TransposeConv(nn.Module):
    def __init__(self, c, mode, rng=None):
        super().__init__()
        if mode == "down":
            raise ValueError("transpose convolution cannot be used on a downsampling slot")
        k, stride, pad = (4, 2, 1) if mode == "up" else (3, 1, 1)
        self.conv = nn.ConvTranspose2d(c, c, k, stride, pad, bias=False, rng=rng)
        self.bn = nn.BatchNorm2d(c)

    def forward(self, x):
        return self.bn(self.conv(T.relu(x)))


class Upsampled(nn.Module):
    """Run ``op`` at the input resolution, then bilinearly double the size."""

    def __init__(self, op):
        super().__init__()
        self.op = op

    def forward(self, x):
        y = self.op(x)
        return T.upsample_bilinear(y, (2 * y.shape[2], 2 * y.shape[3]))


def make_op(name: str, c: int, mode: str = "same", rng=None) -> nn.Module:
    """Instantiate a candidate op; ``mode`` is ``same``, ``down`` (stride 2) or ``up`` (x2)."""
    if mode not in ("same", "down", "up"):
        raise ValueError(f"unknown op mode {mode!r}")
    stride = 2 if mode == "down" else 1
    if name == TCONV:
        return TransposeConv(c, mode, rng=rng)
    if name in (P_DIL, P_ERO, P_GRAD):
        variant = {P_DIL: "dilation", P_ERO: "erosion", P_GRAD: "gradient"}[name]
        return PseudoOp(variant, c, mode, rng=rng)
    if name == SEP3:
        op = SepConv(c, 3, stride, rng=rng)
    elif name == SEP5:
        op = SepConv(c, 5, stride, rng=rng)
    elif name == AVG:
        op = Pool("avg", stride)
    elif name == MAX:
        op = Pool("max", stride)
    elif name == CONV3:
        op = ReLUConvBN(c, c, 3, stride, rng=rng)
    elif name == CWEIGHT:
        op = CWeight(c, stride, rng=rng)
    elif name == IDENTITY:
        op = ReLUConvBN(c, c, 1, 2, rng=rng) if mode == "down" else nn.Identity()
    else:
        raise ValueError(f"unknown operation {name!r}")
    return Upsampled(op) if mode == "up" else op


class Cell(nn.Module):
    """Trainable instance of a :class:`CellGraph`.

    ``mode`` selects how the two input slots are treated: ``normal`` keeps
    the resolution, ``reduction`` halves it on both inputs, ``up`` keeps slot 0
    (the skip connection) and doubles slot 1.
    """

    def __init__(self, graph: CellGraph, c_pp: int, c_p: int, c: int, mode: str = "normal",
                 reduction_prev: bool = False, rng=None):
        super().__init__()
        slot_modes = {"normal": ("same", "same"), "reduction": ("down", "down"), "up": ("same", "up")}
        if mode not in slot_modes:
            raise ValueError(f"unknown cell mode {mode!r}")
        self.graph = graph
        self.pre0 = ReLUConvBN(c_pp, c, 1, 2, rng=rng) if reduction_prev else ReLUConvBN(c_pp, c, 1, rng=rng)
        self.pre1 = ReLUConvBN(c_p, c, 1, rng=rng)
        modes = slot_modes[mode]
        self.node_ops = []
        for p1, o1, p2, o2 in graph.nodes:
            self.node_ops.append(
                nn.Sequential(
                    make_op(o1, c, modes[p1] if p1 < 2 else "same", rng=rng),
                    make_op(o2, c, modes[p2] if p2 < 2 else "same", rng=rng),
                )
            )
        self.loose = graph.loose_ends()
        self.out_channels = c * len(self.loose)

    def forward(self, s0, s1):
        states = [self.pre0(s0), self.pre1(s1)]
        for (p1, _, p2, _), pair in zip(self.graph.nodes, self.node_ops):
            op1, op2 = pair.layers
            states.append(op1(states[p1]) + op2(states[p2]))
        return T.concat([states[i + 2] for i in self.loose], axis=1)


class CifarStack(nn.Module):
    """stem -> [N normal, 1 reduction] x 3 -> global average pool -> linear."""

    def __init__(self, normal: CellGraph, reduction: CellGraph, bb: Backbone, rng=None):
        super().__init__()
        c = bb.F
        stem_c = 3 * c
        self.stem = nn.Conv2d(bb.in_channels, stem_c, 3, 1, 1, bias=False, rng=rng)
        self.stem_bn = nn.BatchNorm2d(stem_c)
        c_pp, c_p = stem_c, stem_c
        self.cells = []
        reduction_prev = False
        for _block in range(3):
            for _ in range(bb.N):
                cell = Cell(normal, c_pp, c_p, c, "normal", reduction_prev, rng=rng)
                self.cells.append(cell)
                c_pp, c_p, reduction_prev = c_p, cell.out_channels, False
            c *= 2
            cell = Cell(reduction, c_pp, c_p, c, "reduction", reduction_prev, rng=rng)
            self.cells.append(cell)
            c_pp, c_p, reduction_prev = c_p, cell.out_channels, True
        self.classifier = nn.Linear(c_p, bb.num_classes, rng=rng)

    def forward(self, x):
        s0 = s1 = self.stem_bn(self.stem(x))
        for cell in self.cells:
            s0, s1 = s1, cell(s0, s1)
        return self.classifier(s1.mean(axis=(2, 3)))


class UNetSearch(nn.Module):
    """Stem to H/4, two DownSC cells, two UpSC cells with skips, 1x1 head."""

    def __init__(self, down: CellGraph, up: CellGraph, bb: Backbone, rng=None):
        super().__init__()
        f = bb.F
        self.stem = nn.Sequential(
            nn.Conv2d(bb.in_channels, f, 3, 2, 1, bias=False, rng=rng), nn.BatchNorm2d(f), nn.ReLU(),
            nn.Conv2d(f, f, 3, 2, 1, bias=False, rng=rng), nn.BatchNorm2d(f),
        )
        self.down1 = Cell(down, f, f, f, "reduction", rng=rng)
        self.down2 = Cell(down, f, self.down1.out_channels, 2 * f, "reduction", reduction_prev=True, rng=rng)
        self.up1 = Cell(up, self.down1.out_channels, self.down2.out_channels, 2 * f, "up", rng=rng)
        self.up2 = Cell(up, f, self.up1.out_channels, f, "up", rng=rng)
        self.aux_dropout = nn.Dropout(0.1, rng=rng)
        self.head = nn.Conv2d(self.up2.out_channels, 1, 1, rng=rng)
        self.resolutions: list[tuple[str, int]] = []

    def forward(self, x):
        h = self.stem(x)
        d1 = self.down1(h, h)
        d2 = self.down2(h, d1)
        u1 = self.up1(d1, d2)
        u2 = self.up2(h, u1)
        self.resolutions = [
            ("H0", h.shape[2]), ("H1", d1.shape[2]), ("H2", d2.shape[2]), ("U1", u1.shape[2]), ("U2", u2.shape[2]),
        ]
        y = self.head(self.aux_dropout(u2))
        return T.upsample_bilinear(y, x.shape[2:])


class ResBlock(nn.Module):
    def __init__(self, c_in, c_out, stride, rng=None):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False, rng=rng)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False, rng=rng)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.short = None
        if stride != 1 or c_in != c_out:
            self.short = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride, bias=False, rng=rng), nn.BatchNorm2d(c_out))

    def forward(self, x):
        y = self.bn2(self.conv2(T.relu(self.bn1(self.conv1(x)))))
        return T.relu(y + (x if self.short is None else self.short(x)))


class MultiScaleDecoder(nn.Module):
    """4-block residual encoder; each block feeds S_0 -> S_1 -> cell -> 1x1 -> resize."""

    ENCODER_CHANNELS = (16, 32, 64, 128)
    ENCODER_STRIDES = (1, 2, 2, 2)

    def __init__(self, normal: CellGraph, bb: Backbone, rng=None):
        super().__init__()
        ch = self.ENCODER_CHANNELS
        self.stem = nn.Sequential(
            nn.Conv2d(bb.in_channels, ch[0], 3, 1, 1, bias=False, rng=rng), nn.BatchNorm2d(ch[0]), nn.ReLU()
        )
        self.blocks, self.s0, self.s1, self.cells, self.heads = [], [], [], [], []
        c_prev = ch[0]
        for c_out, stride in zip(ch, self.ENCODER_STRIDES):
            self.blocks.append(ResBlock(c_prev, c_out, stride, rng=rng))
            self.s0.append(nn.Conv2d(c_out, bb.width, 3, 1, 1, rng=rng))
            self.s1.append(nn.Conv2d(bb.width, bb.width, 3, 1, 1, rng=rng))
            cell = Cell(normal, bb.width, bb.width, bb.F, "normal", rng=rng)
            self.cells.append(cell)
            self.heads.append(nn.Conv2d(cell.out_channels, 1, 1, rng=rng))
            c_prev = c_out
        self.fuse = nn.Conv2d(len(ch), 1, 1, rng=rng)

    def forward(self, x):
        size = x.shape[2:]
        h = self.stem(x)
        side = []
        for block, s0, s1, cell, head in zip(self.blocks, self.s0, self.s1, self.cells, self.heads):
            h = block(h)
            a = s0(h)
            b = s1(a)
            side.append(T.upsample_bilinear(head(cell(a, b)), size))
        return self.fuse(T.concat(side, axis=1))


def _check_cell(cell: CellGraph, space: SearchSpace, role: str) -> None:
    if cell.space != space.name:
        raise ValueError(f"{role} cell belongs to space {cell.space!r}, expected {space.name!r}")
    for op in cell.ops():
        space.index(op)


def build_network(
    normal: CellGraph,
    reduction: CellGraph | None,
    backbone: Backbone,
    space: str | SearchSpace,
    rng: np.random.Generator | None = None,
) -> nn.Module:
    """Assemble a trainable network.

    For ``unet-search`` the two cells are the DownSC and UpSC cells; the UpSC
    cell draws from the ``upsc`` space. ``multiscale-decoder`` uses only the
    normal cell.
    """
    space = get_space(space)
    rng = rng if rng is not None else np.random.default_rng(0)
    _check_cell(normal, space, "first")
    if backbone.kind == "cifar-stack":
        if reduction is None:
            raise ValueError("cifar-stack needs a reduction cell")
        _check_cell(reduction, space, "reduction")
        return CifarStack(normal, reduction, backbone, rng=rng)
    if backbone.kind == "unet-search":
        if reduction is None:
            raise ValueError("unet-search needs an UpSC cell")
        _check_cell(reduction, SEARCH_SPACES["upsc"], "UpSC")
        return UNetSearch(normal, reduction, backbone, rng=rng)
    return MultiScaleDecoder(normal, backbone, rng=rng)


def build_from_architecture(arch: Architecture, backbone: Backbone, space: str, rng=None) -> nn.Module:
    cells = list(arch.cells) + [None]
    return build_network(cells[0], cells[1], backbone, space, rng=rng)


# ---------------------------------------------------------------------------
# network checkpoints
# ---------------------------------------------------------------------------


def save_network(net: nn.Module, directory, arch: Architecture, backbone: Backbone, space: str) -> None:
    manifest = {
        "kind": "network",
        "backbone": backbone.kind,
        "N": backbone.N,
        "F": backbone.F,
        "B": backbone.B,
        "num_classes": backbone.num_classes,
        "in_channels": backbone.in_channels,
        "width": backbone.width,
        "space": get_space(space).name,
        "architecture": arch.to_text(),
    }
    io.save_checkpoint(directory, net.state_dict(), manifest)


def load_network(directory: str | Path) -> tuple[nn.Module, Architecture, Backbone, str]:
    state, m = io.load_checkpoint(directory)
    if m.get("kind") != "network":
        raise ValueError(f"{directory}: not a network checkpoint")
    bb = Backbone(
        m["backbone"], int(m["N"]), int(m["F"]), int(m["B"]), int(m["num_classes"]),
        int(m["in_channels"]), int(m["width"]),
    )
    arch = Architecture.from_text(m["architecture"])
    net = build_from_architecture(arch, bb, m["space"])
    net.load_state_dict(state)
    return net, arch, bb, m["space"]
