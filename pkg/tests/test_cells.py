import numpy as np
import pytest

from morphnas import cells as C
from morphnas import tensor as T
from morphnas.tensor import Tensor

SPACES = [s for s in C.SEARCH_SPACES]

EXAMPLE = C.CellGraph(
    (
        (0, C.SEP3, 1, C.IDENTITY),
        (2, C.MAX, 0, C.AVG),
        (1, C.SEP5, 1, C.SEP3),
    ),
    "normal",
    "cls-plain",
)


class TestSpaces:
    def test_sizes(self):
        assert len(C.get_space("cls-plain").ops) == 5
        assert len(C.get_space("cls-dilation").ops) == 6
        assert len(C.get_space("cls-erosion").ops) == 6
        for name in ("edge-plain", "edge-dilation", "edge-gradient", "upsc"):
            assert len(C.get_space(name).ops) == 6

    def test_pseudo_ops_present(self):
        assert C.P_DIL in C.get_space("cls-dilation").ops
        assert C.P_ERO in C.get_space("cls-erosion").ops
        assert C.P_GRAD in C.get_space("edge-gradient").ops
        assert C.TCONV in C.get_space("upsc").ops

    def test_unknown(self):
        with pytest.raises(ValueError):
            C.get_space("nope")


class TestEncoding:
    def test_tokens_by_hand(self):
        # B = 3: predecessor symbols 0..3, ops start at 4 in cls-plain order
        assert C.encode_cell(EXAMPLE) == [0, 4, 1, 8, 2, 7, 0, 6, 1, 5, 1, 4]

    def test_adjacency_by_hand(self):
        m = C.adjacency_matrix(EXAMPLE)
        expected = np.zeros((6, 6), int)
        expected[0, 2], expected[1, 2] = 1, 5
        expected[2, 3], expected[0, 3] = 4, 3
        expected[1, 4] = 2  # same predecessor twice keeps the first op
        expected[3, 5] = expected[4, 5] = 7
        np.testing.assert_array_equal(m, expected)

    def test_loose_ends(self):
        assert EXAMPLE.loose_ends() == [1, 2]

    @pytest.mark.parametrize("space", SPACES)
    def test_roundtrips(self, space):
        rng = np.random.default_rng(0)
        for _ in range(200):
            cell = C.random_cell(space, 5, rng)
            assert C.decode_cell(C.encode_cell(cell), 5, space) == cell
            assert C.parse_cell(cell.to_text()) == cell
            m = C.adjacency_matrix(cell)
            assert not np.any(np.tril(m))

    @pytest.mark.parametrize("tokens,msg", [
        ([0, 4, 1], "expected 12"),
        ([0, 4, 1, 8, 2, 7, 0, 6, 1, 5, 1, 99], "outside"),
        ([4, 4, 1, 8, 2, 7, 0, 6, 1, 5, 1, 4], "operation symbol"),
        ([0, 0, 1, 8, 2, 7, 0, 6, 1, 5, 1, 4], "predecessor symbol"),
        ([0, 4, 1, 8, 3, 7, 0, 6, 1, 5, 1, 4], "predecessor 3"),
    ])
    def test_decode_rejects(self, tokens, msg):
        with pytest.raises(ValueError, match=msg):
            C.decode_cell(tokens, 3, "cls-plain")

    @pytest.mark.parametrize("text", [
        "B=1; node0=(0,sep_conv_3x3,1,warp); kind=normal; space=cls-plain",
        "B=2; node0=(0,sep_conv_3x3,1,identity); kind=normal; space=cls-plain",
        "node0=(0 sep_conv_3x3 1 identity)",
    ])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            C.parse_cell(text)

    def test_random_subset(self):
        rng = np.random.default_rng(1)
        cell = C.random_cell("cls-dilation", 5, rng, ops=[C.MAX])
        assert set(cell.ops()) == {C.MAX}

    def test_architecture_text(self):
        bb = C.Backbone("unet-search")
        arch = C.random_architecture(bb, "edge-gradient", np.random.default_rng(2))
        assert arch.cells[1].space == "upsc"
        assert C.Architecture.from_text(arch.to_text()) == arch
        assert C.Architecture.from_tokens(arch.tokens(), 5, ("edge-gradient", "upsc"), ("DownSC", "UpSC")) == arch


class TestCell:
    def test_identity_wiring(self):
        # with identity ops every node is a sum of earlier slots
        g = C.CellGraph(((0, C.IDENTITY, 1, C.IDENTITY), (2, C.IDENTITY, 2, C.IDENTITY), (0, C.IDENTITY, 1, C.IDENTITY)),
                        "normal", "cls-plain")
        cell = C.Cell(g, 3, 3, 4, rng=np.random.default_rng(0)).eval()
        rng = np.random.default_rng(1)
        s0 = Tensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
        s1 = Tensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
        with T.no_grad():
            a, b = cell.pre0(s0).data, cell.pre1(s1).data
            out = cell(s0, s1).data
        n0 = a + b
        expected = np.concatenate([2 * n0, a + b], axis=1)  # nodes 1 and 2 are loose
        np.testing.assert_allclose(out, expected, rtol=1e-6)

    @pytest.mark.parametrize("op", sorted({o for s in C.SEARCH_SPACES.values() for o in s.ops}))
    @pytest.mark.parametrize("mode,size", [("same", 8), ("down", 4)])
    def test_op_shapes(self, op, mode, size):
        if op == C.TCONV and mode == "down":
            pytest.skip("transpose conv never reduces")
        m = C.make_op(op, 4, mode, rng=np.random.default_rng(0))
        with T.no_grad():
            y = m(Tensor(np.zeros((1, 4, 8, 8), np.float32)))
        assert y.shape == (1, 4, size, size)

    @pytest.mark.parametrize("op", C.get_space("upsc").ops)
    def test_up_ops(self, op):
        m = C.make_op(op, 4, "up", rng=np.random.default_rng(0))
        with T.no_grad():
            assert m(Tensor(np.zeros((1, 4, 4, 4), np.float32))).shape == (1, 4, 8, 8)


class TestNetworks:
    def test_cifar_stack(self):
        bb = C.Backbone("cifar-stack", N=1, F=4, num_classes=4)
        arch = C.random_architecture(bb, "cls-erosion", np.random.default_rng(0))
        net = C.build_from_architecture(arch, bb, "cls-erosion", rng=np.random.default_rng(1))
        y = net(Tensor(np.zeros((2, 3, 16, 16), np.float32)))
        assert y.shape == (2, 4)

    @pytest.mark.parametrize("kind,space", [("unet-search", "edge-gradient"), ("multiscale-decoder", "edge-dilation")])
    def test_edge_backbones(self, kind, space):
        bb = C.Backbone(kind, F=4, width=8, num_classes=1)
        arch = C.random_architecture(bb, space, np.random.default_rng(0))
        net = C.build_from_architecture(arch, bb, space, rng=np.random.default_rng(1))
        assert net(Tensor(np.zeros((1, 3, 32, 32), np.float32))).shape == (1, 1, 32, 32)

    def test_space_mismatch(self):
        bb = C.Backbone("cifar-stack")
        arch = C.random_architecture(bb, "cls-plain", np.random.default_rng(0))
        with pytest.raises(ValueError):
            C.build_from_architecture(arch, bb, "cls-dilation")

    def test_checkpoint_roundtrip(self, tmp_path):
        bb = C.Backbone("cifar-stack", N=1, F=4, num_classes=4)
        arch = C.random_architecture(bb, "cls-dilation", np.random.default_rng(3))
        net = C.build_from_architecture(arch, bb, "cls-dilation", rng=np.random.default_rng(4)).eval()
        C.save_network(net, tmp_path / "m", arch, bb, "cls-dilation")
        net2, arch2, bb2, space = C.load_network(tmp_path / "m")
        x = Tensor(np.random.default_rng(5).standard_normal((2, 3, 16, 16)).astype(np.float32))
        net2.eval()
        with T.no_grad():
            np.testing.assert_array_equal(net(x).data, net2(x).data)
        assert (arch2, bb2, space) == (arch, bb, "cls-dilation")
