import numpy as np
import pytest

from morphnas import cells as C
from morphnas import nao
from morphnas import tensor as T
from morphnas.tensor import Tensor

SPACE, B = "cls-dilation", 3


@pytest.fixture(scope="module")
def corpus():
    return nao.synthetic_corpus(SPACE, B, 40, np.random.default_rng(0))


@pytest.fixture(scope="module")
def codec():
    return nao.ArchCodec(B, (SPACE,), ("normal",))


@pytest.fixture(scope="module")
def trained(corpus, codec):
    tokens, scores = corpus
    return nao.train_nao(tokens, scores, codec, nao.NaoConfig(d=16, emb=8, epochs=150, seed=1))


class TestCodec:
    def test_layout(self, codec):
        assert codec.length == 12
        assert codec.vocab == B + 1 + 6

    def test_mask_matches_token_classes(self, codec):
        allowed = codec.mask() == 0
        assert allowed[0].tolist() == [True] * 4 + [False] * 6
        assert allowed[1].tolist() == [False] * 4 + [True] * 6

    def test_two_cell_codec(self):
        bb = C.Backbone("unet-search", B=2)
        codec = nao.ArchCodec(2, bb.role_spaces("edge-plain"), bb.cell_roles())
        arch = C.random_architecture(bb, "edge-plain", np.random.default_rng(0))
        assert codec.decode(codec.encode(arch)) == arch
        assert not codec.is_valid([0] * codec.length)


class TestCorpus:
    def test_scores_follow_diversity(self, corpus):
        tokens, scores = corpus
        raw = []
        for t in tokens:
            ops = {int(x) for x in t[1::2]}
            raw.append(len(ops) / 6)
        raw = np.array(raw)
        np.testing.assert_allclose(scores, (raw - raw.min()) / (raw.max() - raw.min()))

    def test_deterministic(self):
        a = nao.synthetic_corpus(SPACE, B, 5, np.random.default_rng(3))
        b = nao.synthetic_corpus(SPACE, B, 5, np.random.default_rng(3))
        np.testing.assert_array_equal(a[0], b[0])


class TestModel:
    def test_latent_shape(self, trained, corpus):
        assert trained.model.latent(corpus[0][:5]).shape == (5, 16)

    def test_loss_decreases(self, trained):
        assert trained.losses[-1] < 0.5 * trained.losses[0]

    def test_greedy_is_argmax_of_teacher_forcing(self, trained, corpus):
        # feeding the greedy output back in must reproduce the same argmax at every step
        m = trained.model
        e = m.latent(corpus[0][:6])
        dec = m.greedy_decode(e)
        with T.no_grad():
            logp = m.decoder_logprobs(Tensor(e), dec).data
        np.testing.assert_array_equal(logp.argmax(-1), dec)

    def test_decoder_respects_mask(self, trained, corpus):
        dec = trained.model.reconstruct(corpus[0])
        assert np.all(dec[:, 0::2] <= B)
        assert np.all(dec[:, 1::2] > B)

    def test_ascent_raises_prediction(self, trained, corpus):
        m = trained.model
        e0 = m.latent(corpus[0])
        e1 = nao.ascend(m, e0, 0.05, 5)
        with T.no_grad():
            p0 = m.predict_latent(Tensor(e0)).data
            p1 = m.predict_latent(Tensor(e1)).data
        assert np.mean(p1 > p0) > 0.9

    def test_generation_is_valid_and_unique(self, trained, corpus, codec):
        gen = nao.generate_candidates(trained.model, corpus[0], eta=0.05, steps=5, k=10)
        assert len(gen.candidates) <= 10
        assert len({tuple(c) for c in gen.candidates}) == len(gen.candidates)
        assert all(codec.is_valid(c) for c in gen.candidates)

    def test_swap_preserves_cells_semantics(self, corpus):
        tokens = corpus[0]
        swapped = nao.swap_inputs(tokens, np.random.default_rng(0))
        for a, b in zip(tokens, swapped):
            ca = C.decode_cell(a, B, SPACE)
            cb = C.decode_cell(b, B, SPACE)
            for na, nb in zip(ca.nodes, cb.nodes):
                assert {na[:2], na[2:]} == {nb[:2], nb[2:]}


class TestValidation:
    def test_rejects_unnormalised_scores(self, corpus, codec):
        with pytest.raises(ValueError):
            nao.train_nao(corpus[0], corpus[1] * 3, codec, nao.NaoConfig(epochs=1))

    def test_rejects_wrong_length(self, corpus, codec):
        with pytest.raises(ValueError):
            nao.train_nao(corpus[0][:, :8], corpus[1], codec, nao.NaoConfig(epochs=1))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_reported(self, corpus, codec):
        with pytest.raises(nao.NaoDivergence):
            nao.train_nao(corpus[0], corpus[1], codec, nao.NaoConfig(d=8, emb=4, epochs=3, lr=float("inf")))
