import numpy as np
import pytest

from grad_utils import check_params_and_feats, random_readout
from maglink.hetero import add_reverse_edges, build_graph
from maglink.nn.layers import GatLayer, RgcnLayer, SageLayer, incoming_adjacency, segment_softmax
from maglink.nn.params import ParameterSet
from maglink.rng import stream
from maglink.schema import HAS_ATTRIBUTE, MAKES, NodeType, Relation

M, P, A = NodeType.MANUFACTURER, NodeType.PRODUCT, NodeType.ATTRIBUTE


def two_relation_graph():
    g = build_graph(
        {M: 3, P: 2, A: 1},
        {MAKES: [(0, 0), (0, 1), (1, 0), (2, 1)], HAS_ATTRIBUTE: [(0, 0), (2, 0)]},
    )
    g = add_reverse_edges(g, MAKES)
    return add_reverse_edges(g, HAS_ATTRIBUTE)


def random_feats(g, dims, seed=0):
    return {
        t: stream(seed, f"feats/{t}").standard_normal((g.num_nodes(t), d))
        for t, d in dims.items()
    }


class TestSageLayer:
    def test_isolated_node_keeps_self_features(self):
        # one manufacturer with no in-edges; self block identity, rest zero
        g = build_graph({M: 1, P: 1}, {Relation("touch", P, M): []})
        adj = incoming_adjacency(g)
        layer = SageLayer("L", list(g.relations), {M: 2, P: 2}, 2, activation=False)
        params = ParameterSet()
        w = np.zeros((4, 2))
        w[:2, :2] = np.eye(2)
        params.add("L/touch/W", w)
        params.add("L/touch/b", np.zeros(2))
        feats = {M: np.array([[3.0, -1.0]]), P: np.zeros((1, 2))}
        out, _ = layer.forward(params, adj, feats)
        assert np.allclose(out[M], feats[M])

    def test_mean_cancellation_yields_bias(self):
        # two in-neighbors with opposite features, neighbor block identity
        g = build_graph({M: 2, P: 1}, {MAKES: [(0, 0), (1, 0)]})
        adj = incoming_adjacency(g)
        layer = SageLayer("L", [MAKES], {M: 2, P: 2}, 2, activation=False)
        params = ParameterSet()
        w = np.zeros((4, 2))
        w[2:, :] = np.eye(2)  # aggregate block only
        params.add("L/makes/W", w)
        params.add("L/makes/b", np.array([0.5, -0.25]))
        feats = {M: np.array([[1.0, 2.0], [-1.0, -2.0]]), P: np.zeros((1, 2))}
        out, _ = layer.forward(params, adj, feats)
        assert np.allclose(out[P], [[0.5, -0.25]])

    def test_gradients_on_two_relation_graph(self):
        g = two_relation_graph()
        adj = incoming_adjacency(g)
        dims = {M: 3, P: 3, A: 3}
        feats = random_feats(g, dims, seed=1)
        layer = SageLayer("L", list(g.relations), dims, 4, activation=True)
        params = ParameterSet()
        layer.init_params(params, seed=2)
        readout = random_readout({t: (g.num_nodes(t), 4) for t in dims}, seed=3)

        def loss():
            out, cache = layer.forward(params, adj, feats)
            value = sum(float(np.sum(out[t] * readout[t])) for t in out)
            grads, gfeats = layer.backward(params, cache, {t: readout[t] for t in out}, feats)
            return value, grads, gfeats

        assert check_params_and_feats(loss, params, feats) < 1e-5

    def test_permutation_equivariance(self):
        gen = stream(4, "perm")
        n_m, n_p = 6, 5
        edges = [(int(gen.integers(n_m)), int(gen.integers(n_p))) for _ in range(12)]
        g = add_reverse_edges(build_graph({M: n_m, P: n_p}, {MAKES: sorted(set(edges))}), MAKES)
        dims = {M: 3, P: 3}
        feats = random_feats(g, dims, seed=5)
        layer = SageLayer("L", list(g.relations), dims, 4, activation=True)
        params = ParameterSet()
        layer.init_params(params, seed=6)
        out, _ = layer.forward(params, incoming_adjacency(g), feats)

        perm_m = gen.permutation(n_m)  # relabel manufacturer ids
        inv_m = np.argsort(perm_m)
        remapped = [(int(inv_m[s]), d) for s, d in g.edge_array("makes")]
        g2 = add_reverse_edges(build_graph({M: n_m, P: n_p}, {MAKES: remapped}), MAKES)
        feats2 = {M: feats[M][perm_m], P: feats[P]}
        out2, _ = layer.forward(params, incoming_adjacency(g2), feats2)
        assert np.allclose(out2[M], out[M][perm_m], atol=1e-12)
        assert np.allclose(out2[P], out[P], atol=1e-12)


class TestGatLayer:
    def test_single_neighbor_weight_one(self):
        g = build_graph({M: 2, P: 1}, {MAKES: [(0, 0)]})
        adj = incoming_adjacency(g)
        layer = GatLayer("L", [MAKES], {M: 2, P: 2}, 2, heads=1, concat_heads=True)
        params = ParameterSet()
        layer.init_params(params, seed=0)
        feats = {M: stream(1, "m").standard_normal((2, 2)), P: stream(1, "p").standard_normal((1, 2))}
        out, cache = layer.forward(params, adj, feats)
        # softmax over a single in-edge is exactly 1 regardless of the attention vector
        expected = feats[M][0] @ params["L/makes/h0/Ws"]
        assert np.allclose(out[P][0], expected)
        rel_caches, _ = cache[P]
        _, _, alpha, _, _ = rel_caches[0][2][0]
        assert np.allclose(alpha, [1.0])

    def test_identical_neighbors_half_half(self):
        g = build_graph({M: 2, P: 1}, {MAKES: [(0, 0), (1, 0)]})
        adj = incoming_adjacency(g)
        layer = GatLayer("L", [MAKES], {M: 2, P: 2}, 2, heads=1)
        params = ParameterSet()
        layer.init_params(params, seed=1)
        f = stream(2, "f").standard_normal(2)
        feats = {M: np.vstack([f, f]), P: stream(2, "p").standard_normal((1, 2))}
        _, cache = layer.forward(params, adj, feats)
        rel_caches, _ = cache[P]
        _, _, alpha, _, _ = rel_caches[0][2][0]
        assert np.allclose(alpha, [0.5, 0.5])

    def test_attention_sums_to_one(self):
        g = two_relation_graph()
        adj = incoming_adjacency(g)
        dims = {M: 3, P: 3, A: 3}
        feats = random_feats(g, dims, seed=7)
        layer = GatLayer("L", list(g.relations), dims, 4, heads=2)
        params = ParameterSet()
        layer.init_params(params, seed=8)
        _, cache = layer.forward(params, adj, feats)
        for t, (rel_caches, _) in cache.items():
            for rel, rg, head_caches in rel_caches:
                for _, _, alpha, _, _ in head_caches:
                    sums = np.zeros(rg.deg.shape[0])
                    np.add.at(sums, rg.dst_ids, alpha)
                    assert np.allclose(sums[rg.deg > 0], 1.0, atol=1e-10)

    def test_zero_in_degree_self_fallback(self):
        g = build_graph({M: 2, P: 2}, {MAKES: [(0, 0)]})  # product 1 is isolated
        adj = incoming_adjacency(g)
        layer = GatLayer("L", [MAKES], {M: 2, P: 2}, 2, heads=1)
        params = ParameterSet()
        layer.init_params(params, seed=2)
        feats = {M: stream(3, "m").standard_normal((2, 2)), P: stream(3, "p").standard_normal((2, 2))}
        out, _ = layer.forward(params, adj, feats)
        assert np.allclose(out[P][1], feats[P][1] @ params["L/makes/h0/Wd"])

    def test_head_divisibility_enforced(self):
        with pytest.raises(ValueError, match="divisible"):
            GatLayer("L", [MAKES], {M: 2, P: 2}, 6, heads=4)

    def test_gradients_multi_head(self):
        g = two_relation_graph()
        adj = incoming_adjacency(g)
        dims = {M: 3, P: 3, A: 3}
        feats = random_feats(g, dims, seed=9)
        layer = GatLayer("L", list(g.relations), dims, 4, heads=2, concat_heads=True, activation=True)
        params = ParameterSet()
        layer.init_params(params, seed=10)
        readout = random_readout({t: (g.num_nodes(t), 4) for t in dims}, seed=11)

        def loss():
            out, cache = layer.forward(params, adj, feats)
            value = sum(float(np.sum(out[t] * readout[t])) for t in out)
            grads, gfeats = layer.backward(params, cache, {t: readout[t] for t in out}, feats)
            return value, grads, gfeats

        assert check_params_and_feats(loss, params, feats) < 1e-5

    def test_gradients_averaged_heads(self):
        g = two_relation_graph()
        adj = incoming_adjacency(g)
        dims = {M: 2, P: 2, A: 2}
        feats = random_feats(g, dims, seed=12)
        layer = GatLayer("L", list(g.relations), dims, 3, heads=2, concat_heads=False)
        params = ParameterSet()
        layer.init_params(params, seed=13)
        readout = random_readout({t: (g.num_nodes(t), 3) for t in dims}, seed=14)

        def loss():
            out, cache = layer.forward(params, adj, feats)
            value = sum(float(np.sum(out[t] * readout[t])) for t in out)
            grads, gfeats = layer.backward(params, cache, {t: readout[t] for t in out}, feats)
            return value, grads, gfeats

        assert check_params_and_feats(loss, params, feats) < 1e-5


class TestRgcnLayer:
    def test_self_term_only(self):
        g = build_graph({M: 1, P: 1}, {MAKES: []})
        g = add_reverse_edges(g, MAKES)
        adj = incoming_adjacency(g)
        layer = RgcnLayer("L", list(g.relations), {M: 2, P: 2}, 2, activation=True)
        params = ParameterSet()
        params.add("L/self/manufacturer/W", np.eye(2))
        params.add("L/self/product/W", np.eye(2))
        params.add("L/makes/W", np.zeros((2, 2)))
        params.add("L/rev_makes/W", np.zeros((2, 2)))
        feats = {M: np.array([[1.5, -2.0]]), P: np.zeros((1, 2))}
        out, _ = layer.forward(params, adj, feats)
        assert np.allclose(out[M], [[1.5, 0.0]])  # relu applied

    def test_single_neighbor_identity(self):
        g = build_graph({M: 1, P: 1}, {MAKES: [(0, 0)]})
        adj = incoming_adjacency(g)
        layer = RgcnLayer("L", [MAKES], {M: 2, P: 2}, 2, activation=False)
        params = ParameterSet()
        params.add("L/self/product/W", np.zeros((2, 2)))
        params.add("L/makes/W", np.eye(2))
        feats = {M: np.array([[0.3, 0.7]]), P: np.array([[9.0, 9.0]])}
        out, _ = layer.forward(params, adj, feats)
        assert np.allclose(out[P], feats[M])

    def test_gradients(self):
        g = two_relation_graph()
        adj = incoming_adjacency(g)
        dims = {M: 3, P: 3, A: 3}
        feats = random_feats(g, dims, seed=15)
        layer = RgcnLayer("L", list(g.relations), dims, 4, activation=True)
        params = ParameterSet()
        layer.init_params(params, seed=16)
        readout = random_readout({t: (g.num_nodes(t), 4) for t in dims}, seed=17)

        def loss():
            out, cache = layer.forward(params, adj, feats)
            value = sum(float(np.sum(out[t] * readout[t])) for t in out)
            grads, gfeats = layer.backward(params, cache, {t: readout[t] for t in out}, feats)
            return value, grads, gfeats

        assert check_params_and_feats(loss, params, feats) < 1e-5

    def test_permutation_equivariance(self):
        gen = stream(18, "rgcn-perm")
        n_m, n_p = 5, 4
        edges = sorted({(int(gen.integers(n_m)), int(gen.integers(n_p))) for _ in range(10)})
        g = add_reverse_edges(build_graph({M: n_m, P: n_p}, {MAKES: edges}), MAKES)
        dims = {M: 3, P: 3}
        feats = random_feats(g, dims, seed=19)
        layer = RgcnLayer("L", list(g.relations), dims, 4)
        params = ParameterSet()
        layer.init_params(params, seed=20)
        out, _ = layer.forward(params, incoming_adjacency(g), feats)
        perm_p = gen.permutation(n_p)
        inv_p = np.argsort(perm_p)
        remapped = [(s, int(inv_p[d])) for s, d in edges]
        g2 = add_reverse_edges(build_graph({M: n_m, P: n_p}, {MAKES: remapped}), MAKES)
        feats2 = {M: feats[M], P: feats[P][perm_p]}
        out2, _ = layer.forward(params, incoming_adjacency(g2), feats2)
        assert np.allclose(out2[P], out[P][perm_p], atol=1e-12)
        assert np.allclose(out2[M], out[M], atol=1e-12)


class TestResidualOption:
    def test_residual_model_gradients(self):
        from maglink.nn.models import LinkPredictor
        from maglink.nn.ops import dot_decoder, dot_decoder_backward, weighted_bce

        g = two_relation_graph()
        adj = incoming_adjacency(g)
        dims = {M: 3, P: 3, A: 3}
        feats = random_feats(g, dims, seed=30)
        model = LinkPredictor("heterosage", list(g.relations), dims, hidden=6, dropout_rate=0.0, residual=True)
        params = model.init_params(seed=31)
        pairs = np.array([(0, 0), (1, 1), (2, 0)])
        labels = np.array([1.0, 0.0, 1.0])

        def loss():
            emb, cache = model.forward(params, adj, feats, training=False)
            scores, dcache = dot_decoder(emb[M], emb[P], pairs)
            value, dscores = weighted_bce(scores, labels)
            gsrc, gdst = dot_decoder_backward(dscores, dcache)
            grad_emb = {t: np.zeros_like(emb[t]) for t in emb}
            grad_emb[M] += gsrc
            grad_emb[P] += gdst
            grads, gfeats = model.backward(params, cache, grad_emb)
            return value, grads, gfeats

        from grad_utils import check_params_and_feats

        assert check_params_and_feats(loss, params, feats) < 1e-5

    def test_residual_changes_output(self):
        from maglink.nn.models import LinkPredictor

        g = two_relation_graph()
        adj = incoming_adjacency(g)
        dims = {M: 3, P: 3, A: 3}
        feats = random_feats(g, dims, seed=32)
        plain = LinkPredictor("heterosage", list(g.relations), dims, hidden=6, dropout_rate=0.0)
        skip = LinkPredictor("heterosage", list(g.relations), dims, hidden=6, dropout_rate=0.0, residual=True)
        p1 = plain.init_params(seed=33)
        p2 = skip.init_params(seed=33)
        out1, _ = plain.forward(p1, adj, feats)
        out2, _ = skip.forward(p2, adj, feats)
        assert not np.allclose(out1[M], out2[M])


class TestSegmentSoftmax:
    def test_blocks(self):
        logits = np.array([0.0, 0.0, 1.0, 2.0, 3.0])
        indptr = np.array([0, 2, 5])
        dst_ids = np.array([0, 0, 1, 1, 1])
        alpha = segment_softmax(logits, indptr, dst_ids)
        assert np.allclose(alpha[:2], 0.5)
        exp = np.exp(np.array([1.0, 2.0, 3.0]) - 3.0)
        assert np.allclose(alpha[2:], exp / exp.sum())
