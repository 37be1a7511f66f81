import numpy as np
import pytest

from skycap import (
    CandidatePool,
    GraphNode,
    PoolCaption,
    PoolImage,
    RankGraph,
    RankScores,
    assemble_pool,
    build_rank_graph,
    pagerank,
    pagerank_oracle,
    pool_nodes,
    rerank_pool,
)
from skycap.errors import ConvergenceError, PoolMappingError
from skycap.graph import graph_debug_dump, node_key


def make_nodes(vectors, sims):
    return [
        GraphNode(
            node_id=i,
            kind="retrieved_caption",
            source_id=f"n{i}",
            embedding=np.asarray(vec, dtype=np.float64),
            query_similarity=sim,
        )
        for i, (vec, sim) in enumerate(zip(vectors, sims))
    ]


def make_graph(weights, personalization, alpha):
    weights = np.asarray(weights, dtype=np.float64)
    nodes = make_nodes(np.eye(len(weights)), [0.0] * len(weights))
    return RankGraph(
        nodes=tuple(nodes),
        weights=weights,
        personalization=np.asarray(personalization, dtype=np.float64),
        alpha=alpha,
    )


def random_graph(rng, n, alpha, dim=6):
    vectors = rng.standard_normal((n, dim))
    sims = rng.uniform(-1, 1, size=n)
    return build_rank_graph(make_nodes(vectors, sims), alpha)


# -- build_rank_graph ---------------------------------------------------------


def test_identical_embeddings_give_uniform_graph():
    nodes = make_nodes([[1.0, 2.0]] * 4, [0.5] * 4)
    graph = build_rank_graph(nodes, 0.9)
    np.testing.assert_allclose(graph.weights, np.full((4, 4), 0.25), atol=1e-12)
    np.testing.assert_allclose(graph.personalization, np.full(4, 0.25), atol=1e-12)


def test_all_nonpositive_sims_fall_back_to_uniform_v():
    nodes = make_nodes(np.eye(3), [-0.2, 0.0, -0.9])
    graph = build_rank_graph(nodes, 0.5)
    np.testing.assert_allclose(graph.personalization, np.full(3, 1.0 / 3.0), atol=1e-12)


def test_weights_exact_fractions():
    # cos pairs: (e1,e2)=0.6, (e1,e3)=0, (e2,e3)=0.8; diagonal contributes 1
    nodes = make_nodes([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]], [0.9, 0.5, 0.1])
    graph = build_rank_graph(nodes, 0.9)
    expected_w = np.array(
        [
            [1.0 / 1.6, 0.6 / 1.6, 0.0],
            [0.6 / 2.4, 1.0 / 2.4, 0.8 / 2.4],
            [0.0, 0.8 / 1.8, 1.0 / 1.8],
        ]
    )
    expected_v = np.array([0.9 / 1.5, 0.5 / 1.5, 0.1 / 1.5])
    np.testing.assert_allclose(graph.weights, expected_w, atol=1e-12)
    np.testing.assert_allclose(graph.personalization, expected_v, atol=1e-12)


def test_negative_cosines_clipped():
    nodes = make_nodes([[1.0, 0.0], [-1.0, 0.0]], [0.3, 0.3])
    graph = build_rank_graph(nodes, 0.5)
    # opposite vectors: only the self term survives in each row
    np.testing.assert_allclose(graph.weights, np.eye(2), atol=1e-12)


def test_no_self_loops_zero_row_falls_back_to_uniform():
    nodes = make_nodes([[1.0, 0.0], [-1.0, 0.0]], [0.3, 0.3])
    graph = build_rank_graph(nodes, 0.5, self_loops=False)
    np.testing.assert_allclose(graph.weights, np.full((2, 2), 0.5), atol=1e-12)


def test_alpha_validation():
    nodes = make_nodes(np.eye(2), [0.5, 0.5])
    for alpha in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            build_rank_graph(nodes, alpha)


def test_empty_graph_rejected():
    with pytest.raises(ValueError):
        build_rank_graph([], 0.5)


def test_rows_stochastic_property():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 12))
        graph = random_graph(rng, n, 0.9)
        np.testing.assert_allclose(graph.weights.sum(axis=1), np.ones(n), atol=1e-9)
        assert np.all(graph.weights >= 0.0)
        assert graph.personalization.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(graph.personalization >= 0.0)


# -- pagerank -----------------------------------------------------------------


def test_alpha_near_zero_returns_personalization():
    rng = np.random.default_rng(12)
    graph = random_graph(rng, 8, 1e-12)
    scores = pagerank(graph)
    assert np.abs(scores.values - graph.personalization).sum() < 1e-9


def test_uniform_symmetric_graph_uniform_scores():
    nodes = make_nodes([[2.0, 1.0]] * 5, [0.4] * 5)
    graph = build_rank_graph(nodes, 0.7)
    scores = pagerank(graph)
    np.testing.assert_allclose(scores.values, np.full(5, 0.2), atol=1e-10)


def test_matches_oracle_on_random_graphs():
    rng = np.random.default_rng(13)
    for alpha in (0.1, 0.5, 0.9):
        for _ in range(10):
            n = int(rng.integers(2, 20))
            graph = random_graph(rng, n, alpha)
            iterative = pagerank(graph)
            exact = pagerank_oracle(graph)
            assert np.max(np.abs(iterative.values - exact.values)) < 1e-8


def test_scores_stay_probability_vector_each_iteration():
    rng = np.random.default_rng(14)
    graph = random_graph(rng, 10, 0.9)
    r = graph.personalization.copy()
    for _ in range(50):
        r = graph.alpha * (graph.weights.T @ r) + (1 - graph.alpha) * graph.personalization
        assert r.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(r >= 0.0)


def test_damping_limit():
    rng = np.random.default_rng(15)
    graph = random_graph(rng, 12, 1e-6)
    scores = pagerank(graph)
    assert np.abs(scores.values - graph.personalization).sum() < 1e-4


def test_result_metadata():
    rng = np.random.default_rng(16)
    graph = random_graph(rng, 6, 0.5)
    scores = pagerank(graph, tol=1e-10)
    assert scores.residual < 1e-10
    assert scores.iterations >= 1
    assert scores.values.sum() == pytest.approx(1.0, abs=1e-8)


def test_non_convergence_raises_with_residual():
    rng = np.random.default_rng(17)
    graph = random_graph(rng, 10, 0.9)
    with pytest.raises(ConvergenceError) as excinfo:
        pagerank(graph, tol=0.0, max_iter=3)
    assert excinfo.value.iterations == 3
    assert excinfo.value.residual >= 0.0


# -- pagerank_oracle ----------------------------------------------------------


def test_oracle_single_node():
    graph = make_graph([[1.0]], [1.0], 0.9)
    scores = pagerank_oracle(graph)
    np.testing.assert_allclose(scores.values, [1.0], atol=1e-12)


def test_oracle_two_node_closed_form():
    # (I - a W^T) r = (1-a) v with W = [[0,1],[1,0]], a=1/2, v=(1,0)
    # gives r = (2/3, 1/3) by direct 2x2 algebra.
    graph = make_graph([[0.0, 1.0], [1.0, 0.0]], [1.0, 0.0], 0.5)
    scores = pagerank_oracle(graph)
    np.testing.assert_allclose(scores.values, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)


def test_oracle_uniform_case():
    graph = make_graph(np.full((4, 4), 0.25), np.full(4, 0.25), 0.9)
    scores = pagerank_oracle(graph)
    np.testing.assert_allclose(scores.values, np.full(4, 0.25), atol=1e-12)


def test_oracle_size_limit():
    rng = np.random.default_rng(18)
    graph = random_graph(rng, 4, 0.5)
    big = RankGraph(
        nodes=graph.nodes * 51,
        weights=np.eye(204),
        personalization=np.full(204, 1 / 204),
        alpha=0.5,
    )
    with pytest.raises(ValueError):
        pagerank_oracle(big)


# -- pool bridging ------------------------------------------------------------


def sample_pool():
    captions = (
        PoolCaption("c1", "one plane", 0.9),
        PoolCaption("c2", "two planes", 0.8),
        PoolCaption("c3", "three planes", 0.7),
    )
    images = (
        PoolImage(
            image_id="i1",
            score=0.85,
            gold_captions=(PoolCaption("g1", "gold one", 0.6), PoolCaption("g2", "gold two", 0.5)),
            similar_captions=(PoolCaption("s1", "similar one", 0.4),),
        ),
        PoolImage(
            image_id="i2",
            score=0.75,
            gold_captions=(PoolCaption("g3", "gold three", 0.3),),
            similar_captions=(PoolCaption("s2", "similar two", 0.2),),
        ),
    )
    return CandidatePool("query", captions, images)


def pool_node_map(pool):
    node_map = {}
    idx = 0
    for cap in pool.retrieved_captions:
        node_map[("caption", cap.caption_id)] = idx
        idx += 1
    for img in pool.similar_images:
        node_map[("image", img.image_id)] = idx
        idx += 1
        for cap in img.gold_captions + img.similar_captions:
            if ("caption", cap.caption_id) not in node_map:
                node_map[("caption", cap.caption_id)] = idx
                idx += 1
    return node_map


def test_rerank_equal_scores_keeps_order():
    pool = sample_pool()
    node_map = pool_node_map(pool)
    scores = RankScores(np.full(len(node_map), 0.1), 1, 0.0)
    reranked = rerank_pool(pool, scores, node_map)
    assert [c.caption_id for c in reranked.retrieved_captions] == ["c1", "c2", "c3"]
    assert [img.image_id for img in reranked.similar_images] == ["i1", "i2"]


def test_rerank_argmax_first():
    pool = sample_pool()
    node_map = pool_node_map(pool)
    values = np.full(len(node_map), 1e-6)
    values[node_map[("caption", "c3")]] = 1.0 - 1e-6
    reranked = rerank_pool(pool, RankScores(values, 1, 0.0), node_map)
    assert reranked.retrieved_captions[0].caption_id == "c3"


def test_rerank_matches_sort_oracle():
    rng = np.random.default_rng(19)
    pool = sample_pool()
    node_map = pool_node_map(pool)
    values = rng.uniform(0, 1, size=len(node_map))
    reranked = rerank_pool(pool, RankScores(values, 1, 0.0), node_map)
    expected = sorted(
        pool.retrieved_captions,
        key=lambda c: -values[node_map[("caption", c.caption_id)]],
    )
    assert [c.caption_id for c in reranked.retrieved_captions] == [
        c.caption_id for c in expected
    ]


def test_rerank_is_permutation_and_preserves_gold_order():
    rng = np.random.default_rng(20)
    pool = sample_pool()
    node_map = pool_node_map(pool)
    values = rng.uniform(0, 1, size=len(node_map))
    reranked = rerank_pool(pool, RankScores(values, 1, 0.0), node_map)
    assert sorted(c.caption_id for c in reranked.retrieved_captions) == ["c1", "c2", "c3"]
    assert sorted(i.image_id for i in reranked.similar_images) == ["i1", "i2"]
    for original, new in zip(
        sorted(pool.similar_images, key=lambda i: i.image_id),
        sorted(reranked.similar_images, key=lambda i: i.image_id),
    ):
        assert [c.caption_id for c in new.gold_captions] == [
            c.caption_id for c in original.gold_captions
        ]


def test_rerank_unmapped_element_raises():
    pool = sample_pool()
    node_map = pool_node_map(pool)
    del node_map[("caption", "c2")]
    scores = RankScores(np.full(10, 0.1), 1, 0.0)
    with pytest.raises(PoolMappingError):
        rerank_pool(pool, scores, node_map)


def test_pool_nodes_from_store(synthetic_store):
    store = synthetic_store
    query = store.image_embedding("img010")
    pool = assemble_pool(store, query, pool_size=5, query_image_id="img010")
    nodes, node_map = pool_nodes(store, query, pool)
    assert len(nodes) == len(node_map)
    # the query image is not a node
    assert ("image", "img010") not in node_map
    # every pool element has a node
    for cap in pool.retrieved_captions:
        assert node_key("retrieved_caption", cap.caption_id) in node_map
    for img in pool.similar_images:
        assert node_key("similar_image", img.image_id) in node_map
        for cap in img.gold_captions + img.similar_captions:
            assert node_key("gold_caption", cap.caption_id) in node_map
    # query similarity of a retrieved caption equals its retrieval score
    first = pool.retrieved_captions[0]
    node = nodes[node_map[("caption", first.caption_id)]]
    assert node.query_similarity == pytest.approx(first.score, abs=1e-12)


def test_graph_debug_dump_is_json_ready(synthetic_store):
    import json

    store = synthetic_store
    query = store.image_embedding("img010")
    pool = assemble_pool(store, query, pool_size=3, query_image_id="img010")
    nodes, node_map = pool_nodes(store, query, pool)
    graph = build_rank_graph(nodes, 0.9)
    scores = pagerank(graph)
    dump = graph_debug_dump("img010", graph, scores)
    text = json.dumps(dump)
    assert "img010" in text
    assert len(dump["nodes"]) == len(nodes)
