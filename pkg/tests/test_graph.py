"""Loader, index, and generator behavior for the heterogeneous graph."""

import numpy as np
import pytest

from hetlink.graph import (
    EDGES_HEADER,
    NODES_HEADER,
    GraphError,
    HeteroGraph,
    InfeasibleSpecError,
    SyntheticSpec,
    generate_synthetic,
    in_neighbors,
    load_edges,
    load_graph,
    save_edges,
    save_graph,
    split_edges,
)


def write_tsv(path, header, rows):
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")


def test_load_single_edge_builds_inverse_index(tmp_path):
    write_tsv(tmp_path / "nodes.tsv", NODES_HEADER, ["0\t0\t1.0", "1\t0\t2.0"])
    write_tsv(tmp_path / "edges.tsv", EDGES_HEADER, ["0\t0\t1"])
    g = load_graph(tmp_path / "nodes.tsv", tmp_path / "edges.tsv")
    assert g.node_count == 2 and g.edge_count == 1
    np.testing.assert_array_equal(g.in_neighbors(1, 0), [0])


def test_dangling_endpoint_rejected(tmp_path):
    write_tsv(tmp_path / "nodes.tsv", NODES_HEADER,
              [f"{i}\t0\t1.0" for i in range(3)])
    write_tsv(tmp_path / "edges.tsv", EDGES_HEADER, ["0\t0\t99"])
    with pytest.raises(GraphError, match="99"):
        load_graph(tmp_path / "nodes.tsv", tmp_path / "edges.tsv")


def test_malformed_line_reports_line_number(tmp_path):
    write_tsv(tmp_path / "nodes.tsv", NODES_HEADER, ["0\t0\t1.0", "1\t0"])
    write_tsv(tmp_path / "edges.tsv", EDGES_HEADER, [])
    with pytest.raises(GraphError, match="line 3"):
        load_graph(tmp_path / "nodes.tsv", tmp_path / "edges.tsv")


def test_missing_header_rejected(tmp_path):
    (tmp_path / "nodes.tsv").write_text("0\t0\t1.0\n", encoding="utf-8")
    write_tsv(tmp_path / "edges.tsv", EDGES_HEADER, [])
    with pytest.raises(GraphError, match="header"):
        load_graph(tmp_path / "nodes.tsv", tmp_path / "edges.tsv")


def test_duplicate_triple_rejected():
    with pytest.raises(GraphError, match="duplicate"):
        HeteroGraph([0, 0], [np.ones(1), np.ones(1)], [(0, 0, 1), (0, 0, 1)])


def test_same_pair_multiple_relations_allowed():
    g = HeteroGraph([0, 0], [np.ones(1), np.ones(1)], [(0, 0, 1), (0, 1, 1)])
    assert g.edge_count == 2


def test_attribute_dimension_mismatch_rejected():
    with pytest.raises(GraphError, match="schema"):
        HeteroGraph([0, 0], [np.ones(2), np.ones(3)], [])


def test_fixture_counts_match_file_line_counts(tmp_path):
    # 50 nodes over 3 types, 4 relations; counts come from the files.
    spec = SyntheticSpec(
        nodes_per_type=(20, 15, 15),
        attr_dims_per_type=(3, 3, 3),
        relation_count=4,
        edges_per_relation=(30, 30, 30, 30),
        community_count=4,
        noise_fraction=0.2,
        seed=5,
    )
    g, _ = generate_synthetic(spec)
    save_graph(g, tmp_path / "nodes.tsv", tmp_path / "edges.tsv")
    node_lines = (tmp_path / "nodes.tsv").read_text().strip().splitlines()
    edge_lines = (tmp_path / "edges.tsv").read_text().strip().splitlines()
    loaded = load_graph(tmp_path / "nodes.tsv", tmp_path / "edges.tsv")
    assert loaded.node_count == len(node_lines) - 1 == 50
    assert loaded.edge_count == len(edge_lines) - 1


def test_in_neighbors_empty_relation():
    g = HeteroGraph([0, 0], [np.ones(1), np.ones(1)], [(0, 0, 1)], relation_count=2)
    assert list(g.in_neighbors(1, 1)) == []


def test_in_neighbors_known_sources_sorted():
    g = HeteroGraph(
        [0, 0, 0],
        [np.ones(1)] * 3,
        [(1, 0, 2), (0, 0, 2), (0, 1, 2)],
        relation_count=2,
    )
    np.testing.assert_array_equal(g.in_neighbors(2, 0), [0, 1])


def test_in_neighbors_out_of_range():
    g = HeteroGraph([0], [np.ones(1)], [])
    with pytest.raises(GraphError):
        g.in_neighbors(5, 0)


def test_in_neighbors_matches_edge_scan():
    rng = np.random.default_rng(11)
    n, m, R = 30, 200, 4
    triples = set()
    while len(triples) < m:
        triples.add((int(rng.integers(n)), int(rng.integers(R)), int(rng.integers(n))))
    g = HeteroGraph([0] * n, [np.ones(1)] * n, sorted(triples), relation_count=R)
    for v in range(n):
        for r in range(R):
            expected = sorted(s for s, rel, d in triples if rel == r and d == v)
            assert list(in_neighbors(g, v, r)) == expected


def test_in_index_matches_rebuild_and_degree_sum(small_synthetic):
    g, _ = small_synthetic
    rebuilt = {}
    for src, rel, dst in g.edges.tolist():
        rebuilt.setdefault((dst, rel), []).append(src)
    assert set(rebuilt) == set(g.in_index)
    for key, srcs in rebuilt.items():
        np.testing.assert_array_equal(sorted(srcs), g.in_index[key])
    total = sum(len(v) for v in g.in_index.values())
    assert total == g.edge_count


def test_generator_is_deterministic():
    spec = SyntheticSpec(seed=7)
    g1, h1 = generate_synthetic(spec)
    g2, h2 = generate_synthetic(spec)
    np.testing.assert_array_equal(g1.edges, g2.edges)
    np.testing.assert_array_equal(h1, h2)
    for a, b in zip(g1.attributes, g2.attributes):
        np.testing.assert_array_equal(a, b)


def test_generator_zero_noise_is_fully_intra_community():
    spec = SyntheticSpec(
        nodes_per_type=(30, 30),
        attr_dims_per_type=(4, 4),
        relation_count=2,
        edges_per_relation=(60, 60),
        community_count=3,
        noise_fraction=0.0,
        seed=13,
    )
    g, held = generate_synthetic(spec)
    # Reconstruct community labels from the generator's own stream.
    from hetlink.seeding import subsystem_rng

    rng = subsystem_rng(13, "generator")
    n = 60
    balanced = np.tile(np.arange(3), n // 3 + 1)
    communities = balanced[:n][rng.permutation(n)]
    for src, _, dst in np.concatenate([g.edges, held]).tolist():
        assert communities[src] == communities[dst]


def test_generator_split_arithmetic():
    spec = SyntheticSpec(
        nodes_per_type=(100, 100),
        attr_dims_per_type=(4, 4),
        relation_count=3,
        edges_per_relation=(334, 333, 333),
        community_count=5,
        noise_fraction=0.1,
        seed=2,
    )
    g, held = generate_synthetic(spec)
    assert spec.total_edges == 1000
    assert len(held) == 100
    assert g.edge_count == 900


def test_generator_infeasible_spec():
    spec = SyntheticSpec(
        nodes_per_type=(2,),
        attr_dims_per_type=(2,),
        relation_count=1,
        edges_per_relation=(10,),
        community_count=1,
        noise_fraction=0.0,
        seed=0,
    )
    with pytest.raises(InfeasibleSpecError):
        generate_synthetic(spec)


def test_save_load_round_trip(tmp_path, small_synthetic):
    g, _ = small_synthetic
    save_graph(g, tmp_path / "n.tsv", tmp_path / "e.tsv")
    loaded = load_graph(tmp_path / "n.tsv", tmp_path / "e.tsv")
    np.testing.assert_array_equal(loaded.node_types, g.node_types)
    np.testing.assert_array_equal(loaded.edges, g.edges)
    for a, b in zip(loaded.attributes, g.attributes):
        np.testing.assert_array_equal(a, b)


def test_heldout_round_trip(tmp_path, small_synthetic):
    _, held = small_synthetic
    save_edges(held, tmp_path / "h.tsv")
    np.testing.assert_array_equal(load_edges(tmp_path / "h.tsv"), held)


def test_reverse_relation_flag(tmp_path):
    write_tsv(tmp_path / "nodes.tsv", NODES_HEADER, ["0\t0\t1.0", "1\t0\t2.0"])
    write_tsv(tmp_path / "edges.tsv", EDGES_HEADER, ["0\t0\t1"])
    g = load_graph(tmp_path / "nodes.tsv", tmp_path / "edges.tsv",
                   add_reverse_relations=True)
    assert g.relation_count == 2
    assert (1, 1, 0) in g.edge_set


def test_split_edges_partitions_everything(small_synthetic):
    g, _ = small_synthetic
    train, valid, test = split_edges(g.edges, (0.8, 0.1, 0.1), seed=4)
    assert len(train) + len(valid) + len(test) == g.edge_count
    combined = {tuple(e) for part in (train, valid, test) for e in part.tolist()}
    assert combined == g.edge_set
