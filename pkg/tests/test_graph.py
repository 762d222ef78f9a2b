import pytest

from graphdx.exceptions import NotFoundError, ParseError, RecordError
from graphdx.graph import (
    HeteroGraph,
    NodeId,
    NodeKind,
    disease,
    load_records,
    parse_records,
    symptom,
    user,
)

from conftest import graph_from_lines


def test_single_record_builds_expected_edges():
    g = graph_from_lines(["u1\td1\ts1,s2"])
    assert list(g.neighbors(user(0), NodeKind.SYMPTOM)) == [0, 1]
    assert list(g.neighbors(user(0), NodeKind.DISEASE)) == [0]
    assert list(g.neighbors(disease(0), NodeKind.SYMPTOM)) == [0, 1]
    assert list(g.neighbors(symptom(0), NodeKind.USER)) == [0]
    assert list(g.neighbors(symptom(1), NodeKind.DISEASE)) == [0]


def test_empty_file_loads_empty_graph(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("", encoding="utf-8")
    g = load_records(path)
    assert all(g.count(k) == 0 for k in NodeKind)
    assert g.edge_count(NodeKind.USER, NodeKind.SYMPTOM) == 0


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("u1\td1\ts1\nu2 d1 s1\n", encoding="utf-8")
    with pytest.raises(ParseError) as err:
        load_records(path)
    assert err.value.line_no == 2


def test_empty_symptom_set_rejected():
    with pytest.raises(RecordError):
        parse_records(["u1\td1\t"])
    with pytest.raises(RecordError):
        parse_records(["u1\t\ts1"])


def test_duplicate_ids_within_record_rejected():
    with pytest.raises(RecordError):
        parse_records(["u1\td1\ts1,s1"])
    with pytest.raises(RecordError):
        parse_records(["u1\td1,d1\ts1"])


def test_neighbors_sorted_and_empty_for_isolated(fig1_graph):
    g = fig1_graph
    for kind in NodeKind:
        for i in range(g.count(kind)):
            for other in NodeKind:
                ns = g.neighbors(NodeId(kind, i), other)
                assert list(ns) == sorted(ns)
    # disease d1 has no edges to users other than u*
    assert list(g.neighbors(disease(0), NodeKind.USER)) == [0]


def test_neighbors_out_of_range_raises(fig1_graph):
    with pytest.raises(NotFoundError):
        fig1_graph.neighbors(user(99), NodeKind.SYMPTOM)


def test_multiplicity_accumulates_across_records():
    g = graph_from_lines(["u1\td1\ts1", "u1\td1\ts1,s2"])
    assert g.multiplicity(user(0), NodeKind.SYMPTOM, 0) == 2
    assert g.multiplicity(user(0), NodeKind.SYMPTOM, 1) == 1
    assert g.multiplicity(disease(0), NodeKind.SYMPTOM, 0) == 2
    # one node per user even with two visits
    assert g.count(NodeKind.USER) == 1


def test_edge_symmetry(toy_graph):
    g = toy_graph
    pairs = [
        (NodeKind.USER, NodeKind.SYMPTOM),
        (NodeKind.USER, NodeKind.DISEASE),
        (NodeKind.DISEASE, NodeKind.SYMPTOM),
    ]
    for ka, kb in pairs:
        for a in range(g.count(ka)):
            for b in g.neighbors(NodeId(ka, a), kb):
                back = g.neighbors(NodeId(kb, int(b)), ka)
                assert a in back


def test_user_symptom_edge_count_matches_distinct_pairs(toy_graph):
    g = toy_graph
    total = sum(
        len(g.neighbors(user(u), NodeKind.SYMPTOM)) for u in range(g.count(NodeKind.USER))
    )
    distinct = {(rec.user, s) for rec in g.records for s in rec.symptoms}
    assert total == len(distinct)


def test_reload_is_bitwise_identical(tmp_path):
    lines = ["u1\td1\ts1,s2", "u2\td2,d1\ts2,s3", "u3\td1\ts3"]
    path = tmp_path / "r.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    g1 = load_records(path)
    g2 = load_records(path)
    assert g1.to_bytes() == g2.to_bytes()


def test_save_load_roundtrip(tmp_path, toy_graph):
    p = tmp_path / "g.bin"
    toy_graph.save(p)
    g2 = HeteroGraph.load(p)
    assert g2.to_bytes() == toy_graph.to_bytes()
    assert g2.ids == toy_graph.ids


def test_ids_mapped_first_seen_order():
    g = graph_from_lines(["u9\td5\tsx,sa", "u1\td5\tsa"])
    assert g.ids[NodeKind.USER] == ["u9", "u1"]
    assert g.ids[NodeKind.SYMPTOM] == ["sx", "sa"]
    assert g.ids[NodeKind.DISEASE] == ["d5"]


def test_without_users_keeps_ds_edges(fig1_graph):
    g = fig1_graph.without_users()
    assert g.count(NodeKind.USER) == 0
    assert list(g.neighbors(disease(0), NodeKind.SYMPTOM)) == list(
        fig1_graph.neighbors(disease(0), NodeKind.SYMPTOM)
    )
    assert list(g.neighbors(symptom(2), NodeKind.DISEASE)) == list(
        fig1_graph.neighbors(symptom(2), NodeKind.DISEASE)
    )


def test_user_free_view_hides_users(fig1_graph):
    v = fig1_graph.user_free_view()
    assert v.count(NodeKind.USER) == 0
    assert list(v.neighbors(symptom(0), NodeKind.USER)) == []
    with pytest.raises(NotFoundError):
        v.neighbors(user(0), NodeKind.SYMPTOM)
    assert list(v.neighbors(symptom(0), NodeKind.DISEASE)) == list(
        fig1_graph.neighbors(symptom(0), NodeKind.DISEASE)
    )
