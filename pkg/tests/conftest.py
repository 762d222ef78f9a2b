import numpy as np
import pytest

from graphdx.graph import graph_from_records, parse_records


def graph_from_lines(lines):
    ids, records = parse_records(lines)
    return graph_from_records(ids, records)


@pytest.fixture
def fig1_graph():
    """Small graph shaped like the two-panel neighborhood illustration:
    u* carries s1,s2; u1 shares s1 and adds s3; u2 shares s2 and adds s3;
    d2/d3 share symptoms with d1."""
    return graph_from_lines(
        [
            "u*\td1\ts1,s2",
            "u1\td2\ts1,s3",
            "u2\td3\ts2,s3",
        ]
    )


@pytest.fixture
def toy_graph():
    """6 users / 5 symptoms / 3 diseases with varied degrees."""
    rng = np.random.default_rng(7)
    lines = []
    for u in range(6):
        d = u % 3
        n_sym = int(rng.integers(1, 4))
        syms = sorted(int(s) for s in rng.choice(5, size=n_sym, replace=False))
        lines.append(f"u{u}\td{d}\t" + ",".join(f"s{s}" for s in syms))
    return graph_from_lines(lines)
