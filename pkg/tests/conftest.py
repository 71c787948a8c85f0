import numpy as np
import pytest

from fairlink import Graph


@pytest.fixture
def toy_graph():
    """4 nodes, 2 groups, 3 edges: (0,1) intra-0, (2,3) intra-1, (0,2) inter."""
    attrs = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    adj = np.zeros((4, 4))
    for u, v in ((0, 1), (2, 3), (0, 2)):
        adj[u, v] = adj[v, u] = 1.0
    return Graph(attributes=attrs, adjacency=adj, sensitive=[0, 0, 1, 1])


@pytest.fixture
def tiny_dataset(tmp_path):
    """Three-node dataset files: nodes a, b, c with edges (a,b), (b,a), (b,c)."""
    nodes = tmp_path / "tiny.content"
    edges = tmp_path / "tiny.cites"
    nodes.write_text(
        "a\t1\t0\tml\n"
        "b\t0\t1\tdb\n"
        "c\t1\t1\tml\n"
    )
    edges.write_text("a\tb\nb\ta\nb\tc\n")
    return nodes, edges
