"""DOT export of per-iteration latent graphs."""
from pathlib import Path
from typing import Optional, Sequence
import logging

from graphviz import Digraph

from .graph import LatentGraph

logger = logging.getLogger(__name__)

MAX_PEN_WIDTH = 6.0


def _pen_width(score: float) -> str:
    # dot needs a positive width; edge scores may be negative
    return f'{min(1.0 + abs(score), MAX_PEN_WIDTH):.3g}'


def build_digraph(graphs: Sequence[LatentGraph], labels: Optional[Sequence[str]] = None, name: str = 'latent_graph') -> Digraph:
    """One `subgraph cluster_t` per iteration; nodes are token index and text."""
    graph = Digraph(name=name)
    graph.attr(rankdir='LR')
    for t, latent in enumerate(graphs):
        with graph.subgraph(name=f'cluster_{t}') as cluster:
            cluster.attr(label=f'iteration {t + 1}')
            for i in range(latent.n):
                text = labels[i] if labels is not None and i < len(labels) else ''
                cluster.node(f't{t}_{i}', f'{i}: {text}' if text else str(i))
            for i, j in latent.selected_edges:
                score = latent.edge_weight(i, j)
                cluster.edge(f't{t}_{i}', f't{t}_{j}', score=f'{score:.6g}', penwidth=_pen_width(score))
    return graph


def export_graph(trace, path, labels: Optional[Sequence[str]] = None) -> Path:
    """
    Write the selected edges of every iteration in `trace` as one DOT digraph.

    Args:
        trace: A StepTrace (its `graphs`) or a sequence of LatentGraph
        path: Output .dot file
        labels: Token texts used in node labels

    Returns:
        The written path
    """
    graphs = list(getattr(trace, 'graphs', trace))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    source = build_digraph(graphs, labels).source
    try:
        path.write_text(source, encoding='utf-8')
    except OSError as e:
        logger.error(f"Could not write graph to {path}: {e}")
        raise
    logger.info(f"Wrote {len(graphs)} graph iterations to {path}")
    return path
