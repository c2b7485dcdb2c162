import json
import logging
from pathlib import Path
from typing import Dict, Union

from pydantic import ValidationError

from scoretree.core.errors import EmptySampleError, ModelFormatError, ModelVersionError
from scoretree.schemas.tree import MODEL_FORMAT_VERSION, ModelDocument, NodeDocument, SplitRule
from scoretree.services.scoring import ecdf_from_samples
from scoretree.services.tree import InternalNode, LeafNode, Node, PredictiveTree

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def tree_to_document(tree: PredictiveTree) -> ModelDocument:
    nodes = []
    for t, node in sorted(tree.nodes.items()):
        if isinstance(node, InternalNode):
            split = node.split
            nodes.append(NodeDocument(
                id=t, type="internal", feature=split.feature, threshold=split.threshold,
                left_categories=list(split.left_categories) if split.is_categorical else None,
                delta=node.delta, n=node.n, total=node.total,
            ))
        else:
            nodes.append(NodeDocument(id=t, type="leaf", n=node.n, samples=node.ecdf.samples.tolist()))
    return ModelDocument(
        version=MODEL_FORMAT_VERSION,
        config=tree.config,
        feature_names=list(tree.feature_names),
        feature_kinds=list(tree.feature_kinds),
        response_name=tree.response_name,
        root_delta=tree.root_delta,
        root_n=tree.root_n,
        variance_floor=tree.variance_floor,
        nodes=nodes,
    )


def _node_from_document(doc: NodeDocument) -> Node:
    if doc.type == "leaf":
        if not doc.samples:
            raise ModelFormatError(f"leaf {doc.id} has no samples")
        return LeafNode(ecdf=ecdf_from_samples(doc.samples))
    if doc.feature is None or doc.delta is None or doc.n is None or doc.total is None:
        raise ModelFormatError(f"internal node {doc.id} is incomplete")
    try:
        split = SplitRule(
            feature=doc.feature,
            threshold=doc.threshold,
            left_categories=tuple(doc.left_categories) if doc.left_categories is not None else None,
        )
    except ValidationError as e:
        raise ModelFormatError(f"internal node {doc.id} has an invalid split: {e}")
    return InternalNode(split=split, delta=doc.delta, n=doc.n, total=doc.total)


def tree_from_document(doc: ModelDocument) -> PredictiveTree:
    if doc.version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(f"model format version {doc.version} is not supported (expected {MODEL_FORMAT_VERSION})")
    if len(doc.feature_names) != len(doc.feature_kinds):
        raise ModelFormatError("feature names and kinds differ in length")

    nodes: Dict[int, Node] = {}
    for node_doc in doc.nodes:
        if node_doc.id in nodes:
            raise ModelFormatError(f"duplicate node id {node_doc.id}")
        try:
            nodes[node_doc.id] = _node_from_document(node_doc)
        except EmptySampleError as e:
            raise ModelFormatError(f"leaf {node_doc.id}: {e}")

    # every node reachable from the root, every internal node with both children
    reachable = set()
    stack = [0]
    while stack:
        t = stack.pop()
        if t not in nodes:
            raise ModelFormatError(f"node {t} is referenced but missing")
        reachable.add(t)
        node = nodes[t]
        if isinstance(node, InternalNode):
            if node.split.feature >= len(doc.feature_names):
                raise ModelFormatError(f"node {t} splits on unknown feature {node.split.feature}")
            stack.extend((2 * t + 1, 2 * t + 2))
    if reachable != set(nodes):
        raise ModelFormatError(f"unreachable nodes: {sorted(set(nodes) - reachable)}")

    return PredictiveTree(
        nodes=dict(sorted(nodes.items())),
        config=doc.config,
        root_delta=doc.root_delta,
        root_n=doc.root_n,
        variance_floor=doc.variance_floor,
        feature_names=tuple(doc.feature_names),
        feature_kinds=tuple(doc.feature_kinds),
        response_name=doc.response_name,
    )


def save_model(tree: PredictiveTree, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # pydantic writes floats in shortest round-trip form, so thresholds and samples reload bit for bit
    path.write_text(tree_to_document(tree).model_dump_json(), encoding="utf-8")
    logger.debug("Saved model to %s", path)


def load_model(path: PathLike) -> PredictiveTree:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"malformed model JSON in {path}: {e}")
    if not isinstance(raw, dict):
        raise ModelFormatError(f"model document in {path} is not a JSON object")
    if raw.get("version") != MODEL_FORMAT_VERSION:
        raise ModelVersionError(f"model format version {raw.get('version')!r} in {path} is not supported (expected {MODEL_FORMAT_VERSION})")
    try:
        doc = ModelDocument.model_validate(raw)
    except ValidationError as e:
        raise ModelFormatError(f"invalid model document in {path}: {e}")
    return tree_from_document(doc)
