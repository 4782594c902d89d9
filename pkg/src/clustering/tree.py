"""
CFL 参数树

根节点对应常规 FL 模型；每次分裂产生两个子节点，子节点从父模型的副本开始训练。
叶子始终构成全体客户端的一个划分；stopped 节点不会再分裂。
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import InvalidArgumentError
from src.models import ClusterStatus, TreeNodeSnapshot


logger = logging.getLogger(__name__)


@dataclass
class ClusterNode:
    node_id: int
    members: Tuple[int, ...]
    model: np.ndarray
    parent: Optional[int] = None
    children: List[int] = field(default_factory=list)
    status: ClusterStatus = ClusterStatus.active
    created_round: int = 0
    stopped_round: Optional[int] = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def stopped(self) -> bool:
        return self.status == ClusterStatus.stopped

    def snapshot(self) -> TreeNodeSnapshot:
        return TreeNodeSnapshot(
            node_id=self.node_id,
            parent=self.parent,
            children=list(self.children),
            members=list(self.members),
            status=self.status,
            created_round=self.created_round,
            stopped_round=self.stopped_round,
        )


class ClusterTree:
    def __init__(self, clients: Iterable[int], model: np.ndarray):
        members = tuple(sorted(clients))
        if not members:
            raise InvalidArgumentError("the cluster tree needs at least one client")
        self.clients = members
        self.nodes: Dict[int, ClusterNode] = {
            0: ClusterNode(node_id=0, members=members, model=np.array(model, dtype=np.float64))
        }
        self._next_id = 1

    @property
    def root(self) -> ClusterNode:
        return self.nodes[0]

    def node(self, node_id: int) -> ClusterNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise InvalidArgumentError(f"unknown cluster {node_id}") from None

    def leaves(self) -> List[ClusterNode]:
        return [n for _, n in sorted(self.nodes.items()) if n.is_leaf]

    def active_leaves(self) -> List[ClusterNode]:
        return [n for n in self.leaves() if not n.stopped]

    def all_stopped(self) -> bool:
        return all(n.stopped for n in self.leaves())

    def leaf_of(self) -> Dict[int, int]:
        return {cid: leaf.node_id for leaf in self.leaves() for cid in leaf.members}

    def partition(self) -> List[List[int]]:
        return sorted([list(leaf.members) for leaf in self.leaves()])

    def split(self, node_id: int, c1: Sequence[int], c2: Sequence[int],
              round_index: int) -> Tuple[ClusterNode, ClusterNode]:
        parent = self.node(node_id)
        if not parent.is_leaf:
            raise InvalidArgumentError(f"cluster {node_id} has already been split")
        if parent.stopped:
            raise InvalidArgumentError(f"cluster {node_id} is stopped and cannot split")
        left, right = tuple(sorted(c1)), tuple(sorted(c2))
        if not left or not right:
            raise InvalidArgumentError("both sides of a split must be non-empty")
        if set(left) & set(right) or tuple(sorted(left + right)) != parent.members:
            raise InvalidArgumentError("split sides must partition the parent's members")

        children = []
        for members in (left, right):
            child = ClusterNode(
                node_id=self._next_id,
                members=members,
                model=parent.model.copy(),
                parent=parent.node_id,
                created_round=round_index,
            )
            self.nodes[child.node_id] = child
            parent.children.append(child.node_id)
            children.append(child)
            self._next_id += 1
        self.check_partition()
        logger.info("🌿 第 %d 轮簇 %d 分裂: %s | %s", round_index, node_id, list(left), list(right))
        return children[0], children[1]

    def stop(self, node_id: int, round_index: int) -> ClusterNode:
        node = self.node(node_id)
        if not node.is_leaf:
            raise InvalidArgumentError(f"only leaves can stop, cluster {node_id} has children")
        if not node.stopped:
            node.status = ClusterStatus.stopped
            node.stopped_round = round_index
            logger.info("🛑 第 %d 轮簇 %d 到达停止点: %s", round_index, node_id, list(node.members))
        return node

    def check_partition(self) -> None:
        seen: List[int] = []
        for leaf in self.leaves():
            seen.extend(leaf.members)
        if len(seen) != len(set(seen)) or tuple(sorted(seen)) != self.clients:
            raise InvalidArgumentError("tree leaves no longer partition the client set")

    def snapshot(self) -> List[TreeNodeSnapshot]:
        return [n.snapshot() for _, n in sorted(self.nodes.items())]

    def final_models(self) -> Dict[str, np.ndarray]:
        """每个叶子一个专用模型；根被分裂过时另附常规 FL 模型"""
        models = {f"cluster-{leaf.node_id}": leaf.model.copy() for leaf in self.leaves()}
        if not self.root.is_leaf:
            models["conventional"] = self.root.model.copy()
        return models
