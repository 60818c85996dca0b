# src/diffcore/graph.py
"""
Computation graph for reverse-mode differentiation.

A Graph records Nodes in creation order, which is a topological order:
every node's inputs were created before it. backward() sweeps that order
in reverse and accumulates vector-Jacobian products into each input's grad.

Values are dense float64 numpy arrays of rank <= 4 (row-major).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ContractError, DimensionError

MAX_RANK = 4

# vjp: upstream gradient -> one gradient (or None) per input
VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def as_array(value) -> np.ndarray:
    """Coerce to a float64 array and enforce the rank limit."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim > MAX_RANK:
        raise DimensionError("as_array", arr.shape, detail=f"rank {arr.ndim} exceeds {MAX_RANK}")
    return arr


@dataclass(eq=False)
class Node:
    id: int
    op: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    grad: np.ndarray
    graph: "Graph" = field(repr=False)
    vjp: Optional[VJP] = field(default=None, repr=False)
    name: Optional[str] = None
    requires_grad: bool = True

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def ndim(self) -> int:
        return self.value.ndim

    # Operator sugar; the ops module owns the actual definitions.
    def __add__(self, other):
        from src.diffcore import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from src.diffcore import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from src.diffcore import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.diffcore import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from src.diffcore import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from src.diffcore import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from src.diffcore import ops
        return ops.div(self, other)

    def __neg__(self):
        from src.diffcore import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from src.diffcore import ops
        return ops.matmul_batched(self, other)


class Graph:
    """Ordered collection of nodes; confined to one worker at a time."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, op: str, inputs: Sequence[Node], value: np.ndarray,
                vjp: Optional[VJP], name: Optional[str], requires_grad: bool) -> Node:
        value = as_array(value)
        node = Node(
            id=len(self.nodes),
            op=op,
            inputs=tuple(n.id for n in inputs),
            value=value,
            grad=np.zeros_like(value),
            graph=self,
            vjp=vjp if requires_grad else None,
            name=name,
            requires_grad=requires_grad,
        )
        self.nodes.append(node)
        return node

    def leaf(self, value, name: Optional[str] = None, requires_grad: bool = True) -> Node:
        """A differentiable input (parameter or probe point)."""
        return self._append("leaf", (), np.array(as_array(value), copy=True), None, name, requires_grad)

    def constant(self, value) -> Node:
        return self._append("const", (), as_array(value), None, None, False)

    def record(self, op: str, inputs: Sequence[Node], value: np.ndarray, vjp: VJP) -> Node:
        """Append an operation result; gradient flows only if some input needs it."""
        for n in inputs:
            if n.graph is not self:
                raise ContractError(f"{op}: operand node {n.id} belongs to a different graph")
        needs = any(n.requires_grad for n in inputs)
        return self._append(op, inputs, value, vjp, None, needs)

    def lift(self, value) -> Node:
        """Wrap plain numbers/arrays as constants; pass nodes through."""
        if isinstance(value, Node):
            if value.graph is not self:
                raise ContractError(f"node {value.id} belongs to a different graph")
            return value
        return self.constant(value)

    def named_leaves(self) -> Dict[str, Node]:
        return {n.name: n for n in self.nodes if n.op == "leaf" and n.name is not None}

    def zero_grad(self) -> None:
        for n in self.nodes:
            n.grad = np.zeros_like(n.value)


def backward(graph: Graph, loss: Node) -> Dict[str, np.ndarray]:
    """
    Reverse sweep from a scalar loss.

    Returns the gradient of every named differentiable leaf. Unnamed leaves
    still receive their gradient in ``node.grad``. Fan-out accumulates
    additively because each consumer adds its contribution to the shared input.
    """
    if loss.graph is not graph:
        raise ContractError("loss node does not belong to the given graph")
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    graph.zero_grad()
    loss.grad = np.ones_like(loss.value)

    nodes = graph.nodes
    for node in reversed(nodes[: loss.id + 1]):
        if node.vjp is None or not node.requires_grad:
            continue
        if not node.grad.any():
            continue
        contributions = node.vjp(node.grad)
        for input_id, g in zip(node.inputs, contributions):
            if g is None:
                continue
            target = nodes[input_id]
            if not target.requires_grad:
                continue
            if g.shape != target.value.shape:
                raise DimensionError(f"backward[{node.op}]", g.shape, target.value.shape,
                                     detail="gradient shape does not match input")
            target.grad = target.grad + g

    return {
        n.name: n.grad
        for n in nodes
        if n.op == "leaf" and n.name is not None and n.requires_grad
    }
