"""Two-stream graph propagation with per-layer knowledge fusion.

Each behavior runs a LightGCN-style update on its own normalized
adjacency. The cascade stream hands its final layer (plus a residual of
its first) to the next behavior; the parallel stream restarts every
behavior from the shared initial embeddings and its messages are fused
into the cascade update by one of four schemes:

    projection  cascade + residual + component of the parallel message
                collinear with the cascade message
    vanilla     cascade + residual + softmax-weighted mix of four chunks
                [cas, par, cas - par, cas * par]
    summation   cascade + residual + parallel message
    linear      cascade + residual + learned square transform of the
                parallel message

Per behavior the outputs are the layer sums of both streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, SparseMatrix, Tape

FUSION_SCHEMES = ("projection", "vanilla", "summation", "linear", "none")


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_embeddings(rng: np.random.Generator, num_users, num_items, dim):
    e_u = Parameter("emb.user", xavier_uniform(rng, num_users, dim))
    e_v = Parameter("emb.item", xavier_uniform(rng, num_items, dim))
    return e_u, e_v


@dataclass
class FusionParams:
    """Learnable parameters of the active fusion scheme, per (behavior, layer)."""

    scheme: str
    weights: dict[tuple[int, int], list[Parameter]]

    def parameters(self) -> list[Parameter]:
        return [p for plist in self.weights.values() for p in plist]


def init_fusion_params(
    rng: np.random.Generator, scheme: str, layer_counts: list[int], dim: int
) -> FusionParams:
    if scheme not in FUSION_SCHEMES:
        raise ValueError(f"unknown fusion scheme {scheme!r}")
    weights: dict[tuple[int, int], list[Parameter]] = {}
    for k, layers in enumerate(layer_counts):
        for layer in range(layers):
            if scheme == "vanilla":
                w = Parameter(f"fusion.w.{k}.{layer}", xavier_uniform(rng, dim, 4))
                b = Parameter(f"fusion.b.{k}.{layer}", np.zeros((1, 4)))
                weights[(k, layer)] = [w, b]
            elif scheme == "linear":
                t = Parameter(f"fusion.t.{k}.{layer}", xavier_uniform(rng, dim, dim))
                weights[(k, layer)] = [t]
    return FusionParams(scheme, weights)


def propagate_layer(adj: SparseMatrix, x: Node) -> tuple[Node, Node]:
    """One LightGCN step: message = A_hat x, next = message + x."""
    message = ad.spmm(adj, x)
    return message, message + x


def cascade_handoff(z_last: Node, z_first: Node) -> Node:
    """Input of the next behavior: last cascade layer plus the first."""
    return z_last + z_first


def fuse_projection(e_cas: Node, e_par: Node, z_prev: Node) -> Node:
    p_col = ad.project(e_par, e_cas)
    return e_cas + z_prev + p_col


def fuse_vanilla(e_cas: Node, e_par: Node, z_prev: Node, w: Node, b: Node) -> Node:
    gate = ad.softmax_rows(ad.matmul(e_cas, w) + b)  # (n, 4)
    chunks = (e_cas, e_par, e_cas - e_par, e_cas * e_par)
    mix = None
    for j, chunk in enumerate(chunks):
        term = ad.slice_col(gate, j) * chunk
        mix = term if mix is None else mix + term
    return e_cas + z_prev + mix


def fuse_summation(e_cas: Node, e_par: Node, z_prev: Node) -> Node:
    return e_cas + z_prev + e_par


def fuse_linear(e_cas: Node, e_par: Node, z_prev: Node, t: Node) -> Node:
    return e_cas + z_prev + ad.matmul(e_par, t)


@dataclass
class BehaviorOutputs:
    """Layer sums per behavior: cascade z and parallel p, (|U|+|V|) x d."""

    cascade: list[Node]
    parallel: list[Node]


def forward_pkf(
    tape: Tape,
    emb_user: Parameter,
    emb_item: Parameter,
    adjacencies: list[SparseMatrix],
    layer_counts: list[int],
    fusion: FusionParams,
    use_parallel: bool = True,
) -> BehaviorOutputs:
    """Run all behaviors in cascade order and return per-behavior outputs.

    With use_parallel=False (or scheme "none") only the plain cascade
    update runs and the parallel output list is empty.
    """
    num_behaviors = len(adjacencies)
    if num_behaviors < 1:
        raise ValueError("need at least one behavior")
    if len(layer_counts) != num_behaviors or any(l < 1 for l in layer_counts):
        raise ValueError(f"bad layer counts {layer_counts} for {num_behaviors} behaviors")

    x0 = ad.vstack_rows(tape.leaf(emb_user), tape.leaf(emb_item))
    fuse_knowledge = use_parallel and fusion.scheme != "none"

    z_stars: list[Node] = []
    p_stars: list[Node] = []
    z = x0
    for k in range(num_behaviors):
        adj = adjacencies[k]

        par_messages: list[Node] = []
        if use_parallel:
            p = x0  # every behavior's parallel stream restarts from x0
            p_star = p
            for _ in range(layer_counts[k]):
                message, p = propagate_layer(adj, p)
                par_messages.append(message)
                p_star = p_star + p
            p_stars.append(p_star)

        z_first = z
        z_star = z
        for layer in range(layer_counts[k]):
            e_cas = ad.spmm(adj, z)
            if not fuse_knowledge:
                z = e_cas + z
            else:
                e_par = par_messages[layer]
                if fusion.scheme == "projection":
                    z = fuse_projection(e_cas, e_par, z)
                elif fusion.scheme == "summation":
                    z = fuse_summation(e_cas, e_par, z)
                elif fusion.scheme == "linear":
                    (t,) = fusion.weights[(k, layer)]
                    z = fuse_linear(e_cas, e_par, z, tape.leaf(t))
                else:
                    w, b = fusion.weights[(k, layer)]
                    z = fuse_vanilla(e_cas, e_par, z, tape.leaf(w), tape.leaf(b))
            z_star = z_star + z
        z_stars.append(z_star)
        z = cascade_handoff(z, z_first)

    return BehaviorOutputs(z_stars, p_stars)
