"""Prediction heads over per-behavior pair representations.

The main head disentangles every other behavior's expert vector into a
part collinear with the current behavior's expert (shared, kept for the
gated aggregation) and an orthogonal remainder (unique, trained by the
auxiliary ranking loss). The projection scalar is treated as a constant
during backward, so the cascade loss of one behavior sends no gradient
into another behavior's expert.

Baseline heads (shared-bottom, bilinear, MMOE, PLE) exist for ablations
at light-weight fidelity: one transform per expert, sum towers.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, Tape
from .propagation import xavier_uniform

HEAD_VARIANTS = ("pme", "sb", "bilinear", "mmoe", "ple")


class CoefTap:
    """Capture or replay projection coefficients across a forward pass.

    Used to gradient-check the stop-gradient semantics: a finite
    difference of the loss must perturb everything *except* the stopped
    scalars, so the probe captures them once and replays them.
    """

    def __init__(self, mode: str, values: list[np.ndarray] | None = None):
        assert mode in ("capture", "replay")
        self.mode = mode
        self.values = values if values is not None else []
        self.cursor = 0

    def record(self, value: np.ndarray):
        self.values.append(value.copy())

    def next(self) -> np.ndarray:
        value = self.values[self.cursor]
        self.cursor += 1
        return value


def _projection_coef(a: Node, b: Node, stop_scalar: bool, tap: CoefTap | None) -> Node:
    if tap is not None and tap.mode == "replay":
        return a.tape.constant(tap.next())
    coef = ad.proj_coef(a, b)
    if tap is not None:
        tap.record(coef.value)
    return ad.stop_gradient(coef) if stop_scalar else coef


def make_experts(z_user: Node, z_item: Node) -> Node:
    """Behavior-specific expert: elementwise product of the pair rows."""
    return z_user * z_item


def disentangle(
    q_other: Node,
    q_guide: Node,
    gamma: float = 1.0,
    stop_scalar: bool = True,
    tap: CoefTap | None = None,
) -> tuple[Node, Node]:
    """Split q_other into a guide-collinear part and its remainder.

    shared = gamma * coef * q_guide, unique = q_other - coef * q_guide
    with coef the (optionally stopped) projection scalar. Pass gamma=1
    for the self pair. Rows with a degenerate guide (|q_guide| below
    the norm floor) yield shared = 0, unique = q_other.
    """
    coef = _projection_coef(q_other, q_guide, stop_scalar, tap)
    proj = coef * q_guide
    shared = proj if gamma == 1.0 else gamma * proj
    unique = q_other - proj
    return shared, unique


def predict_parallel(p_user: Node, p_item: Node) -> Node:
    """Parallel-stream score: inner product per row."""
    return ad.row_sum(p_user * p_item)


def unique_pair_scores(
    zu_source: Node,
    zu_guide: Node,
    zv_source: Node,
    zv_guide: Node,
    stop_scalar: bool = True,
    tap: CoefTap | None = None,
) -> Node:
    """Score of the "only k'" task: decompose each side separately.

    The unique vector is computed from the user-side representations
    (source vs guide) and independently from the item side; the score is
    their inner product.
    """
    _, u_uni = disentangle(zu_source, zu_guide, 1.0, stop_scalar, tap)
    _, v_uni = disentangle(zv_source, zv_guide, 1.0, stop_scalar, tap)
    return ad.row_sum(u_uni * v_uni)


# ---------------------------------------------------------------------------
# heads


class PMEHead:
    """Projection-disentangling multi-expert head.

    Per behavior k: experts q^k' = z_u^k' * z_v^k' from separated
    inputs, a gate softmax(W_g^k (z_u^k || z_v^k) + b_g^k) over the K
    shared parts, and a tower reducing the aggregate to a score (sum of
    components by default, making K=1 collapse to an inner product).
    """

    variant = "pme"
    uses_parallel_outputs = False
    gated = True

    def __init__(
        self,
        rng: np.random.Generator,
        num_behaviors: int,
        dim: int,
        gamma: float = 0.1,
        stop_scalar: bool = True,
        tower: str = "sum",
    ):
        self.num_behaviors = num_behaviors
        self.dim = dim
        self.gamma = gamma
        self.stop_scalar = stop_scalar
        self.tower = tower
        self.gate_w = [
            Parameter(f"head.gate_w.{k}", xavier_uniform(rng, 2 * dim, num_behaviors))
            for k in range(num_behaviors)
        ]
        self.gate_b = [
            Parameter(f"head.gate_b.{k}", np.zeros((1, num_behaviors)))
            for k in range(num_behaviors)
        ]
        if tower == "linear":
            self.tower_w = [
                Parameter(f"head.tower_w.{k}", xavier_uniform(rng, dim, 1))
                for k in range(num_behaviors)
            ]
            self.tower_b = [
                Parameter(f"head.tower_b.{k}", np.zeros((1, 1)))
                for k in range(num_behaviors)
            ]
        elif tower != "sum":
            raise ValueError(f"unknown tower {tower!r}")

    def parameters(self) -> list[Parameter]:
        params = list(self.gate_w) + list(self.gate_b)
        if self.tower == "linear":
            params += list(self.tower_w) + list(self.tower_b)
        return params

    def gate(self, tape: Tape, k: int, zu_k: Node, zv_k: Node) -> Node:
        gate_in = ad.concat_cols(zu_k, zv_k)
        logits = ad.matmul(gate_in, tape.leaf(self.gate_w[k])) + tape.leaf(self.gate_b[k])
        return ad.softmax_rows(logits)

    def _tower(self, tape: Tape, k: int, mix: Node) -> Node:
        if self.tower == "sum":
            return ad.row_sum(mix)
        return ad.matmul(mix, tape.leaf(self.tower_w[k])) + tape.leaf(self.tower_b[k])

    def score_behavior(
        self,
        tape: Tape,
        k: int,
        q_list: list[Node],
        zu_k: Node,
        zv_k: Node,
        tap: CoefTap | None = None,
    ) -> Node:
        """Score behavior k from explicit expert nodes (harness entry)."""
        gate = self.gate(tape, k, zu_k, zv_k)
        mix = None
        for kp in range(self.num_behaviors):
            gamma = 1.0 if kp == k else self.gamma
            shared, _ = disentangle(q_list[kp], q_list[k], gamma, self.stop_scalar, tap)
            term = ad.slice_col(gate, kp) * shared
            mix = term if mix is None else mix + term
        return self._tower(tape, k, mix)

    def cascade_scores(
        self,
        tape: Tape,
        zu_list: list[Node],
        zv_list: list[Node],
        tap: CoefTap | None = None,
        behaviors=None,
    ) -> dict[int, Node]:
        ks = range(self.num_behaviors) if behaviors is None else behaviors
        q_list = [make_experts(zu, zv) for zu, zv in zip(zu_list, zv_list)]
        return {
            k: self.score_behavior(tape, k, q_list, zu_list[k], zv_list[k], tap)
            for k in ks
        }

    # numpy inference path (no tape); must mirror the ops above
    def gates_np(self, k: int, zu_k: np.ndarray, zv_k: np.ndarray) -> np.ndarray:
        gate_in = np.concatenate([zu_k, zv_k], axis=1)
        return ad.softmax_rows_np(gate_in @ self.gate_w[k].value + self.gate_b[k].value)

    def scores_np(
        self, zu_list: list[np.ndarray], zv_list: list[np.ndarray], behaviors=None
    ) -> dict[int, np.ndarray]:
        ks = range(self.num_behaviors) if behaviors is None else behaviors
        q_list = [zu * zv for zu, zv in zip(zu_list, zv_list)]
        out = {}
        for k in ks:
            gate = self.gates_np(k, zu_list[k], zv_list[k])
            mix = np.zeros_like(q_list[k])
            for kp in range(self.num_behaviors):
                coef = ad.proj_coef_np(q_list[kp], q_list[k])
                shared = coef * q_list[k]
                if kp != k:
                    shared = self.gamma * shared
                mix += gate[:, kp : kp + 1] * shared
            if self.tower == "sum":
                out[k] = mix.sum(axis=1)
            else:
                out[k] = (mix @ self.tower_w[k].value + self.tower_b[k].value).ravel()
        return out


class _CoupledMixin:
    """Learnable weighted sum combining the K representations (Eq. 1 form)."""

    def _init_coupling(self, num_behaviors: int):
        self.couple = Parameter(
            "head.couple", np.full((1, num_behaviors), 1.0 / num_behaviors)
        )

    def coupled(self, tape: Tape, z_list: list[Node]) -> Node:
        couple = tape.leaf(self.couple)
        mix = None
        for k, z in enumerate(z_list):
            term = ad.slice_col(couple, k) * z
            mix = term if mix is None else mix + term
        return mix

    def coupled_np(self, z_list: list[np.ndarray]) -> np.ndarray:
        w = self.couple.value.ravel()
        return sum(w[k] * z for k, z in enumerate(z_list))


class SharedBottomHead(_CoupledMixin):
    """One shared transform of the coupled pair vector, per-behavior towers."""

    variant = "sb"
    uses_parallel_outputs = False
    gated = False

    def __init__(self, rng: np.random.Generator, num_behaviors: int, dim: int):
        self.num_behaviors = num_behaviors
        self._init_coupling(num_behaviors)
        self.bottom = Parameter("head.bottom", xavier_uniform(rng, dim, dim))
        self.tower_w = [
            Parameter(f"head.tower_w.{k}", xavier_uniform(rng, dim, 1))
            for k in range(num_behaviors)
        ]
        self.tower_b = [
            Parameter(f"head.tower_b.{k}", np.zeros((1, 1))) for k in range(num_behaviors)
        ]

    def parameters(self):
        return [self.couple, self.bottom] + self.tower_w + self.tower_b

    def cascade_scores(self, tape, zu_list, zv_list, tap=None, behaviors=None):
        ks = range(self.num_behaviors) if behaviors is None else behaviors
        pair = make_experts(self.coupled(tape, zu_list), self.coupled(tape, zv_list))
        hidden = ad.matmul(pair, tape.leaf(self.bottom))
        return {
            k: ad.matmul(hidden, tape.leaf(self.tower_w[k])) + tape.leaf(self.tower_b[k])
            for k in ks
        }

    def scores_np(self, zu_list, zv_list, behaviors=None):
        ks = range(self.num_behaviors) if behaviors is None else behaviors
        pair = self.coupled_np(zu_list) * self.coupled_np(zv_list)
        hidden = pair @ self.bottom.value
        return {
            k: (hidden @ self.tower_w[k].value + self.tower_b[k].value).ravel() for k in ks
        }


class BilinearHead:
    """Separated inputs with one square transform per behavior."""

    variant = "bilinear"
    uses_parallel_outputs = False
    gated = False

    def __init__(self, rng: np.random.Generator, num_behaviors: int, dim: int):
        del rng  # identity init: the untrained head scores by inner product
        self.num_behaviors = num_behaviors
        self.transforms = [
            Parameter(f"head.bilinear.{k}", np.eye(dim)) for k in range(num_behaviors)
        ]

    def parameters(self):
        return list(self.transforms)

    def cascade_scores(self, tape, zu_list, zv_list, tap=None, behaviors=None):
        ks = range(self.num_behaviors) if behaviors is None else behaviors
        return {
            k: ad.row_sum(ad.matmul(zu_list[k], tape.leaf(self.transforms[k])) * zv_list[k])
            for k in ks
        }

    def scores_np(self, zu_list, zv_list, behaviors=None):
        ks = range(self.num_behaviors) if behaviors is None else behaviors
        return {
            k: ((zu_list[k] @ self.transforms[k].value) * zv_list[k]).sum(axis=1)
            for k in ks
        }


class MMOEHead(_CoupledMixin):
    """K experts over the coupled pair vector, per-task softmax gates."""

    variant = "mmoe"
    uses_parallel_outputs = False
    gated = True

    def __init__(self, rng: np.random.Generator, num_behaviors: int, dim: int):
        self.num_behaviors = num_behaviors
        self._init_coupling(num_behaviors)
        self.experts = [
            Parameter(f"head.expert.{i}", xavier_uniform(rng, dim, dim))
            for i in range(num_behaviors)
        ]
        self.gate_w = [
            Parameter(f"head.gate_w.{k}", xavier_uniform(rng, 2 * dim, num_behaviors))
            for k in range(num_behaviors)
        ]
        self.gate_b = [
            Parameter(f"head.gate_b.{k}", np.zeros((1, num_behaviors)))
            for k in range(num_behaviors)
        ]

    def parameters(self):
        return [self.couple] + self.experts + self.gate_w + self.gate_b

    def cascade_scores(self, tape, zu_list, zv_list, tap=None, behaviors=None):
        ks = range(self.num_behaviors) if behaviors is None else behaviors
        eu = self.coupled(tape, zu_list)
        ev = self.coupled(tape, zv_list)
        pair = make_experts(eu, ev)
        expert_outs = [ad.matmul(pair, tape.leaf(e)) for e in self.experts]
        gate_in = ad.concat_cols(eu, ev)
        scores = {}
        for k in ks:
            logits = ad.matmul(gate_in, tape.leaf(self.gate_w[k])) + tape.leaf(
                self.gate_b[k]
            )
            gate = ad.softmax_rows(logits)
            mix = None
            for i, out in enumerate(expert_outs):
                term = ad.slice_col(gate, i) * out
                mix = term if mix is None else mix + term
            scores[k] = ad.row_sum(mix)
        return scores

    def gates_np(self, k, zu_list, zv_list):
        eu = self.coupled_np(zu_list)
        ev = self.coupled_np(zv_list)
        gate_in = np.concatenate([eu, ev], axis=1)
        return ad.softmax_rows_np(gate_in @ self.gate_w[k].value + self.gate_b[k].value)

    def scores_np(self, zu_list, zv_list, behaviors=None):
        ks = range(self.num_behaviors) if behaviors is None else behaviors
        eu = self.coupled_np(zu_list)
        ev = self.coupled_np(zv_list)
        pair = eu * ev
        expert_outs = [pair @ e.value for e in self.experts]
        gate_in = np.concatenate([eu, ev], axis=1)
        out = {}
        for k in ks:
            gate = ad.softmax_rows_np(
                gate_in @ self.gate_w[k].value + self.gate_b[k].value
            )
            mix = np.zeros_like(pair)
            for i, eo in enumerate(expert_outs):
                mix += gate[:, i : i + 1] * eo
            out[k] = mix.sum(axis=1)
        return out


class PLEHead(_CoupledMixin):
    """One extraction layer: per-task experts plus one shared expert."""

    variant = "ple"
    uses_parallel_outputs = False
    gated = True

    def __init__(self, rng: np.random.Generator, num_behaviors: int, dim: int):
        self.num_behaviors = num_behaviors
        self._init_coupling(num_behaviors)
        self.task_experts = [
            Parameter(f"head.task_expert.{k}", xavier_uniform(rng, dim, dim))
            for k in range(num_behaviors)
        ]
        self.shared_expert = Parameter("head.shared_expert", xavier_uniform(rng, dim, dim))
        self.gate_w = [
            Parameter(f"head.gate_w.{k}", xavier_uniform(rng, 2 * dim, 2))
            for k in range(num_behaviors)
        ]
        self.gate_b = [
            Parameter(f"head.gate_b.{k}", np.zeros((1, 2))) for k in range(num_behaviors)
        ]

    def parameters(self):
        return (
            [self.couple, self.shared_expert]
            + self.task_experts
            + self.gate_w
            + self.gate_b
        )

    def cascade_scores(self, tape, zu_list, zv_list, tap=None, behaviors=None):
        ks = range(self.num_behaviors) if behaviors is None else behaviors
        eu = self.coupled(tape, zu_list)
        ev = self.coupled(tape, zv_list)
        pair = make_experts(eu, ev)
        shared_out = ad.matmul(pair, tape.leaf(self.shared_expert))
        gate_in = ad.concat_cols(eu, ev)
        scores = {}
        for k in ks:
            task_out = ad.matmul(pair, tape.leaf(self.task_experts[k]))
            logits = ad.matmul(gate_in, tape.leaf(self.gate_w[k])) + tape.leaf(
                self.gate_b[k]
            )
            gate = ad.softmax_rows(logits)
            mix = ad.slice_col(gate, 0) * task_out + ad.slice_col(gate, 1) * shared_out
            scores[k] = ad.row_sum(mix)
        return scores

    def gates_np(self, k, zu_list, zv_list):
        eu = self.coupled_np(zu_list)
        ev = self.coupled_np(zv_list)
        gate_in = np.concatenate([eu, ev], axis=1)
        return ad.softmax_rows_np(gate_in @ self.gate_w[k].value + self.gate_b[k].value)

    def scores_np(self, zu_list, zv_list, behaviors=None):
        ks = range(self.num_behaviors) if behaviors is None else behaviors
        eu = self.coupled_np(zu_list)
        ev = self.coupled_np(zv_list)
        pair = eu * ev
        shared_out = pair @ self.shared_expert.value
        gate_in = np.concatenate([eu, ev], axis=1)
        out = {}
        for k in ks:
            task_out = pair @ self.task_experts[k].value
            gate = ad.softmax_rows_np(
                gate_in @ self.gate_w[k].value + self.gate_b[k].value
            )
            out[k] = (gate[:, 0:1] * task_out + gate[:, 1:2] * shared_out).sum(axis=1)
        return out


def build_head(
    variant: str,
    rng: np.random.Generator,
    num_behaviors: int,
    dim: int,
    gamma: float = 0.1,
    tower: str = "sum",
    stop_scalar: bool = True,
):
    if variant == "pme":
        return PMEHead(rng, num_behaviors, dim, gamma, stop_scalar, tower)
    if variant == "sb":
        return SharedBottomHead(rng, num_behaviors, dim)
    if variant == "bilinear":
        return BilinearHead(rng, num_behaviors, dim)
    if variant == "mmoe":
        return MMOEHead(rng, num_behaviors, dim)
    if variant == "ple":
        return PLEHead(rng, num_behaviors, dim)
    raise ValueError(f"unknown head variant {variant!r}")
