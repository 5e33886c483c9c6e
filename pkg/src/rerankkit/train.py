"""Slack-rescaled structured SVM training via cutting planes.

One slack variable per (scene, ground-truth object) pair; constraints range
over that scene's candidate proposals. Each round finds the most violated
constraint per example, adds it to the working set, and re-solves the
restricted QP

    min ||theta||^2 + C * sum_i xi_i
    s.t. theta . (f_gt - f_y) >= 1 - xi_i / loss(y),  xi_i >= 0

until no candidate violates its constraint by more than epsilon_cut beyond
the paid slack. Candidates with loss at or below loss_floor impose vacuous
constraints and are skipped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import features as feat
from .core import BoundingBox, Scene, iou
from .errors import InvalidArgumentError, SolverFailureError
from .features import NUM_FEATURES, FeatureConfig
from .model import LOSS_MODES, ScoringModel

log = logging.getLogger(__name__)

__all__ = [
    "TrainingExample",
    "TrainConfig",
    "TrainReport",
    "candidate_loss",
    "most_violated",
    "solve_restricted",
    "train",
    "build_examples",
    "BuildStats",
]


@dataclass(frozen=True)
class TrainingExample:
    example_id: str
    gt_features: np.ndarray  # (NUM_FEATURES,)
    candidate_features: np.ndarray  # (n_candidates, NUM_FEATURES)
    losses: np.ndarray  # (n_candidates,) in [0, 1]

    def __post_init__(self):
        gt = np.asarray(self.gt_features, dtype=np.float64)
        cand = np.asarray(self.candidate_features, dtype=np.float64).reshape(-1, NUM_FEATURES)
        losses = np.asarray(self.losses, dtype=np.float64)
        if gt.shape != (NUM_FEATURES,):
            raise InvalidArgumentError(f"gt_features must be ({NUM_FEATURES},), got {gt.shape}")
        if len(cand) != len(losses):
            raise InvalidArgumentError(
                f"{len(cand)} candidates but {len(losses)} losses in example {self.example_id}"
            )
        if losses.size and (losses.min() < 0.0 or losses.max() > 1.0):
            raise InvalidArgumentError(f"losses must lie in [0,1] in example {self.example_id}")
        object.__setattr__(self, "gt_features", gt)
        object.__setattr__(self, "candidate_features", cand)
        object.__setattr__(self, "losses", losses)


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    loss_mode: str = "one_minus_iou"
    epsilon_cut: float = 1e-3
    qp_tol: float = 1e-6
    max_rounds: int = 200
    loss_floor: float = 1e-6

    def __post_init__(self):
        for name in ("C", "epsilon_cut", "qp_tol", "loss_floor"):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.max_rounds < 1:
            raise InvalidArgumentError("max_rounds must be positive")
        if self.loss_mode not in LOSS_MODES:
            raise InvalidArgumentError(f"unknown loss_mode {self.loss_mode!r}")


@dataclass
class TrainReport:
    rounds_used: int
    working_set_size: int
    max_violation: float
    objective: float
    trace: list[tuple[int, int, float, float]]  # (round, ws size, max violation, objective)
    all_vacuous: bool = False
    final_xi: dict[str, float] = field(default_factory=dict)


def candidate_loss(gt: BoundingBox, y: BoundingBox, mode: str) -> float:
    """Per-candidate task loss in [0, 1].

    one_minus_iou is standard slack rescaling; iou_as_printed keeps the
    overlap itself as the slack divisor for fidelity experiments.
    """
    overlap = iou(gt, y)
    if mode == "one_minus_iou":
        return 1.0 - overlap
    if mode == "iou_as_printed":
        return overlap
    raise InvalidArgumentError(f"unknown loss_mode {mode!r}")


def most_violated(
    example: TrainingExample, theta: np.ndarray, loss_floor: float = 1e-6
) -> tuple[int, float] | None:
    """Separation oracle: argmax over candidates of H(y) = loss * (1 - theta.(f_gt - f_y)).

    Candidates with loss <= loss_floor are vacuous and skipped. Returns None
    when no candidate has positive H (or none are eligible).
    """
    losses = example.losses
    eligible = losses > loss_floor
    if not eligible.any():
        return None
    margins = 1.0 - (example.gt_features - example.candidate_features) @ theta
    h = np.where(eligible, losses * margins, -np.inf)
    j = int(np.argmax(h))
    if h[j] <= 0.0:
        return None
    return j, float(h[j])


WorkingSet = Mapping[str, Sequence[tuple[np.ndarray, float]]]


def solve_restricted(
    working_set: WorkingSet, C: float, qp_tol: float = 1e-6
) -> tuple[np.ndarray, dict[str, float], float]:
    """Solve the restricted QP over the accumulated constraints.

    working_set maps example_id -> [(delta_f, loss), ...]. Returns
    (theta, xi per example, objective). Slacks are recomputed exactly from
    theta after the solve, so every working-set constraint holds with zero
    feasibility violation and the objective can only improve.
    """
    example_ids = [eid for eid, cons in working_set.items() if len(cons) > 0]
    if not example_ids:
        return np.zeros(NUM_FEATURES), {eid: 0.0 for eid in working_set}, 0.0

    from cvxopt import matrix, solvers

    n_ex = len(example_ids)
    dim = NUM_FEATURES + n_ex
    # Tiny curvature on the slack block keeps the KKT system nonsingular;
    # its objective contribution is far below qp_tol.
    p_diag = np.full(dim, 2e-9)
    p_diag[:NUM_FEATURES] = 2.0
    q = np.zeros(dim)
    q[NUM_FEATURES:] = C

    rows = []
    rhs = []
    for i, eid in enumerate(example_ids):
        for delta_f, loss in working_set[eid]:
            # loss*(1 - theta.delta_f) <= xi_i  =>  -loss*delta_f.theta - xi_i <= -loss
            row = np.zeros(dim)
            row[:NUM_FEATURES] = -loss * np.asarray(delta_f, dtype=np.float64)
            row[NUM_FEATURES + i] = -1.0
            rows.append(row)
            rhs.append(-loss)
    for i in range(n_ex):
        row = np.zeros(dim)
        row[NUM_FEATURES + i] = -1.0
        rows.append(row)
        rhs.append(0.0)

    tol = min(qp_tol, 1e-9)
    options = {
        "show_progress": False,
        "abstol": tol,
        "reltol": tol,
        "feastol": 1e-10,
        "maxiters": 200,
    }
    sol = solvers.qp(
        matrix(np.diag(p_diag)),
        matrix(q),
        matrix(np.vstack(rows)),
        matrix(np.array(rhs)),
        options=options,
    )
    theta = np.array(sol["x"][:NUM_FEATURES]).ravel()
    if sol["status"] != "optimal":
        raise SolverFailureError(
            f"restricted QP did not converge (status {sol['status']!r})",
            theta=theta,
            residual=float(sol.get("gap") or np.nan),
        )

    xi: dict[str, float] = {eid: 0.0 for eid in working_set}
    objective = float(theta @ theta)
    for eid in example_ids:
        slack = 0.0
        for delta_f, loss in working_set[eid]:
            slack = max(slack, loss * (1.0 - float(theta @ np.asarray(delta_f))))
        xi[eid] = slack
        objective += C * slack
    return theta, xi, objective


def train(
    examples: Sequence[TrainingExample],
    config: TrainConfig,
    class_id: int = 0,
) -> tuple[ScoringModel, TrainReport]:
    """n-slack cutting-plane loop over the given examples.

    Deterministic: fixed iteration order, no randomness. Terminates when a
    round adds no constraint (every violation within epsilon_cut of the paid
    slack) or max_rounds is reached.
    """
    if not examples:
        raise InvalidArgumentError("train requires at least one example")

    all_vacuous = all(np.all(ex.losses <= config.loss_floor) for ex in examples)
    theta = np.zeros(NUM_FEATURES)
    xi = {ex.example_id: 0.0 for ex in examples}
    working: dict[str, list[tuple[np.ndarray, float]]] = {ex.example_id: [] for ex in examples}
    added: dict[str, set[int]] = {ex.example_id: set() for ex in examples}
    trace: list[tuple[int, int, float, float]] = []
    objective = 0.0
    rounds_used = 0

    for round_no in range(1, config.max_rounds + 1):
        new_constraints = 0
        for ex in examples:
            mv = most_violated(ex, theta, config.loss_floor)
            if mv is None:
                continue
            j, h = mv
            if h > xi[ex.example_id] + config.epsilon_cut and j not in added[ex.example_id]:
                delta_f = ex.gt_features - ex.candidate_features[j]
                working[ex.example_id].append((delta_f, float(ex.losses[j])))
                added[ex.example_id].add(j)
                new_constraints += 1
        if new_constraints == 0:
            break
        rounds_used = round_no
        theta, xi, objective = solve_restricted(working, config.C, config.qp_tol)
        ws_size = sum(len(v) for v in working.values())
        trace.append((round_no, ws_size, _max_violation(examples, theta, xi, config), objective))
        log.debug("round %d: ws=%d objective=%.6g", round_no, ws_size, objective)

    report = TrainReport(
        rounds_used=rounds_used,
        working_set_size=sum(len(v) for v in working.values()),
        max_violation=_max_violation(examples, theta, xi, config),
        objective=objective,
        trace=trace,
        all_vacuous=all_vacuous,
        final_xi=dict(xi),
    )
    model = ScoringModel(
        class_id=class_id,
        weights=theta,
        loss_mode=config.loss_mode,
        C=config.C,
        rounds=rounds_used,
    )
    return model, report


def _max_violation(examples, theta, xi, config) -> float:
    worst = 0.0
    for ex in examples:
        mv = most_violated(ex, theta, config.loss_floor)
        if mv is not None:
            worst = max(worst, mv[1] - xi[ex.example_id])
    return worst


@dataclass
class BuildStats:
    examples: int = 0
    scenes_skipped_no_proposals: int = 0


def build_examples(
    scenes: Sequence[Scene],
    class_id: int,
    feature_config: FeatureConfig,
    loss_mode: str = "one_minus_iou",
    difficulty_filter=None,
) -> tuple[list[TrainingExample], BuildStats]:
    """One TrainingExample per (scene, ground-truth object of class_id).

    Candidates are all of the scene's proposals; losses are computed against
    that object's box. An optional difficulty filter (anything with an
    admits(gt) method) excludes ground-truth objects from example creation.
    """
    out: list[TrainingExample] = []
    stats = BuildStats()
    for scene in scenes:
        gts = [
            (k, gt)
            for k, gt in enumerate(scene.ground_truth)
            if gt.class_id == class_id
            and (difficulty_filter is None or difficulty_filter.admits(gt))
        ]
        if not gts:
            continue
        if not scene.proposals:
            stats.scenes_skipped_no_proposals += 1
            log.warning("scene %s has ground truth but no proposals; skipped", scene.id)
            continue
        cand = feat.extract_all(scene, class_id, feature_config)
        tables = feat.SceneTables(scene, [class_id], feature_config)
        for k, gt in gts:
            gt_proposal_like = _as_proposal(gt.box)
            gt_f = feat.extract(scene, gt_proposal_like, class_id, feature_config, tables=tables)
            losses = np.array(
                [candidate_loss(gt.box, p.box, loss_mode) for p in scene.proposals]
            )
            out.append(
                TrainingExample(
                    example_id=f"{scene.id}#{k}",
                    gt_features=gt_f,
                    candidate_features=cand,
                    losses=losses,
                )
            )
            stats.examples += 1
    return out, stats


def _as_proposal(box: BoundingBox):
    # GT boxes carry no generator score or objectness; use the neutral values
    # an unscored, fully-confident proposal would have.
    from .core import Proposal

    return Proposal(box=box, generator_score=1.0, objectness=1.0)
