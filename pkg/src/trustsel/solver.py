"""Online sparse-approximation solver with greedy replacement.

The solver keeps a capacity-bounded buffer of unit-norm feature columns and
streams candidates through it. While the buffer has room, candidates are
inserted unconditionally; once full, an incoming column may evict a buffered
one when its projection on the current residual dominates and the buffered
coefficient is non-positive. After every membership change the coefficients
are refit by least squares on the selected columns.

Refits solve the Gram normal equations with an incrementally maintained
Cholesky factor (appends are O(s^2)); a 1e-10 ridge is added to the diagonal
when the system goes rank deficient, and the event is flagged on the trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .valuation import ValueTarget

RIDGE = 1e-10
_ZERO_NORM = 1e-12
_PIVOT_TOL = 1e-12

INSERTED = "inserted"
REPLACED = "replaced"
REJECTED = "rejected"


class ZeroColumnError(ValueError):
    """Raised when a feature column has (numerically) zero norm."""


class DimensionMismatchError(ValueError):
    """Raised when vector dimensions disagree."""


class BufferNotFullError(RuntimeError):
    """Replacement was requested while the buffer still has room."""


class EmptyBufferCapacityError(ValueError):
    """The selection budget must be at least one."""


class EmptyStreamError(ValueError):
    """The column stream yielded nothing."""


class ColumnId(NamedTuple):
    epoch: int
    index: int


@dataclass(frozen=True)
class FeatureColumn:
    """A unit-normalized feature vector tagged with its (epoch, datapoint) origin."""

    id: ColumnId
    values: np.ndarray
    norm_certified: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.norm_certified:
            nrm = np.linalg.norm(self.values)
            if abs(nrm - 1.0) > 1e-9:
                raise ValueError(f"norm-certified column has norm {nrm!r}")


def normalize_column(raw: np.ndarray) -> np.ndarray:
    """Scale to unit Euclidean norm, preserving direction."""
    raw = np.asarray(raw, dtype=float)
    nrm = np.linalg.norm(raw)
    if nrm < _ZERO_NORM:
        raise ZeroColumnError("feature column has zero norm")
    return raw / nrm


def make_column(epoch: int, index: int, raw: np.ndarray) -> FeatureColumn:
    return FeatureColumn(ColumnId(epoch, index), normalize_column(raw), norm_certified=True)


def _certify(column: FeatureColumn) -> FeatureColumn:
    if column.norm_certified:
        return column
    return FeatureColumn(column.id, normalize_column(column.values), norm_certified=True)


def project(column: FeatureColumn, residual: np.ndarray) -> float:
    """Absolute inner product of a column with the residual."""
    residual = np.asarray(residual, dtype=float)
    if column.values.shape != residual.shape:
        raise DimensionMismatchError(
            f"column has dim {column.values.shape[0]}, residual {residual.shape[0]}"
        )
    return float(abs(column.values @ residual))


@dataclass(frozen=True)
class ReplaceDecision:
    outcome: str
    incoming: ColumnId
    evicted: ColumnId | None
    pi: float
    pi_max: float | None
    comparisons: int


@dataclass
class StepRecord:
    step: int
    epoch: int
    index: int
    outcome: str
    evicted: ColumnId | None
    residual_norm: float
    comparisons: int
    pi: float
    pi_max: float | None

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "epoch": self.epoch,
            "index": self.index,
            "outcome": self.outcome,
            "evicted": None if self.evicted is None else list(self.evicted),
            "residual_norm": self.residual_norm,
            "comparisons": self.comparisons,
            "pi": self.pi,
            "pi_max": self.pi_max,
        }


@dataclass
class SolverTrace:
    """Per-step decision log with comparison counters and warnings."""

    records: list[StepRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    rank_deficient_steps: list[int] = field(default_factory=list)

    @property
    def total_comparisons(self) -> int:
        return sum(r.comparisons for r in self.records)

    def counts(self) -> dict[str, int]:
        out = {INSERTED: 0, REPLACED: 0, REJECTED: 0}
        for r in self.records:
            out[r.outcome] += 1
        return out

    def summary(self) -> dict:
        counts = self.counts()
        return {
            "steps": len(self.records),
            "inserted": counts[INSERTED],
            "replaced": counts[REPLACED],
            "rejected": counts[REJECTED],
            "total_comparisons": self.total_comparisons,
            "rank_deficient_refits": len(self.rank_deficient_steps),
            "warnings": len(self.warnings),
            "final_residual_norm": self.records[-1].residual_norm if self.records else None,
        }

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "warnings": list(self.warnings),
            "rank_deficient_steps": list(self.rank_deficient_steps),
        }


class SelectionBuffer:
    """Capacity-bounded set of selected columns with cached least-squares state.

    Entries keep insertion order; the Gram matrix of the selected columns and
    its Cholesky factor are maintained incrementally so refits after an append
    cost O(s^2). Removals invalidate the factor, which is rebuilt lazily.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise EmptyBufferCapacityError("selection budget must be >= 1")
        if dim < 1:
            raise ValueError("column dimension must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self._ids: list[ColumnId] = []
        self._matrix = np.zeros((capacity, dim))
        self._gram = np.zeros((capacity, capacity))
        self._beta = np.zeros(capacity)
        self._xi = np.zeros(dim)
        self._chol = np.zeros((capacity, capacity))
        self._chol_size = 0  # rows of _chol currently valid; 0 forces a rebuild
        self._ridge_active = False
        self._ridge_event = False
        self._fit_target: np.ndarray | None = None

    # -- views ------------------------------------------------------------

    @property
    def size(self) -> int:
        return len(self._ids)

    @property
    def is_full(self) -> bool:
        return self.size >= self.capacity

    @property
    def ids(self) -> tuple[ColumnId, ...]:
        return tuple(self._ids)

    @property
    def columns(self) -> np.ndarray:
        """Selected columns as rows, in insertion order (read-only view)."""
        view = self._matrix[: self.size]
        view.flags.writeable = False
        return view

    @property
    def coefficients(self) -> np.ndarray:
        view = self._beta[: self.size]
        view.flags.writeable = False
        return view

    @property
    def approximation(self) -> np.ndarray:
        view = self._xi
        view.flags.writeable = False
        return view

    @property
    def ridge_active(self) -> bool:
        return self._ridge_active

    def entries(self) -> list[tuple[ColumnId, np.ndarray, float]]:
        return [
            (self._ids[j], self._matrix[j].copy(), float(self._beta[j]))
            for j in range(self.size)
        ]

    def copy(self) -> "SelectionBuffer":
        dup = SelectionBuffer(self.capacity, self.dim)
        dup._ids = list(self._ids)
        dup._matrix = self._matrix.copy()
        dup._gram = self._gram.copy()
        dup._beta = self._beta.copy()
        dup._xi = self._xi.copy()
        dup._chol = self._chol.copy()
        dup._chol_size = self._chol_size
        dup._ridge_active = self._ridge_active
        dup._ridge_event = self._ridge_event
        dup._fit_target = None if self._fit_target is None else self._fit_target.copy()
        return dup

    @classmethod
    def from_entries(
        cls,
        capacity: int,
        columns: Sequence[FeatureColumn],
        coefficients: Sequence[float],
    ) -> "SelectionBuffer":
        """Build a buffer in a prescribed state; the approximation is recomputed."""
        if len(columns) != len(coefficients):
            raise ValueError("columns and coefficients disagree on length")
        if not columns:
            raise ValueError("need at least one entry")
        buf = cls(capacity, len(columns[0].values))
        for col in columns:
            buf._append(_certify(col))
        buf._beta[: buf.size] = np.asarray(coefficients, dtype=float)
        buf._xi = buf._beta[: buf.size] @ buf._matrix[: buf.size]
        return buf

    # -- structural updates -------------------------------------------------

    def _append(self, column: FeatureColumn) -> None:
        if self.is_full:
            raise RuntimeError("buffer is full")
        if column.id in self._ids:
            raise ValueError(f"duplicate column id {column.id}")
        if len(column.values) != self.dim:
            raise DimensionMismatchError(
                f"column has dim {len(column.values)}, buffer expects {self.dim}"
            )
        s = self.size
        v = column.values
        cross = self._matrix[:s] @ v
        self._gram[:s, s] = cross
        self._gram[s, :s] = cross
        self._gram[s, s] = v @ v
        self._matrix[s] = v
        self._ids.append(column.id)
        self._beta[s] = 0.0
        if self._chol_size == s:
            self._extend_chol(cross, float(self._gram[s, s]))

    def _remove(self, position: int) -> None:
        s = self.size
        if self._chol_size == s:
            self._downdate_chol(position)
        self._matrix[position : s - 1] = self._matrix[position + 1 : s]
        self._beta[position : s - 1] = self._beta[position + 1 : s]
        self._gram[position : s - 1, :s] = self._gram[position + 1 : s, :s]
        self._gram[:s, position : s - 1] = self._gram[:s, position + 1 : s]
        del self._ids[position]

    def insert(self, column: FeatureColumn) -> None:
        self._append(column)

    def replace(self, position: int, column: FeatureColumn) -> ColumnId:
        evicted = self._ids[position]
        self._remove(position)
        self._append(column)
        return evicted

    # -- factorization ------------------------------------------------------

    def _extend_chol(self, cross: np.ndarray, diag: float) -> None:
        s = self._chol_size
        ridge = RIDGE if self._ridge_active else 0.0
        if s == 0:
            self._chol[0, 0] = np.sqrt(diag + ridge)
            self._chol_size = 1
            return
        w = solve_triangular(self._chol[:s, :s], cross, lower=True, check_finite=False)
        pivot_sq = diag + ridge - w @ w
        if pivot_sq <= _PIVOT_TOL * max(diag, 1.0) and not self._ridge_active:
            self._ridge_active = True
            self._ridge_event = True
            self._chol_size = 0
            self._rebuild_chol()
            return
        if pivot_sq <= 0.0:
            # roundoff pushed a ridge-regularized pivot below zero; refactor
            self._chol_size = 0
            self._rebuild_chol()
            return
        self._chol[s, :s] = w
        self._chol[s, s] = np.sqrt(pivot_sq)
        self._chol_size = s + 1

    def _downdate_chol(self, position: int) -> None:
        """Delete one row/column of the factor in place.

        The leading block is untouched; the trailing block absorbs the removed
        column of the factor as a rank-one update, applied with the usual
        scalar rotations.
        """
        s = self._chol_size
        m = s - position - 1
        if m > 0:
            work = self._chol[position + 1 : s, position : s]  # [S | B] view
            update = work[:, 0].copy()
            trailing = work[:, 1:]
            for k in range(m):
                dk = trailing[k, k]
                r = np.hypot(dk, update[k])
                c, sn = r / dk, update[k] / dk
                trailing[k, k] = r
                if k + 1 < m:
                    col = trailing[k + 1 :, k]
                    col += sn * update[k + 1 :]
                    col /= c
                    update[k + 1 :] = c * update[k + 1 :] - sn * col
            # shift the updated trailing block (and left block rows) up by one
            self._chol[position : s - 1, :position] = self._chol[position + 1 : s, :position]
            self._chol[position : s - 1, position : s - 1] = trailing
        self._chol_size = s - 1

    def _rebuild_chol(self) -> None:
        s = self.size
        gram = self._gram[:s, :s]
        if not self._ridge_active:
            try:
                self._chol[:s, :s] = np.linalg.cholesky(gram)
                self._chol_size = s
                return
            except np.linalg.LinAlgError:
                self._ridge_active = True
                self._ridge_event = True
        ridged = gram.copy()
        ridged.flat[:: s + 1] += RIDGE
        self._chol[:s, :s] = np.linalg.cholesky(ridged)
        self._chol_size = s

    def _ensure_chol(self) -> None:
        if self._chol_size != self.size:
            self._rebuild_chol()

    def needs_refit_for(self, target: ValueTarget) -> bool:
        return self._fit_target is None or not np.array_equal(self._fit_target, target.values)


def refit_coefficients(
    buffer: SelectionBuffer, target: ValueTarget, trace: SolverTrace | None = None
) -> np.ndarray:
    """Least-squares refit of the buffered coefficients against the target.

    Solves the Gram system for the selected columns and refreshes the cached
    approximation. On rank deficiency a small ridge is added to the diagonal
    (a minimum-norm-like solution) and the trace is flagged.
    """
    if buffer.size == 0:
        raise ValueError("cannot refit an empty buffer")
    y = np.asarray(target.values, dtype=float)
    if y.shape[0] != buffer.dim:
        raise DimensionMismatchError("target dimension disagrees with the buffer")
    buffer._ensure_chol()
    s = buffer.size
    factor = buffer._chol[:s, :s]
    rhs = buffer._matrix[:s] @ y
    z = solve_triangular(factor, rhs, lower=True, check_finite=False)
    beta = solve_triangular(factor, z, lower=True, trans="T", check_finite=False)
    buffer._beta[:s] = beta
    buffer._xi = beta @ buffer._matrix[:s]
    buffer._fit_target = y.copy()
    if trace is not None and buffer._ridge_event:
        buffer._ridge_event = False
        trace.rank_deficient_steps.append(len(trace.records))
        trace.warnings.append("rank-deficient refit: ridge fallback engaged")
    return beta.copy()


def data_replace(
    target: ValueTarget, buffer: SelectionBuffer, incoming: FeatureColumn
) -> ReplaceDecision:
    """Single scan of the full buffer deciding whether the incoming column evicts one.

    The residual is taken against the buffer's current approximation. A
    buffered entry qualifies when the incoming projection strictly dominates
    its own and its coefficient is non-positive; among qualifiers the one with
    the largest projection-plus-coefficient score is evicted (earliest entry
    wins ties). Coefficients are not refit here; the caller refits.
    """
    if not buffer.is_full:
        raise BufferNotFullError("fill phase should insert directly")
    incoming = _certify(incoming)
    if len(incoming.values) != buffer.dim:
        raise DimensionMismatchError("incoming column dimension disagrees with the buffer")
    rho = target.values - buffer.approximation
    pi = float(abs(incoming.values @ rho))
    s = buffer.size
    proj = np.abs(buffer._matrix[:s] @ rho)
    gamma = buffer._beta[:s]
    scores = proj + gamma
    qualifies = (pi > proj) & (gamma <= 0.0)
    if not qualifies.any():
        return ReplaceDecision(REJECTED, incoming.id, None, pi, None, s)
    scores = np.where(qualifies, scores, -np.inf)
    best = int(np.argmax(scores))  # argmax keeps the earliest entry on ties
    evicted = buffer.replace(best, incoming)
    return ReplaceDecision(REPLACED, incoming.id, evicted, pi, float(scores[best]), s)


def select_step(
    buffer: SelectionBuffer,
    incoming: FeatureColumn,
    target: ValueTarget,
    trace: SolverTrace | None = None,
) -> ReplaceDecision:
    """Offer one column to the buffer: insert while filling, else try replacement.

    Coefficients are refit whenever membership changed, and also when the
    target moved since the last refit (the first offer of a new epoch), so the
    cached approximation always tracks the current target.
    """
    incoming = _certify(incoming)
    if len(incoming.values) != buffer.dim:
        raise DimensionMismatchError("incoming column dimension disagrees with the buffer")
    if not buffer.is_full:
        rho = target.values - buffer.approximation
        pi = float(abs(incoming.values @ rho))
        buffer.insert(incoming)
        decision = ReplaceDecision(INSERTED, incoming.id, None, pi, None, 0)
    else:
        decision = data_replace(target, buffer, incoming)
    if decision.outcome != REJECTED or buffer.needs_refit_for(target):
        refit_coefficients(buffer, target, trace)
    if trace is not None:
        residual_norm = float(np.linalg.norm(target.values - buffer.approximation))
        trace.records.append(
            StepRecord(
                step=len(trace.records),
                epoch=incoming.id.epoch,
                index=incoming.id.index,
                outcome=decision.outcome,
                evicted=decision.evicted,
                residual_norm=residual_norm,
                comparisons=decision.comparisons,
                pi=decision.pi,
                pi_max=decision.pi_max,
            )
        )
    return decision


def run_online_selection(
    columns: Iterable[FeatureColumn],
    targets: Mapping[int, ValueTarget],
    capacity: int,
) -> tuple[SelectionBuffer, SolverTrace]:
    """Stream columns epoch by epoch against the per-epoch targets.

    The stream must be ordered by epoch; each epoch's target stays fixed for
    its duration. Zero-norm columns are skipped with a trace warning.
    """
    trace = SolverTrace()
    buffer: SelectionBuffer | None = None
    seen: set[ColumnId] = set()
    last_epoch: int | None = None
    for column in columns:
        epoch = column.id.epoch
        if last_epoch is not None and epoch < last_epoch:
            raise ValueError("column stream is not ordered by epoch")
        last_epoch = epoch
        if column.id in seen:
            raise ValueError(f"duplicate column id {column.id}")
        seen.add(column.id)
        if epoch not in targets:
            raise ValueError(f"no target supplied for epoch {epoch}")
        target = targets[epoch]
        if buffer is None:
            buffer = SelectionBuffer(capacity, len(column.values))
        try:
            column = _certify(column)
        except ZeroColumnError:
            trace.warnings.append(
                f"skipped zero-norm column (epoch={epoch}, index={column.id.index})"
            )
            continue
        select_step(buffer, column, target, trace)
    if buffer is None:
        raise EmptyStreamError("column stream was empty")
    return buffer, trace


def batch_omp(
    columns: Sequence[FeatureColumn], target: ValueTarget, k: int
) -> tuple[list[ColumnId], np.ndarray]:
    """Classical greedy pursuit baseline: k rounds of argmax projection over all columns.

    Each round refits by dense least squares on the selected columns; used as
    the reference the online solver is checked against.
    """
    if k > len(columns):
        raise ValueError("k exceeds the number of columns")
    cols = [_certify(c) for c in columns]
    matrix = np.stack([c.values for c in cols]) if cols else np.zeros((0, target.dim))
    if cols and matrix.shape[1] != target.dim:
        raise DimensionMismatchError("column dimension disagrees with the target")
    y = target.values
    residual = y.copy()
    chosen: list[int] = []
    coeffs = np.zeros(0)
    for _ in range(k):
        proj = np.abs(matrix @ residual)
        if chosen:
            proj[chosen] = -1.0
        best = int(np.argmax(proj))
        chosen.append(best)
        basis = matrix[chosen].T
        coeffs, *_ = np.linalg.lstsq(basis, y, rcond=None)
        residual = y - basis @ coeffs
    return [cols[j].id for j in chosen], coeffs


@dataclass(frozen=True)
class EntryCondition:
    id: ColumnId
    projection: float
    coefficient: float
    optimal: bool
    premises_hold: bool


@dataclass
class InclusionReport:
    """Replacement-optimality conditions for one candidate against a buffer state."""

    candidate_id: ColumnId
    candidate_projection: float
    entries: list[EntryCondition]
    vacuous: bool
    premises_hold: bool
    predicted_eviction: ColumnId | None
    actual: ReplaceDecision
    consistent: bool


def check_inclusion_conditions(
    residual: np.ndarray,
    candidate: FeatureColumn,
    buffer: SelectionBuffer,
    optimal_support: set[ColumnId],
) -> InclusionReport:
    """Check that the dominance conditions predict the replacement outcome.

    For a candidate inside the externally supplied optimal support, each
    buffered non-optimal entry is tested for projection dominance with a
    strictly negative coefficient. When at least one entry satisfies both,
    running the replacement rule on a copy of the same state must evict the
    entry with the largest projection-plus-coefficient score.
    """
    candidate = _certify(candidate)
    residual = np.asarray(residual, dtype=float)
    pi = float(abs(candidate.values @ residual))
    entries: list[EntryCondition] = []
    best_score = -np.inf
    predicted: ColumnId | None = None
    any_non_optimal = False
    for cid, values, beta in buffer.entries():
        is_optimal = cid in optimal_support
        proj = float(abs(values @ residual))
        holds = (not is_optimal) and pi > proj and beta < 0.0
        entries.append(EntryCondition(cid, proj, beta, is_optimal, holds))
        if not is_optimal:
            any_non_optimal = True
        if holds and proj + beta > best_score:
            best_score = proj + beta
            predicted = cid
    premises_hold = predicted is not None
    # replay the replacement rule on the same state (target = residual + xi)
    target = ValueTarget.plain(residual + buffer.approximation)
    actual = data_replace(target, buffer.copy(), candidate)
    if premises_hold:
        consistent = actual.outcome == REPLACED and actual.evicted == predicted
    else:
        consistent = True
    return InclusionReport(
        candidate_id=candidate.id,
        candidate_projection=pi,
        entries=entries,
        vacuous=not any_non_optimal,
        premises_hold=premises_hold,
        predicted_eviction=predicted,
        actual=actual,
        consistent=consistent,
    )
