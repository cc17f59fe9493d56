"""Method-of-lines integration of the complex Chern-Simons gradient flow on T^3.

The state is a slice configuration (A, a) with scale r and parameter tau.
The flow is the downward L^2 gradient flow of the weighted real part
Re((tau + i(1 - tau))^2 / N cs(A + i r a)).  Time stepping is classical RK4
on the system augmented by the running dissipation integral, so the ledger
carries a second, independently integrated energy account.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BlowUpError, DomainError
from .fields import Configuration, cov_codiff, v_form, w_form
from .functionals import chern_simons, tau_coefficients
from .grid import Domain, DomainKind, FormField, ValueKind, hodge_star, save_field

CSV_HEADER = ("s", "cs_re", "cs_im", "weighted_real", "dissipation", "constraint_norm", "dt")


@dataclass(frozen=True)
class FlowState:
    """A slice configuration at flow parameter ``s``."""

    cfg: Configuration
    s: float = 0.0

    def __post_init__(self):
        if self.cfg.domain.kind is not DomainKind.TORUS3:
            raise DomainError("the flow runs on a three-dimensional periodic slice")

    @property
    def tau(self) -> float:
        return self.cfg.tau

    @property
    def r(self) -> float:
        return self.cfg.r

    @property
    def domain(self) -> Domain:
        return self.cfg.domain

    def advanced(self, A: np.ndarray, a: np.ndarray, s: float) -> "FlowState":
        cfg = self.cfg.with_fields(self.cfg.A.with_data(A), self.cfg.a.with_data(a))
        return FlowState(cfg, s)


def flow_rhs(state: FlowState) -> tuple[FormField, FormField]:
    """(dA/ds, da/ds).

    dA/ds = -(c *W - s r *d_A a) / N and da/ds = (c *d_A a + s *W / r) / N
    with W = F - r^2 a ^ a and (c, s, N) from :func:`tau_coefficients`.
    """
    cfg = state.cfg
    c, s, N = tau_coefficients(cfg.tau)
    sW, sV = hodge_star(w_form(cfg)), hodge_star(v_form(cfg))
    dA = (sW * c - sV * s) * (-1.0 / N)
    da = (sV * c + sW * s) * (1.0 / (N * cfg.r))
    return dA, da


def dissipation_density(dA: FormField, da: FormField, r: float) -> np.ndarray:
    """Pointwise |dA/ds|^2 + r^2 |da/ds|^2."""
    return dA.pointwise_norm2() + r**2 * da.pointwise_norm2()


@dataclass(frozen=True)
class LedgerRow:
    s: float
    cs: complex
    weighted_real: float
    dissipation: float
    constraint_norm: float
    dt: float
    a_norm2: float
    energy_integrand: float
    cumulative_dissipation: float

    def csv_fields(self) -> tuple:
        return (self.s, self.cs.real, self.cs.imag, self.weighted_real, self.dissipation,
                self.constraint_norm, self.dt)


@dataclass
class FlowLedger:
    """Append-only per-step record of a flow run.

    ``energy_integrand`` is the integral over the slice of
    |dA/ds|^2 + r^2|da/ds|^2 + r^2|d_A a|^2 + |F - r^2 a^a|^2, evaluated from
    the fields rather than from the velocity alone.  ``cumulative_dissipation``
    is the RK4-integrated dissipation carried alongside the fields.
    """

    r: float = 1.0
    tau: float = 1.0
    rows: list[LedgerRow] = field(default_factory=list)

    def append(self, row: LedgerRow) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows])

    @property
    def s(self) -> np.ndarray:
        return self.column("s")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow([repr(float(v)) for v in row.csv_fields()])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    def monotonicity_violations(self) -> np.ndarray:
        """Per-step increases of the weighted real part (zero where it decreased)."""
        return np.maximum(np.diff(self.column("weighted_real")), 0.0)


def ledger_row(state: FlowState, dt: float, cumulative: float = 0.0) -> LedgerRow:
    cfg = state.cfg
    dA, da = flow_rhs(state)
    h3 = state.domain.cell_volume
    diss = float(np.sum(dissipation_density(dA, da, cfg.r)) * h3)
    field_terms = float(w_form(cfg).norm2() + v_form(cfg).norm2())
    cs = chern_simons(cfg)
    return LedgerRow(
        s=float(state.s), cs=cs.value, weighted_real=cs.weighted_real, dissipation=diss,
        constraint_norm=cov_codiff(cfg, cfg.a).norm(), dt=float(dt), a_norm2=cfg.a.norm2(),
        energy_integrand=diss + field_terms, cumulative_dissipation=float(cumulative))


def _rk4_step(state: FlowState, dt: float) -> tuple[FlowState, float]:
    """One RK4 step; also returns the dissipation integral over the step."""
    r = state.r
    h3 = state.domain.cell_volume
    A0, a0 = state.cfg.A.data, state.cfg.a.data

    def stage(st: FlowState):
        dA, da = flow_rhs(st)
        q = float(np.sum(dissipation_density(dA, da, r)) * h3)
        return dA.data, da.data, q

    k1 = stage(state)
    k2 = stage(state.advanced(A0 + 0.5 * dt * k1[0], a0 + 0.5 * dt * k1[1], state.s + 0.5 * dt))
    k3 = stage(state.advanced(A0 + 0.5 * dt * k2[0], a0 + 0.5 * dt * k2[1], state.s + 0.5 * dt))
    k4 = stage(state.advanced(A0 + dt * k3[0], a0 + dt * k3[1], state.s + dt))
    w = (1.0, 2.0, 2.0, 1.0)
    ks = (k1, k2, k3, k4)
    A1 = A0 + dt / 6.0 * sum(wi * k[0] for wi, k in zip(w, ks))
    a1 = a0 + dt / 6.0 * sum(wi * k[1] for wi, k in zip(w, ks))
    q = dt / 6.0 * sum(wi * k[2] for wi, k in zip(w, ks))
    return state.advanced(A1, a1, state.s + dt), q


def _sup(state: FlowState) -> float:
    return max(state.cfg.A.sup_norm(), state.cfg.a.sup_norm())


def probe_dt(state: FlowState, dt: float = 0.1, max_change: float = 0.01,
             min_dt: float = 1e-6) -> float:
    """Largest ``dt / 2^k`` for which one RK4 step changes the sup-norm by less than 1%.

    The change is measured as the sup-norm of the increment relative to the
    sup-norm of the fields; zero data accepts the first trial.
    """
    scale = _sup(state)
    if scale == 0.0:
        return dt
    while dt > min_dt:
        nxt, _ = _rk4_step(state, dt)
        change = max(np.max(np.abs(nxt.cfg.A.data - state.cfg.A.data)),
                     np.max(np.abs(nxt.cfg.a.data - state.cfg.a.data)))
        if change < max_change * scale:
            return dt
        dt *= 0.5
    raise BlowUpError(f"no stable step above {min_dt} (sup-norm {scale:.3e})")


def integrate(state: FlowState, s_end: float, dt: float | None = None,
              ledger_out: FlowLedger | None = None, ceiling: float = 1e6,
              snapshots: Sequence[float] = (), snapshot_dir: str | Path | None = None,
              keep_states: bool = False) -> FlowState | tuple[FlowState, list[FlowState]]:
    """Advance ``state`` to ``s_end`` with fixed-step RK4.

    ``dt=None`` selects the step by :func:`probe_dt`.  The step is shortened
    uniformly so that an integer number of steps lands on ``s_end``.  A row is
    appended to ``ledger_out`` at the start and after every step.  When the
    field sup-norm exceeds ``ceiling`` a :class:`BlowUpError` is raised.

    Snapshots are written at the first step at or after each requested
    s-value, in the grid dump format, as ``A_<k>.kwf`` and ``a_<k>.kwf``.
    With ``keep_states`` every intermediate state is returned as well.
    """
    span = s_end - state.s
    if span < 0:
        raise ValueError("s_end lies before the current flow parameter")
    if dt is None:
        dt = probe_dt(state)
    if not dt > 0:
        raise ValueError("dt must be positive")
    n_steps = max(1, math.ceil(span / dt - 1e-9)) if span > 0 else 0
    step = span / n_steps if n_steps else dt
    ledger = ledger_out if ledger_out is not None else FlowLedger(state.r, state.tau)
    ledger.r, ledger.tau = state.r, state.tau
    s0 = state.s
    cumulative = 0.0
    ledger.append(ledger_row(state, step, cumulative))
    pending = sorted(snapshots)
    states = [state] if keep_states else []
    pending = _write_snapshots(state, pending, snapshot_dir)
    for i in range(n_steps):
        state, q = _rk4_step(state, step)
        state = FlowState(state.cfg, s0 + (i + 1) * step)
        cumulative += q
        sup = _sup(state)
        if not np.isfinite(sup) or sup > ceiling:
            raise BlowUpError(f"field sup-norm {sup:.3e} exceeds {ceiling:.3e} at s = {state.s:.6f}")
        ledger.append(ledger_row(state, step, cumulative))
        pending = _write_snapshots(state, pending, snapshot_dir)
        if keep_states:
            states.append(state)
    return (state, states) if keep_states else state


def _write_snapshots(state: FlowState, pending: list[float], out: str | Path | None) -> list[float]:
    if out is None:
        return []
    out = Path(out)
    while pending and state.s >= pending[0] - 1e-12:
        tag = f"{pending.pop(0):.6f}"
        save_field(out / f"A_{tag}.kwf", state.cfg.A)
        save_field(out / f"a_{tag}.kwf", state.cfg.a)
    return pending


# -- diagnostics -----------------------------------------------------------


def constraint_drift(ledger: FlowLedger) -> float:
    """max_s | ||d_A^dagger a||(s) - ||d_A^dagger a||(0) |."""
    if not ledger.rows:
        return 0.0
    c = ledger.column("constraint_norm")
    return float(np.max(np.abs(c - c[0])))


def instanton_energy(ledger: FlowLedger) -> float:
    """Total drop of the weighted real part of cs along the run."""
    if not ledger.rows:
        return 0.0
    w = ledger.column("weighted_real")
    return float(w[0] - w[-1])


def energy_quadrature(ledger: FlowLedger) -> float:
    """Half the s-integral of the four-term energy integrand.

    Composite Simpson on uniform steps with an even step count, the
    trapezoid rule otherwise.  On the semidiscrete flow the field terms equal
    the velocity terms, so this matches :func:`instanton_energy`.
    """
    s = ledger.column("s")
    f = 0.5 * ledger.column("energy_integrand")
    n = len(s) - 1
    if n <= 0:
        return 0.0
    h = np.diff(s)
    if n % 2 == 0 and np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        return float(h[0] / 3.0 * (f[0] + f[-1] + 4.0 * np.sum(f[1:-1:2]) + 2.0 * np.sum(f[2:-1:2])))
    return float(np.sum(0.5 * h * (f[1:] + f[:-1])))


def l2_drift_bound(ledger: FlowLedger, i: int, j: int, delta: float) -> tuple[float, float]:
    """(||a(s_i)||^2, (1 + delta)||a(s_j)||^2 + (1 + 1/delta) r^-2 c |s_i - s_j|).

    ``c`` is the drop of the weighted real part between the two rows.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    a2 = ledger.column("a_norm2")
    w = ledger.column("weighted_real")
    s = ledger.column("s")
    lo, hi = min(i, j), max(i, j)
    drop = max(float(w[lo] - w[hi]), 0.0)
    rhs = (1.0 + delta) * a2[j] + (1.0 + 1.0 / delta) * drop * abs(s[i] - s[j]) / ledger.r**2
    return float(a2[i]), float(rhs)


def l2_drift_check(ledger: FlowLedger, delta: float, pairs: Iterable[tuple[int, int]] | None = None,
                   slack: float = 1e-12) -> bool:
    """Whether the L^2 drift bound holds for every pair of ledger rows given.

    ``pairs`` defaults to all ordered pairs.  ``slack`` absorbs rounding in
    the stationary case, where both sides coincide.
    """
    n = len(ledger)
    if pairs is None:
        pairs = ((i, j) for i in range(n) for j in range(n))
    for i, j in pairs:
        lhs, rhs = l2_drift_bound(ledger, i, j, delta)
        if lhs > rhs + slack * max(1.0, abs(rhs)):
            return False
    return True


def stack_slices(states: Sequence[FlowState]) -> Configuration:
    """View equally spaced slices as a configuration on the slab I x T^3.

    The s-components of A and a are zero.  The slab spacing is the step
    between consecutive states, so the slab needs an even number >= 4 of them.
    """
    if len(states) < 4 or len(states) % 2:
        raise ValueError("stacking needs an even number (>= 4) of slices")
    s = np.array([st.s for st in states])
    steps = np.diff(s)
    if not np.allclose(steps, steps[0], rtol=1e-9):
        raise ValueError("slices must be equally spaced in s")
    dom3 = states[0].domain
    dom = Domain(DomainKind.SLAB_T3, (len(states) * steps[0], *dom3.extents),
                 (len(states), *dom3.sites), (float(s[0]), *dom3.origin))

    def lift(arrs):
        out = np.zeros((len(states), *dom3.sites, 4, 3))
        out[..., 1:, :] = np.stack(arrs)
        return FormField(dom, 1, ValueKind.LIE, out)

    A = lift([st.cfg.A.data for st in states])
    a = lift([st.cfg.a.data for st in states])
    return Configuration(A, a, states[0].r, states[0].tau)
