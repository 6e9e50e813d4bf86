"""Host-driven stepping: the pipeline owns the model call, we own the math.

Mirrors the scheduler interface common in generative-sampling pipelines:
the host evaluates its model wherever :meth:`SchedulerAdapter.next_query_time`
(and the state returned by the previous step call) says to, then hands the
output to :meth:`SchedulerAdapter.scheduler_step`.  The adapter never calls
the model itself; all internal virtual stages are reconstructed from the
cached evaluation window, so function-evaluation accounting matches a direct
``solve_flow`` exactly.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from stork import ConfigurationError, FlowWalk, SolverConfig, TimeGrid


class SchedulerAdapter:
    """Expose a configured flow solve as an externally driven schedule.

    The host calls :meth:`scheduler_step` once per model evaluation, with
    ``t_index`` counting calls from 0 in schedule order; Taylor-stage
    start-up needs ``taylor_order + 1`` calls (at half-step query times)
    before the first full super-step completes.  Each call returns the state
    the host must evaluate the model at next — and, on the final call, the
    finished sample.  Driving the schedule with a field evaluator reproduces
    ``solve_flow`` bitwise on the same grid.
    """

    def __init__(self, grid: TimeGrid, config: SolverConfig):
        self.grid = grid
        self.config = config
        self._walk: Optional[FlowWalk] = None
        self._calls = 0
        self._state: Optional[np.ndarray] = None

    # -- schedule introspection ---------------------------------------------

    @property
    def finished(self) -> bool:
        return self._walk is not None and self._walk.finished

    @property
    def nfe(self) -> int:
        """Model outputs consumed so far."""
        return self._calls

    def next_query_time(self) -> float:
        """Time at which the host must evaluate the model for the next call."""
        if self._walk is None:
            return float(self.grid.points[-1])
        if self._walk.finished:
            raise ConfigurationError("schedule complete; no query pending")
        return float(self._walk.pending_query[1])

    # -- stepping -----------------------------------------------------------

    def scheduler_step(self, model_output, t_index: int, state) -> np.ndarray:
        """Consume one model output and return the next state.

        ``model_output`` must be the field value at the current query point
        (the state returned by the previous call, at ``next_query_time()``);
        ``state`` is the host's state buffer, used as the initial sample on
        the first call and shape-checked afterwards.
        """
        state = np.asarray(state, dtype=float)
        if t_index != self._calls:
            raise ConfigurationError(
                f"out-of-order step: got t_index {t_index}, expected {self._calls}"
            )
        if self._walk is None:
            self._walk = FlowWalk(state, self.grid, self.config)
            self._state = state
        elif self._walk.finished:
            raise ConfigurationError("schedule complete; no step pending")
        if state.shape != self._state.shape:
            raise ConfigurationError(
                f"state shape {state.shape} does not match schedule shape "
                f"{self._state.shape}"
            )
        self._walk.advance(model_output)  # validates model_output shape
        self._calls += 1
        if self._walk.finished:
            self._state = self._walk.report().final_state
        else:
            self._state = np.asarray(self._walk.pending_query[0])
        return self._state

    def report(self):
        """Finished :class:`stork.SolveReport`; raises while steps remain."""
        if self._walk is None:
            raise ConfigurationError("no steps taken yet")
        return self._walk.report()
