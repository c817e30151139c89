"""Role engine: runs one parsed role program on one module.

The engine re-evaluates role assignment on every physical-state change and
once per simulated second, runs the assigned role's startup actions once,
then keeps its default behavior (the first declared one) active. Commands
and event handlers preempt the behavior and run to completion; behaviors
and commands on one module are mutually exclusive by construction. A
repeated invocation of the command that is currently running restarts it
instead of queueing a second copy.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

from .dynarole import (
    Action, AssignResult, Enable, EvalError, Invoke, RoleProgram, SleepCs,
    Turn, _eval_operand, assign_role,
)
from .sim import Timer, US_PER_CS, US_PER_S

REEVAL_PERIOD_US = US_PER_S  # roles re-evaluate at least once per second


@dataclass
class _Run:
    kind: str  # "startup" | "behavior" | "command" | "handler"
    name: str
    actions: tuple[Action, ...]
    index: int = 0
    started_at: int = 0
    timer: Optional[Timer] = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.kind, self.name)


class RoleEngine:
    """Drives one program against a host exposing the module's world.

    The host duck type provides: `scheduler`, `snapshot() -> PhysSnapshot`,
    `actuate(value)`, `log(kind, payload)` and
    `invoke_neighbors(role, command)`.
    """

    def __init__(self, host, program: RoleProgram):
        self.host = host
        self.program = program
        self.assigned: Optional[str] = None
        self._enabled: set[int] = set()
        self._current: Optional[_Run] = None
        self._queue: deque[_Run] = deque()
        self._reeval_timer: Optional[Timer] = None
        self._stopped = False
        self._evaluated_once = False

    def start(self) -> None:
        self._arm_reeval()
        self.evaluate()

    def stop(self) -> None:
        self._stopped = True
        if self._reeval_timer is not None:
            self._reeval_timer.cancel()
        self._abort_current()
        self._queue.clear()

    # role assignment

    def evaluate(self) -> None:
        if self._stopped:
            return
        result: AssignResult = assign_role(self.program, self.host.snapshot())
        for role_name, error in result.excluded:
            self.host.log("role-error", f"{role_name} {error}")
        if result.ambiguous:
            self.host.log("role-ambiguous", ",".join(result.candidates))
        if result.role != self.assigned or not self._evaluated_once:
            self._reassign(result.role)
        self._evaluated_once = True

    def on_phys_change(self) -> None:
        self.evaluate()

    def _arm_reeval(self) -> None:
        def tick() -> None:
            if self._stopped:
                return
            self.evaluate()
            self._reeval_timer = self.host.scheduler.call_after(REEVAL_PERIOD_US, tick)

        self._reeval_timer = self.host.scheduler.call_after(REEVAL_PERIOD_US, tick)

    def _reassign(self, role: Optional[str]) -> None:
        self._abort_current()
        self._queue.clear()
        self._enabled.clear()
        self.assigned = role
        self.host.log("role", role or "none")
        if role is None:
            return
        startup = self.program.effective_startup(role)
        if startup:
            self._begin(_Run("startup", "startup", startup))
        else:
            self._start_behavior()

    # external stimuli

    def on_event(self, event_id: int) -> None:
        if self._stopped or self.assigned is None or event_id not in self._enabled:
            return
        for index, handler in enumerate(self.program.effective_handlers(self.assigned)):
            if event_id in handler.events:
                self._submit(_Run("handler", f"h{index}", handler.actions))

    def on_invoke(self, role_name: str, command: str) -> None:
        """Cross-module command dispatch; a mismatch is a logged no-op."""
        if self._stopped:
            return
        if self.assigned is None:
            self.host.log("invoke-skip", f"{role_name}.{command}")
            return
        if not self.program.has_role(role_name) or not self.program.descends(self.assigned, role_name):
            self.host.log("invoke-skip", f"{role_name}.{command}")
            return
        for name, actions in self.program.effective_commands(self.assigned):
            if name == command:
                self._submit(_Run("command", name, actions))
                return
        self.host.log("invoke-skip", f"{role_name}.{command}")

    # execution core: at most one run active at a time

    def _submit(self, run: _Run) -> None:
        current = self._current
        if current is not None and current.key == run.key:
            # Same command again: restart its timer rather than queueing.
            if current.timer is not None:
                current.timer.cancel()
                current.timer = None
            current.index = 0
            self._step(current)
            return
        if current is not None and current.kind == "behavior":
            self._abort_current()
            self._begin(run)
            return
        if current is None:
            self._begin(run)
            return
        if any(queued.key == run.key for queued in self._queue):
            return  # coalesce with the queued copy
        self._queue.append(run)

    def _begin(self, run: _Run) -> None:
        run.started_at = self.host.scheduler.now
        self._current = run
        self.host.log("run-begin", f"{run.kind} {run.name}")
        self._step(run)

    def _abort_current(self) -> None:
        run = self._current
        if run is None:
            return
        if run.timer is not None:
            run.timer.cancel()
        self._current = None
        self.host.log("run-end", f"{run.kind} {run.name}")

    def _step(self, run: _Run) -> None:
        if self._current is not run:
            return
        consts = self.program.effective_constants(self.assigned) if self.assigned else {}
        state = None
        while run.index < len(run.actions):
            action = run.actions[run.index]
            run.index += 1
            if isinstance(action, Turn):
                if state is None:
                    state = self.host.snapshot()
                try:
                    value = _eval_operand(action.speed, state, consts)
                except EvalError as exc:
                    self.host.log("action-error", str(exc))
                    continue
                self.host.actuate(int(value))
            elif isinstance(action, Enable):
                self._enabled.add(action.event)
            elif isinstance(action, Invoke):
                self.host.log("invoke", f"{action.role}.{action.command}")
                self.host.invoke_neighbors(action.role, action.command)
            elif isinstance(action, SleepCs):
                if state is None:
                    state = self.host.snapshot()
                try:
                    amount = _eval_operand(action.amount, state, consts)
                except EvalError as exc:
                    self.host.log("action-error", str(exc))
                    continue
                if not isinstance(amount, int) or amount < 0:
                    self.host.log("action-error", f"bad sleepcs amount {amount!r}")
                    continue
                run.timer = self.host.scheduler.call_after(
                    amount * US_PER_CS, lambda r=run: self._resume(r)
                )
                return
        self._finish(run)

    def _resume(self, run: _Run) -> None:
        run.timer = None
        self._step(run)

    def _finish(self, run: _Run) -> None:
        if self._current is not run:
            return
        self._current = None
        self.host.log("run-end", f"{run.kind} {run.name}")
        if self._queue:
            self._begin(self._queue.popleft())
            return
        if run.kind == "behavior" and self.host.scheduler.now == run.started_at:
            # Steady state: a zero-duration behavior pass changed nothing
            # observable; park until a command or reassignment intervenes.
            return
        self._start_behavior()

    def _start_behavior(self) -> None:
        if self.assigned is None:
            return
        behaviors = self.program.effective_behaviors(self.assigned)
        if not behaviors:
            return
        name, actions = behaviors[0]
        self._begin(_Run("behavior", name, actions))
