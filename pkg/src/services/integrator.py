import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import DOP853, OdeSolution

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_STEP_UNDERFLOW = "step_underflow"

# Returns None to keep going, or (status, message) to stop at the given sample or step end.
Guard = Callable[[float, np.ndarray], Optional[Tuple[str, str]]]
ErrorMonitor = Callable[[float, np.ndarray], float]


@dataclass(frozen=True)
class IntegratorStats:
    accepted_steps: int = 0
    rejected_steps: int = 0
    max_error_estimate: float = 0.0


@dataclass(frozen=True, eq=False)
class SampledSolution:
    tau: np.ndarray
    states: np.ndarray
    stats: IntegratorStats
    status: str = STATUS_OK
    message: str = ""
    solution: Optional[OdeSolution] = None


def integrate_sampled(
    fun: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    tau_samples: np.ndarray,
    rtol: float,
    atol,
    guard: Optional[Guard] = None,
    error_monitor: Optional[ErrorMonitor] = None,
) -> SampledSolution:
    """
    Drives scipy's DOP853 (8th order, embedded 5th/3rd order error control, dense
    output) one step at a time so that every accepted step can be checked and the
    requested samples are read off the per-step interpolants. The guard sees both
    step ends and interpolated samples; the first verdict ends the run.

    Rejected attempts are counted from the function evaluations a step consumed:
    each attempt costs exactly DOP853.n_stages evaluations.
    """
    tau_samples = np.asarray(tau_samples, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    t0, t_end = float(tau_samples[0]), float(tau_samples[-1])

    taus = [t0]
    states = [y0.copy()]
    if t_end == t0:
        return SampledSolution(np.array(taus), np.array(states), IntegratorStats())

    solver = DOP853(fun, t0, y0, t_end, rtol=rtol, atol=atol)
    ts = [t0]
    interpolants = []
    accepted = rejected = 0
    max_error = error_monitor(t0, y0) if error_monitor else 0.0
    status, message = STATUS_OK, ""
    next_sample = 1

    while solver.status == "running":
        nfev_before = solver.nfev
        step_message = solver.step()
        attempts = max(1, round((solver.nfev - nfev_before) / DOP853.n_stages))
        if solver.status == "failed":
            rejected += attempts
            status, message = STATUS_STEP_UNDERFLOW, str(step_message)
            logger.warning(f"Integration stopped at tau={solver.t:.6g}: {message}")
            break

        accepted += 1
        rejected += attempts - 1
        dense = solver.dense_output()
        ts.append(solver.t)
        interpolants.append(dense)
        # samples inside the step are checked one by one; a step that ends off
        # the manifold keeps the samples taken before it left
        step_verdict = guard(solver.t, solver.y) if guard is not None else None
        stop_tau = solver.t
        while next_sample < tau_samples.size and tau_samples[next_sample] <= solver.t:
            tau = float(tau_samples[next_sample])
            state = dense(tau)
            verdict = guard(tau, state) if guard is not None else None
            if verdict is not None:
                status, message = verdict
                stop_tau = tau
                break
            taus.append(tau)
            states.append(state)
            next_sample += 1
        if status == STATUS_OK and step_verdict is not None:
            status, message = step_verdict
        if status != STATUS_OK:
            logger.warning(f"Integration stopped at tau={stop_tau:.6g}: {message}")
            break
        if error_monitor is not None:
            max_error = max(max_error, error_monitor(solver.t, solver.y))

    stats = IntegratorStats(accepted_steps=accepted, rejected_steps=rejected, max_error_estimate=float(max_error))
    logger.debug(
        f"DOP853 finished ({status}): {accepted} accepted, {rejected} rejected, "
        f"{len(taus)}/{tau_samples.size} samples"
    )
    return SampledSolution(
        tau=np.array(taus),
        states=np.array(states),
        stats=stats,
        status=status,
        message=message,
        solution=OdeSolution(ts, interpolants) if interpolants else None,
    )
