from .csma import CapOutcome, cap_phase, collision_groups, draw_backoffs, next_cw, resolve_contention
from .ftdma import (
    CoordinatorState,
    RelayState,
    SourceState,
    TxDecision,
    apply_free_slot_outcome,
    coordinator_frame_end,
    ftdma_node_step,
    predict_p,
    select_best_relay,
)
from .schemes import (
    CftimSim,
    OrSim,
    RunResult,
    TdmaSim,
    run_cftim,
    run_or_baseline,
    run_tdma_baseline,
    simulate,
)

__all__ = [
    "CapOutcome", "cap_phase", "collision_groups", "draw_backoffs", "next_cw", "resolve_contention",
    "CoordinatorState", "RelayState", "SourceState", "TxDecision", "apply_free_slot_outcome",
    "coordinator_frame_end", "ftdma_node_step", "predict_p", "select_best_relay",
    "CftimSim", "OrSim", "RunResult", "TdmaSim", "run_cftim", "run_or_baseline",
    "run_tdma_baseline", "simulate",
]
