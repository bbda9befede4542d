"""Attack synthesis: stealth optimization, closed forms, random injection."""

from watersec.attacks.closed_form import (
    ClosedFormInfeasible,
    chi2_attack,
    compensated_attack,
    cusum_scalar_attack,
    cusum_vectorized_attack,
    cusum_vectorized_targets,
)
from watersec.attacks.dispatch import (
    AttackPlan,
    DispatchError,
    KnowledgeInventory,
    dispatch,
    suggest_connected_groups,
)
from watersec.attacks.random_fdi import RfdiParams, RfdiState, r_fdi_step
from watersec.attacks.stealth_milp import (
    AttackBounds,
    AttackOutcome,
    local_estimation_system,
    stealth_milp_step,
)
from watersec.attacks.targets import (
    AttackContext,
    AttackVector,
    Subnetwork,
    TargetSet,
    build_subnetwork,
    targets_connected,
)

__all__ = [
    "AttackBounds", "AttackContext", "AttackOutcome", "AttackPlan",
    "AttackVector", "ClosedFormInfeasible", "DispatchError",
    "KnowledgeInventory", "RfdiParams", "RfdiState", "Subnetwork",
    "TargetSet", "build_subnetwork", "chi2_attack", "compensated_attack",
    "cusum_scalar_attack", "cusum_vectorized_attack",
    "cusum_vectorized_targets", "dispatch", "local_estimation_system",
    "r_fdi_step", "stealth_milp_step", "suggest_connected_groups",
    "targets_connected",
]
