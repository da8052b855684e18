//! Cross-group sharing analyses over influence rankings: which groups the
//! most influential training samples come from, how that changes over
//! epochs, under group exclusion and under oversampling, and whether
//! removing the retrieved samples actually moves model confidence.

mod dynamics;
mod retrain;
mod shares;
mod stats;

pub use dynamics::{epoch_dynamics, DynamicsMode, EpochDynamicsReport, EpochShares, EpochTest};
pub use retrain::{
    imbalance_sweep, removal_validation, ImbalanceCurve, ImbalancePoint, ValidationCurve, ValidationPoint,
    DEFAULT_K_GRID,
};
pub use shares::{
    average_influence_table, group_contribution, group_contributions, own_group_topk, reinforcing_share,
    select_test_samples, zero_shot_compare, GroupShareReport, GroupTable, ReinforcingReport, ZeroShotReport,
};
pub use stats::{exact_two_sided, wilcoxon_signed_rank, WilcoxonMethod, WilcoxonResult, EXACT_MAX_N};

/// Default top-k size for every replication analysis.
pub const DEFAULT_K: usize = 100;

/// Default number of correctly predicted test samples per group.
pub const DEFAULT_TESTS_PER_GROUP: usize = 25;
