use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::shares::group_contributions;
use super::stats::{wilcoxon_signed_rank, WilcoxonResult};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::influence::{InfluenceMatrix, Sign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    /// Each epoch's own terms.
    #[default]
    Slice,
    /// Cumulative sums up to each epoch.
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochShares {
    pub epoch: usize,
    /// Own-group share per test group.
    pub own_share: BTreeMap<String, f64>,
    /// test group → training group → share.
    pub shares: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTest {
    pub from_epoch: usize,
    pub to_epoch: usize,
    pub result: WilcoxonResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDynamicsReport {
    pub sign: Sign,
    pub k: usize,
    pub mode: DynamicsMode,
    pub epochs: Vec<EpochShares>,
    /// Consecutive-epoch tests over the paired (test, train) scores.
    pub wilcoxon: Vec<EpochTest>,
}

/// Group shares of the top-k per epoch, plus Wilcoxon signed-rank tests
/// between consecutive epochs' score lists.
pub fn epoch_dynamics(
    matrix: &InfluenceMatrix,
    train: &Dataset,
    test: &Dataset,
    k: usize,
    sign: Sign,
    mode: DynamicsMode,
) -> Result<EpochDynamicsReport> {
    let views: Vec<InfluenceMatrix> = (0..matrix.epochs.len())
        .map(|e| match mode {
            DynamicsMode::Slice => matrix.epoch_slice(e),
            DynamicsMode::Prefix => matrix.prefix_sum(e),
        })
        .collect::<Result<_>>()?;
    let mut epochs = Vec::with_capacity(views.len());
    for (view, &epoch) in views.iter().zip(&matrix.epochs) {
        let reports = group_contributions(view, test, train, k, sign)?;
        let mut own_share = BTreeMap::new();
        let mut shares = BTreeMap::new();
        for r in reports {
            own_share.insert(r.test_group.clone(), r.share(&r.test_group));
            shares.insert(r.test_group, r.shares);
        }
        epochs.push(EpochShares {
            epoch,
            own_share,
            shares,
        });
    }
    let wilcoxon = views
        .windows(2)
        .zip(matrix.epochs.windows(2))
        .map(|(v, e)| {
            Ok(EpochTest {
                from_epoch: e[0],
                to_epoch: e[1],
                result: wilcoxon_signed_rank(&v[0].totals, &v[1].totals)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EpochDynamicsReport {
        sign,
        k,
        mode,
        epochs,
        wilcoxon,
    })
}
