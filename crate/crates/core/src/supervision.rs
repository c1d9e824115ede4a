//! Placement of intermediate supervisions and multi-head loss aggregation.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

/// Which U-Nets (1-based) carry a prediction head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervisionPlan {
    pub unets: usize,
    pub indices: Vec<usize>,
}

impl SupervisionPlan {
    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, unet: usize) -> bool {
        self.indices.binary_search(&unet).is_ok()
    }

    /// Gaps between consecutive heads, the first measured from U-Net 0.
    pub fn gaps(&self) -> Vec<usize> {
        let mut prev = 0;
        self.indices
            .iter()
            .map(|&i| {
                let g = i - prev;
                prev = i;
                g
            })
            .collect()
    }
}

/// Spreads `supervisions` heads over `unets` U-Nets as evenly as possible,
/// always supervising the last one: head `k` sits after U-Net `ceil(k·U/S)`.
pub fn place_supervisions(supervisions: usize, unets: usize) -> Result<SupervisionPlan> {
    if supervisions < 1 || supervisions > unets {
        return Err(Error::invalid(
            "place_supervisions",
            format!("need 1 <= S <= U, got S={supervisions}, U={unets}"),
        ));
    }
    let indices = (1..=supervisions)
        .map(|k| (k * unets).div_ceil(supervisions))
        .collect();
    Ok(SupervisionPlan { unets, indices })
}

/// Mean over heads of the MSE against one shared target.
pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, heads: &[Var], target: Var) -> Result<Var> {
    let (&first, rest) = heads
        .split_first()
        .ok_or_else(|| Error::invalid("total_loss", "no supervision heads"))?;
    let mut acc = tape.mse_loss(first, target)?;
    for &h in rest {
        let l = tape.mse_loss(h, target)?;
        acc = tape.add(acc, l)?;
    }
    if heads.len() == 1 {
        return Ok(acc);
    }
    Ok(tape.scale(acc, T::one() / T::from_f64(heads.len() as f64)))
}
