use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random permutation cut into train/validation/test. Validation and test
/// sizes are floored; the remainder goes to train.
pub fn split_dataset(n_rows: usize, ratios: [f64; 3], rng: &mut RngStream) -> Result<DatasetSplit> {
    if n_rows < 3 {
        return Err(Error::InvalidConfig(format!("cannot split {n_rows} rows")));
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidConfig(format!(
            "split ratios {ratios:?} must sum to 1"
        )));
    }
    let n_val = (n_rows as f64 * ratios[1]).floor() as usize;
    let n_test = (n_rows as f64 * ratios[2]).floor() as usize;
    let n_train = n_rows - n_val - n_test;
    let mut perm: Vec<usize> = (0..n_rows).collect();
    rng.shuffle(&mut perm);
    let test = perm.split_off(n_train + n_val);
    let validation = perm.split_off(n_train);
    Ok(DatasetSplit {
        train: perm,
        validation,
        test,
    })
}
