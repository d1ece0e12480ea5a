use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use super::{DataError, Dataset};

/// Partition of test ids. `train: None` means "every id not listed in val or
/// test".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default)]
    pub train: Option<Vec<String>>,
    #[serde(default)]
    pub val: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn all_train() -> Self {
        Self::default()
    }
}

/// Splits `ds` into disjoint `(train, val, test)` datasets.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let mut seen = HashSet::new();
    let listed = spec
        .train
        .iter()
        .flatten()
        .chain(&spec.val)
        .chain(&spec.test);
    for id in listed {
        if !seen.insert(id.as_str()) {
            return Err(DataError::Split(format!("test id `{id}` assigned twice")));
        }
        if ds.get(id).is_none() {
            return Err(DataError::Split(format!("unknown test id `{id}`")));
        }
    }
    let val = ds.select(&spec.val)?;
    let test = ds.select(&spec.test)?;
    let train = match &spec.train {
        Some(ids) => {
            if let Some(s) = ds.series.iter().find(|s| !seen.contains(s.test_id.as_str())) {
                return Err(DataError::Split(format!(
                    "test id `{}` is not assigned to any split",
                    s.test_id
                )));
            }
            ds.select(ids)?
        }
        None => Dataset::new(
            ds.series
                .iter()
                .filter(|s| !seen.contains(s.test_id.as_str()))
                .cloned()
                .collect(),
        ),
    };
    Ok((train, val, test))
}
