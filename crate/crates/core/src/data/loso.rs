use super::WindowedDataset;
use crate::error::{Error, Result};

/// One leave-one-subject-out fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub subject: String,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// One split per subject that owns at least one window. Subjects without
/// windows are skipped with a warning.
pub fn loso_splits(ds: &WindowedDataset) -> Result<Vec<Split>> {
    if ds.subject_ids.len() < 2 {
        return Err(Error::Data(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            ds.subject_ids.len()
        )));
    }
    let mut splits = Vec::new();
    for (sid, name) in ds.subject_ids.iter().enumerate() {
        let (val, train): (Vec<usize>, Vec<usize>) =
            (0..ds.len()).partition(|&i| ds.subjects[i] == sid);
        if val.is_empty() {
            log::warn!("subject `{name}` has no windows; skipping its fold");
            continue;
        }
        if train.is_empty() {
            return Err(Error::Data(format!(
                "subject `{name}` owns every window; nothing left to train on"
            )));
        }
        splits.push(Split {
            subject: name.clone(),
            train,
            val,
        });
    }
    Ok(splits)
}
