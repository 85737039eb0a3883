use crate::error::{Error, Result};

/// Square matrix of counts, rows = true class, columns = predicted class.
pub type Confusion = Vec<Vec<u64>>;

pub fn confusion_matrix(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Confusion> {
    if truth.len() != pred.len() {
        return Err(Error::Data(format!(
            "{} labels against {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::Data(format!("class index out of range ({t}, {p})")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn check_square(m: &Confusion) -> Result<usize> {
    let c = m.len();
    if c == 0 {
        return Err(Error::Data("empty confusion matrix".into()));
    }
    if m.iter().any(|r| r.len() != c) {
        return Err(Error::Data("confusion matrix is not square".into()));
    }
    Ok(c)
}

/// F1 per class; `None` for classes that occur neither in the truth nor in
/// the predictions. A class with no predictions or no true samples (but not
/// both) scores 0.
pub fn per_class_f1(m: &Confusion) -> Result<Vec<Option<f64>>> {
    let c = check_square(m)?;
    Ok((0..c)
        .map(|k| {
            let tp = m[k][k];
            let actual: u64 = m[k].iter().sum();
            let predicted: u64 = m.iter().map(|r| r[k]).sum();
            if actual == 0 && predicted == 0 {
                None
            } else if tp == 0 {
                Some(0.0)
            } else {
                let p = tp as f64 / predicted as f64;
                let r = tp as f64 / actual as f64;
                Some(2.0 * p * r / (p + r))
            }
        })
        .collect())
}

/// Unweighted mean of the per-class F1 scores over the classes present.
pub fn macro_f1(m: &Confusion) -> Result<f64> {
    let scores: Vec<f64> = per_class_f1(m)?.into_iter().flatten().collect();
    if scores.is_empty() {
        return Err(Error::Data("confusion matrix holds no samples".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
