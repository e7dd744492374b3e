use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Binary mask with ones at the `k` largest scores. Equal scores are ranked
/// by index, lower index first.
pub fn topk_mask(scores: &[f32], k: usize) -> Result<Vec<bool>> {
    if k > scores.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {k} of {} entries",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut mask = vec![false; scores.len()];
    if k == 0 {
        return Ok(mask);
    }
    if k == scores.len() {
        mask.fill(true);
        return Ok(mask);
    }
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    idx.select_nth_unstable_by(k - 1, |&a, &b| rank(scores, a, b));
    for &i in &idx[..k] {
        mask[i as usize] = true;
    }
    Ok(mask)
}

#[inline]
fn rank(scores: &[f32], a: u32, b: u32) -> Ordering {
    // -0.0 and 0.0 tie; the index decides
    let (sa, sb) = (scores[a as usize], scores[b as usize]);
    sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
}
