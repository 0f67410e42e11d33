//! Rank-based ROC-AUC and direction balancing.

use rand::Rng;

use super::{Dataset, Direction};
use crate::error::{Error, Result};
use crate::seeds;

/// Rank-based AUC of a score for the positive class XtoY; ties contribute
/// one half.
pub fn roc_auc(results: &[(f64, Direction)]) -> Result<f64> {
    let n_pos = results
        .iter()
        .filter(|(_, l)| *l == Direction::XtoY)
        .count();
    let n_neg = results.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidParameter {
            name: "results".into(),
            reason: "AUC requires both classes present".into(),
        });
    }
    if results.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::NonFinite("AUC scores"));
    }
    // Average ranks with tie correction.
    let mut idx: Vec<usize> = (0..results.len()).collect();
    idx.sort_by(|&a, &b| results[a].0.partial_cmp(&results[b].0).unwrap());
    let mut ranks = vec![0.0; results.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && results[idx[j + 1]].0 == results[idx[i]].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = results
        .iter()
        .zip(&ranks)
        .filter(|((_, l), _)| *l == Direction::XtoY)
        .map(|(_, r)| r)
        .sum();
    let np = n_pos as f64;
    let nn = n_neg as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Mirror a random subset of pairs so that exactly floor(n/2) end up XtoY.
/// Deterministic given the seed.
pub fn balance_directions(pairs: Vec<Dataset>, seed: u64) -> Result<Vec<Dataset>> {
    let n = pairs.len();
    for p in &pairs {
        if p.label.is_none() {
            return Err(Error::InvalidParameter {
                name: "pairs".into(),
                reason: format!("pair {} has no ground-truth label", p.name),
            });
        }
    }
    let target = n / 2;
    let xtoy: Vec<usize> = (0..n)
        .filter(|&i| pairs[i].label == Some(Direction::XtoY))
        .collect();
    let ytox: Vec<usize> = (0..n)
        .filter(|&i| pairs[i].label == Some(Direction::YtoX))
        .collect();
    let (candidates, excess) = if xtoy.len() > target {
        (xtoy.clone(), xtoy.len() - target)
    } else {
        let t_ytox = n - target;
        if ytox.len() > t_ytox {
            (ytox.clone(), ytox.len() - t_ytox)
        } else {
            (Vec::new(), 0)
        }
    };
    // Choose `excess` indices by a seeded partial Fisher-Yates shuffle.
    let mut rng = seeds::rng_from(seeds::derive(seed, "balance", n as u64));
    let mut pool = candidates;
    let mut chosen = Vec::with_capacity(excess);
    for _ in 0..excess {
        let k = rng.random_range(0..pool.len());
        chosen.push(pool.swap_remove(k));
    }
    let mut out = pairs;
    for i in chosen {
        out[i] = out[i].mirrored();
    }
    Ok(out)
}
