use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Two image indices and whether they share a class (1) or not (0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PairExample {
    pub idx1: usize,
    pub idx2: usize,
    pub label: u8,
}

/// Sample a balanced pair set from the images in `indices`.
///
/// Emits `⌈n/2⌉` positives (two distinct images of one class) and `⌊n/2⌋`
/// negatives (one image from each of two distinct classes), then shuffles.
/// Images may recur across pairs but never within one.
pub fn build_pairs(
    labels: &[u8],
    indices: &[usize],
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<PairExample>> {
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        let l = *labels
            .get(i)
            .ok_or_else(|| Error::invalid(format!("image index {i} out of range")))?;
        by_class.entry(l).or_default().push(i);
    }
    let classes: Vec<&Vec<usize>> = by_class.values().collect();
    let positive_pool: Vec<&Vec<usize>> =
        classes.iter().copied().filter(|c| c.len() >= 2).collect();

    let n_pos = n_pairs.div_ceil(2);
    let n_neg = n_pairs / 2;
    if n_neg > 0 && classes.len() < 2 {
        return Err(Error::invalid(format!(
            "negative pairs need at least two classes, index set has {}",
            classes.len()
        )));
    }
    if n_pos > 0 && positive_pool.is_empty() {
        return Err(Error::invalid(
            "positive pairs need a class with at least two images",
        ));
    }

    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(n_pairs);
    for _ in 0..n_pos {
        let members = positive_pool[rng.random_range(0..positive_pool.len())];
        let a = rng.random_range(0..members.len());
        let mut b = rng.random_range(0..members.len() - 1);
        if b >= a {
            b += 1;
        }
        out.push(PairExample {
            idx1: members[a],
            idx2: members[b],
            label: 1,
        });
    }
    for _ in 0..n_neg {
        let c1 = rng.random_range(0..classes.len());
        let mut c2 = rng.random_range(0..classes.len() - 1);
        if c2 >= c1 {
            c2 += 1;
        }
        let (m1, m2) = (classes[c1], classes[c2]);
        out.push(PairExample {
            idx1: m1[rng.random_range(0..m1.len())],
            idx2: m2[rng.random_range(0..m2.len())],
            label: 0,
        });
    }
    out.shuffle(&mut rng);
    Ok(out)
}
