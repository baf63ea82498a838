use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::PairExample;
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// One simulated edge client's local data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientShard {
    pub client_id: usize,
    /// Owned image indices, ascending.
    pub indices: Vec<usize>,
    /// Classes the client is allowed to hold (non-IID) or actually holds (IID).
    pub classes: BTreeSet<u8>,
    pub pairs: Vec<PairExample>,
}

impl ClientShard {
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }
}

/// Random near-equal split of `indices` into `clients` disjoint sets.
///
/// Sizes differ by at most one; the first `n mod C` sets get the extra item.
pub fn partition_iid(indices: &[usize], clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if clients == 0 {
        return Err(Error::invalid("client count must be positive"));
    }
    if indices.len() < clients {
        return Err(Error::invalid(format!(
            "{} images cannot be spread over {clients} clients",
            indices.len()
        )));
    }
    let mut perm = indices.to_vec();
    perm.shuffle(&mut rng_from(seed));
    let (base, extra) = (perm.len() / clients, perm.len() % clients);
    let mut out = Vec::with_capacity(clients);
    let mut start = 0;
    for c in 0..clients {
        let size = base + usize::from(c < extra);
        let mut shard = perm[start..start + size].to_vec();
        shard.sort_unstable();
        out.push(shard);
        start += size;
    }
    Ok(out)
}

/// Disjoint class groups: classes `0..L` are cut into `C` contiguous groups
/// of `⌊L/C⌋`, the remainder going to the last client. Each client owns every
/// image in `indices` whose class lies in its group.
pub fn partition_noniid(
    labels: &[u8],
    indices: &[usize],
    num_classes: usize,
    clients: usize,
) -> Result<Vec<(Vec<usize>, BTreeSet<u8>)>> {
    if clients == 0 {
        return Err(Error::invalid("client count must be positive"));
    }
    if num_classes < 2 * clients {
        return Err(Error::invalid(format!(
            "non-IID split needs at least two classes per client ({num_classes} classes, {clients} clients)"
        )));
    }
    let group = num_classes / clients;
    let owner = |class: usize| (class / group).min(clients - 1);
    let mut out: Vec<(Vec<usize>, BTreeSet<u8>)> = (0..clients)
        .map(|c| {
            let hi = if c == clients - 1 { num_classes } else { (c + 1) * group };
            (Vec::new(), (c * group..hi).map(|l| l as u8).collect())
        })
        .collect();
    for &i in indices {
        let l = *labels
            .get(i)
            .ok_or_else(|| Error::invalid(format!("image index {i} out of range")))?;
        out[owner(usize::from(l))].0.push(i);
    }
    for (shard, _) in &mut out {
        shard.sort_unstable();
    }
    Ok(out)
}

/// Image-level train/test split: `⌊ratio·n⌋` train indices, the rest test.
/// Both sides are returned ascending.
pub fn split_train_test(
    indices: &[usize],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("train ratio {ratio} outside [0, 1]")));
    }
    let n_train = (ratio * indices.len() as f64).floor() as usize;
    if n_train == 0 || n_train == indices.len() {
        return Err(Error::invalid(format!(
            "split of {} images at ratio {ratio} leaves one side empty",
            indices.len()
        )));
    }
    let mut perm = indices.to_vec();
    perm.shuffle(&mut rng_from(seed));
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
