//! Region-weighted kernel seeding (body : hand : face ≈ 8 : 1 : 1).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Body = 0,
    Hand = 1,
    Face = 2,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Body, Region::Hand, Region::Face];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }
}

/// Sampling weight per region, indexed by `Region as usize`.
pub const REGION_RATIO: [usize; 3] = [8, 1, 1];

/// Per-region counts: proportional to [`REGION_RATIO`] over the regions that
/// are present, largest-remainder rounding, and a region smaller than its
/// quota is taken whole with the rest redistributed over the others.
pub fn region_quotas(available: [usize; 3], total: usize) -> [usize; 3] {
    let mut quota = [0usize; 3];
    let mut open: Vec<usize> = (0..3).filter(|&r| available[r] > 0).collect();
    let mut remaining = total.min(available.iter().sum());
    while remaining > 0 && !open.is_empty() {
        let wsum: usize = open.iter().map(|&r| REGION_RATIO[r]).sum();
        let mut share: Vec<(usize, usize, usize)> = open
            .iter()
            .map(|&r| {
                let num = remaining * REGION_RATIO[r];
                (r, num / wsum, num % wsum)
            })
            .collect();
        let mut left = remaining - share.iter().map(|s| s.1).sum::<usize>();
        let mut order: Vec<usize> = (0..share.len()).collect();
        order.sort_by(|&a, &b| share[b].2.cmp(&share[a].2).then(share[a].0.cmp(&share[b].0)));
        for &k in &order {
            if left == 0 {
                break;
            }
            share[k].1 += 1;
            left -= 1;
        }
        let over: Vec<usize> = share
            .iter()
            .filter(|(r, n, _)| *n >= available[*r] - quota[*r])
            .map(|s| s.0)
            .collect();
        if over.is_empty() {
            for (r, n, _) in share {
                quota[r] += n;
            }
            break;
        }
        for r in over {
            let take = available[r] - quota[r];
            quota[r] += take;
            remaining -= take;
            open.retain(|&o| o != r);
        }
    }
    quota
}

/// Indices of the chosen points, ascending within each region, regions in
/// body/hand/face order. Uniform without replacement inside a region.
pub fn importance_sample_kernels(labels: &[Region], total: usize, seed: u64) -> Result<Vec<usize>> {
    if labels.is_empty() {
        return Err(Error::Empty("labelled points"));
    }
    let mut by_region: [Vec<usize>; 3] = Default::default();
    for (i, r) in labels.iter().enumerate() {
        by_region[*r as usize].push(i);
    }
    let quotas = region_quotas(by_region.each_ref().map(Vec::len), total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(quotas.iter().sum());
    for (pool, &q) in by_region.iter().zip(&quotas) {
        let mut picked: Vec<usize> = sample(&mut rng, pool.len(), q).into_iter().map(|k| pool[k]).collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok(out)
}
