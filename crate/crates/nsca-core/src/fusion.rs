//! Set-algebraic correction and combination of epoch sets: union,
//! intersection, pruning with dilation, and weighted voting.

use crate::error::{NscaError, Result};
use crate::signal::EpochSet;

/// An epoch set tagged with its origin (channel or index name) and a voting
/// weight.
#[derive(Debug, Clone)]
pub struct LabeledEpochs {
    pub source: String,
    pub epochs: EpochSet,
    pub weight: f64,
}

impl LabeledEpochs {
    pub fn new(source: impl Into<String>, epochs: EpochSet, weight: f64) -> Result<Self> {
        if !(weight >= 0.0) {
            return Err(NscaError::InvalidParameter(format!(
                "vote weight must be nonnegative, got {weight}"
            )));
        }
        Ok(Self { source: source.into(), epochs, weight })
    }
}

fn check_horizons(sets: &[&EpochSet]) -> Result<usize> {
    let h = sets
        .first()
        .map(|s| s.horizon())
        .ok_or_else(|| NscaError::InvalidParameter("no epoch sets given".into()))?;
    for s in sets {
        if s.horizon() != h {
            return Err(NscaError::HorizonMismatch(h, s.horizon()));
        }
    }
    Ok(h)
}

pub fn union(sets: &[EpochSet]) -> Result<EpochSet> {
    let refs: Vec<&EpochSet> = sets.iter().collect();
    let h = check_horizons(&refs)?;
    let mut mask = vec![false; h];
    for s in sets {
        for &(a, b) in s.runs() {
            for m in &mut mask[a..b] {
                *m = true;
            }
        }
    }
    Ok(EpochSet::from_mask(&mask))
}

pub fn intersection(sets: &[EpochSet]) -> Result<EpochSet> {
    let refs: Vec<&EpochSet> = sets.iter().collect();
    let h = check_horizons(&refs)?;
    let mut count = vec![0usize; h];
    for s in sets {
        for &(a, b) in s.runs() {
            for c in &mut count[a..b] {
                *c += 1;
            }
        }
    }
    let n = sets.len();
    let mask: Vec<bool> = count.iter().map(|&c| c == n).collect();
    Ok(EpochSet::from_mask(&mask))
}

/// Dilate every index `t` into `[t - pad_before, t + pad_after]`, clipped to
/// the horizon.
pub fn dilate(set: &EpochSet, pad_before: usize, pad_after: usize) -> EpochSet {
    let h = set.horizon();
    let runs: Vec<(usize, usize)> = set
        .runs()
        .iter()
        .map(|&(a, b)| (a.saturating_sub(pad_before), (b + pad_after).min(h)))
        .collect();
    EpochSet::from_runs(runs, h).expect("dilated runs stay within horizon")
}

/// Remove the `pad`-dilated `removed` set from `base`.
pub fn exclude(base: &EpochSet, removed: &EpochSet, pad: usize) -> Result<EpochSet> {
    if base.horizon() != removed.horizon() {
        return Err(NscaError::HorizonMismatch(base.horizon(), removed.horizon()));
    }
    let grown = dilate(removed, pad, pad);
    let mut mask = base.to_mask();
    for &(a, b) in grown.runs() {
        for m in &mut mask[a..b] {
            *m = false;
        }
    }
    Ok(EpochSet::from_mask(&mask))
}

/// Weighted consensus: a sample is kept when the weights of the sets
/// containing it reach `quorum` times the total weight. Exact equality at the
/// quorum is inclusive.
pub fn vote(sets: &[LabeledEpochs], quorum: f64) -> Result<EpochSet> {
    if !(quorum > 0.0 && quorum <= 1.0) {
        return Err(NscaError::InvalidParameter(format!(
            "quorum must be in (0, 1], got {quorum}"
        )));
    }
    let refs: Vec<&EpochSet> = sets.iter().map(|l| &l.epochs).collect();
    let h = check_horizons(&refs)?;
    let total: f64 = sets.iter().map(|l| l.weight).sum();
    if total <= 0.0 {
        return Err(NscaError::ZeroTotalWeight);
    }
    let mut acc = vec![0.0f64; h];
    for l in sets {
        for &(a, b) in l.epochs.runs() {
            for v in &mut acc[a..b] {
                *v += l.weight;
            }
        }
    }
    let bar = quorum * total;
    // small tolerance so quorum 1.0 survives floating-point weight sums
    let mask: Vec<bool> = acc.iter().map(|&v| v >= bar - 1e-9 * total).collect();
    Ok(EpochSet::from_mask(&mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(indices: &[usize], h: usize) -> EpochSet {
        EpochSet::from_indices(indices.iter().copied(), h).unwrap()
    }

    #[test]
    fn union_basic() {
        let a = set(&[1, 2], 10);
        let b = set(&[2, 3], 10);
        assert_eq!(union(&[a.clone(), b]).unwrap(), set(&[1, 2, 3], 10));
        assert_eq!(union(&[a.clone(), EpochSet::empty(10)]).unwrap(), a);
    }

    #[test]
    fn intersection_basic() {
        let a = set(&[1, 2], 10);
        let b = set(&[2, 3], 10);
        assert_eq!(intersection(&[a.clone(), b]).unwrap(), set(&[2], 10));
        assert_eq!(intersection(&[a.clone(), a.clone()]).unwrap(), a);
    }

    #[test]
    fn horizon_mismatch_rejected() {
        let a = set(&[1], 10);
        let b = set(&[1], 11);
        assert!(matches!(union(&[a, b]), Err(NscaError::HorizonMismatch(_, _))));
    }

    #[test]
    fn exclude_interval_subtraction() {
        let base = set(&(10..=20).collect::<Vec<_>>(), 30);
        let removed = set(&[15], 30);
        let got = exclude(&base, &removed, 2).unwrap();
        assert_eq!(got, set(&[10, 11, 12, 18, 19, 20], 30));
        assert_eq!(exclude(&base, &EpochSet::empty(30), 5).unwrap(), base);
    }

    #[test]
    fn exclude_matches_morphological_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let h = 500;
        let base = EpochSet::from_mask(&(0..h).map(|_| r.gen_bool(0.3)).collect::<Vec<_>>());
        let removed = EpochSet::from_mask(&(0..h).map(|_| r.gen_bool(0.1)).collect::<Vec<_>>());
        let pad = 3usize;
        let got = exclude(&base, &removed, pad).unwrap();
        // brute-force dilation-and-subtract
        let rm = removed.to_mask();
        let bm = base.to_mask();
        let mut expect = vec![false; h];
        for t in 0..h {
            let mut hit = false;
            for d in t.saturating_sub(pad)..=(t + pad).min(h - 1) {
                if rm[d] {
                    hit = true;
                }
            }
            expect[t] = bm[t] && !hit;
        }
        assert_eq!(got, EpochSet::from_mask(&expect));
    }

    #[test]
    fn dilate_basic() {
        let a = set(&[5], 10);
        assert_eq!(dilate(&a, 2, 2), set(&[3, 4, 5, 6, 7], 10));
        assert_eq!(dilate(&a, 0, 0), a);
    }

    #[test]
    fn dilate_monotone() {
        let a = set(&[3, 9], 20);
        let b = set(&[3, 4, 9, 15], 20);
        let da = dilate(&a, 2, 1);
        let db = dilate(&b, 2, 1);
        for t in da.iter() {
            assert!(db.contains(t));
        }
    }

    #[test]
    fn vote_majority_and_limits() {
        let h = 10;
        let sets = vec![
            LabeledEpochs::new("a", set(&[1, 2], h), 1.0).unwrap(),
            LabeledEpochs::new("b", set(&[2, 3], h), 1.0).unwrap(),
            LabeledEpochs::new("c", set(&[2, 4], h), 1.0).unwrap(),
        ];
        // t=2 in all three, t in {1,3,4} in one each
        assert_eq!(vote(&sets, 0.5).unwrap(), set(&[2], h));
        // quorum 1.0 equals intersection
        let inter = intersection(&[set(&[1, 2], h), set(&[2, 3], h), set(&[2, 4], h)]).unwrap();
        assert_eq!(vote(&sets, 1.0).unwrap(), inter);
        // 2-of-3 majority includes ties at exact quorum
        let sets2 = vec![
            LabeledEpochs::new("a", set(&[1, 2], h), 1.0).unwrap(),
            LabeledEpochs::new("b", set(&[2, 3], h), 1.0).unwrap(),
            LabeledEpochs::new("c", set(&[5], h), 1.0).unwrap(),
        ];
        assert_eq!(vote(&sets2, 0.5).unwrap(), set(&[2], h));
        let sets3 = vec![
            LabeledEpochs::new("a", set(&[1, 2], h), 1.0).unwrap(),
            LabeledEpochs::new("b", set(&[2, 3], h), 1.0).unwrap(),
        ];
        assert_eq!(vote(&sets3, 0.5).unwrap(), set(&[1, 2, 3], h));
    }

    #[test]
    fn vote_weighted_matches_counting_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h = 200;
        let sets: Vec<LabeledEpochs> = (0..5)
            .map(|i| {
                let mask: Vec<bool> = (0..h).map(|_| r.gen_bool(0.4)).collect();
                LabeledEpochs::new(format!("s{i}"), EpochSet::from_mask(&mask), r.gen::<f64>())
                    .unwrap()
            })
            .collect();
        let quorum = 0.6;
        let got = vote(&sets, quorum).unwrap();
        let total: f64 = sets.iter().map(|l| l.weight).sum();
        let mut expect = vec![false; h];
        for (t, e) in expect.iter_mut().enumerate() {
            let w: f64 = sets
                .iter()
                .filter(|l| l.epochs.contains(t))
                .map(|l| l.weight)
                .sum();
            *e = w >= quorum * total - 1e-9 * total;
        }
        assert_eq!(got, EpochSet::from_mask(&expect));
    }

    #[test]
    fn zero_total_weight_rejected() {
        let sets = vec![LabeledEpochs::new("a", set(&[1], 5), 0.0).unwrap()];
        assert!(matches!(vote(&sets, 0.5), Err(NscaError::ZeroTotalWeight)));
    }
}
