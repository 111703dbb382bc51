//! Fixed-effect partitions: encoding, nesting, degrees of freedom and
//! within-transformation by alternating projections.

use std::collections::BTreeMap;

use crate::stats::KahanSum;

/// Sweeps stop once every subtracted cell mean is below this, relative to
/// the column's magnitude.
pub const DEMEAN_TOL: f64 = 1e-13;
pub const DEMEAN_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FeSet {
    pub name: String,
    /// Level of each row, dense in `0..levels`, numbered in sorted key order.
    pub codes: Vec<u32>,
    pub levels: usize,
    counts: Vec<f64>,
}

impl FeSet {
    pub fn from_keys<'a>(name: &str, keys: impl IntoIterator<Item = &'a str>) -> Self {
        let keys: Vec<&str> = keys.into_iter().collect();
        let mut index: BTreeMap<&str, u32> = keys.iter().map(|k| (*k, 0)).collect();
        for (i, v) in index.values_mut().enumerate() {
            *v = i as u32;
        }
        let codes: Vec<u32> = keys.iter().map(|k| index[k]).collect();
        let levels = index.len();
        let mut counts = vec![0.0; levels];
        for &c in &codes {
            counts[c as usize] += 1.0;
        }
        Self {
            name: name.to_string(),
            codes,
            levels,
            counts,
        }
    }

    /// True when every level of `fine` sits inside one level of `self`.
    pub fn is_coarser_than(&self, fine: &FeSet) -> bool {
        let mut parent = vec![u32::MAX; fine.levels];
        for (&f, &c) in fine.codes.iter().zip(&self.codes) {
            let p = &mut parent[f as usize];
            if *p == u32::MAX {
                *p = c;
            } else if *p != c {
                return false;
            }
        }
        true
    }
}

/// Removes sets spanned by another set (e.g. state under county). Returns
/// the kept sets in input order and the names of the removed ones.
pub fn prune_nested(sets: Vec<FeSet>) -> (Vec<FeSet>, Vec<String>) {
    let n = sets.len();
    let mut drop = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || drop[j] {
                continue;
            }
            // Identical partitions: keep the earlier one.
            let same = sets[i].levels == sets[j].levels;
            if sets[i].is_coarser_than(&sets[j]) && (!same || j < i) {
                drop[i] = true;
                break;
            }
        }
    }
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for (s, d) in sets.into_iter().zip(drop) {
        if d {
            removed.push(s.name);
        } else {
            kept.push(s);
        }
    }
    (kept, removed)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of the bipartite level graph of two sets.
pub fn components(a: &FeSet, b: &FeSet) -> usize {
    let mut parent: Vec<usize> = (0..a.levels + b.levels).collect();
    for (&x, &y) in a.codes.iter().zip(&b.codes) {
        let rx = find(&mut parent, x as usize);
        let ry = find(&mut parent, a.levels + y as usize);
        if rx != ry {
            parent[rx] = ry;
        }
    }
    (0..parent.len())
        .filter(|&i| find(&mut parent, i) == i)
        .count()
}

/// Parameters absorbed by the sets: exact for one or two sets, one
/// redundancy per additional set beyond that.
pub fn fe_dof(sets: &[FeSet]) -> usize {
    match sets {
        [] => 0,
        [a] => a.levels,
        [a, b] => a.levels + b.levels - components(a, b),
        _ => sets.iter().map(|s| s.levels).sum::<usize>() - (sets.len() - 1),
    }
}

/// In-place within-transformation of `x` over all `sets`. Returns the
/// number of sweeps.
pub fn demean(x: &mut [f64], sets: &[FeSet]) -> usize {
    if sets.is_empty() {
        return 0;
    }
    let magnitude = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = DEMEAN_TOL * (1.0 + magnitude);
    let mut sums: Vec<KahanSum> = Vec::new();
    let mut means: Vec<f64> = Vec::new();
    for sweep in 1..=DEMEAN_MAX_ITER {
        let mut largest = 0.0f64;
        for s in sets {
            sums.clear();
            sums.resize(s.levels, KahanSum::new());
            for (&c, &v) in s.codes.iter().zip(x.iter()) {
                sums[c as usize].add(v);
            }
            means.clear();
            means.extend(sums.iter().zip(&s.counts).map(|(k, n)| k.value() / n));
            for m in &means {
                largest = largest.max(m.abs());
            }
            for (v, &c) in x.iter_mut().zip(&s.codes) {
                *v -= means[c as usize];
            }
        }
        if largest < tol || sets.len() == 1 {
            return sweep;
        }
    }
    DEMEAN_MAX_ITER
}
