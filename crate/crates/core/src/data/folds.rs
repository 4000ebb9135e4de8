use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SubjectRecord;
use crate::error::{Error, Result};
use crate::util::substream;

/// One subject-wise split. Subject ids are sorted within each set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl FoldSplit {
    pub fn train_val(&self) -> Vec<String> {
        let mut v: Vec<String> = self.train.iter().chain(&self.val).cloned().collect();
        v.sort();
        v
    }
}

/// How many subjects go to the test and validation sets of each fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FoldSizes {
    /// Test sets partition all subjects (sizes differ by at most one); the
    /// validation set takes `round((n - n_test) / k)` of the rest.
    Partition,
    /// Fixed per-fold sizes. Test sets stay disjoint across folds but cover
    /// only `k * test` subjects; the remainder is always in training.
    Fixed { val: usize, test: usize },
}

/// Subject-wise k-fold split with institution-stratified assignment.
pub fn make_folds(subjects: &[SubjectRecord], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    make_folds_with_sizes(subjects, k, seed, FoldSizes::Partition)
}

pub fn make_folds_with_sizes(
    subjects: &[SubjectRecord],
    k: usize,
    seed: u64,
    sizes: FoldSizes,
) -> Result<Vec<FoldSplit>> {
    let n = subjects.len();
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!("{n} subjects cannot fill {k} folds")));
    }
    let test_sizes: Vec<usize> = match sizes {
        FoldSizes::Partition => (0..k).map(|f| n / k + usize::from(f < n % k)).collect(),
        FoldSizes::Fixed { val, test } => {
            if test == 0 || k * test > n || test + val >= n {
                return Err(Error::Config(format!(
                    "fold sizes val={val} test={test} do not fit {n} subjects in {k} folds"
                )));
            }
            vec![test; k]
        }
    };

    // Institution strata, each in a seeded random order.
    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in subjects {
        strata.entry(&s.institution).or_default().push(&s.subject_id);
    }
    let mut rng = substream(seed, 0);
    let mut strata: Vec<Vec<&str>> = strata
        .into_values()
        .map(|mut ids| {
            ids.sort_unstable();
            ids.shuffle(&mut rng);
            ids
        })
        .collect();
    let totals: Vec<usize> = strata.iter().map(Vec::len).collect();

    // Test quotas per (fold, institution), rounded so that every entry is
    // within one of its proportional share while rows and columns add up.
    let mut rows = test_sizes.clone();
    let tested: usize = test_sizes.iter().sum();
    rows.push(n - tested);
    let test_quota = controlled_round(&rows, &totals);
    let mut groups: Vec<Vec<&str>> = Vec::with_capacity(k);
    for quota in &test_quota[..k] {
        let mut group = Vec::new();
        for (stratum, &q) in strata.iter_mut().zip(quota) {
            group.extend(stratum.drain(..q));
        }
        groups.push(group);
    }
    let never_tested: Vec<&str> = strata.into_iter().flatten().collect();

    let institution: BTreeMap<&str, usize> = {
        let names: Vec<&str> = {
            let mut v: Vec<&str> = subjects.iter().map(|s| s.institution.as_str()).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        subjects
            .iter()
            .map(|s| {
                let idx = names.binary_search(&s.institution.as_str()).unwrap();
                (s.subject_id.as_str(), idx)
            })
            .collect()
    };

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let test = &groups[f];
        let val_size = match sizes {
            FoldSizes::Partition => ((n - test.len()) as f64 / k as f64).round() as usize,
            FoldSizes::Fixed { val, .. } => val,
        };
        // Candidates in a fold-specific order: the following folds' test
        // groups, then subjects that are never tested.
        let mut candidates: Vec<Vec<&str>> = vec![Vec::new(); totals.len()];
        for step in 1..k {
            for &id in &groups[(f + step) % k] {
                candidates[institution[id]].push(id);
            }
        }
        for &id in &never_tested {
            candidates[institution[id]].push(id);
        }
        let quota = val_quota(val_size, &totals, &test_quota[f], n);
        let mut val: Vec<String> = Vec::with_capacity(val_size);
        for (cands, q) in candidates.iter().zip(quota) {
            val.extend(cands[..q].iter().map(|s| s.to_string()));
        }
        let mut test: Vec<String> = test.iter().map(|s| s.to_string()).collect();
        let mut train: Vec<String> = subjects
            .iter()
            .map(|s| s.subject_id.clone())
            .filter(|id| !test.contains(id) && !val.contains(id))
            .collect();
        test.sort();
        val.sort();
        train.sort();
        folds.push(FoldSplit {
            fold_id: f,
            train,
            val,
            test,
        });
    }
    Ok(folds)
}

/// Rounds the proportional table `rows[r] * cols[c] / n` to integers with
/// every entry at its floor or ceiling and all row and column sums kept.
/// Such a rounding always exists; it is found as a max flow over the
/// fractional cells.
fn controlled_round(rows: &[usize], cols: &[usize]) -> Vec<Vec<usize>> {
    let n: usize = rows.iter().sum();
    debug_assert_eq!(n, cols.iter().sum::<usize>());
    let (nr, nc) = (rows.len(), cols.len());
    let mut out = vec![vec![0usize; nc]; nr];
    let mut frac = vec![vec![false; nc]; nr];
    for r in 0..nr {
        for c in 0..nc {
            let num = rows[r] * cols[c];
            out[r][c] = num / n.max(1);
            frac[r][c] = n > 0 && num % n != 0;
        }
    }
    let mut row_need: Vec<usize> = (0..nr).map(|r| rows[r] - out[r].iter().sum::<usize>()).collect();
    let mut col_need: Vec<usize> = (0..nc)
        .map(|c| cols[c] - out.iter().map(|row| row[c]).sum::<usize>())
        .collect();
    // Augmenting paths alternate row -> column over unused fractional cells
    // and column -> row over cells already rounded up.
    let mut up = vec![vec![false; nc]; nr];
    loop {
        let Some(src) = (0..nr).find(|&r| row_need[r] > 0) else { break };
        let mut prev_row: Vec<Option<usize>> = vec![None; nc];
        let mut prev_col: Vec<Option<usize>> = vec![None; nr];
        let mut seen_row = vec![false; nr];
        seen_row[src] = true;
        let mut queue = std::collections::VecDeque::from([src]);
        let mut sink = None;
        'bfs: while let Some(r) = queue.pop_front() {
            for c in 0..nc {
                if frac[r][c] && !up[r][c] && prev_row[c].is_none() {
                    prev_row[c] = Some(r);
                    if col_need[c] > 0 {
                        sink = Some(c);
                        break 'bfs;
                    }
                    for r2 in 0..nr {
                        if up[r2][c] && !seen_row[r2] {
                            seen_row[r2] = true;
                            prev_col[r2] = Some(c);
                            queue.push_back(r2);
                        }
                    }
                }
            }
        }
        let end = sink.expect("controlled rounding always exists");
        let mut c = end;
        loop {
            let r = prev_row[c].unwrap();
            up[r][c] = true;
            match prev_col[r] {
                Some(c2) => {
                    up[r][c2] = false;
                    c = c2;
                }
                None => break,
            }
        }
        row_need[src] -= 1;
        col_need[end] -= 1;
    }
    for r in 0..nr {
        for c in 0..nc {
            out[r][c] += usize::from(up[r][c]);
        }
    }
    out
}

/// Validation quotas per institution. Each quota, and the training count
/// left over after test and validation, stays within one of its share.
fn val_quota(val_size: usize, totals: &[usize], test: &[usize], n: usize) -> Vec<usize> {
    let t_size: usize = test.iter().sum();
    let mut lo = Vec::with_capacity(totals.len());
    let mut hi = Vec::with_capacity(totals.len());
    let mut share = Vec::with_capacity(totals.len());
    for (&total, &t) in totals.iter().zip(test) {
        let p = total as f64 / n as f64;
        let d = p * t_size as f64 - t as f64;
        let v = p * val_size as f64;
        let room = total - t;
        lo.push(((v - 1.0 + d.max(0.0) - 1e-9).ceil().max(0.0) as usize).min(room));
        hi.push(((v + 1.0 + d.min(0.0) + 1e-9).floor().max(0.0) as usize).min(room));
        share.push(v);
    }
    let lo_sum: usize = lo.iter().sum();
    let hi_sum: usize = hi.iter().sum();
    if lo_sum > val_size || hi_sum < val_size || lo.iter().zip(&hi).any(|(l, h)| l > h) {
        let caps: Vec<usize> = totals.iter().zip(test).map(|(&a, &b)| a - b).collect();
        let weights: Vec<f64> = totals.iter().map(|&t| t as f64).collect();
        return apportion(val_size, &weights, &caps);
    }
    let mut out = lo;
    let mut assigned = lo_sum;
    while assigned < val_size {
        let best = (0..out.len())
            .filter(|&i| out[i] < hi[i])
            .max_by(|&a, &b| {
                (share[a] - out[a] as f64)
                    .total_cmp(&(share[b] - out[b] as f64))
                    .then(b.cmp(&a))
            })
            .expect("bounds checked above");
        out[best] += 1;
        assigned += 1;
    }
    out
}

/// Largest-remainder apportionment of `total` units proportionally to
/// `weights`, never exceeding `caps`. Requires `total <= sum(caps)`.
fn apportion(total: usize, weights: &[f64], caps: &[usize]) -> Vec<usize> {
    let cap_sum: usize = caps.iter().sum();
    assert!(total <= cap_sum, "apportion: {total} units exceed capacity {cap_sum}");
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights
        .iter()
        .map(|w| if wsum > 0.0 { total as f64 * w / wsum } else { 0.0 })
        .collect();
    let mut out: Vec<usize> = exact
        .iter()
        .zip(caps)
        .map(|(&e, &c)| (e.floor() as usize).min(c))
        .collect();
    let mut assigned: usize = out.iter().sum();
    while assigned < total {
        let best = (0..out.len())
            .filter(|&i| out[i] < caps[i])
            .max_by(|&a, &b| {
                (exact[a] - out[a] as f64)
                    .total_cmp(&(exact[b] - out[b] as f64))
                    .then(b.cmp(&a))
            })
            .expect("capacity checked above");
        out[best] += 1;
        assigned += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Outcome;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn subjects(n: usize, institutions: usize) -> Vec<SubjectRecord> {
        (0..n)
            .map(|i| SubjectRecord {
                subject_id: format!("s{i:03}"),
                institution: format!("inst{}", (i * 7 + i / 3) % institutions),
                outcome: Outcome::Unknown,
                resected_channels: None,
            })
            .collect()
    }

    fn check_fold_invariants(subs: &[SubjectRecord], folds: &[FoldSplit], partition: bool) {
        let all: BTreeSet<&str> = subs.iter().map(|s| s.subject_id.as_str()).collect();
        let mut tested = BTreeSet::new();
        for f in folds {
            let tr: BTreeSet<&str> = f.train.iter().map(String::as_str).collect();
            let va: BTreeSet<&str> = f.val.iter().map(String::as_str).collect();
            let te: BTreeSet<&str> = f.test.iter().map(String::as_str).collect();
            assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
            let union: BTreeSet<&str> = tr.union(&va).chain(te.iter()).copied().collect();
            assert_eq!(union, all);
            for id in &te {
                assert!(tested.insert(*id), "subject {id} tested twice");
            }
            // Institution balance within one subject of the global share.
            for inst in subs.iter().map(|s| &s.institution).collect::<BTreeSet<_>>() {
                let global = subs.iter().filter(|s| &s.institution == inst).count() as f64
                    / subs.len() as f64;
                for set in [&f.train, &f.val, &f.test] {
                    let count = set
                        .iter()
                        .filter(|id| subs.iter().any(|s| &s.subject_id == *id && &s.institution == inst))
                        .count() as f64;
                    let expected = global * set.len() as f64;
                    assert!(
                        (count - expected).abs() <= 1.0 + 1e-9,
                        "fold {} institution {inst}: {count} vs {expected}",
                        f.fold_id
                    );
                }
            }
        }
        if partition {
            assert_eq!(tested, all);
        }
    }

    #[test]
    fn fixed_sizes_for_185_subjects() {
        let subs = subjects(185, 2);
        let folds =
            make_folds_with_sizes(&subs, 5, 3, FoldSizes::Fixed { val: 30, test: 36 }).unwrap();
        for f in &folds {
            assert_eq!((f.train.len(), f.val.len(), f.test.len()), (119, 30, 36));
        }
        check_fold_invariants(&subs, &folds, false);
    }

    #[test]
    fn partition_of_185() {
        let subs = subjects(185, 2);
        let folds = make_folds(&subs, 5, 3).unwrap();
        for f in &folds {
            assert_eq!((f.train.len(), f.val.len(), f.test.len()), (118, 30, 37));
        }
        check_fold_invariants(&subs, &folds, true);
    }

    #[test]
    fn five_subjects_five_folds() {
        let subs = subjects(5, 1);
        let folds = make_folds(&subs, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 1));
        check_fold_invariants(&subs, &folds, true);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let subs = subjects(40, 3);
        assert_eq!(make_folds(&subs, 5, 9).unwrap(), make_folds(&subs, 5, 9).unwrap());
        assert_ne!(make_folds(&subs, 5, 9).unwrap(), make_folds(&subs, 5, 10).unwrap());
    }

    #[test]
    fn too_few_subjects() {
        assert!(make_folds(&subjects(4, 1), 5, 0).is_err());
        assert!(make_folds(&subjects(4, 1), 1, 0).is_err());
    }

    #[test]
    fn apportion_respects_caps() {
        assert_eq!(apportion(5, &[1.0, 1.0], &[1, 10]), vec![1, 4]);
        assert_eq!(apportion(3, &[2.0, 1.0], &[5, 5]), vec![2, 1]);
    }

    #[test]
    fn controlled_round_keeps_margins() {
        let rows = [37, 37, 37, 37, 37];
        let cols = [101, 84];
        let m = controlled_round(&rows, &cols);
        for (r, row) in m.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), rows[r]);
            for (c, &v) in row.iter().enumerate() {
                let exact = (rows[r] * cols[c]) as f64 / 185.0;
                assert!((v as f64 - exact).abs() < 1.0);
            }
        }
        for c in 0..2 {
            assert_eq!(m.iter().map(|row| row[c]).sum::<usize>(), cols[c]);
        }
    }

    proptest! {
        #[test]
        fn partition_invariants(n in 5usize..120, k in 2usize..6, inst in 1usize..4, seed in 0u64..1000) {
            prop_assume!(n >= k);
            let subs = subjects(n, inst);
            let folds = make_folds(&subs, k, seed).unwrap();
            check_fold_invariants(&subs, &folds, true);
        }
    }
}
