use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ReasoningPath;
use crate::model::OptionSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteKind {
    /// Each option is chosen on its own by strict majority of counted paths.
    #[default]
    PerOptionMajority,
    /// The most frequent exact answer set wins.
    PathPlurality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    PreferExclude,
    PreferInclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct VotePolicy {
    pub kind: VoteKind,
    pub tie_break: TieBreak,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub chosen: OptionSet,
    /// Votes per option over the counted paths; every option in `[0, m)` has an entry.
    pub tally: BTreeMap<usize, u32>,
    /// Number of paths that entered the vote.
    pub counted: usize,
    /// True when the policy produced an empty set and the max-tally option was
    /// substituted.
    pub rescued: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VoteError {
    #[error("cannot vote over zero paths")]
    NoPaths,
}

/// Aggregates answer sets of `paths` over options `[0, m)`.
///
/// Degenerate paths are left out unless every path is degenerate.
pub fn vote(
    paths: &[ReasoningPath],
    m: usize,
    policy: VotePolicy,
) -> Result<VoteOutcome, VoteError> {
    if paths.is_empty() {
        return Err(VoteError::NoPaths);
    }
    let healthy: Vec<&ReasoningPath> = paths.iter().filter(|p| !p.degenerate).collect();
    let counted: Vec<&OptionSet> = if healthy.is_empty() {
        paths.iter().map(|p| &p.a3).collect()
    } else {
        healthy.iter().map(|p| &p.a3).collect()
    };

    let mut tally: BTreeMap<usize, u32> = (0..m).map(|i| (i, 0)).collect();
    for set in &counted {
        for &i in set.iter().filter(|&&i| i < m) {
            *tally.entry(i).or_default() += 1;
        }
    }

    let chosen = match policy.kind {
        VoteKind::PerOptionMajority => {
            let n = counted.len() as u32;
            tally
                .iter()
                .filter(|&(_, &v)| match (2 * v).cmp(&n) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Equal => policy.tie_break == TieBreak::PreferInclude,
                    std::cmp::Ordering::Less => false,
                })
                .map(|(&i, _)| i)
                .collect()
        }
        VoteKind::PathPlurality => {
            let mut freq: HashMap<OptionSet, u32> = HashMap::new();
            for set in &counted {
                let clipped: OptionSet = set.iter().copied().filter(|&i| i < m).collect();
                *freq.entry(clipped).or_default() += 1;
            }
            let support = |s: &OptionSet| -> u64 { s.iter().map(|i| u64::from(tally[i])).sum() };
            freq.into_iter()
                .max_by(|(a, fa), (b, fb)| {
                    fa.cmp(fb)
                        .then_with(|| support(a).cmp(&support(b)))
                        // smaller label sequence wins, so reverse
                        .then_with(|| b.iter().cmp(a.iter()))
                })
                .map(|(s, _)| s)
                .unwrap_or_default()
        }
    };

    let (chosen, rescued) = if chosen.is_empty() {
        (OptionSet::from([argmax_tally(&tally)]), true)
    } else {
        (chosen, false)
    };

    Ok(VoteOutcome {
        chosen,
        tally,
        counted: counted.len(),
        rescued,
    })
}

/// Option with the highest tally, smallest index on ties; 0 when empty.
pub(crate) fn argmax_tally(tally: &BTreeMap<usize, u32>) -> usize {
    tally
        .iter()
        .max_by(|(ia, va), (ib, vb)| va.cmp(vb).then_with(|| ib.cmp(ia)))
        .map(|(&i, _)| i)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoner::test_support::path;

    fn s(xs: &[usize]) -> OptionSet {
        xs.iter().copied().collect()
    }

    #[test]
    fn majority_example() {
        let paths = vec![path(0, &[0, 1], 3), path(1, &[0], 3), path(2, &[0, 1], 3)];
        let out = vote(&paths, 3, VotePolicy::default()).unwrap();
        assert_eq!(out.chosen, s(&[0, 1]));
        assert_eq!(out.tally[&0], 3);
        assert_eq!(out.tally[&1], 2);
        assert_eq!(out.tally[&2], 0);
        assert!(!out.rescued);
    }

    #[test]
    fn two_way_split_prefer_exclude_rescues_smallest() {
        // Hand enumeration over the two-path table {A} / {B}:
        //   tally A=1, B=1, counted=2; 2*1 == 2 is a tie for both options;
        //   prefer_exclude drops both -> empty -> rescue max tally, smallest
        //   index among {A, B} -> {A}.
        let paths = vec![path(0, &[0], 2), path(1, &[1], 2)];
        let out = vote(&paths, 2, VotePolicy::default()).unwrap();
        assert_eq!(out.chosen, s(&[0]));
        assert!(out.rescued);

        let include = VotePolicy {
            kind: VoteKind::PerOptionMajority,
            tie_break: TieBreak::PreferInclude,
        };
        assert_eq!(vote(&paths, 2, include).unwrap().chosen, s(&[0, 1]));
    }

    #[test]
    fn single_path_is_unchanged() {
        for policy in [
            VotePolicy::default(),
            VotePolicy {
                kind: VoteKind::PathPlurality,
                tie_break: TieBreak::PreferExclude,
            },
        ] {
            let out = vote(&[path(0, &[1, 3], 4)], 4, policy).unwrap();
            assert_eq!(out.chosen, s(&[1, 3]));
        }
    }

    #[test]
    fn plurality_tie_breaks() {
        let plurality = VotePolicy {
            kind: VoteKind::PathPlurality,
            tie_break: TieBreak::PreferExclude,
        };
        // {A,B} x2 beats {C} x1
        let paths = vec![path(0, &[0, 1], 3), path(1, &[2], 3), path(2, &[0, 1], 3)];
        assert_eq!(vote(&paths, 3, plurality).unwrap().chosen, s(&[0, 1]));
        // frequency tie {A} vs {B}; B has more support via the extra set {B,C}
        let paths = vec![
            path(0, &[0], 3),
            path(1, &[1], 3),
            path(2, &[0], 3),
            path(3, &[1], 3),
            path(4, &[1, 2], 3),
        ];
        assert_eq!(vote(&paths, 3, plurality).unwrap().chosen, s(&[1]));
        // full tie on frequency and support: lexicographically smallest
        let paths = vec![path(0, &[1], 3), path(1, &[0], 3)];
        assert_eq!(vote(&paths, 3, plurality).unwrap().chosen, s(&[0]));
    }

    #[test]
    fn degenerate_paths_leave_the_denominator() {
        let mut bad = path(2, &[2], 3);
        bad.degenerate = true;
        let mut bad2 = path(3, &[2], 3);
        bad2.degenerate = true;
        let paths = vec![path(0, &[0], 3), path(1, &[0], 3), bad, bad2];
        let out = vote(&paths, 3, VotePolicy::default()).unwrap();
        assert_eq!(out.counted, 2);
        assert_eq!(out.chosen, s(&[0]));

        let all_bad: Vec<_> = paths
            .into_iter()
            .map(|mut p| {
                p.degenerate = true;
                p
            })
            .collect();
        assert_eq!(vote(&all_bad, 3, VotePolicy::default()).unwrap().counted, 4);
    }

    #[test]
    fn no_paths_is_error() {
        assert_eq!(vote(&[], 3, VotePolicy::default()), Err(VoteError::NoPaths));
    }
}
