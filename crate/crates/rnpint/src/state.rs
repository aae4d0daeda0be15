//! Coefficient tensor and the partition bookkeeping that defines which
//! datasets share a covariate's effect.
//!
//! Equality of coefficient vectors across datasets is tracked structurally
//! through group labels rather than by comparing floats: members of a group
//! only ever receive shared updates (one arithmetic result copied to all
//! members), so label equality and bit-level numeric equality coincide by
//! construction. A debug audit enforces this after every mutation.

use crate::error::{Error, Result};

pub const MAX_DATASETS: usize = 12;

/// Per-covariate, per-dataset coefficient vectors plus group labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientState {
    n_datasets: usize,
    n_covariates: usize,
    dim: usize,
    /// beta[m][j*dim..(j+1)*dim]
    beta: Vec<Vec<f64>>,
    /// labels[j][m]; equal labels within a covariate row mean structurally
    /// identical coefficient vectors
    labels: Vec<Vec<u32>>,
    next_label: u32,
    /// support[m][j]: covariate j has been updated in dataset m
    support: Vec<Vec<bool>>,
    support_count: Vec<usize>,
}

/// A candidate update: add `increment` to covariate `covariate` for every
/// dataset in `subset_mask` (a bitmask over dataset indices).
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementProposal {
    pub covariate: usize,
    pub subset_mask: u32,
    pub increment: Vec<f64>,
    pub objective: f64,
}

impl CoefficientState {
    pub fn fresh(n_datasets: usize, n_covariates: usize, dim: usize) -> Result<Self> {
        if n_datasets == 0 {
            return Err(Error::NoDatasets);
        }
        if n_datasets > MAX_DATASETS {
            return Err(Error::TooManyDatasets(n_datasets));
        }
        Ok(Self {
            n_datasets,
            n_covariates,
            dim,
            beta: vec![vec![0.0; n_covariates * dim]; n_datasets],
            labels: vec![vec![0; n_datasets]; n_covariates],
            next_label: 1,
            support: vec![vec![false; n_covariates]; n_datasets],
            support_count: vec![0; n_datasets],
        })
    }

    pub fn n_datasets(&self) -> usize {
        self.n_datasets
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coef(&self, m: usize, j: usize) -> &[f64] {
        &self.beta[m][j * self.dim..(j + 1) * self.dim]
    }

    pub fn label(&self, j: usize, m: usize) -> u32 {
        self.labels[j][m]
    }

    pub fn labels_row(&self, j: usize) -> &[u32] {
        &self.labels[j]
    }

    pub fn is_selected(&self, m: usize, j: usize) -> bool {
        self.support[m][j]
    }

    pub fn support_count(&self, m: usize) -> usize {
        self.support_count[m]
    }

    /// Equivalence classes of the label row for covariate j, ordered by their
    /// smallest member.
    pub fn partition_of(&self, j: usize) -> Vec<Vec<usize>> {
        let row = &self.labels[j];
        let mut groups: Vec<(u32, Vec<usize>)> = Vec::new();
        for (m, &lab) in row.iter().enumerate() {
            match groups.iter_mut().find(|(l, _)| *l == lab) {
                Some((_, members)) => members.push(m),
                None => groups.push((lab, vec![m])),
            }
        }
        groups.sort_by_key(|(_, members)| members[0]);
        groups.into_iter().map(|(_, members)| members).collect()
    }

    /// Bitmask over datasets for the group of covariate j containing dataset m.
    pub fn group_mask_of(&self, j: usize, m: usize) -> u32 {
        let lab = self.labels[j][m];
        let mut mask = 0u32;
        for (i, &l) in self.labels[j].iter().enumerate() {
            if l == lab {
                mask |= 1 << i;
            }
        }
        mask
    }

    /// Apply `v * increment` to covariate j for every dataset in the subset.
    /// The updated vector is computed once and copied to each member so the
    /// group stays bit-identical. Members split off with a fresh label iff
    /// the subset is a proper subset of its current group.
    pub fn apply_increment(
        &mut self,
        proposal: &IncrementProposal,
        step: f64,
    ) -> Result<()> {
        let j = proposal.covariate;
        let mask = proposal.subset_mask;
        let members: Vec<usize> = (0..self.n_datasets).filter(|m| mask >> m & 1 == 1).collect();
        if members.is_empty() {
            return Err(Error::SubsetCrossesGroups { covariate: j, mask });
        }
        let group_mask = self.group_mask_of(j, members[0]);
        if mask & !group_mask != 0 {
            return Err(Error::SubsetCrossesGroups { covariate: j, mask });
        }

        let first = members[0];
        let mut updated: Vec<f64> = self.coef(first, j).to_vec();
        for (q, g) in updated.iter_mut().zip(proposal.increment.iter()) {
            *q += step * g;
        }
        let nonzero_increment = proposal.increment.iter().any(|&g| g != 0.0);
        for &m in &members {
            self.beta[m][j * self.dim..(j + 1) * self.dim].copy_from_slice(&updated);
            if nonzero_increment && !self.support[m][j] {
                self.support[m][j] = true;
                self.support_count[m] += 1;
            }
        }
        if mask != group_mask {
            let fresh = self.next_label;
            self.next_label += 1;
            for &m in &members {
                self.labels[j][m] = fresh;
            }
        }
        #[cfg(debug_assertions)]
        self.audit_labels(j);
        Ok(())
    }

    /// Number of dataset pairs (m1 < m2) per covariate with structurally
    /// identical coefficient vectors, summed over covariates.
    pub fn count_equal_pairs(&self) -> usize {
        let mut count = 0;
        for j in 0..self.n_covariates {
            count += Self::equal_pairs_in_row(&self.labels[j]);
        }
        count
    }

    pub fn equal_pairs_in_row(row: &[u32]) -> usize {
        let m = row.len();
        let mut count = 0;
        for a in 0..m {
            for b in a + 1..m {
                if row[a] == row[b] {
                    count += 1;
                }
            }
        }
        count
    }

    /// Structural and numeric equality must never disagree.
    #[cfg(debug_assertions)]
    fn audit_labels(&self, j: usize) {
        for a in 0..self.n_datasets {
            for b in a + 1..self.n_datasets {
                let same_label = self.labels[j][a] == self.labels[j][b];
                let same_bits = self
                    .coef(a, j)
                    .iter()
                    .zip(self.coef(b, j))
                    .all(|(x, y)| x.to_bits() == y.to_bits());
                if same_label {
                    debug_assert!(
                        same_bits,
                        "label equality without bit equality for covariate {j} ({a},{b})"
                    );
                }
            }
        }
    }
}

/// All nonempty subsets contained in one group of the partition, in
/// deterministic order: groups by ascending smallest member, subsets by
/// ascending bitmask.
pub fn enumerate_candidates(partition: &[Vec<usize>]) -> Vec<u32> {
    let mut out = Vec::new();
    for group in partition {
        let size = group.len();
        let mut masks: Vec<u32> = Vec::with_capacity((1 << size) - 1);
        for pick in 1u32..(1 << size) {
            let mut mask = 0u32;
            for (bit, &member) in group.iter().enumerate() {
                if pick >> bit & 1 == 1 {
                    mask |= 1 << member;
                }
            }
            masks.push(mask);
        }
        masks.sort_unstable();
        out.extend(masks);
    }
    out
}
