//! Standard stepped wedge designs and their randomization.
//!
//! A design with `I` clusters and `J` rollout periods has periods `0..=J+1`:
//! period 0 is pre-rollout (nobody treated), period `J+1` is post-rollout
//! (everybody treated). `cumulative_treated[j-1]` is `I_j`, the number of
//! clusters treated by rollout period `j`. A cluster's adoption time `A_i` is
//! the first period in which it is treated, so `A_i ∈ 1..=J+1`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::stream_rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDesignSpec", into = "RawDesignSpec")]
pub struct DesignSpec {
    num_clusters: usize,
    cumulative_treated: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDesignSpec {
    clusters: usize,
    rollout_periods: usize,
    cumulative_treated: Vec<usize>,
}

impl TryFrom<RawDesignSpec> for DesignSpec {
    type Error = Error;

    fn try_from(raw: RawDesignSpec) -> Result<Self> {
        if raw.cumulative_treated.len() != raw.rollout_periods {
            return Err(Error::Design(format!(
                "rollout_periods is {} but cumulative_treated has {} entries",
                raw.rollout_periods,
                raw.cumulative_treated.len()
            )));
        }
        DesignSpec::new(raw.clusters, raw.cumulative_treated)
    }
}

impl From<DesignSpec> for RawDesignSpec {
    fn from(spec: DesignSpec) -> Self {
        RawDesignSpec {
            clusters: spec.num_clusters,
            rollout_periods: spec.cumulative_treated.len(),
            cumulative_treated: spec.cumulative_treated,
        }
    }
}

impl DesignSpec {
    /// Validates `0 < I_1 < ... < I_J < I`.
    pub fn new(num_clusters: usize, cumulative_treated: Vec<usize>) -> Result<Self> {
        if cumulative_treated.is_empty() {
            return Err(Error::Design("at least one rollout period is required".into()));
        }
        if cumulative_treated[0] == 0 {
            return Err(Error::Design("no cluster is treated in rollout period 1".into()));
        }
        for (idx, pair) in cumulative_treated.windows(2).enumerate() {
            if pair[1] == pair[0] {
                return Err(Error::NonStandardDesign { period: idx + 2 });
            }
            if pair[1] < pair[0] {
                return Err(Error::Design(format!(
                    "cumulative treated counts decrease at period {} ({} -> {})",
                    idx + 2,
                    pair[0],
                    pair[1]
                )));
            }
        }
        let last = *cumulative_treated.last().unwrap();
        if last >= num_clusters {
            return Err(Error::Design(format!(
                "I_J = {last} must be below the number of clusters {num_clusters}"
            )));
        }
        Ok(DesignSpec {
            num_clusters,
            cumulative_treated,
        })
    }

    /// The schedule used in the simulation studies: `I/(J+1)` new clusters per
    /// rollout period, the rest adopting post-rollout.
    pub fn balanced(num_clusters: usize, num_rollout_periods: usize) -> Result<Self> {
        let arms = num_rollout_periods + 1;
        if num_rollout_periods == 0 || num_clusters % arms != 0 {
            return Err(Error::Design(format!(
                "{num_clusters} clusters cannot be split evenly over {arms} adoption times"
            )));
        }
        let step = num_clusters / arms;
        DesignSpec::new(num_clusters, (1..=num_rollout_periods).map(|j| j * step).collect())
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_rollout_periods(&self) -> usize {
        self.cumulative_treated.len()
    }

    pub fn cumulative_treated(&self) -> &[usize] {
        &self.cumulative_treated
    }

    /// `I_j` for any period `0..=J+1`.
    pub fn treated_by(&self, period: usize) -> usize {
        let j = self.num_rollout_periods();
        match period {
            0 => 0,
            p if p <= j => self.cumulative_treated[p - 1],
            _ => self.num_clusters,
        }
    }

    /// `I^a = I_a - I_{a-1}` for adoption times `a = 1..=J+1`, indexed from 0.
    pub fn arm_sizes(&self) -> Vec<usize> {
        (1..=self.num_rollout_periods() + 1)
            .map(|a| self.treated_by(a) - self.treated_by(a - 1))
            .collect()
    }

    pub fn arm_size(&self, adoption: usize) -> usize {
        self.treated_by(adoption) - self.treated_by(adoption - 1)
    }

    pub fn propensity(&self, period: usize) -> Result<Propensity> {
        let max = self.num_rollout_periods() + 1;
        if period > max {
            return Err(Error::PeriodOutOfRange { period, max });
        }
        Ok(Propensity {
            treated: self.treated_by(period),
            clusters: self.num_clusters,
        })
    }
}

/// Cluster-level propensity `e_j = I_j / I`, kept as an exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Propensity {
    pub treated: usize,
    pub clusters: usize,
}

impl Propensity {
    pub fn value(&self) -> f64 {
        self.treated as f64 / self.clusters as f64
    }
}

/// `e_j` for period `j`.
pub fn propensity(spec: &DesignSpec, period: usize) -> Result<Propensity> {
    spec.propensity(period)
}

/// Per-cluster adoption times `A_i ∈ 1..=J+1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdoptionAssignment {
    adoption_time: Vec<usize>,
}

impl AdoptionAssignment {
    /// Builds an assignment and checks its arm sizes against `spec`.
    pub fn new(adoption_time: Vec<usize>, spec: &DesignSpec) -> Result<Self> {
        let assignment = AdoptionAssignment { adoption_time };
        assignment.check(spec)?;
        Ok(assignment)
    }

    /// Builds an assignment without reference to a design. Adoption times
    /// must still lie in `1..=J+1` when later checked.
    pub fn from_times(adoption_time: Vec<usize>) -> Self {
        AdoptionAssignment { adoption_time }
    }

    pub fn adoption_times(&self) -> &[usize] {
        &self.adoption_time
    }

    pub fn adoption_time(&self, cluster: usize) -> usize {
        self.adoption_time[cluster]
    }

    pub fn num_clusters(&self) -> usize {
        self.adoption_time.len()
    }

    /// `Z_ij = 1{A_i <= j}`.
    pub fn is_treated(&self, cluster: usize, period: usize) -> bool {
        self.adoption_time[cluster] <= period
    }

    pub fn check(&self, spec: &DesignSpec) -> Result<()> {
        if self.adoption_time.len() != spec.num_clusters() {
            return Err(Error::Consistency(format!(
                "{} adoption times for {} clusters",
                self.adoption_time.len(),
                spec.num_clusters()
            )));
        }
        let arms = spec.num_rollout_periods() + 1;
        let mut counts = vec![0usize; arms];
        for (i, &a) in self.adoption_time.iter().enumerate() {
            if a == 0 || a > arms {
                return Err(Error::Consistency(format!(
                    "cluster {i} has adoption time {a}, expected 1..={arms}"
                )));
            }
            counts[a - 1] += 1;
        }
        let expected = spec.arm_sizes();
        if counts != expected {
            return Err(Error::Consistency(format!(
                "arm sizes {counts:?} differ from design {expected:?}"
            )));
        }
        Ok(())
    }
}

/// Draws an assignment uniformly from all partitions of the clusters into
/// adoption arms of sizes `I^1, ..., I^{J+1}`.
///
/// Shuffles cluster labels (Fisher-Yates) with the generator for stream 0 of
/// `seed`, then hands out consecutive blocks of the shuffled order.
pub fn randomize(spec: &DesignSpec, seed: u64) -> AdoptionAssignment {
    let mut rng = stream_rng(seed, 0);
    randomize_with(spec, &mut rng)
}

pub fn randomize_with<R: rand::Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> AdoptionAssignment {
    let mut order: Vec<usize> = (0..spec.num_clusters()).collect();
    order.shuffle(rng);
    let mut adoption_time = vec![0; spec.num_clusters()];
    let mut cursor = 0;
    for (arm, size) in spec.arm_sizes().into_iter().enumerate() {
        for &cluster in &order[cursor..cursor + size] {
            adoption_time[cluster] = arm + 1;
        }
        cursor += size;
    }
    AdoptionAssignment { adoption_time }
}

/// Binary `I x (J+2)` treatment matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreatmentMatrix {
    clusters: usize,
    periods: usize,
    data: Vec<u8>,
}

impl TreatmentMatrix {
    pub fn num_clusters(&self) -> usize {
        self.clusters
    }

    /// Number of columns, `J + 2`.
    pub fn num_periods(&self) -> usize {
        self.periods
    }

    pub fn get(&self, cluster: usize, period: usize) -> u8 {
        self.data[cluster * self.periods + period]
    }

    pub fn row(&self, cluster: usize) -> &[u8] {
        &self.data[cluster * self.periods..(cluster + 1) * self.periods]
    }

    pub fn column_sum(&self, period: usize) -> usize {
        (0..self.clusters).map(|i| self.get(i, period) as usize).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks(self.periods)
    }
}

pub fn treatment_matrix(assignment: &AdoptionAssignment, spec: &DesignSpec) -> Result<TreatmentMatrix> {
    assignment.check(spec)?;
    let periods = spec.num_rollout_periods() + 2;
    let clusters = spec.num_clusters();
    let mut data = Vec::with_capacity(clusters * periods);
    for i in 0..clusters {
        data.extend((0..periods).map(|j| assignment.is_treated(i, j) as u8));
    }
    Ok(TreatmentMatrix {
        clusters,
        periods,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_standard_schedules() {
        assert!(matches!(DesignSpec::new(10, vec![2, 2, 8]), Err(Error::NonStandardDesign { period: 2 })));
        assert!(matches!(DesignSpec::new(10, vec![5, 3]), Err(Error::Design(_))));
        assert!(DesignSpec::new(10, vec![0, 3]).is_err());
        assert!(DesignSpec::new(10, vec![3, 10]).is_err());
        assert!(DesignSpec::new(10, vec![]).is_err());
    }

    #[test]
    fn twenty_two_cluster_schedule_arm_sizes() {
        let spec = DesignSpec::new(22, vec![6, 12, 18]).unwrap();
        assert_eq!(spec.arm_sizes(), vec![6, 6, 6, 4]);
        for seed in 0..20 {
            let a = randomize(&spec, seed);
            let mut counts = [0; 4];
            for &t in a.adoption_times() {
                counts[t - 1] += 1;
            }
            assert_eq!(counts, [6, 6, 6, 4]);
        }
    }

    #[test]
    fn two_cluster_design_is_a_fair_coin() {
        let spec = DesignSpec::new(2, vec![1]).unwrap();
        let n = 4000;
        let first = (0..n).filter(|&s| randomize(&spec, s).adoption_time(0) == 1).count();
        let p = first as f64 / n as f64;
        // 3 standard errors of a binomial proportion at n = 4000
        assert!((p - 0.5).abs() < 3.0 * (0.25f64 / n as f64).sqrt(), "p = {p}");
    }

    #[test]
    fn treatment_matrix_rows() {
        let spec = DesignSpec::new(4, vec![1, 2, 3]).unwrap();
        let a = AdoptionAssignment::new(vec![1, 2, 3, 4], &spec).unwrap();
        let z = treatment_matrix(&a, &spec).unwrap();
        assert_eq!(z.row(0), &[0, 1, 1, 1, 1]);
        assert_eq!(z.row(1), &[0, 0, 1, 1, 1]);
        assert_eq!(z.row(2), &[0, 0, 0, 1, 1]);
        assert_eq!(z.row(3), &[0, 0, 0, 0, 1]);
    }

    #[test]
    fn arm_mismatch_is_a_consistency_error() {
        let spec = DesignSpec::new(4, vec![1, 2, 3]).unwrap();
        let a = AdoptionAssignment::from_times(vec![1, 1, 3, 4]);
        assert!(matches!(treatment_matrix(&a, &spec), Err(Error::Consistency(_))));
    }

    #[test]
    fn propensity_endpoints() {
        let spec = DesignSpec::new(22, vec![6, 12, 18]).unwrap();
        assert_eq!(spec.propensity(1).unwrap(), Propensity { treated: 6, clusters: 22 });
        assert_eq!(spec.propensity(0).unwrap().value(), 0.0);
        assert_eq!(spec.propensity(4).unwrap().value(), 1.0);
        assert!(matches!(spec.propensity(5), Err(Error::PeriodOutOfRange { .. })));
    }

    #[test]
    fn serde_form_validates() {
        let spec: DesignSpec =
            serde_json::from_str(r#"{"clusters":22,"rollout_periods":3,"cumulative_treated":[6,12,18]}"#).unwrap();
        assert_eq!(spec.arm_sizes(), vec![6, 6, 6, 4]);
        let bad: std::result::Result<DesignSpec, _> =
            serde_json::from_str(r#"{"clusters":22,"rollout_periods":3,"cumulative_treated":[6,6,18]}"#);
        assert!(bad.is_err());
    }

    /// Enumerates every admissible assignment of a small design and checks
    /// each occurs within 3 standard errors of the uniform probability.
    #[test]
    fn uniform_over_admissible_assignments() {
        let spec = DesignSpec::new(5, vec![2, 3]).unwrap();
        // 5! / (2! 1! 2!) = 30 admissible assignments
        let draws = 30_000u64;
        let mut freq = std::collections::HashMap::new();
        for s in 0..draws {
            *freq.entry(randomize(&spec, s).adoption_times().to_vec()).or_insert(0u64) += 1;
        }
        assert_eq!(freq.len(), 30);
        let p = 1.0 / 30.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for &count in freq.values() {
            assert!((count as f64 / draws as f64 - p).abs() < 3.0 * se, "count {count}");
        }
    }

    proptest! {
        #[test]
        fn every_draw_is_monotone_with_exact_column_sums(seed in any::<u64>(), extra in 1usize..4) {
            let spec = DesignSpec::new(6 + extra, vec![1, 3, 5]).unwrap();
            let z = treatment_matrix(&randomize(&spec, seed), &spec).unwrap();
            for row in z.rows() {
                prop_assert_eq!(row[0], 0);
                prop_assert_eq!(row[4], 1);
                prop_assert!(row.windows(2).all(|w| w[0] <= w[1]));
            }
            for j in 0..5 {
                prop_assert_eq!(z.column_sum(j), spec.treated_by(j));
            }
        }

        #[test]
        fn permuted_labels_keep_arm_counts(seed in any::<u64>()) {
            let spec = DesignSpec::new(9, vec![2, 5, 7]).unwrap();
            let a = randomize(&spec, seed);
            let mut permuted: Vec<usize> = a.adoption_times().to_vec();
            permuted.reverse();
            let b = AdoptionAssignment::new(permuted, &spec);
            prop_assert!(b.is_ok());
        }
    }
}
