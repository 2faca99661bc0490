//! Weighted pure-state ensembles: weight updates, effective size and
//! regeneration by splitting the heaviest members.

use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, Operator, SparseRows, StateVector};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Neumaier-compensated sum in index order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidWeights("empty weight list".into()));
    }
    if let Some((n, w)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidWeights(format!("weight {n} is {w}")));
    }
    let total = compensated_sum(weights.iter().copied());
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// `exp(−Σ P ln P)` with `0 ln 0 = 0`.
pub fn effective_size(weights: &[f64]) -> Result<f64> {
    validate_weights(weights)?;
    let entropy = -compensated_sum(
        weights.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()),
    );
    Ok(entropy.exp())
}

/// Outcome of one regeneration pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegenReport {
    /// Total pre-regeneration weight of erased members.
    pub p_drop: f64,
    pub dropped_count: usize,
    /// Member duplicated for each erased member, in processing order.
    pub split_sources: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    states: Vec<StateVector>,
    weights: Vec<f64>,
}

impl WeightedEnsemble {
    /// Uniform weights `1/N`.
    pub fn init_uniform(states: Vec<StateVector>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidWeights("ensemble needs at least one state".into()));
        }
        let dim = states[0].dim();
        for s in &states {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: s.dim() });
            }
            let n2 = s.norm_sqr();
            if (n2 - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidWeights(format!("state has squared norm {n2}")));
            }
        }
        let w = 1.0 / states.len() as f64;
        let weights = vec![w; states.len()];
        Ok(Self { states, weights })
    }

    /// `n` copies of one state.
    pub fn replicated(state: &StateVector, n: usize) -> Result<Self> {
        Self::init_uniform(vec![state.clone(); n])
    }

    pub fn from_parts(states: Vec<StateVector>, weights: Vec<f64>) -> Result<Self> {
        if states.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: states.len(), found: weights.len() });
        }
        validate_weights(&weights)?;
        Ok(Self { states, weights })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub(crate) fn states_mut(&mut self) -> &mut [StateVector] {
        &mut self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn effective_size(&self) -> f64 {
        effective_size(&self.weights).unwrap_or(f64::NAN)
    }

    /// `Σ P_n ⟨ψ_n|(O + O†)|ψ_n⟩`, reduced in member order.
    pub fn ensemble_expectation(&self, op: &Operator) -> Result<f64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: op.dim() });
        }
        Ok(self.expectation_sum(op))
    }

    pub(crate) fn expectation_sum(&self, op: &Operator) -> f64 {
        self.expectation_sum_rows(&SparseRows::new(op))
    }

    pub(crate) fn expectation_sum_rows(&self, rows: &SparseRows) -> f64 {
        let mut acc = 0.0;
        for (p, s) in self.weights.iter().zip(&self.states) {
            acc += p * 2.0 * rows.expectation(s.amplitudes()).re;
        }
        acc
    }

    /// `Σ P_n ⟨ψ_n|O|ψ_n⟩` (real part), reduced in member order.
    pub fn mean(&self, op: &Operator) -> f64 {
        let mut acc = 0.0;
        for (p, s) in self.weights.iter().zip(&self.states) {
            acc += p * op.expectation_slice(s.amplitudes()).re;
        }
        acc
    }

    /// `P_n ← P_n s_n / Σ P_m s_m`.
    pub fn update_weights(&mut self, squared_norms: &[f64]) -> Result<()> {
        if squared_norms.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: squared_norms.len(),
            });
        }
        let products: Vec<f64> =
            self.weights.iter().zip(squared_norms).map(|(p, s)| p * s).collect();
        let total = compensated_sum(products.iter().copied());
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidWeights(format!("total weight {total} after update")));
        }
        for (w, q) in self.weights.iter_mut().zip(products) {
            *w = q / total;
        }
        Ok(())
    }

    /// Replaces every member below `p_thresh` with a copy of the currently
    /// heaviest member, halving the latter's weight between the pair.
    ///
    /// Members are visited once, lightest first. The heaviest member is
    /// recomputed before each split; ties go to the lowest index.
    pub fn regenerate(&mut self, p_thresh: f64) -> Result<RegenReport> {
        if !(p_thresh > 0.0 && p_thresh < 1.0) {
            return Err(Error::Config(format!("P_thresh must lie in (0, 1), got {p_thresh}")));
        }
        let mut drop: Vec<usize> =
            (0..self.weights.len()).filter(|&j| self.weights[j] < p_thresh).collect();
        if drop.is_empty() {
            return Ok(RegenReport::default());
        }
        if drop.len() == self.weights.len() {
            return Err(Error::Config(format!(
                "P_thresh = {p_thresh} exceeds every member weight"
            )));
        }
        drop.sort_by(|&a, &b| self.weights[a].total_cmp(&self.weights[b]).then(a.cmp(&b)));

        let dropped: Vec<f64> = drop.iter().map(|&j| self.weights[j]).collect();
        let mut report = RegenReport {
            p_drop: compensated_sum(dropped.iter().copied()),
            dropped_count: drop.len(),
            split_sources: Vec::with_capacity(drop.len()),
        };
        for &j in &drop {
            let m = heaviest(&self.weights);
            let half = self.weights[m] / 2.0;
            self.states[j] = self.states[m].clone();
            self.weights[j] = half;
            self.weights[m] = half;
            report.split_sources.push(m);
        }
        let total = compensated_sum(self.weights.iter().copied());
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(report)
    }

    /// `Σ P_n |ψ_n⟩⟨ψ_n|`, accumulated in member order.
    pub fn assemble_density(&self) -> DensityMatrix {
        let mut rho = DensityMatrix::zeros(self.dim()).expect("non-empty ensemble");
        for (p, s) in self.weights.iter().zip(&self.states) {
            rho.add_projector(*p, s.amplitudes());
        }
        rho
    }

    /// Largest deviation of any member's squared norm from 1.
    pub fn max_norm_defect(&self) -> f64 {
        self.states.iter().map(|s| (s.norm_sqr() - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn heaviest(weights: &[f64]) -> usize {
    let mut best = 0;
    for (n, &w) in weights.iter().enumerate().skip(1) {
        if w > weights[best] {
            best = n;
        }
    }
    best
}
