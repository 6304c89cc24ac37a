//! Exact finite discrete distributions.
//!
//! Joint tables are dense probability vectors over a product state space in
//! row-major order with variable 0 varying slowest. Everything here works in
//! nats and uses the convention `0 * log 0 = 0`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{FpnError, Result};

/// Tolerance used when validating that a probability vector sums to one.
pub const SUM_TOL: f64 = 1e-12;

/// Default cap on the number of joint states a dense table may hold.
pub const DEFAULT_DENSE_LIMIT: usize = 1 << 20;

/// Named variables with finite cardinalities, and the product space they span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    names: Vec<String>,
    cards: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

/// Validates the names/cardinalities pair shared by [`StateSpace`] and
/// [`crate::data::Schema`].
pub(crate) fn check_names_cards(names: &[String], cards: &[usize]) -> Result<()> {
    if names.len() != cards.len() {
        return Err(FpnError::InvalidSpace(format!(
            "{} names but {} cardinalities",
            names.len(),
            cards.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for (name, &card) in names.iter().zip(cards) {
        if name.is_empty() {
            return Err(FpnError::InvalidSpace("empty variable name".into()));
        }
        if !seen.insert(name.as_str()) {
            return Err(FpnError::InvalidSpace(format!("duplicate variable name {name:?}")));
        }
        if card == 0 {
            return Err(FpnError::InvalidSpace(format!("variable {name:?} has cardinality 0")));
        }
    }
    Ok(())
}

/// Product of cardinalities, saturating at `u128::MAX`.
pub(crate) fn state_count(cards: &[usize]) -> u128 {
    cards
        .iter()
        .fold(1u128, |acc, &c| acc.saturating_mul(c as u128))
}

impl StateSpace {
    pub fn new(names: Vec<String>, cards: Vec<usize>) -> Result<Self> {
        check_names_cards(&names, &cards)?;
        let count = state_count(&cards);
        let total = usize::try_from(count)
            .ok()
            .filter(|&t| t < isize::MAX as usize)
            .ok_or_else(|| {
                FpnError::InvalidSpace(format!("{count} joint states exceed the addressable range"))
            })?;
        let mut strides = vec![1usize; cards.len()];
        for j in (0..cards.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * cards[j + 1];
        }
        Ok(Self {
            names,
            cards,
            strides,
            total,
        })
    }

    /// Binary variables named `x0, x1, ...`.
    pub fn binary(n: usize) -> Self {
        Self::new((0..n).map(|i| format!("x{i}")).collect(), vec![2; n])
            .expect("binary space is valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn num_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn total_states(&self) -> usize {
        self.total
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn encode(&self, state: &[usize]) -> usize {
        debug_assert_eq!(state.len(), self.cards.len());
        state
            .iter()
            .zip(&self.strides)
            .map(|(&v, &s)| v * s)
            .sum()
    }

    pub fn decode_into(&self, mut index: usize, state: &mut [usize]) {
        for (j, slot) in state.iter_mut().enumerate() {
            *slot = index / self.strides[j];
            index %= self.strides[j];
        }
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        let mut state = vec![0; self.cards.len()];
        self.decode_into(index, &mut state);
        state
    }

    /// Sub-space over `vars` (kept in the given order).
    pub fn subspace(&self, vars: &[usize]) -> Result<StateSpace> {
        StateSpace::new(
            vars.iter().map(|&v| self.names[v].clone()).collect(),
            vars.iter().map(|&v| self.cards[v]).collect(),
        )
    }

    /// Calls `f(base, state)` once per configuration of all variables except
    /// `var`, where `base` is the index of that configuration with `var = 0`.
    /// The members of the block are `base + k * strides[var]`.
    pub fn for_each_block(&self, var: usize, mut f: impl FnMut(usize, &[usize])) {
        let stride = self.strides[var];
        let span = stride * self.cards[var];
        let mut state = vec![0; self.cards.len()];
        for hi in (0..self.total).step_by(span) {
            for lo in 0..stride {
                let base = hi + lo;
                self.decode_into(base, &mut state);
                f(base, &state);
            }
        }
    }
}

/// A dense probability table over a [`StateSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    space: StateSpace,
    probs: Vec<f64>,
}

/// JSON form: `{"names": [...], "cards": [...], "probs": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointTableJson {
    pub names: Vec<String>,
    pub cards: Vec<usize>,
    pub probs: Vec<f64>,
}

impl JointTable {
    /// Validates entries and normalization.
    pub fn new(space: StateSpace, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.total_states() {
            return Err(FpnError::InvalidDistribution(format!(
                "expected {} entries, got {}",
                space.total_states(),
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(FpnError::InvalidDistribution(format!("entry {bad} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(FpnError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { space, probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(space: StateSpace, weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(FpnError::InvalidDistribution("negative or non-finite weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum.is_nan() || sum <= 0.0 {
            return Err(FpnError::InvalidDistribution("weights sum to zero".into()));
        }
        let probs = weights.into_iter().map(|w| w / sum).collect();
        Self::new(space, probs)
    }

    /// Results of exact operations on valid tables; normalized only up to
    /// accumulated rounding.
    pub(crate) fn from_parts(space: StateSpace, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), space.total_states());
        Self { space, probs }
    }

    pub fn uniform(space: StateSpace) -> Self {
        let t = space.total_states();
        Self::from_parts(space, vec![1.0 / t as f64; t])
    }

    pub fn point_mass(space: StateSpace, state: &[usize]) -> Self {
        let mut probs = vec![0.0; space.total_states()];
        probs[space.encode(state)] = 1.0;
        Self::from_parts(space, probs)
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, state: &[usize]) -> f64 {
        self.probs[self.space.encode(state)]
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn l1_distance(&self, other: &JointTable) -> Result<f64> {
        self.check_same_space(other)?;
        Ok(self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    /// Total variation distance, half the L1 distance.
    pub fn tv_distance(&self, other: &JointTable) -> Result<f64> {
        Ok(0.5 * self.l1_distance(other)?)
    }

    /// `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &JointTable, alpha: f64) -> Result<JointTable> {
        self.check_same_space(other)?;
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        Ok(Self::from_parts(self.space.clone(), probs))
    }

    pub(crate) fn check_same_space(&self, other: &JointTable) -> Result<()> {
        if self.space.cards() != other.space.cards() {
            return Err(FpnError::SpaceMismatch);
        }
        Ok(())
    }

    /// Distribution of the remaining variables given `fixed` (pairs of
    /// variable index and value), with the probability of the fixed event.
    /// Returns `None` when that event has zero mass.
    pub fn slice(&self, fixed: &[(usize, usize)]) -> Result<Option<(f64, JointTable)>> {
        let n = self.space.num_vars();
        let free: Vec<usize> = (0..n)
            .filter(|v| !fixed.iter().any(|(f, _)| f == v))
            .collect();
        if free.is_empty() {
            return Err(FpnError::InvalidEvidence("no free variables remain".into()));
        }
        let sub = self.space.subspace(&free)?;
        let mut weights = vec![0.0; sub.total_states()];
        let mut state = vec![0; n];
        let mut sub_state = vec![0; free.len()];
        for (idx, &p) in self.probs.iter().enumerate() {
            self.space.decode_into(idx, &mut state);
            if fixed.iter().all(|&(v, x)| state[v] == x) {
                for (k, &v) in free.iter().enumerate() {
                    sub_state[k] = state[v];
                }
                weights[sub.encode(&sub_state)] += p;
            }
        }
        let mass: f64 = weights.iter().sum();
        if mass <= 0.0 {
            return Ok(None);
        }
        let probs = weights.into_iter().map(|w| w / mass).collect();
        Ok(Some((mass, JointTable::from_parts(sub, probs))))
    }

    pub fn to_json(&self) -> JointTableJson {
        JointTableJson {
            names: self.space.names().to_vec(),
            cards: self.space.cards().to_vec(),
            probs: self.probs.clone(),
        }
    }

    pub fn from_json(json: JointTableJson) -> Result<Self> {
        let space = StateSpace::new(json.names, json.cards)?;
        Self::new(space, json.probs)
    }
}

/// Target variable and its (sorted) conditioning set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CondSpec {
    target: usize,
    sources: Vec<usize>,
}

impl CondSpec {
    /// Sorts and deduplicates `sources`; fails if the target is among them.
    pub fn new(target: usize, sources: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = sources.into_iter().collect();
        if set.contains(&target) {
            return Err(FpnError::InvalidModel(format!(
                "node {target} lists itself as an information source"
            )));
        }
        Ok(Self {
            target,
            sources: set.into_iter().collect(),
        })
    }

    pub fn empty(target: usize) -> Self {
        Self {
            target,
            sources: Vec::new(),
        }
    }

    /// All other variables of an `n`-variable space.
    pub fn full(target: usize, n: usize) -> Self {
        Self {
            target,
            sources: (0..n).filter(|&j| j != target).collect(),
        }
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn with_source(&self, j: usize) -> Result<Self> {
        Self::new(self.target, self.sources.iter().copied().chain([j]))
    }

    pub fn without_source(&self, j: usize) -> Self {
        Self {
            target: self.target,
            sources: self.sources.iter().copied().filter(|&s| s != j).collect(),
        }
    }

    pub(crate) fn check_within(&self, n: usize) -> Result<()> {
        if self.target >= n || self.sources.iter().any(|&s| s >= n) {
            return Err(FpnError::InvalidModel(format!(
                "spec for node {} references a variable outside 0..{n}",
                self.target
            )));
        }
        Ok(())
    }

    /// Values of the sources, in spec order, read from a full configuration.
    pub fn source_values(&self, state: &[usize]) -> Vec<usize> {
        self.sources.iter().map(|&j| state[j]).collect()
    }
}

/// A conditional distribution of one variable given a set of others.
pub trait ConditionalDist {
    fn spec(&self) -> &CondSpec;

    /// Distribution over target values for the given source values (in spec
    /// order), or `None` when the row is undefined.
    fn row(&self, source_values: &[usize]) -> Option<&[f64]>;
}

/// Dense conditional table, one optional row per source configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CondTable {
    spec: CondSpec,
    target_card: usize,
    source_cards: Vec<usize>,
    rows: Vec<Option<Vec<f64>>>,
}

impl CondTable {
    pub fn target_card(&self) -> usize {
        self.target_card
    }

    pub fn source_cards(&self) -> &[usize] {
        &self.source_cards
    }

    fn row_index(&self, source_values: &[usize]) -> usize {
        source_values
            .iter()
            .zip(&self.source_cards)
            .fold(0, |acc, (&v, &c)| acc * c + v)
    }

    /// Rows in row-major order of the source configurations.
    pub fn rows(&self) -> &[Option<Vec<f64>>] {
        &self.rows
    }

    pub fn defined_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }
}

impl ConditionalDist for CondTable {
    fn spec(&self) -> &CondSpec {
        &self.spec
    }

    fn row(&self, source_values: &[usize]) -> Option<&[f64]> {
        self.rows[self.row_index(source_values)].as_deref()
    }
}

/// Checks that `vars` are distinct, in range, and returns them sorted.
fn normalize_vars(space: &StateSpace, vars: &[usize]) -> Result<Vec<usize>> {
    let set: BTreeSet<usize> = vars.iter().copied().collect();
    if set.len() != vars.len() {
        return Err(FpnError::InvalidSpace("repeated variable in marginal".into()));
    }
    if let Some(&v) = set.iter().find(|&&v| v >= space.num_vars()) {
        return Err(FpnError::InvalidSpace(format!("variable index {v} out of range")));
    }
    Ok(set.into_iter().collect())
}

/// Marginal over `vars`; the result's variables are in ascending index order.
pub fn marginal(p: &JointTable, vars: &[usize]) -> Result<JointTable> {
    if vars.is_empty() {
        return Err(FpnError::EmptyMarginal);
    }
    let vars = normalize_vars(p.space(), vars)?;
    let sub = p.space().subspace(&vars)?;
    Ok(JointTable::from_parts(sub, marginal_weights(p, &vars)))
}

/// Unnormalized marginal weights over `vars` (row-major in the given order);
/// an empty `vars` yields the single total mass.
fn marginal_weights(p: &JointTable, vars: &[usize]) -> Vec<f64> {
    let space = p.space();
    let size: usize = vars.iter().map(|&v| space.cards()[v]).product();
    let mut out = vec![0.0; size];
    let mut state = vec![0; space.num_vars()];
    for (idx, &prob) in p.probs().iter().enumerate() {
        space.decode_into(idx, &mut state);
        let k = vars
            .iter()
            .fold(0, |acc, &v| acc * space.cards()[v] + state[v]);
        out[k] += prob;
    }
    out
}

/// `p(X_target | X_sources)`; rows with zero source mass are undefined.
pub fn conditional(p: &JointTable, spec: &CondSpec) -> Result<CondTable> {
    spec.check_within(p.space().num_vars())?;
    let space = p.space();
    let mut vars = spec.sources().to_vec();
    vars.push(spec.target());
    // Source-major, target-minor: consecutive runs of `target_card` form a row.
    let weights = marginal_weights(p, &vars);
    let target_card = space.cards()[spec.target()];
    let rows = weights
        .chunks(target_card)
        .map(|chunk| {
            let mass: f64 = chunk.iter().sum();
            (mass > 0.0).then(|| chunk.iter().map(|w| w / mass).collect())
        })
        .collect();
    Ok(CondTable {
        spec: spec.clone(),
        target_card,
        source_cards: spec.sources().iter().map(|&j| space.cards()[j]).collect(),
        rows,
    })
}

/// Shannon entropy in nats of an arbitrary non-negative vector summing to 1.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `KL(p || q)` in nats; `+inf` when `q` misses part of `p`'s support.
pub fn kl(p: &JointTable, q: &JointTable) -> Result<f64> {
    p.check_same_space(q)?;
    Ok(kl_slices(p.probs(), q.probs()))
}

pub(crate) fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            acc += a * (a / b).ln();
        }
    }
    acc.max(0.0)
}

/// `H_p(X_target | X_sources)` in nats.
pub fn cond_entropy(p: &JointTable, spec: &CondSpec) -> Result<f64> {
    spec.check_within(p.space().num_vars())?;
    let mut vars = spec.sources().to_vec();
    vars.push(spec.target());
    let weights = marginal_weights(p, &vars);
    let target_card = p.space().cards()[spec.target()];
    let mut h = 0.0;
    for chunk in weights.chunks(target_card) {
        let mass: f64 = chunk.iter().sum();
        for &w in chunk {
            if w > 0.0 {
                h -= w * (w / mass).ln();
            }
        }
    }
    Ok(h.max(0.0))
}

/// Replaces the conditional part of `p` at `theta`'s target:
/// `out(x) = p(x_{-i}) * theta(x_i | y_i)`.
pub fn m_project_conditional(p: &JointTable, theta: &impl ConditionalDist) -> Result<JointTable> {
    let spec = theta.spec();
    spec.check_within(p.space().num_vars())?;
    let space = p.space();
    let i = spec.target();
    let stride = space.strides()[i];
    let card = space.cards()[i];
    let mut out = vec![0.0; space.total_states()];
    let mut ys = vec![0usize; spec.sources().len()];
    let mut failure = None;
    space.for_each_block(i, |base, state| {
        if failure.is_some() {
            return;
        }
        let mass: f64 = (0..card).map(|k| p.probs()[base + k * stride]).sum();
        if mass <= 0.0 {
            return;
        }
        for (slot, &j) in ys.iter_mut().zip(spec.sources()) {
            *slot = state[j];
        }
        match theta.row(&ys) {
            Some(row) => {
                for (k, &t) in row.iter().enumerate() {
                    out[base + k * stride] = mass * t;
                }
            }
            None => failure = Some(ys.clone()),
        }
    });
    if let Some(config) = failure {
        return Err(FpnError::UncoveredParent { node: i, config });
    }
    Ok(JointTable::from_parts(space.clone(), out))
}

/// `KL(p || E(theta))`, the divergence from `p` to its m-projection onto the
/// conditional part manifold of `theta`.
pub fn kl_to_cond_manifold(p: &JointTable, theta: &impl ConditionalDist) -> Result<f64> {
    let projected = m_project_conditional(p, theta)?;
    kl(p, &projected)
}

/// Node-selection distribution `c(i)` of the random firing process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NodeWeights(Vec<f64>);

impl NodeWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(FpnError::InvalidWeights("no nodes".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(FpnError::InvalidWeights("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FpnError::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weights of `nodes` only, renormalized.
    pub fn restricted(&self, nodes: &[usize]) -> Result<Self> {
        let picked: Vec<f64> = nodes.iter().map(|&i| self.0[i]).collect();
        let sum: f64 = picked.iter().sum();
        if sum.is_nan() || sum <= 0.0 {
            return Err(FpnError::InvalidWeights("no weight on the free nodes".into()));
        }
        Ok(Self(picked.into_iter().map(|w| w / sum).collect()))
    }
}

impl TryFrom<Vec<f64>> for NodeWeights {
    type Error = FpnError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<NodeWeights> for Vec<f64> {
    fn from(w: NodeWeights) -> Self {
        w.0
    }
}

/// Full-conditional divergence
/// `FCD(p || q) = sum_i c(i) <log p(X_i | X_-i) / q(X_i | X_-i)>_p`.
pub fn fcd(p: &JointTable, q: &JointTable, c: &NodeWeights) -> Result<f64> {
    p.check_same_space(q)?;
    let space = p.space();
    if c.len() != space.num_vars() {
        return Err(FpnError::InvalidWeights(format!(
            "{} weights for {} variables",
            c.len(),
            space.num_vars()
        )));
    }
    let mut total = 0.0;
    for (i, &ci) in c.as_slice().iter().enumerate() {
        if ci == 0.0 {
            continue;
        }
        let term = full_conditional_kl(p.probs(), q.probs(), space, i);
        if term.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += ci * term;
    }
    Ok(total.max(0.0))
}

/// `<log p(X_i | X_-i) - log q(X_i | X_-i)>_p`.
fn full_conditional_kl(p: &[f64], q: &[f64], space: &StateSpace, i: usize) -> f64 {
    let stride = space.strides()[i];
    let card = space.cards()[i];
    let mut acc = 0.0;
    let mut infinite = false;
    space.for_each_block(i, |base, _| {
        if infinite {
            return;
        }
        let pm: f64 = (0..card).map(|k| p[base + k * stride]).sum();
        if pm <= 0.0 {
            return;
        }
        let qm: f64 = (0..card).map(|k| q[base + k * stride]).sum();
        for k in 0..card {
            let a = p[base + k * stride];
            if a > 0.0 {
                let b = q[base + k * stride];
                if b <= 0.0 {
                    infinite = true;
                    return;
                }
                acc += a * ((a / pm).ln() - (b / qm).ln());
            }
        }
    });
    if infinite {
        f64::INFINITY
    } else {
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn table4() -> JointTable {
        JointTable::new(StateSpace::binary(2), vec![0.1, 0.2, 0.3, 0.4]).unwrap()
    }

    fn h2(a: f64, b: f64) -> f64 {
        -(a * a.ln() + b * b.ln())
    }

    #[test]
    fn space_rejects_bad_names() {
        assert!(StateSpace::new(vec!["a".into(), "a".into()], vec![2, 2]).is_err());
        assert!(StateSpace::new(vec!["".into()], vec![2]).is_err());
        assert!(StateSpace::new(vec!["a".into()], vec![2, 2]).is_err());
        let huge = StateSpace::new((0..70).map(|i| format!("v{i}")).collect(), vec![2; 70]);
        assert!(matches!(huge, Err(FpnError::InvalidSpace(_))));
    }

    #[test]
    fn encode_is_row_major_var0_slowest() {
        let s = StateSpace::new(vec!["a".into(), "b".into(), "c".into()], vec![2, 3, 2]).unwrap();
        assert_eq!(s.total_states(), 12);
        assert_eq!(s.encode(&[1, 0, 0]), 6);
        assert_eq!(s.encode(&[0, 2, 1]), 5);
        for idx in 0..12 {
            assert_eq!(s.encode(&s.decode(idx)), idx);
        }
    }

    #[test]
    fn marginal_examples() {
        let u = JointTable::uniform(StateSpace::binary(2));
        assert_eq!(marginal(&u, &[0]).unwrap().probs(), &[0.5, 0.5]);
        let delta = JointTable::point_mass(StateSpace::binary(2), &[1, 0]);
        assert_eq!(marginal(&delta, &[1]).unwrap().probs(), &[1.0, 0.0]);
        let m = marginal(&table4(), &[0]).unwrap();
        assert_abs_diff_eq!(m.probs()[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(m.probs()[1], 0.7, epsilon = 1e-15);
        assert!(matches!(marginal(&u, &[]), Err(FpnError::EmptyMarginal)));
    }

    #[test]
    fn conditional_examples() {
        let c = conditional(&table4(), &CondSpec::new(1, [0]).unwrap()).unwrap();
        let r0 = c.row(&[0]).unwrap();
        let r1 = c.row(&[1]).unwrap();
        assert_abs_diff_eq!(r0[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r0[1], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r1[0], 3.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r1[1], 4.0 / 7.0, epsilon = 1e-15);

        // independent p0 x p1
        let p = JointTable::new(StateSpace::binary(2), vec![0.2 * 0.6, 0.2 * 0.4, 0.8 * 0.6, 0.8 * 0.4])
            .unwrap();
        let c = conditional(&p, &CondSpec::new(1, [0]).unwrap()).unwrap();
        for y in 0..2 {
            let r = c.row(&[y]).unwrap();
            assert_abs_diff_eq!(r[0], 0.6, epsilon = 1e-12);
        }

        let delta = JointTable::point_mass(StateSpace::binary(3), &[1, 0, 1]);
        let c = conditional(&delta, &CondSpec::full(2, 3)).unwrap();
        assert_eq!(c.defined_rows(), 1);
        assert_eq!(c.row(&[1, 0]).unwrap(), &[0.0, 1.0]);
        assert!(c.row(&[0, 0]).is_none());
    }

    #[test]
    fn kl_examples() {
        let p = table4();
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        let s = StateSpace::binary(1);
        let a = JointTable::new(s.clone(), vec![1.0, 0.0]).unwrap();
        let b = JointTable::new(s.clone(), vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(kl(&a, &b).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(kl(&b, &a).unwrap(), f64::INFINITY);
        assert!(matches!(kl(&a, &table4()), Err(FpnError::SpaceMismatch)));
    }

    #[test]
    fn cond_entropy_examples() {
        let fair = JointTable::uniform(StateSpace::binary(2));
        assert_abs_diff_eq!(
            cond_entropy(&fair, &CondSpec::new(1, [0]).unwrap()).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
        // x1 = x0
        let det = JointTable::new(StateSpace::binary(2), vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert_eq!(cond_entropy(&det, &CondSpec::new(1, [0]).unwrap()).unwrap(), 0.0);
        let expected = 0.3 * h2(1.0 / 3.0, 2.0 / 3.0) + 0.7 * h2(3.0 / 7.0, 4.0 / 7.0);
        let h = cond_entropy(&table4(), &CondSpec::new(1, [0]).unwrap()).unwrap();
        assert_abs_diff_eq!(h, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(h, 0.66899, epsilon = 5e-6);
        // empty sources: marginal entropy
        let h1 = cond_entropy(&table4(), &CondSpec::empty(1)).unwrap();
        assert_abs_diff_eq!(h1, h2(0.4, 0.6), epsilon = 1e-14);
    }

    #[test]
    fn projection_examples() {
        let u = JointTable::uniform(StateSpace::binary(2));
        // theta(x1 = 1 | x0) = x0
        let target = JointTable::new(StateSpace::binary(2), vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let theta = conditional(&target, &CondSpec::new(1, [0]).unwrap()).unwrap();
        let out = m_project_conditional(&u, &theta).unwrap();
        assert_eq!(out.probs(), &[0.5, 0.0, 0.0, 0.5]);
        let twice = m_project_conditional(&out, &theta).unwrap();
        assert_eq!(twice.probs(), out.probs());

        let p = table4();
        let own = conditional(&p, &CondSpec::full(1, 2)).unwrap();
        let fixed = m_project_conditional(&p, &own).unwrap();
        for (a, b) in fixed.probs().iter().zip(p.probs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn projection_reports_uncovered_rows() {
        let delta = JointTable::point_mass(StateSpace::binary(2), &[0, 0]);
        let theta = conditional(&delta, &CondSpec::new(1, [0]).unwrap()).unwrap();
        let err = m_project_conditional(&JointTable::uniform(StateSpace::binary(2)), &theta);
        assert!(matches!(err, Err(FpnError::UncoveredParent { node: 1, .. })));
    }

    #[test]
    fn kl_to_manifold_examples() {
        let p = table4();
        let full = CondSpec::full(1, 2);
        let theta = conditional(&p, &full).unwrap();
        assert_abs_diff_eq!(kl_to_cond_manifold(&p, &theta).unwrap(), 0.0, epsilon = 1e-15);

        // Empty sources: the divergence is the mutual information.
        let empty = CondSpec::empty(1);
        let theta = conditional(&p, &empty).unwrap();
        let lhs = kl_to_cond_manifold(&p, &theta).unwrap();
        let rhs = cond_entropy(&p, &empty).unwrap() - cond_entropy(&p, &full).unwrap();
        // brute force I(X0;X1)
        let (m0, m1) = ([0.3, 0.7], [0.4, 0.6]);
        let mut mi = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let pab = p.probs()[2 * a + b];
                mi += pab * (pab / (m0[a] * m1[b])).ln();
            }
        }
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        assert_abs_diff_eq!(lhs, mi, epsilon = 1e-12);
        assert_abs_diff_eq!(lhs, 0.0040217, epsilon = 5e-8);

        let indep = JointTable::new(StateSpace::binary(2), vec![0.12, 0.08, 0.48, 0.32]).unwrap();
        let theta = conditional(&indep, &empty).unwrap();
        assert_abs_diff_eq!(kl_to_cond_manifold(&indep, &theta).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fcd_examples() {
        let p = table4();
        let c = NodeWeights::uniform(2);
        assert_eq!(fcd(&p, &p, &c).unwrap(), 0.0);

        // mean field q
        let m0 = [0.3, 0.7];
        let m1 = [0.4, 0.6];
        let q = JointTable::new(
            StateSpace::binary(2),
            vec![m0[0] * m1[0], m0[0] * m1[1], m0[1] * m1[0], m0[1] * m1[1]],
        )
        .unwrap();
        // Brute-force enumeration: q's full conditionals are its marginals.
        let pv = p.probs();
        let mut expected = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let pab = pv[2 * a + b];
                let p1_given_0 = pab / (pv[2 * a] + pv[2 * a + 1]);
                let p0_given_1 = pab / (pv[b] + pv[2 + b]);
                expected += 0.5 * pab * (p0_given_1 / m0[a]).ln();
                expected += 0.5 * pab * (p1_given_0 / m1[b]).ln();
            }
        }
        assert_abs_diff_eq!(fcd(&p, &q, &c).unwrap(), expected, epsilon = 1e-14);
        assert!(expected > 0.0);

        assert!(fcd(&p, &q, &NodeWeights::uniform(3)).is_err());
        assert!(NodeWeights::new(vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn fcd_infinite_when_q_lacks_support() {
        let p = table4();
        let q = JointTable::new(StateSpace::binary(2), vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert_eq!(fcd(&p, &q, &NodeWeights::uniform(2)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn slice_conditions_on_fixed_values() {
        let p = table4();
        let (mass, s) = p.slice(&[(0, 1)]).unwrap().unwrap();
        assert_abs_diff_eq!(mass, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(s.probs()[0], 3.0 / 7.0, epsilon = 1e-15);
        assert!(p.slice(&[(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn joint_json_round_trip() {
        let p = table4();
        let text = serde_json::to_string(&p.to_json()).unwrap();
        assert_eq!(text, r#"{"names":["x0","x1"],"cards":[2,2],"probs":[0.1,0.2,0.3,0.4]}"#);
        let back = JointTable::from_json(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
