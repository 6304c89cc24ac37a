//! Exact analysis of firing processes on small state spaces.
//!
//! The transition operator of firing node `i` maps a distribution `p` to
//! `p(X_-i) theta_i(X_i | Y_i)`. Operators are stored per node as one table
//! row per configuration of `X_-i` and applied as single-coordinate updates,
//! so neither the random-process mixture nor the sequential sweep product is
//! ever materialized as a dense matrix.

use std::collections::HashMap;

use serde::Serialize;

use crate::dist::{
    self, fcd, kl, kl_to_cond_manifold, ConditionalDist, JointTable, NodeWeights, StateSpace,
    DEFAULT_DENSE_LIMIT,
};
use crate::engine::{reduce_model, Evidence, Process};
use crate::learn::FpnModel;
use crate::serde_util;
use crate::{FpnError, Result};

/// The kernel `W_i` of a single node.
#[derive(Debug, Clone)]
pub struct NodeKernel {
    node: usize,
    rows: Vec<Vec<f64>>,
    /// Row id per block of `X_-i`, in block order.
    block_rows: Vec<u32>,
}

impl NodeKernel {
    fn new(space: &StateSpace, theta: &impl ConditionalDist) -> Result<Self> {
        let spec = theta.spec();
        let node = spec.target();
        let mut ids: HashMap<Vec<usize>, u32> = HashMap::new();
        let mut rows = Vec::new();
        let mut block_rows = Vec::with_capacity(space.total_states() / space.cards()[node]);
        let mut failure = None;
        space.for_each_block(node, |_, state| {
            let key = spec.source_values(state);
            let id = match ids.get(&key) {
                Some(&id) => id,
                None => {
                    let Some(row) = theta.row(&key) else {
                        failure.get_or_insert_with(|| key.clone());
                        return;
                    };
                    rows.push(row.to_vec());
                    let id = (rows.len() - 1) as u32;
                    ids.insert(key, id);
                    id
                }
            };
            block_rows.push(id);
        });
        if let Some(config) = failure {
            return Err(FpnError::UncoveredParent { node, config });
        }
        Ok(Self {
            node,
            rows,
            block_rows,
        })
    }

    pub fn node(&self) -> usize {
        self.node
    }

    /// `out = p W_i`.
    fn apply_into(&self, space: &StateSpace, p: &[f64], out: &mut [f64], weight: f64, accumulate: bool) {
        let stride = space.strides()[self.node];
        let card = space.cards()[self.node];
        let span = stride * card;
        let mut block = 0;
        for hi in (0..p.len()).step_by(span) {
            for lo in 0..stride {
                let base = hi + lo;
                let mut mass = 0.0;
                for k in 0..card {
                    mass += p[base + k * stride];
                }
                let row = &self.rows[self.block_rows[block] as usize];
                for (k, &t) in row.iter().enumerate() {
                    let v = weight * (mass * t);
                    if accumulate {
                        out[base + k * stride] += v;
                    } else {
                        out[base + k * stride] = v;
                    }
                }
                block += 1;
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Composition {
    /// `sum_k w_k W_k`
    Mixture(Vec<f64>),
    /// `W_0 W_1 ... W_k` applied left to right to a row vector.
    Product,
}

/// A row-stochastic operator on a joint state space built from node kernels.
#[derive(Debug, Clone)]
pub struct TransitionOp {
    space: StateSpace,
    kernels: Vec<NodeKernel>,
    composition: Composition,
}

impl TransitionOp {
    pub fn identity(space: StateSpace) -> Self {
        Self {
            space,
            kernels: Vec::new(),
            composition: Composition::Product,
        }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// Row vector times operator.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.space.total_states(), "distribution length mismatch");
        match &self.composition {
            Composition::Mixture(weights) => {
                let mut out = vec![0.0; p.len()];
                for (kernel, &w) in self.kernels.iter().zip(weights) {
                    if w > 0.0 {
                        kernel.apply_into(&self.space, p, &mut out, w, true);
                    }
                }
                out
            }
            Composition::Product => {
                let mut cur = p.to_vec();
                let mut next = vec![0.0; p.len()];
                for kernel in &self.kernels {
                    kernel.apply_into(&self.space, &cur, &mut next, 1.0, false);
                    std::mem::swap(&mut cur, &mut next);
                }
                cur
            }
        }
    }

    pub fn apply_table(&self, p: &JointTable) -> Result<JointTable> {
        if p.space().cards() != self.space.cards() {
            return Err(FpnError::SpaceMismatch);
        }
        Ok(JointTable::from_parts(self.space.clone(), self.apply(p.probs())))
    }

    /// Dense matrix, row `x` = `e_x W`. Quadratic in the state count.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let t = self.space.total_states();
        (0..t)
            .map(|x| {
                let mut e = vec![0.0; t];
                e[x] = 1.0;
                self.apply(&e)
            })
            .collect()
    }
}

fn model_space(model: &FpnModel, limit: usize) -> Result<StateSpace> {
    model.schema().state_space(limit)
}

fn kernels(model: &FpnModel, space: &StateSpace, nodes: &[usize]) -> Result<Vec<NodeKernel>> {
    use rayon::prelude::*;
    nodes
        .par_iter()
        .map(|&i| NodeKernel::new(space, model.node(i)))
        .collect()
}

/// `W_i` of a model.
pub fn build_w_i(model: &FpnModel, i: usize) -> Result<TransitionOp> {
    build_w_i_limited(model, i, DEFAULT_DENSE_LIMIT)
}

pub fn build_w_i_limited(model: &FpnModel, i: usize, limit: usize) -> Result<TransitionOp> {
    let space = model_space(model, limit)?;
    let kernels = kernels(model, &space, &[i])?;
    Ok(TransitionOp {
        space,
        kernels,
        composition: Composition::Product,
    })
}

/// Random-process operator `W = sum_i c(i) W_i`.
pub fn build_w_random(model: &FpnModel, c: &NodeWeights) -> Result<TransitionOp> {
    build_w_random_limited(model, c, DEFAULT_DENSE_LIMIT)
}

pub fn build_w_random_limited(model: &FpnModel, c: &NodeWeights, limit: usize) -> Result<TransitionOp> {
    let n = model.num_nodes();
    if c.len() != n {
        return Err(FpnError::InvalidWeights(format!("{} weights for {n} nodes", c.len())));
    }
    let space = model_space(model, limit)?;
    let nodes: Vec<usize> = (0..n).collect();
    Ok(TransitionOp {
        kernels: kernels(model, &space, &nodes)?,
        space,
        composition: Composition::Mixture(c.as_slice().to_vec()),
    })
}

/// One sequential sweep starting at node `start`:
/// `W_start ... W_{n-1} W_0 ... W_{start-1}`.
pub fn build_w_cycle(model: &FpnModel, start: usize) -> Result<TransitionOp> {
    build_w_cycle_limited(model, start, DEFAULT_DENSE_LIMIT)
}

pub fn build_w_cycle_limited(model: &FpnModel, start: usize, limit: usize) -> Result<TransitionOp> {
    let n = model.num_nodes();
    let order: Vec<usize> = (0..n).map(|k| (start + k) % n).collect();
    let space = model_space(model, limit)?;
    Ok(TransitionOp {
        kernels: kernels(model, &space, &order)?,
        space,
        composition: Composition::Product,
    })
}

/// Limiting distribution found by power iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryResult {
    pub dist: JointTable,
    /// Index of the iteration at which the step difference fell below the
    /// tolerance, or the iteration cap.
    pub iterations: usize,
    /// L1 norm of the last step difference.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub limit: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 1_000_000,
            limit: DEFAULT_DENSE_LIMIT,
        }
    }
}

/// Power iteration from the uniform distribution.
pub fn stationary(op: &TransitionOp, tol: f64, max_iter: usize) -> StationaryResult {
    let t = op.space().total_states();
    stationary_from(op, vec![1.0 / t as f64; t], tol, max_iter)
}

/// Power iteration from `start`, stopping when the L1 difference between
/// successive iterates is at most `tol`.
pub fn stationary_from(op: &TransitionOp, start: Vec<f64>, tol: f64, max_iter: usize) -> StationaryResult {
    let mut cur = start;
    let mut residual = f64::INFINITY;
    let mut iterations = max_iter;
    let mut converged = false;
    for it in 0..max_iter {
        let mut next = op.apply(&cur);
        let sum: f64 = next.iter().sum();
        if sum > 0.0 {
            next.iter_mut().for_each(|v| *v /= sum);
        }
        residual = cur.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        cur = next;
        if residual <= tol {
            iterations = it;
            converged = true;
            break;
        }
    }
    StationaryResult {
        dist: JointTable::from_parts(op.space().clone(), cur),
        iterations,
        residual,
        converged,
    }
}

/// Stationary distribution of the random process with the model's weights.
pub fn stationary_random(model: &FpnModel, opts: &StationaryOptions) -> Result<StationaryResult> {
    let op = build_w_random_limited(model, model.weights(), opts.limit)?;
    Ok(stationary(&op, opts.tol, opts.max_iter))
}

/// Sequential-process stationary distribution: the uniform mixture of the
/// per-phase limits of the sweep operators.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialStationary {
    pub mixture: StationaryResult,
    /// `phases[i]` is the limit of the sweep starting at node `i`, i.e. the
    /// state distribution just before node `i` fires.
    pub phases: Vec<StationaryResult>,
    /// `max_i |p_i W_i - p_{i+1}|_1`.
    pub phase_shift_residual: f64,
}

/// Tolerance of the phase-shift consistency check.
pub const PHASE_SHIFT_TOL: f64 = 1e-9;

pub fn stationary_sequential(model: &FpnModel, opts: &StationaryOptions) -> Result<SequentialStationary> {
    let n = model.num_nodes();
    let space = model_space(model, opts.limit)?;
    let all: Vec<usize> = (0..n).collect();
    let ks = kernels(model, &space, &all)?;
    let t = space.total_states();
    let phases: Vec<StationaryResult> = (0..n)
        .map(|start| {
            let op = TransitionOp {
                space: space.clone(),
                kernels: (0..n).map(|k| ks[(start + k) % n].clone()).collect(),
                composition: Composition::Product,
            };
            stationary_from(&op, vec![1.0 / t as f64; t], opts.tol, opts.max_iter)
        })
        .collect();
    let mut shift = 0.0f64;
    for i in 0..n {
        let mut moved = vec![0.0; t];
        ks[i].apply_into(&space, phases[i].dist.probs(), &mut moved, 1.0, false);
        let next = phases[(i + 1) % n].dist.probs();
        let d: f64 = moved.iter().zip(next).map(|(a, b)| (a - b).abs()).sum();
        shift = shift.max(d);
    }
    let mut mix = vec![0.0; t];
    for ph in &phases {
        for (m, v) in mix.iter_mut().zip(ph.dist.probs()) {
            *m += v / n as f64;
        }
    }
    let mixture = StationaryResult {
        dist: JointTable::from_parts(space, mix),
        iterations: phases.iter().map(|p| p.iterations).max().unwrap_or(0),
        residual: phases.iter().map(|p| p.residual).fold(0.0, f64::max),
        converged: phases.iter().all(|p| p.converged) && shift <= PHASE_SHIFT_TOL,
    };
    Ok(SequentialStationary {
        mixture,
        phases,
        phase_shift_residual: shift,
    })
}

/// Model distribution for either process.
pub fn model_stationary(model: &FpnModel, process: Process, opts: &StationaryOptions) -> Result<StationaryResult> {
    match process {
        Process::Random => stationary_random(model, opts),
        Process::Sequential => Ok(stationary_sequential(model, opts)?.mixture),
    }
}

/// Limit of partial sampling on the original model: only free nodes fire
/// (random process with renormalized weights, or sequential in ascending
/// order), starting uniform on the evidence slice. Returned over the free
/// variables.
pub fn stationary_under_evidence(
    model: &FpnModel,
    evidence: &Evidence,
    process: Process,
    opts: &StationaryOptions,
) -> Result<StationaryResult> {
    let space = model_space(model, opts.limit)?;
    evidence.validate(model.schema())?;
    let free = evidence.free_vars(model.num_nodes());
    if free.is_empty() {
        return Err(FpnError::InvalidEvidence("every variable is fixed by evidence".into()));
    }
    let ks = kernels(model, &space, &free)?;
    let t = space.total_states();
    let mut start = vec![0.0; t];
    let mut state = vec![0; space.num_vars()];
    for (idx, slot) in start.iter_mut().enumerate() {
        space.decode_into(idx, &mut state);
        if evidence.iter().all(|(v, x)| state[v] == x) {
            *slot = 1.0;
        }
    }
    let mass: f64 = start.iter().sum();
    start.iter_mut().for_each(|v| *v /= mass);

    let full = match process {
        Process::Random => {
            let c = model.weights().restricted(&free)?;
            let op = TransitionOp {
                space: space.clone(),
                kernels: ks,
                composition: Composition::Mixture(c.as_slice().to_vec()),
            };
            stationary_from(&op, start, opts.tol, opts.max_iter)
        }
        Process::Sequential => {
            let m = ks.len();
            let phases: Vec<StationaryResult> = (0..m)
                .map(|s| {
                    let op = TransitionOp {
                        space: space.clone(),
                        kernels: (0..m).map(|k| ks[(s + k) % m].clone()).collect(),
                        composition: Composition::Product,
                    };
                    stationary_from(&op, start.clone(), opts.tol, opts.max_iter)
                })
                .collect();
            let mut mix = vec![0.0; t];
            for ph in &phases {
                for (a, b) in mix.iter_mut().zip(ph.dist.probs()) {
                    *a += b / m as f64;
                }
            }
            StationaryResult {
                dist: JointTable::from_parts(space.clone(), mix),
                iterations: phases.iter().map(|p| p.iterations).max().unwrap_or(0),
                residual: phases.iter().map(|p| p.residual).fold(0.0, f64::max),
                converged: phases.iter().all(|p| p.converged),
            }
        }
    };
    let (_, restricted) = full
        .dist
        .slice(&evidence.pairs())?
        .ok_or_else(|| FpnError::InvalidEvidence("evidence slice lost all mass".into()))?;
    Ok(StationaryResult {
        dist: restricted,
        ..full
    })
}

/// Divergences relating the data distribution to the model distribution of
/// the random process, including the upper bound on the full-conditional
/// divergence and the Jensen gap that closes it into an identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FcdReport {
    #[serde(serialize_with = "serde_util::real")]
    pub kl_pi_piprime: f64,
    #[serde(serialize_with = "serde_util::real")]
    pub fcd: f64,
    /// `sum_i c(i) KL(pi || E(theta_i))`
    #[serde(serialize_with = "serde_util::real")]
    pub bound_rhs: f64,
    /// `<log sum_i c(i) pi'_i>_pi - sum_i c(i) <log pi'_i>_pi`
    #[serde(serialize_with = "serde_util::real")]
    pub jensen_gap: f64,
    /// `|fcd + jensen_gap - bound_rhs|`
    #[serde(serialize_with = "serde_util::real")]
    pub identity_residual: f64,
    /// `KL(pi || E(theta_i))` per node.
    #[serde(serialize_with = "serde_util::reals")]
    pub per_node: Vec<f64>,
    pub stationary_iterations: usize,
    pub stationary_converged: bool,
}

/// Divergence report for the random process. Sequential models are refused:
/// the bound is a statement about the random process only.
pub fn fcd_bound_report(
    model: &FpnModel,
    pi: &JointTable,
    process: Process,
    opts: &StationaryOptions,
) -> Result<FcdReport> {
    if process != Process::Random {
        return Err(FpnError::Unsupported(
            "the full-conditional divergence bound applies to the random process only".into(),
        ));
    }
    let space = model_space(model, opts.limit)?;
    if space.cards() != pi.space().cards() {
        return Err(FpnError::SpaceMismatch);
    }
    let c = model.weights();
    let op = build_w_random_limited(model, c, opts.limit)?;
    let st = stationary(&op, opts.tol, opts.max_iter);
    let pi_prime = &st.dist;

    let per_node = model
        .nodes()
        .iter()
        .map(|cpt| kl_to_cond_manifold(pi, cpt))
        .collect::<Result<Vec<f64>>>()?;
    let bound_rhs: f64 = per_node
        .iter()
        .zip(c.as_slice())
        .filter(|(_, &w)| w > 0.0)
        .map(|(k, w)| k * w)
        .sum();

    // pi'_i = pi' W_i
    let t = space.total_states();
    let mut log_mix_weighted = vec![0.0; t];
    let mut mix = vec![0.0; t];
    for (kernel, &w) in op.kernels.iter().zip(c.as_slice()) {
        if w == 0.0 {
            continue;
        }
        let mut pi_i = vec![0.0; t];
        kernel.apply_into(&space, pi_prime.probs(), &mut pi_i, 1.0, false);
        for x in 0..t {
            mix[x] += w * pi_i[x];
            if pi.probs()[x] > 0.0 {
                log_mix_weighted[x] += w * pi_i[x].ln();
            }
        }
    }
    let mut jensen_gap = 0.0;
    for x in 0..t {
        let px = pi.probs()[x];
        if px > 0.0 {
            jensen_gap += px * (mix[x].ln() - log_mix_weighted[x]);
        }
    }
    let fcd = fcd(pi, pi_prime, c)?;
    let identity_residual = (fcd + jensen_gap - bound_rhs).abs();
    Ok(FcdReport {
        kl_pi_piprime: kl(pi, pi_prime)?,
        fcd,
        bound_rhs,
        jensen_gap,
        identity_residual,
        per_node,
        stationary_iterations: st.iterations,
        stationary_converged: st.converged,
    })
}

/// Both sides of the posterior decomposition for one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDecomposition {
    pub node: usize,
    /// `KL(pi || E(theta_i))`
    #[serde(serialize_with = "serde_util::real")]
    pub lhs: f64,
    /// `sum_{x_f} pi(x_f) KL(pi(X_-f | x_f) || E(theta_if))`
    #[serde(serialize_with = "serde_util::real")]
    pub rhs: f64,
    #[serde(serialize_with = "serde_util::real")]
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorCheck {
    pub evidence_vars: Vec<usize>,
    pub nodes: Vec<NodeDecomposition>,
    #[serde(serialize_with = "serde_util::real")]
    pub max_residual: f64,
}

/// Checks that the divergence of `pi` from each free node's conditional part
/// manifold equals the `pi(x_f)`-weighted divergences of the posterior slices
/// from the reduced network's manifolds, for the evidence variables `f`.
pub fn posterior_decomposition_check(model: &FpnModel, pi: &JointTable, f: &[usize]) -> Result<PosteriorCheck> {
    let n = model.num_nodes();
    if pi.space().cards() != model.schema().cards() {
        return Err(FpnError::SpaceMismatch);
    }
    let mut f: Vec<usize> = f.to_vec();
    f.sort_unstable();
    f.dedup();
    if f.iter().any(|&v| v >= n) {
        return Err(FpnError::InvalidEvidence("evidence variable out of range".into()));
    }
    let free: Vec<usize> = (0..n).filter(|v| !f.contains(v)).collect();
    if free.is_empty() {
        return Err(FpnError::InvalidEvidence("every variable is fixed by evidence".into()));
    }
    let lhs = free
        .iter()
        .map(|&i| kl_to_cond_manifold(pi, model.node(i)))
        .collect::<Result<Vec<f64>>>()?;
    let rhs = if f.is_empty() {
        lhs.clone()
    } else {
        let cards = pi.space().cards();
        let f_cards: Vec<usize> = f.iter().map(|&v| cards[v]).collect();
        let combos: usize = f_cards.iter().product();
        let mut rhs = vec![0.0; free.len()];
        let mut values = vec![0usize; f.len()];
        for _ in 0..combos {
            let pairs: Vec<(usize, usize)> = f.iter().copied().zip(values.iter().copied()).collect();
            if let Some((mass, cond)) = pi.slice(&pairs)? {
                let reduced = reduce_model(model, &Evidence::from_pairs(pairs))?;
                for (k, slot) in rhs.iter_mut().enumerate() {
                    *slot += mass * kl_to_cond_manifold(&cond, reduced.node(k))?;
                }
            }
            for (slot, &c) in values.iter_mut().zip(&f_cards).rev() {
                *slot += 1;
                if *slot < c {
                    break;
                }
                *slot = 0;
            }
        }
        rhs
    };
    let nodes: Vec<NodeDecomposition> = free
        .iter()
        .zip(lhs.iter().zip(&rhs))
        .map(|(&node, (&l, &r))| NodeDecomposition {
            node,
            lhs: l,
            rhs: r,
            residual: (l - r).abs(),
        })
        .collect();
    let max_residual = nodes.iter().map(|d| d.residual).fold(0.0, f64::max);
    Ok(PosteriorCheck {
        evidence_vars: f,
        nodes,
        max_residual,
    })
}

/// `(KL(pi || pi'), KL(pi || pi_real), KL(pi' || pi_real))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlTriple {
    #[serde(serialize_with = "serde_util::real")]
    pub pi_piprime: f64,
    #[serde(serialize_with = "serde_util::real")]
    pub pi_real: f64,
    #[serde(serialize_with = "serde_util::real")]
    pub piprime_real: f64,
}

impl KlTriple {
    /// The data distribution is closer to the model than to the truth.
    pub fn model_closer_to_data(&self) -> bool {
        self.pi_piprime <= self.pi_real
    }

    /// The truth is closer to the model than to the data distribution.
    pub fn model_closer_to_truth(&self) -> bool {
        self.piprime_real <= self.pi_real
    }
}

pub fn kl_triple(pi: &JointTable, pi_prime: &JointTable, pi_real: &JointTable) -> Result<KlTriple> {
    Ok(KlTriple {
        pi_piprime: dist::kl(pi, pi_prime)?,
        pi_real: dist::kl(pi, pi_real)?,
        piprime_real: dist::kl(pi_prime, pi_real)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{m_project_conditional, marginal, CondSpec};
    use crate::learn::FallbackPolicy;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joint(rng: &mut impl Rng, n: usize) -> JointTable {
        let space = StateSpace::binary(n);
        let w = (0..space.total_states()).map(|_| rng.gen_range(0.05..1.0)).collect();
        JointTable::from_weights(space, w).unwrap()
    }

    fn random_specs(rng: &mut impl Rng, n: usize) -> Vec<CondSpec> {
        (0..n)
            .map(|i| CondSpec::new(i, (0..n).filter(|&j| j != i && rng.gen_bool(0.5))).unwrap())
            .collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn kernel_matches_projection_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let pi = random_joint(&mut rng, 3);
            let specs = random_specs(&mut rng, 3);
            let model = FpnModel::from_joint(&pi, &specs, FallbackPolicy::Marginal).unwrap();
            let p = random_joint(&mut rng, 3);
            for i in 0..3 {
                let w = build_w_i(&model, i).unwrap();
                let via_op = w.apply(p.probs());
                let via_proj = m_project_conditional(&p, model.node(i)).unwrap();
                assert!(max_abs_diff(&via_op, via_proj.probs()) <= 1e-14);
                let twice = w.apply(&via_op);
                assert!(max_abs_diff(&twice, &via_op) <= 1e-15);
                for row in w.to_dense() {
                    assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                    assert!(row.iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn point_mass_rows_give_zero_one_matrix() {
        let p = JointTable::new(StateSpace::binary(2), vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let model = FpnModel::from_joint(
            &p,
            &[CondSpec::new(0, [1]).unwrap(), CondSpec::new(1, [0]).unwrap()],
            FallbackPolicy::Marginal,
        )
        .unwrap();
        let dense = build_w_i(&model, 1).unwrap().to_dense();
        assert_eq!(
            dense,
            vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0, 1.0]
            ]
        );
    }

    #[test]
    fn random_operator_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pi = random_joint(&mut rng, 3);
        let model = FpnModel::from_joint(&pi, &random_specs(&mut rng, 3), FallbackPolicy::Marginal).unwrap();
        let c = NodeWeights::new(vec![0.2, 0.5, 0.3]).unwrap();
        let w = build_w_random(&model, &c).unwrap();
        let p = random_joint(&mut rng, 3);
        let mut expected = vec![0.0; 8];
        for i in 0..3 {
            let wi = build_w_i(&model, i).unwrap().apply(p.probs());
            for (e, v) in expected.iter_mut().zip(wi) {
                *e += c.as_slice()[i] * v;
            }
        }
        assert!(max_abs_diff(&w.apply(p.probs()), &expected) <= 1e-15);

        let one = FpnModel::from_joint(&marginal(&pi, &[0]).unwrap(), &[CondSpec::empty(0)], FallbackPolicy::Marginal)
            .unwrap();
        let w = build_w_random(&one, &NodeWeights::uniform(1)).unwrap().to_dense();
        assert_eq!(w, build_w_i(&one, 0).unwrap().to_dense());
    }

    #[test]
    fn identity_returns_start() {
        let op = TransitionOp::identity(StateSpace::binary(2));
        let r = stationary(&op, 1e-12, 10);
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.dist.probs(), &[0.25; 4]);
    }

    #[test]
    fn edgeless_model_gives_mean_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pi = random_joint(&mut rng, 3);
        let specs: Vec<_> = (0..3).map(CondSpec::empty).collect();
        let model = FpnModel::from_joint(&pi, &specs, FallbackPolicy::Marginal).unwrap();
        let st = stationary_random(&model, &StationaryOptions::default()).unwrap();
        assert!(st.converged);
        let m: Vec<Vec<f64>> = (0..3).map(|i| marginal(&pi, &[i]).unwrap().into_probs()).collect();
        for x in 0..8 {
            let s = pi.space().decode(x);
            let expected = m[0][s[0]] * m[1][s[1]] * m[2][s[2]];
            assert_abs_diff_eq!(st.dist.probs()[x], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn sequential_single_node_matches_random() {
        let pi = JointTable::new(StateSpace::binary(1), vec![0.3, 0.7]).unwrap();
        let model = FpnModel::from_joint(&pi, &[CondSpec::empty(0)], FallbackPolicy::Marginal).unwrap();
        let opts = StationaryOptions::default();
        let seq = stationary_sequential(&model, &opts).unwrap();
        let rnd = stationary(&build_w_i(&model, 0).unwrap(), opts.tol, opts.max_iter);
        assert_eq!(seq.mixture.dist, rnd.dist);
    }

    #[test]
    fn sequential_phases_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pi = random_joint(&mut rng, 3);
        let specs = vec![
            CondSpec::new(0, [1]).unwrap(),
            CondSpec::new(1, [2]).unwrap(),
            CondSpec::new(2, [0]).unwrap(),
        ];
        let model = FpnModel::from_joint(&pi, &specs, FallbackPolicy::Marginal).unwrap();
        let seq = stationary_sequential(&model, &StationaryOptions::default()).unwrap();
        assert!(seq.mixture.converged);
        assert!(seq.phase_shift_residual <= PHASE_SHIFT_TOL);
        // Each phase limit is the state just before node i fires, so
        // firing i lands on E(theta_i).
        for i in 0..3 {
            let after = build_w_i(&model, i).unwrap().apply(seq.phases[i].dist.probs());
            let next = seq.phases[(i + 1) % 3].dist.probs();
            assert!(max_abs_diff(&after, next) <= 1e-9);
        }
    }

    #[test]
    fn fcd_report_refuses_sequential() {
        let pi = JointTable::uniform(StateSpace::binary(2));
        let model = FpnModel::from_joint(&pi, &[CondSpec::empty(0), CondSpec::empty(1)], FallbackPolicy::Marginal)
            .unwrap();
        let err = fcd_bound_report(&model, &pi, Process::Sequential, &StationaryOptions::default());
        assert!(matches!(err, Err(FpnError::Unsupported(_))));
    }

    #[test]
    fn complete_graph_report_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pi = random_joint(&mut rng, 3);
        let specs: Vec<_> = (0..3).map(|i| CondSpec::full(i, 3)).collect();
        let model = FpnModel::from_joint(&pi, &specs, FallbackPolicy::Marginal).unwrap();
        let r = fcd_bound_report(&model, &pi, Process::Random, &StationaryOptions::default()).unwrap();
        assert!(r.kl_pi_piprime < 1e-12);
        assert!(r.fcd < 1e-12);
        assert!(r.bound_rhs < 1e-15);
        assert!(r.jensen_gap.abs() < 1e-12);
        let json = serde_json::to_value(&r).unwrap();
        for key in ["kl_pi_piprime", "fcd", "bound_rhs", "jensen_gap", "identity_residual", "per_node"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn infinite_divergences_render_as_inf() {
        let t = KlTriple {
            pi_piprime: f64::INFINITY,
            pi_real: 0.5,
            piprime_real: 0.0,
        };
        assert_eq!(
            serde_json::to_string(&t).unwrap(),
            r#"{"pi_piprime":"inf","pi_real":0.5,"piprime_real":0.0}"#
        );
    }

    #[test]
    fn kl_triple_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_joint(&mut rng, 2);
        let q = random_joint(&mut rng, 2);
        let t = kl_triple(&p, &p, &p).unwrap();
        assert_eq!((t.pi_piprime, t.pi_real, t.piprime_real), (0.0, 0.0, 0.0));
        let t = kl_triple(&p, &q, &p).unwrap();
        assert_eq!(t.pi_piprime, kl(&p, &q).unwrap());
        assert_eq!(t.pi_real, 0.0);
    }

    #[test]
    fn posterior_check_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pi = random_joint(&mut rng, 3);
        let specs = vec![CondSpec::new(0, [1]).unwrap(), CondSpec::new(1, [0]).unwrap(), CondSpec::empty(2)];
        let model = FpnModel::from_joint(&pi, &specs, FallbackPolicy::Marginal).unwrap();
        let none = posterior_decomposition_check(&model, &pi, &[]).unwrap();
        assert_eq!(none.max_residual, 0.0);
        let r = posterior_decomposition_check(&model, &pi, &[2]).unwrap();
        assert_eq!(r.nodes.len(), 2);
        assert!(r.max_residual <= 1e-12);
    }
}
