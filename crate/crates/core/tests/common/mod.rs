#![allow(dead_code)]

use fpn_core::data::{Dataset, Schema};
use fpn_core::dist::{CondSpec, JointTable, StateSpace};
use fpn_core::learn::{FallbackPolicy, FpnModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn space(cards: &[usize]) -> StateSpace {
    StateSpace::new((0..cards.len()).map(|i| format!("x{i}")).collect(), cards.to_vec()).unwrap()
}

/// Every entry at least `floor` before normalization.
pub fn positive_table(space: StateSpace, floor: f64, rng: &mut impl Rng) -> JointTable {
    let weights = (0..space.total_states()).map(|_| floor + rng.gen::<f64>()).collect();
    JointTable::from_weights(space, weights).unwrap()
}

/// Each other variable is a source with probability one half.
pub fn random_specs(n: usize, rng: &mut impl Rng) -> Vec<CondSpec> {
    (0..n)
        .map(|i| CondSpec::new(i, (0..n).filter(|&j| j != i && rng.gen_bool(0.5))).unwrap())
        .collect()
}

pub fn complete_specs(n: usize) -> Vec<CondSpec> {
    (0..n).map(|i| CondSpec::full(i, n)).collect()
}

pub fn empty_specs(n: usize) -> Vec<CondSpec> {
    (0..n).map(CondSpec::empty).collect()
}

/// Random full-support distribution and a model with tables read off it.
pub fn random_model(cards: &[usize], rng: &mut impl Rng) -> (JointTable, FpnModel) {
    let pi = positive_table(space(cards), 0.05, rng);
    let specs = random_specs(cards.len(), rng);
    let model = FpnModel::from_joint(&pi, &specs, FallbackPolicy::Marginal).unwrap();
    (pi, model)
}

/// Dataset containing every joint state between 1 and `max_count` times.
pub fn full_support_dataset(cards: &[usize], max_count: usize, rng: &mut impl Rng) -> Dataset {
    let sp = space(cards);
    let schema = Schema::new(sp.names().to_vec(), cards.to_vec()).unwrap();
    let mut rows = Vec::new();
    for x in 0..sp.total_states() {
        for _ in 0..rng.gen_range(1..=max_count) {
            rows.push(sp.decode(x));
        }
    }
    Dataset::new(schema, rows).unwrap()
}

pub fn product_of_marginals(p: &JointTable) -> Vec<f64> {
    let sp = p.space();
    let margins: Vec<Vec<f64>> = (0..sp.num_vars())
        .map(|v| fpn_core::dist::marginal(p, &[v]).unwrap().probs().to_vec())
        .collect();
    (0..sp.total_states())
        .map(|x| sp.decode(x).iter().enumerate().map(|(v, &s)| margins[v][s]).product())
        .collect()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
