//! Parameter learning and node-by-node structure selection.
//!
//! Every node learns independently: its information sources are chosen by a
//! greedy forward-backward search on a node-local information criterion, and
//! its table is the empirical conditional of the data given those sources.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{cond_entropy_counts, empirical_cpt, Dataset, Schema};
use crate::dist::{conditional, marginal, CondSpec, ConditionalDist, JointTable, NodeWeights, SUM_TOL};
use crate::{FpnError, Result, FORMAT_VERSION};

/// What a node uses for source configurations absent from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackPolicy {
    /// Empirical marginal of the target variable.
    #[default]
    Marginal,
    Uniform,
}

impl FromStr for FallbackPolicy {
    type Err = FpnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginal" => Ok(Self::Marginal),
            "uniform" => Ok(Self::Uniform),
            other => Err(FpnError::InvalidConfig(format!("unknown fallback policy {other:?}"))),
        }
    }
}

/// Node-by-node information criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Criterion {
    /// `N H(X_i | Y_i) + k_i log(N) / 2`
    #[default]
    #[serde(rename = "mdl")]
    Mdl,
    /// `N H(X_i | Y_i) + k_i`
    #[serde(rename = "aic")]
    Aic,
}

impl FromStr for Criterion {
    type Err = FpnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mdl" => Ok(Self::Mdl),
            "aic" => Ok(Self::Aic),
            other => Err(FpnError::InvalidConfig(format!("unknown criterion {other:?}"))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Mdl => "mdl",
            Criterion::Aic => "aic",
        })
    }
}

/// Conditional probability table of one node.
///
/// Rows are stored only for source configurations that carry mass; every
/// other configuration is served by the fallback row.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    spec: CondSpec,
    target_card: usize,
    rows: BTreeMap<Vec<usize>, Vec<f64>>,
    fallback: Vec<f64>,
    fallback_policy: FallbackPolicy,
}

impl Cpt {
    pub(crate) fn from_parts(
        spec: CondSpec,
        target_card: usize,
        rows: impl IntoIterator<Item = (Vec<usize>, Vec<f64>)>,
        fallback: Vec<f64>,
        fallback_policy: FallbackPolicy,
    ) -> Self {
        Self {
            spec,
            target_card,
            rows: rows.into_iter().collect(),
            fallback,
            fallback_policy,
        }
    }

    /// Checked constructor: rows must be distributions keyed by valid source
    /// configurations under `schema`.
    pub fn new(
        spec: CondSpec,
        schema: &Schema,
        rows: BTreeMap<Vec<usize>, Vec<f64>>,
        fallback: Vec<f64>,
        fallback_policy: FallbackPolicy,
    ) -> Result<Self> {
        spec.check_within(schema.num_vars())?;
        let cards = schema.cards();
        let target_card = cards[spec.target()];
        let bad = |msg: String| FpnError::InvalidModel(format!("node {}: {msg}", spec.target()));
        check_row(&fallback, target_card).map_err(|m| bad(format!("fallback {m}")))?;
        for (key, row) in &rows {
            if key.len() != spec.sources().len()
                || key.iter().zip(spec.sources()).any(|(&v, &j)| v >= cards[j])
            {
                return Err(bad(format!("invalid source configuration {key:?}")));
            }
            check_row(row, target_card).map_err(|m| bad(format!("row {key:?} {m}")))?;
        }
        Ok(Self {
            spec,
            target_card,
            rows,
            fallback,
            fallback_policy,
        })
    }

    /// The analytic table `p(X_i | Y_i)` of a dense distribution.
    pub fn from_joint(p: &JointTable, spec: &CondSpec, policy: FallbackPolicy) -> Result<Self> {
        let table = conditional(p, spec)?;
        let target_card = table.target_card();
        let source_cards = table.source_cards().to_vec();
        let mut rows = BTreeMap::new();
        let mut key = vec![0usize; source_cards.len()];
        for row in table.rows() {
            if let Some(r) = row {
                rows.insert(key.clone(), r.clone());
            }
            // advance mixed-radix counter
            for (slot, &c) in key.iter_mut().zip(&source_cards).rev() {
                *slot += 1;
                if *slot < c {
                    break;
                }
                *slot = 0;
            }
        }
        let fallback = match policy {
            FallbackPolicy::Uniform => vec![1.0 / target_card as f64; target_card],
            FallbackPolicy::Marginal => marginal(p, &[spec.target()])?.into_probs(),
        };
        Ok(Self::from_parts(spec.clone(), target_card, rows, fallback, policy))
    }

    pub fn target_card(&self) -> usize {
        self.target_card
    }

    pub fn fallback(&self) -> &[f64] {
        &self.fallback
    }

    pub fn fallback_policy(&self) -> FallbackPolicy {
        self.fallback_policy
    }

    pub fn stored_row(&self, source_values: &[usize]) -> Option<&[f64]> {
        self.rows.get(source_values).map(Vec::as_slice)
    }

    pub fn stored_rows(&self) -> impl Iterator<Item = (&Vec<usize>, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn num_stored_rows(&self) -> usize {
        self.rows.len()
    }

    /// The row for `source_values` and whether it came from the fallback.
    pub fn lookup(&self, source_values: &[usize]) -> (&[f64], bool) {
        match self.rows.get(source_values) {
            Some(r) => (r, false),
            None => (&self.fallback, true),
        }
    }
}

fn check_row(row: &[f64], card: usize) -> std::result::Result<(), String> {
    if row.len() != card {
        return Err(format!("has {} entries, expected {card}", row.len()));
    }
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err("has a negative or non-finite entry".into());
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

impl ConditionalDist for Cpt {
    fn spec(&self) -> &CondSpec {
        &self.spec
    }

    fn row(&self, source_values: &[usize]) -> Option<&[f64]> {
        Some(self.lookup(source_values).0)
    }
}

/// Number of free parameters `|Y_i| (|X_i| - 1)`, saturating.
pub fn free_params(spec: &CondSpec, schema: &Schema) -> u128 {
    let cards = schema.cards();
    let configs = spec
        .sources()
        .iter()
        .fold(1u128, |acc, &j| acc.saturating_mul(cards[j] as u128));
    configs.saturating_mul(cards[spec.target()] as u128 - 1)
}

/// Penalty term of a criterion for `k` free parameters and `n` rows.
pub fn penalty(crit: Criterion, k: u128, n: usize) -> f64 {
    match crit {
        Criterion::Mdl => k as f64 * (n as f64).ln() / 2.0,
        Criterion::Aic => k as f64,
    }
}

/// Node score in nats: `N H(X_i | Y_i)` plus the criterion's penalty.
pub fn score(d: &Dataset, spec: &CondSpec, crit: Criterion) -> f64 {
    let n = d.num_rows();
    n as f64 * cond_entropy_counts(d, spec) + penalty(crit, free_params(spec, d.schema()), n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "action", content = "node")]
pub enum StepAction {
    Add(usize),
    Remove(usize),
}

/// One accepted move of the greedy search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionStep {
    pub action: StepAction,
    pub score_before: f64,
    pub score_after: f64,
}

/// Outcome of [`select_sources_traced`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub spec: CondSpec,
    pub score: f64,
    pub steps: Vec<SelectionStep>,
}

fn improves(candidate: f64, current: f64) -> bool {
    candidate < current - 1e-12 * current.abs().max(1.0)
}

/// Greedy forward-backward choice of node `i`'s information sources.
pub fn select_sources(d: &Dataset, i: usize, crit: Criterion) -> CondSpec {
    select_sources_traced(d, i, crit).spec
}

/// Starting from no sources, take the best single addition if it strictly
/// lowers the score, otherwise the best single removal if it does, otherwise
/// stop. Ties go to the smallest node index.
pub fn select_sources_traced(d: &Dataset, i: usize, crit: Criterion) -> Selection {
    let n = d.num_vars();
    let mut spec = CondSpec::empty(i);
    let mut current = score(d, &spec, crit);
    let mut steps = Vec::new();
    loop {
        let best_add = (0..n)
            .filter(|&j| j != i && !spec.sources().contains(&j))
            .map(|j| {
                let cand = spec.with_source(j).expect("j differs from target");
                (j, score(d, &cand, crit), cand)
            })
            .fold(None, pick_min);
        if let Some((j, s, cand)) = best_add {
            if improves(s, current) {
                steps.push(SelectionStep {
                    action: StepAction::Add(j),
                    score_before: current,
                    score_after: s,
                });
                spec = cand;
                current = s;
                continue;
            }
        }
        let best_remove = spec
            .sources()
            .iter()
            .map(|&j| {
                let cand = spec.without_source(j);
                (j, score(d, &cand, crit), cand)
            })
            .fold(None, pick_min);
        if let Some((j, s, cand)) = best_remove {
            if improves(s, current) {
                steps.push(SelectionStep {
                    action: StepAction::Remove(j),
                    score_before: current,
                    score_after: s,
                });
                spec = cand;
                current = s;
                continue;
            }
        }
        break;
    }
    Selection {
        spec,
        score: current,
        steps,
    }
}

/// Keeps the first strict minimum, so the smallest index wins ties.
fn pick_min(
    best: Option<(usize, f64, CondSpec)>,
    cand: (usize, f64, CondSpec),
) -> Option<(usize, f64, CondSpec)> {
    match best {
        Some(b) if b.1 <= cand.1 => Some(b),
        _ => Some(cand),
    }
}

/// A learned (or hand-built) firing process network.
#[derive(Debug, Clone, PartialEq)]
pub struct FpnModel {
    schema: Schema,
    nodes: Vec<Cpt>,
    criterion: Option<Criterion>,
    n_train: usize,
    c: NodeWeights,
}

impl FpnModel {
    /// `nodes[i]` must be the table of node `i`. `criterion` is `None` for
    /// structures that were not chosen by search.
    pub fn new(
        schema: Schema,
        nodes: Vec<Cpt>,
        c: NodeWeights,
        criterion: Option<Criterion>,
        n_train: usize,
    ) -> Result<Self> {
        let n = schema.num_vars();
        if nodes.len() != n {
            return Err(FpnError::InvalidModel(format!("{} nodes for {n} variables", nodes.len())));
        }
        if c.len() != n {
            return Err(FpnError::InvalidModel(format!("{} selection weights for {n} nodes", c.len())));
        }
        for (i, cpt) in nodes.iter().enumerate() {
            if cpt.spec().target() != i {
                return Err(FpnError::InvalidModel(format!(
                    "node {i} holds the table of variable {}",
                    cpt.spec().target()
                )));
            }
            cpt.spec().check_within(n)?;
            if cpt.target_card() != schema.cards()[i] {
                return Err(FpnError::InvalidModel(format!("node {i} has the wrong cardinality")));
            }
        }
        Ok(Self {
            schema,
            nodes,
            criterion,
            n_train,
            c,
        })
    }

    /// Empirical tables for a fixed structure (uniform `c`).
    pub fn from_specs(d: &Dataset, specs: &[CondSpec], policy: FallbackPolicy) -> Result<Self> {
        let nodes = specs
            .par_iter()
            .map(|s| empirical_cpt(d, s, policy))
            .collect();
        Self::new(
            d.schema().clone(),
            nodes,
            NodeWeights::uniform(d.num_vars()),
            None,
            d.num_rows(),
        )
    }

    /// Analytic tables `p(X_i | Y_i)` of a dense distribution (uniform `c`).
    pub fn from_joint(p: &JointTable, specs: &[CondSpec], policy: FallbackPolicy) -> Result<Self> {
        let nodes = specs
            .iter()
            .map(|s| Cpt::from_joint(p, s, policy))
            .collect::<Result<Vec<_>>>()?;
        let n = p.space().num_vars();
        Self::new(Schema::from(p.space()), nodes, NodeWeights::uniform(n), None, 0)
    }

    pub fn with_weights(mut self, c: NodeWeights) -> Result<Self> {
        if c.len() != self.nodes.len() {
            return Err(FpnError::InvalidModel("selection weights do not match node count".into()));
        }
        self.c = c;
        Ok(self)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Cpt] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Cpt {
        &self.nodes[i]
    }

    pub fn spec(&self, i: usize) -> &CondSpec {
        self.nodes[i].spec()
    }

    pub fn criterion(&self) -> Option<Criterion> {
        self.criterion
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn weights(&self) -> &NodeWeights {
        &self.c
    }

    /// Arcs `j -> i` for every `j` in node `i`'s sources, ordered by `(i, j)`.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(i, cpt)| cpt.spec().sources().iter().map(move |&j| (j, i)))
            .collect()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ModelJsonRef::from(self)).expect("model serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: ModelJson = serde_json::from_str(text)?;
        raw.into_model()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Learns structure and parameters of every node.
pub fn learn_model(d: &Dataset, crit: Criterion, policy: FallbackPolicy) -> Result<FpnModel> {
    Ok(learn_model_traced(d, crit, policy)?.0)
}

/// [`learn_model`], also returning each node's search trace.
pub fn learn_model_traced(
    d: &Dataset,
    crit: Criterion,
    policy: FallbackPolicy,
) -> Result<(FpnModel, Vec<Selection>)> {
    if d.num_rows() == 0 {
        return Err(FpnError::InvalidConfig("cannot learn from an empty dataset".into()));
    }
    let per_node: Vec<(Cpt, Selection)> = (0..d.num_vars())
        .into_par_iter()
        .map(|i| {
            let sel = select_sources_traced(d, i, crit);
            (empirical_cpt(d, &sel.spec, policy), sel)
        })
        .collect();
    let (nodes, selections): (Vec<_>, Vec<_>) = per_node.into_iter().unzip();
    let model = FpnModel::new(
        d.schema().clone(),
        nodes,
        NodeWeights::uniform(d.num_vars()),
        Some(crit),
        d.num_rows(),
    )?;
    Ok((model, selections))
}

// ---- JSON ----

fn row_key(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_row_key(key: &str) -> std::result::Result<Vec<usize>, String> {
    if key.is_empty() {
        return Ok(Vec::new());
    }
    key.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad row key {key:?}")))
        .collect()
}

struct RowsRef<'a>(&'a BTreeMap<Vec<usize>, Vec<f64>>);

impl Serialize for RowsRef<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0 {
            map.serialize_entry(&row_key(k), v)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct CptJsonRef<'a> {
    rows: RowsRef<'a>,
    fallback: &'a [f64],
    fallback_policy: FallbackPolicy,
}

#[derive(Serialize)]
struct NodeJsonRef<'a> {
    target: usize,
    sources: &'a [usize],
    cpt: CptJsonRef<'a>,
}

#[derive(Serialize)]
struct ModelJsonRef<'a> {
    format_version: u32,
    schema: &'a Schema,
    criterion: Option<Criterion>,
    n_train: usize,
    c: &'a [f64],
    nodes: Vec<NodeJsonRef<'a>>,
}

impl<'a> From<&'a FpnModel> for ModelJsonRef<'a> {
    fn from(m: &'a FpnModel) -> Self {
        ModelJsonRef {
            format_version: FORMAT_VERSION,
            schema: &m.schema,
            criterion: m.criterion,
            n_train: m.n_train,
            c: m.c.as_slice(),
            nodes: m
                .nodes
                .iter()
                .map(|cpt| NodeJsonRef {
                    target: cpt.spec().target(),
                    sources: cpt.spec().sources(),
                    cpt: CptJsonRef {
                        rows: RowsRef(&cpt.rows),
                        fallback: &cpt.fallback,
                        fallback_policy: cpt.fallback_policy,
                    },
                })
                .collect(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CptJson {
    #[serde(deserialize_with = "de_rows")]
    rows: BTreeMap<Vec<usize>, Vec<f64>>,
    fallback: Vec<f64>,
    fallback_policy: FallbackPolicy,
}

fn de_rows<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<Vec<usize>, Vec<f64>>, D::Error> {
    let raw: HashMap<String, Vec<f64>> = HashMap::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| parse_row_key(&k).map(|k| (k, v)).map_err(D::Error::custom))
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeJson {
    target: usize,
    sources: Vec<usize>,
    cpt: CptJson,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    format_version: u32,
    schema: Schema,
    criterion: Option<Criterion>,
    n_train: usize,
    c: NodeWeights,
    nodes: Vec<NodeJson>,
}

impl ModelJson {
    fn into_model(self) -> Result<FpnModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(FpnError::InvalidModel(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for node in self.nodes {
            let spec = CondSpec::new(node.target, node.sources.iter().copied())?;
            if spec.sources() != node.sources.as_slice() {
                return Err(FpnError::InvalidModel(format!(
                    "node {}: sources must be strictly increasing",
                    node.target
                )));
            }
            nodes.push(Cpt::new(
                spec,
                &self.schema,
                node.cpt.rows,
                node.cpt.fallback,
                node.cpt.fallback_policy,
            )?);
        }
        FpnModel::new(self.schema, nodes, self.c, self.criterion, self.n_train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schema(cards: &[usize]) -> Schema {
        Schema::new((0..cards.len()).map(|i| format!("v{i}")).collect(), cards.to_vec()).unwrap()
    }

    fn dataset(cards: &[usize], rows: Vec<Vec<usize>>) -> Dataset {
        Dataset::new(schema(cards), rows).unwrap()
    }

    #[test]
    fn free_param_counts() {
        let s = schema(&[2, 2, 2]);
        assert_eq!(free_params(&CondSpec::new(0, [1, 2]).unwrap(), &s), 4);
        assert_eq!(free_params(&CondSpec::empty(0), &s), 1);
        let s = schema(&[3, 2]);
        assert_eq!(free_params(&CondSpec::new(0, [1]).unwrap(), &s), 4);
    }

    #[test]
    fn score_examples() {
        let d = dataset(&[2], vec![vec![0]; 100]);
        let spec = CondSpec::empty(0);
        assert_abs_diff_eq!(score(&d, &spec, Criterion::Mdl), 100f64.ln() / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(score(&d, &spec, Criterion::Mdl), 2.3026, epsilon = 5e-5);
        assert_eq!(score(&d, &spec, Criterion::Aic), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = (0..57).map(|_| (0..3).map(|_| rng.gen_range(0..3)).collect()).collect();
        let d = dataset(&[3, 3, 3], rows);
        let spec = CondSpec::new(2, [0, 1]).unwrap();
        let k = free_params(&spec, d.schema()) as f64;
        let diff = score(&d, &spec, Criterion::Mdl) - score(&d, &spec, Criterion::Aic);
        assert_abs_diff_eq!(diff, k * (57f64.ln() / 2.0 - 1.0), epsilon = 1e-9);
    }

    #[test]
    fn selects_copy_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows = (0..1000)
            .map(|_| {
                let a = rng.gen_range(0..2);
                let b = rng.gen_range(0..2);
                vec![a, b, a]
            })
            .collect();
        let d = dataset(&[2, 2, 2], rows);
        assert_eq!(select_sources(&d, 2, Criterion::Mdl).sources(), &[0]);
        assert_eq!(select_sources(&d, 0, Criterion::Mdl).sources(), &[2]);
        assert!(select_sources(&d, 1, Criterion::Mdl).sources().is_empty());
    }

    #[test]
    fn xor_is_invisible_to_single_steps() {
        let rows = (0..4000)
            .map(|r| {
                let a = r % 2;
                let b = (r / 2) % 2;
                vec![a, b, a ^ b]
            })
            .collect();
        let d = dataset(&[2, 2, 2], rows);
        assert!(select_sources(&d, 2, Criterion::Mdl).sources().is_empty());
    }

    #[test]
    fn single_row_gives_point_masses() {
        let d = dataset(&[2, 3], vec![vec![1, 2]]);
        let m = learn_model(&d, Criterion::Mdl, FallbackPolicy::Marginal).unwrap();
        for i in 0..2 {
            assert!(m.spec(i).sources().is_empty());
        }
        assert_eq!(m.node(0).row(&[]).unwrap(), &[0.0, 1.0]);
        assert_eq!(m.node(1).row(&[]).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn correlated_pair_gives_mutual_arcs() {
        let rows = (0..1000).map(|r| vec![r % 2, r % 2]).collect();
        let d = dataset(&[2, 2], rows);
        let m = learn_model(&d, Criterion::Mdl, FallbackPolicy::Marginal).unwrap();
        assert_eq!(m.arcs(), vec![(1, 0), (0, 1)]);
    }

    #[test]
    fn forced_complete_graph_reproduces_joint_conditionals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = (0..5000)
            .map(|_| (0..3).map(|_| rng.gen_range(0..2)).collect())
            .collect();
        let d = dataset(&[2, 2, 2], rows);
        let specs: Vec<_> = (0..3).map(|i| CondSpec::full(i, 3)).collect();
        let m = FpnModel::from_specs(&d, &specs, FallbackPolicy::Marginal).unwrap();
        let joint = crate::data::empirical_joint(&d).unwrap();
        for (i, spec) in specs.iter().enumerate() {
            let table = conditional(&joint, spec).unwrap();
            for (key, row) in m.node(i).stored_rows() {
                for (a, b) in row.iter().zip(table.row(key).unwrap()) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-15);
                }
            }
            assert_eq!(m.node(i).num_stored_rows(), 4);
        }
    }

    #[test]
    fn model_json_is_canonical() {
        let rows = vec![vec![0, 0], vec![0, 1], vec![1, 1], vec![1, 1]];
        let d = dataset(&[2, 2], rows);
        let specs = vec![CondSpec::empty(0), CondSpec::new(1, [0]).unwrap()];
        let m = FpnModel::from_specs(&d, &specs, FallbackPolicy::Marginal).unwrap();
        let text = m.to_json_string();
        let compact: String = text.split_whitespace().collect();
        assert_eq!(
            compact,
            r#"{"format_version":1,"schema":{"names":["v0","v1"],"cards":[2,2]},"criterion":null,"n_train":4,"c":[0.5,0.5],"nodes":[{"target":0,"sources":[],"cpt":{"rows":{"":[0.5,0.5]},"fallback":[0.5,0.5],"fallback_policy":"marginal"}},{"target":1,"sources":[0],"cpt":{"rows":{"0":[0.5,0.5],"1":[0.0,1.0]},"fallback":[0.25,0.75],"fallback_policy":"marginal"}}]}"#
        );
        let back = FpnModel::from_json_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json_string(), text);
    }

    #[test]
    fn rejects_malformed_models() {
        let d = dataset(&[2, 2], vec![vec![0, 1]]);
        let m = learn_model(&d, Criterion::Aic, FallbackPolicy::Uniform).unwrap();
        let text = m.to_json_string();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["nodes"][0]["cpt"]["fallback"] = serde_json::json!([0.7, 0.7]);
        assert!(FpnModel::from_json_str(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["nodes"][1]["sources"] = serde_json::json!([1]);
        assert!(FpnModel::from_json_str(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["extra"] = serde_json::json!(0);
        assert!(FpnModel::from_json_str(&v.to_string()).is_err());
        let bad = text.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(FpnModel::from_json_str(&bad).is_err());
    }
}
