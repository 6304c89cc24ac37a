//! Firing processes.
//!
//! A chain holds one full assignment. Firing node `i` redraws `X_i` from the
//! node's table row for the current values of its sources. The sequential
//! process fires the free nodes cyclically in ascending index order; the
//! random process draws the node from the selection weights at every step.
//! Evidence variables are clamped and never fired.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Schema};
use crate::dist::{CondSpec, ConditionalDist, NodeWeights};
use crate::learn::{Cpt, FpnModel};
use crate::{FpnError, Result, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Process {
    Sequential,
    #[default]
    Random,
}

impl FromStr for Process {
    type Err = FpnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "random" => Ok(Self::Random),
            other => Err(FpnError::InvalidConfig(format!("unknown process {other:?}"))),
        }
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Process::Sequential => "sequential",
            Process::Random => "random",
        })
    }
}

/// Clamped variables: variable index to fixed value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence(BTreeMap<usize, usize>);

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self(pairs.into_iter().collect())
    }

    /// Parses `name=value,name=value` against a schema.
    pub fn parse(text: &str, schema: &Schema) -> Result<Self> {
        let mut map = BTreeMap::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| FpnError::InvalidEvidence(format!("expected name=value, got {item:?}")))?;
            let var = schema
                .index_of(name.trim())
                .ok_or_else(|| FpnError::InvalidEvidence(format!("unknown variable {:?}", name.trim())))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| FpnError::InvalidEvidence(format!("bad value in {item:?}")))?;
            if map.insert(var, value).is_some() {
                return Err(FpnError::InvalidEvidence(format!("variable {name:?} given twice")));
            }
        }
        let ev = Self(map);
        ev.validate(schema)?;
        Ok(ev)
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for (&var, &value) in &self.0 {
            if var >= schema.num_vars() {
                return Err(FpnError::InvalidEvidence(format!("variable index {var} out of range")));
            }
            if value >= schema.cards()[var] {
                return Err(FpnError::InvalidEvidence(format!(
                    "value {value} for {:?} exceeds cardinality {}",
                    schema.names()[var],
                    schema.cards()[var]
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, var: usize) -> Option<usize> {
        self.0.get(&var).copied()
    }

    pub fn contains(&self, var: usize) -> bool {
        self.0.contains_key(&var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.iter().collect()
    }

    /// Non-evidence variables among `0..n`, ascending.
    pub fn free_vars(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|v| !self.contains(*v)).collect()
    }
}

/// Settings of one chain. `None` fields take their defaults: the model's
/// selection weights, a burn-in of 1000 firings per free node, and a thinning
/// of one sweep (`m` firings for the random process, `m + 1` for the
/// sequential one so that kept states visit every phase of the cycle), where
/// `m` is the number of free nodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FiringConfig {
    pub process: Process,
    pub c: Option<NodeWeights>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub steps: usize,
    pub seed: u64,
    pub evidence: Evidence,
}

/// Current assignment and number of firings so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainState {
    pub assignment: Vec<usize>,
    pub step: u64,
}

fn draw_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = k;
            if u < acc {
                return k;
            }
        }
    }
    last
}

/// Fires node `i`: redraws its value from the table row selected by the
/// current source values. Returns whether the fallback row was used.
pub fn fire_node(state: &mut ChainState, i: usize, model: &FpnModel, rng: &mut impl Rng) -> bool {
    fire_cpt(state, model.node(i), rng)
}

fn fire_cpt(state: &mut ChainState, cpt: &Cpt, rng: &mut impl Rng) -> bool {
    #[cfg(debug_assertions)]
    let before = state.assignment.clone();

    let spec = cpt.spec();
    let mut key = [0usize; 16];
    let (row, fallback) = if spec.sources().len() <= key.len() {
        let key = &mut key[..spec.sources().len()];
        for (slot, &j) in key.iter_mut().zip(spec.sources()) {
            *slot = state.assignment[j];
        }
        cpt.lookup(key)
    } else {
        cpt.lookup(&spec.source_values(&state.assignment))
    };
    let i = spec.target();
    state.assignment[i] = draw_index(row, rng.gen::<f64>());
    state.step += 1;

    #[cfg(debug_assertions)]
    debug_assert!(before
        .iter()
        .zip(&state.assignment)
        .enumerate()
        .all(|(j, (a, b))| j == i || a == b));
    fallback
}

/// Counters reported with every run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RunStats {
    pub firings: u64,
    pub fallback_firings: u64,
    pub kept: usize,
}

/// Metadata written next to a sample file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub format_version: u32,
    pub process: Process,
    pub seed: u64,
    pub burn_in: usize,
    pub thin: usize,
    pub steps: usize,
    pub evidence: BTreeMap<String, usize>,
    pub firings: u64,
    pub fallback_firings: u64,
}

enum Schedule {
    Sequential { order: Vec<usize>, pos: usize },
    Random { nodes: Vec<usize>, cumulative: Vec<f64> },
}

/// A single firing-process chain.
pub struct Chain<'m> {
    model: &'m FpnModel,
    schedule: Schedule,
    state: ChainState,
    rng: ChaCha8Rng,
    burn_in: usize,
    thin: usize,
    steps: usize,
    stats: RunStats,
    burned: bool,
}

impl<'m> Chain<'m> {
    pub fn new(model: &'m FpnModel, cfg: &FiringConfig) -> Result<Self> {
        let schema = model.schema();
        let n = schema.num_vars();
        cfg.evidence.validate(schema)?;
        let free = cfg.evidence.free_vars(n);
        if free.is_empty() {
            return Err(FpnError::InvalidEvidence("every variable is fixed by evidence".into()));
        }
        let m = free.len();
        let schedule = match cfg.process {
            Process::Sequential => Schedule::Sequential {
                order: free.clone(),
                pos: 0,
            },
            Process::Random => {
                let c = cfg.c.as_ref().unwrap_or(model.weights());
                if c.len() != n {
                    return Err(FpnError::InvalidWeights(format!("{} weights for {n} nodes", c.len())));
                }
                let restricted = c.restricted(&free)?;
                let mut acc = 0.0;
                let cumulative = restricted
                    .as_slice()
                    .iter()
                    .map(|w| {
                        acc += w;
                        acc
                    })
                    .collect();
                Schedule::Random {
                    nodes: free.clone(),
                    cumulative,
                }
            }
        };
        let thin = cfg.thin.unwrap_or(match cfg.process {
            Process::Random => m,
            Process::Sequential => m + 1,
        });
        if thin == 0 {
            return Err(FpnError::InvalidConfig("thin must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let assignment = (0..n)
            .map(|v| match cfg.evidence.get(v) {
                Some(x) => x,
                None => rng.gen_range(0..schema.cards()[v]),
            })
            .collect();
        Ok(Self {
            model,
            schedule,
            state: ChainState { assignment, step: 0 },
            rng,
            burn_in: cfg.burn_in.unwrap_or(1000 * m),
            thin,
            steps: cfg.steps,
            stats: RunStats::default(),
            burned: false,
        })
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn thin(&self) -> usize {
        self.thin
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    /// Fires one node chosen by the schedule.
    pub fn fire(&mut self) {
        let i = match &mut self.schedule {
            Schedule::Sequential { order, pos } => {
                let i = order[*pos];
                *pos = (*pos + 1) % order.len();
                i
            }
            Schedule::Random { nodes, cumulative } => {
                let u: f64 = self.rng.gen();
                let k = cumulative.partition_point(|&c| c <= u).min(nodes.len() - 1);
                nodes[k]
            }
        };
        if fire_node(&mut self.state, i, self.model, &mut self.rng) {
            self.stats.fallback_firings += 1;
        }
        self.stats.firings += 1;
    }

    /// Advances to the next kept state (running the burn-in first if needed)
    /// and returns it.
    pub fn next_kept(&mut self) -> &[usize] {
        if !self.burned {
            for _ in 0..self.burn_in {
                self.fire();
            }
            self.burned = true;
        }
        for _ in 0..self.thin {
            self.fire();
        }
        self.stats.kept += 1;
        &self.state.assignment
    }

    /// Runs the configured number of kept steps, passing each state to `sink`.
    pub fn run(mut self, mut sink: impl FnMut(&[usize])) -> RunStats {
        for _ in 0..self.steps {
            let s = self.next_kept();
            sink(s);
        }
        self.stats
    }

    pub fn metadata(&self, process: Process, seed: u64, evidence: &Evidence) -> RunMetadata {
        let names = self.model.schema().names();
        RunMetadata {
            format_version: FORMAT_VERSION,
            process,
            seed,
            burn_in: self.burn_in,
            thin: self.thin,
            steps: self.steps,
            evidence: evidence.iter().map(|(v, x)| (names[v].clone(), x)).collect(),
            firings: self.stats.firings,
            fallback_firings: self.stats.fallback_firings,
        }
    }
}

/// Kept states of a run, with its metadata.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub samples: Dataset,
    pub metadata: RunMetadata,
}

/// Runs a chain and collects the kept states.
pub fn run_chain(model: &FpnModel, cfg: &FiringConfig) -> Result<ChainRun> {
    let mut chain = Chain::new(model, cfg)?;
    let n = model.num_nodes();
    let mut values = Vec::with_capacity(cfg.steps * n);
    for _ in 0..cfg.steps {
        values.extend_from_slice(chain.next_kept());
    }
    let metadata = chain.metadata(cfg.process, cfg.seed, &cfg.evidence);
    let samples = Dataset::from_flat(model.schema().clone(), values)?;
    Ok(ChainRun { samples, metadata })
}

/// Runs a chain, streaming kept states to `sink`.
pub fn run_chain_with(model: &FpnModel, cfg: &FiringConfig, sink: impl FnMut(&[usize])) -> Result<RunStats> {
    Ok(Chain::new(model, cfg)?.run(sink))
}

/// The network over the free variables obtained by clamping `evidence`:
/// evidence nodes are removed and every remaining table is sliced at the
/// evidence values of its sources. Free variables keep their relative order.
pub fn reduce_model(model: &FpnModel, evidence: &Evidence) -> Result<FpnModel> {
    let schema = model.schema();
    evidence.validate(schema)?;
    if evidence.is_empty() {
        return Err(FpnError::InvalidEvidence("evidence is empty".into()));
    }
    let n = schema.num_vars();
    let free = evidence.free_vars(n);
    if free.is_empty() {
        return Err(FpnError::InvalidEvidence("every variable is fixed by evidence".into()));
    }
    let mut new_index = vec![usize::MAX; n];
    for (k, &v) in free.iter().enumerate() {
        new_index[v] = k;
    }
    let reduced_schema = schema.restrict(&free)?;
    let mut nodes = Vec::with_capacity(free.len());
    for &i in &free {
        let cpt = model.node(i);
        let sources = cpt.spec().sources();
        let kept: Vec<usize> = (0..sources.len())
            .filter(|&k| !evidence.contains(sources[k]))
            .collect();
        let spec = CondSpec::new(new_index[i], kept.iter().map(|&k| new_index[sources[k]]))?;
        let rows: BTreeMap<Vec<usize>, Vec<f64>> = cpt
            .stored_rows()
            .filter(|(key, _)| {
                key.iter()
                    .zip(sources)
                    .all(|(&v, &j)| evidence.get(j).is_none_or(|x| x == v))
            })
            .map(|(key, row)| (kept.iter().map(|&k| key[k]).collect(), row.clone()))
            .collect();
        nodes.push(Cpt::new(
            spec,
            &reduced_schema,
            rows,
            cpt.fallback().to_vec(),
            cpt.fallback_policy(),
        )?);
    }
    let c = model.weights().restricted(&free)?;
    FpnModel::new(reduced_schema, nodes, c, model.criterion(), model.n_train())
}
