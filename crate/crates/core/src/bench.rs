//! Ising ground truths and structure-recovery experiments.
//!
//! Spins are encoded as `0 <-> -1` and `1 <-> +1`. Site `(r, c)` of a
//! `rows x cols` grid is variable `r * cols + c`, named `s{r}_{c}`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{empirical_joint_limited, Dataset, Schema};
use crate::dist::{JointTable, StateSpace, DEFAULT_DENSE_LIMIT};
use crate::engine::Process;
use crate::exact::{fcd_bound_report, kl_triple, FcdReport, KlTriple, StationaryOptions};
use crate::learn::{learn_model, Criterion, FallbackPolicy, FpnModel};
use crate::{FpnError, Result};

/// Default coupling of the experiment drivers.
pub const DEFAULT_COUPLING: f64 = 0.4;

/// Sweeps discarded at the start of each approximate-sampling chain.
pub const GIBBS_BURN_IN_SWEEPS: usize = 10_000;
/// Sweeps between kept approximate samples.
pub const GIBBS_THIN_SWEEPS: usize = 10;
/// Samples drawn from one chain before a fresh chain is started.
pub const GIBBS_SAMPLES_PER_CHAIN: usize = 100;

/// Nearest-neighbour Ising model on a rectangular grid (free boundary).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsingSpec {
    rows: usize,
    cols: usize,
    coupling: f64,
    field: Vec<f64>,
}

impl IsingSpec {
    pub fn new(rows: usize, cols: usize, coupling: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(FpnError::InvalidConfig(format!("grid {rows}x{cols} has no sites")));
        }
        if !coupling.is_finite() {
            return Err(FpnError::InvalidConfig("coupling must be finite".into()));
        }
        Ok(Self {
            rows,
            cols,
            coupling,
            field: vec![0.0; rows * cols],
        })
    }

    /// Per-site external field; a single value applies to every site.
    pub fn with_field(mut self, field: Vec<f64>) -> Result<Self> {
        let n = self.num_sites();
        let field = match field.len() {
            1 => vec![field[0]; n],
            len if len == n => field,
            len => {
                return Err(FpnError::InvalidConfig(format!("{len} field values for {n} sites")));
            }
        };
        if field.iter().any(|h| !h.is_finite()) {
            return Err(FpnError::InvalidConfig("field must be finite".into()));
        }
        self.field = field;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    pub fn num_sites(&self) -> usize {
        self.rows * self.cols
    }

    pub fn schema(&self) -> Schema {
        let names = (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| format!("s{r}_{c}")))
            .collect();
        Schema::new(names, vec![2; self.num_sites()]).expect("grid names are unique")
    }

    /// Grid adjacency as `(u, v)` pairs with `u < v`.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let u = r * self.cols + c;
                if c + 1 < self.cols {
                    out.insert((u, u + 1));
                }
                if r + 1 < self.rows {
                    out.insert((u, u + self.cols));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        let (r, c) = (site / self.cols, site % self.cols);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(site - self.cols);
        }
        if c > 0 {
            out.push(site - 1);
        }
        if c + 1 < self.cols {
            out.push(site + 1);
        }
        if r + 1 < self.rows {
            out.push(site + self.cols);
        }
        out
    }

    fn spin(v: usize) -> f64 {
        if v == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// `J sum_<uv> s_u s_v + sum_u h_u s_u`.
    pub fn log_weight(&self, state: &[usize]) -> f64 {
        let pair: f64 = self
            .edges()
            .iter()
            .map(|&(u, v)| Self::spin(state[u]) * Self::spin(state[v]))
            .sum();
        let field: f64 = state.iter().zip(&self.field).map(|(&s, h)| h * Self::spin(s)).sum();
        self.coupling * pair + field
    }

    /// `P(s_u = +1 | neighbours)`.
    fn up_probability(&self, site: usize, state: &[usize]) -> f64 {
        let local: f64 = self
            .neighbors(site)
            .iter()
            .map(|&v| Self::spin(state[v]))
            .sum::<f64>();
        let h = self.coupling * local + self.field[site];
        1.0 / (1.0 + (-2.0 * h).exp())
    }
}

/// Exact Ising distribution by enumeration (default dense limit).
pub fn ising_exact(spec: &IsingSpec) -> Result<JointTable> {
    ising_exact_limited(spec, DEFAULT_DENSE_LIMIT)
}

pub fn ising_exact_limited(spec: &IsingSpec, limit: usize) -> Result<JointTable> {
    let space = spec.schema().state_space(limit)?;
    let logs: Vec<f64> = (0..space.total_states())
        .map(|x| spec.log_weight(&space.decode(x)))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights = logs.into_iter().map(|l| (l - max).exp()).collect();
    JointTable::from_weights(space, weights)
}

/// `n` samples from the Ising model. Grids within the dense limit are sampled
/// exactly by inverse CDF; larger grids by single-site Gibbs chains using the
/// burn-in, thinning and chain-restart constants of this module.
pub fn ising_sample(spec: &IsingSpec, n: usize, seed: u64) -> Result<Dataset> {
    let schema = spec.schema();
    if schema.total_states() <= DEFAULT_DENSE_LIMIT as u128 {
        let table = ising_exact(spec)?;
        sample_table(&table, &schema, n, seed)
    } else {
        ising_sample_gibbs(spec, n, seed)
    }
}

/// I.i.d. draws from a dense table.
pub fn sample_table(table: &JointTable, schema: &Schema, n: usize, seed: u64) -> Result<Dataset> {
    let space: &StateSpace = table.space();
    let mut acc = 0.0;
    let cumulative: Vec<f64> = table
        .probs()
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    let total = acc;
    let last = cumulative
        .iter()
        .rposition(|_| true)
        .expect("non-empty table");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * space.num_vars());
    let mut state = vec![0; space.num_vars()];
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        let mut idx = cumulative.partition_point(|&c| c <= u).min(last);
        while table.probs()[idx] == 0.0 && idx > 0 {
            idx -= 1;
        }
        space.decode_into(idx, &mut state);
        values.extend_from_slice(&state);
    }
    Dataset::from_flat(schema.clone(), values)
}

/// Approximate i.i.d. samples via independent Gibbs chains.
pub fn ising_sample_gibbs(spec: &IsingSpec, n: usize, seed: u64) -> Result<Dataset> {
    let sites = spec.num_sites();
    let chains = n.div_ceil(GIBBS_SAMPLES_PER_CHAIN);
    let per_chain: Vec<Vec<usize>> = (0..chains)
        .into_par_iter()
        .map(|k| {
            let want = GIBBS_SAMPLES_PER_CHAIN.min(n - k * GIBBS_SAMPLES_PER_CHAIN);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let mut state: Vec<usize> = (0..sites).map(|_| rng.gen_range(0..2)).collect();
            let sweep = |state: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
                for u in 0..sites {
                    let p = spec.up_probability(u, state);
                    state[u] = usize::from(rng.gen::<f64>() < p);
                }
            };
            for _ in 0..GIBBS_BURN_IN_SWEEPS {
                sweep(&mut state, &mut rng);
            }
            let mut out = Vec::with_capacity(want * sites);
            for _ in 0..want {
                for _ in 0..GIBBS_THIN_SWEEPS {
                    sweep(&mut state, &mut rng);
                }
                out.extend_from_slice(&state);
            }
            out
        })
        .collect();
    Dataset::from_flat(spec.schema(), per_chain.concat())
}

/// Undirected structure recovery against the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryScore {
    pub true_edges: BTreeSet<(usize, usize)>,
    pub found_edges: BTreeSet<(usize, usize)>,
    /// 1 when no edge was found.
    pub precision: f64,
    /// 1 when the grid has no edges.
    pub recall: f64,
}

impl RecoveryScore {
    pub fn new(true_edges: BTreeSet<(usize, usize)>, found_edges: BTreeSet<(usize, usize)>) -> Self {
        let hits = found_edges.intersection(&true_edges).count() as f64;
        let precision = if found_edges.is_empty() {
            1.0
        } else {
            hits / found_edges.len() as f64
        };
        let recall = if true_edges.is_empty() {
            1.0
        } else {
            hits / true_edges.len() as f64
        };
        Self {
            true_edges,
            found_edges,
            precision,
            recall,
        }
    }

    pub fn f1(&self) -> f64 {
        if self.precision + self.recall == 0.0 {
            0.0
        } else {
            2.0 * self.precision * self.recall / (self.precision + self.recall)
        }
    }
}

/// `{u, v}` is found when either node lists the other as a source.
pub fn symmetrized_edges(model: &FpnModel) -> BTreeSet<(usize, usize)> {
    model
        .arcs()
        .into_iter()
        .map(|(j, i)| (j.min(i), j.max(i)))
        .collect()
}

pub fn score_recovery(model: &FpnModel, spec: &IsingSpec) -> Result<RecoveryScore> {
    if model.schema().cards() != spec.schema().cards() {
        return Err(FpnError::InvalidModel("model does not match the grid".into()));
    }
    Ok(RecoveryScore::new(spec.edges(), symmetrized_edges(model)))
}

/// Grid of `(seed, N)` cells for one Ising model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub spec: IsingSpec,
    pub seeds: Vec<u64>,
    pub n_list: Vec<usize>,
    pub criterion: Criterion,
    pub fallback: FallbackPolicy,
    /// Compute the exact model distribution and divergence reports.
    pub exact: bool,
    pub stationary: StationaryOptions,
}

impl ExperimentConfig {
    pub fn new(spec: IsingSpec, seeds: Vec<u64>, n_list: Vec<usize>, exact: bool) -> Self {
        Self {
            spec,
            seeds,
            n_list,
            criterion: Criterion::Mdl,
            fallback: FallbackPolicy::Marginal,
            exact,
            stationary: StationaryOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoverySummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub found_edges: Vec<(usize, usize)>,
}

/// One line of an experiment report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub grid: String,
    pub coupling: f64,
    pub seed: u64,
    pub n: usize,
    pub criterion: Criterion,
    pub mean_sources: f64,
    pub recovery: RecoverySummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<KlTriple>,
    /// `KL(pi || pi') <= KL(pi || pi_real)`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_closer_to_data: Option<bool>,
    /// `KL(pi' || pi_real) <= KL(pi || pi_real)`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_closer_to_truth: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fcd: Option<FcdReport>,
}

/// A record together with the model it describes.
#[derive(Debug, Clone)]
pub struct ExperimentCell {
    pub record: ExperimentRecord,
    pub model: FpnModel,
}

/// Runs every `(seed, N)` cell. For each seed one dataset of the largest `N`
/// is drawn and smaller cells use its prefixes. Cells are ordered by seed,
/// then by position in `n_list`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentCell>> {
    let max_n = cfg.n_list.iter().copied().max().unwrap_or(0);
    if cfg.n_list.contains(&0) {
        return Err(FpnError::InvalidConfig("sample sizes must be positive".into()));
    }
    let truth = if cfg.exact {
        Some(ising_exact_limited(&cfg.spec, cfg.stationary.limit)?)
    } else {
        None
    };
    let datasets = cfg
        .seeds
        .par_iter()
        .map(|&seed| match &truth {
            Some(t) => sample_table(t, &cfg.spec.schema(), max_n, seed),
            None => ising_sample(&cfg.spec, max_n, seed),
        })
        .collect::<Result<Vec<Dataset>>>()?;
    let cells: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|s| (0..cfg.n_list.len()).map(move |k| (s, k)))
        .collect();
    cells
        .par_iter()
        .map(|&(s, k)| run_cell(cfg, &datasets[s], cfg.seeds[s], cfg.n_list[k], truth.as_ref()))
        .collect()
}

fn run_cell(
    cfg: &ExperimentConfig,
    full: &Dataset,
    seed: u64,
    n: usize,
    truth: Option<&JointTable>,
) -> Result<ExperimentCell> {
    let order: Vec<usize> = (0..n).collect();
    let data = full.permuted(&order);
    let model = learn_model(&data, cfg.criterion, cfg.fallback)?;
    let recovery = score_recovery(&model, &cfg.spec)?;
    let mean_sources = (0..model.num_nodes())
        .map(|i| model.spec(i).sources().len() as f64)
        .sum::<f64>()
        / model.num_nodes() as f64;
    let mut record = ExperimentRecord {
        grid: format!("{}x{}", cfg.spec.rows(), cfg.spec.cols()),
        coupling: cfg.spec.coupling(),
        seed,
        n,
        criterion: cfg.criterion,
        mean_sources,
        recovery: RecoverySummary {
            precision: recovery.precision,
            recall: recovery.recall,
            f1: recovery.f1(),
            found_edges: recovery.found_edges.iter().copied().collect(),
        },
        kl: None,
        model_closer_to_data: None,
        model_closer_to_truth: None,
        fcd: None,
    };
    if let Some(truth) = truth {
        let pi = empirical_joint_limited(&data, cfg.stationary.limit)?;
        let report = fcd_bound_report(&model, &pi, Process::Random, &cfg.stationary)?;
        let op = crate::exact::build_w_random_limited(&model, model.weights(), cfg.stationary.limit)?;
        let pi_prime = crate::exact::stationary(&op, cfg.stationary.tol, cfg.stationary.max_iter).dist;
        let triple = kl_triple(&pi, &pi_prime, truth)?;
        record.model_closer_to_data = Some(triple.model_closer_to_data());
        record.model_closer_to_truth = Some(triple.model_closer_to_truth());
        record.kl = Some(triple);
        record.fcd = Some(report);
    }
    Ok(ExperimentCell { record, model })
}

/// 3x3 grid with exact model distributions.
pub fn experiment_3x3(coupling: f64, seeds: &[u64], n_list: &[usize]) -> Result<Vec<ExperimentCell>> {
    let spec = IsingSpec::new(3, 3, coupling)?;
    run_experiment(&ExperimentConfig::new(spec, seeds.to_vec(), n_list.to_vec(), true))
}

/// 5x5 grid, structure recovery only.
pub fn experiment_5x5(coupling: f64, seeds: &[u64], n_list: &[usize]) -> Result<Vec<ExperimentCell>> {
    let spec = IsingSpec::new(5, 5, coupling)?;
    run_experiment(&ExperimentConfig::new(spec, seeds.to_vec(), n_list.to_vec(), false))
}
