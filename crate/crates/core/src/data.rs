//! Dataset ingestion and empirical counting.
//!
//! Datasets are rows of integer codes. All per-node statistics are computed
//! by hashed grouping on the source configuration, so the cost of a count
//! is linear in the number of rows regardless of how many parent
//! configurations exist.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{self, check_names_cards, CondSpec, JointTable, StateSpace};
use crate::learn::{Cpt, FallbackPolicy};
use crate::{FpnError, Result};

/// Variable names and cardinalities of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaJson", into = "SchemaJson")]
pub struct Schema {
    names: Vec<String>,
    cards: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemaJson {
    names: Vec<String>,
    cards: Vec<usize>,
}

impl TryFrom<SchemaJson> for Schema {
    type Error = FpnError;
    fn try_from(j: SchemaJson) -> Result<Self> {
        Schema::new(j.names, j.cards)
    }
}

impl From<Schema> for SchemaJson {
    fn from(s: Schema) -> Self {
        SchemaJson {
            names: s.names,
            cards: s.cards,
        }
    }
}

impl Schema {
    pub fn new(names: Vec<String>, cards: Vec<usize>) -> Result<Self> {
        check_names_cards(&names, &cards)?;
        Ok(Self { names, cards })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn num_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Joint state count, saturating.
    pub fn total_states(&self) -> u128 {
        dist::state_count(&self.cards)
    }

    /// The dense state space, provided it has at most `limit` states.
    pub fn state_space(&self, limit: usize) -> Result<StateSpace> {
        let states = self.total_states();
        if states > limit as u128 {
            return Err(FpnError::TooLarge { states, limit });
        }
        StateSpace::new(self.names.clone(), self.cards.clone())
    }

    /// Schema over `vars`, in the given order.
    pub fn restrict(&self, vars: &[usize]) -> Result<Schema> {
        Schema::new(
            vars.iter().map(|&v| self.names[v].clone()).collect(),
            vars.iter().map(|&v| self.cards[v]).collect(),
        )
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Schema> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl From<&StateSpace> for Schema {
    fn from(s: &StateSpace) -> Self {
        Schema {
            names: s.names().to_vec(),
            cards: s.cards().to_vec(),
        }
    }
}

/// `N` records of `n` integer codes, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    schema: Schema,
    values: Vec<usize>,
}

impl Dataset {
    /// Checks every value against the schema's cardinalities.
    pub fn new(schema: Schema, rows: Vec<Vec<usize>>) -> Result<Self> {
        let n = schema.num_vars();
        let mut values = Vec::with_capacity(rows.len() * n);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(FpnError::Data {
                    line: r + 2,
                    msg: format!("expected {n} values, found {}", row.len()),
                });
            }
            values.extend(row);
        }
        Self::from_flat(schema, values)
    }

    /// Builds from a row-major buffer of length `N * n`.
    pub fn from_flat(schema: Schema, values: Vec<usize>) -> Result<Self> {
        let n = schema.num_vars();
        if n == 0 || !values.len().is_multiple_of(n) {
            return Err(FpnError::InvalidConfig("ragged row buffer".into()));
        }
        for (k, &v) in values.iter().enumerate() {
            let j = k % n;
            if v >= schema.cards[j] {
                return Err(FpnError::Data {
                    line: k / n + 2,
                    msg: format!(
                        "value {v} in column {:?} exceeds cardinality {}",
                        schema.names[j], schema.cards[j]
                    ),
                });
            }
        }
        Ok(Self { schema, values })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_rows(&self) -> usize {
        self.values.len() / self.schema.num_vars()
    }

    pub fn num_vars(&self) -> usize {
        self.schema.num_vars()
    }

    pub fn row(&self, r: usize) -> &[usize] {
        let n = self.num_vars();
        &self.values[r * n..(r + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.values.chunks_exact(self.num_vars())
    }

    /// Same rows, reordered by `order` (a permutation of `0..N`).
    pub fn permuted(&self, order: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(self.values.len());
        for &r in order {
            values.extend_from_slice(self.row(r));
        }
        Dataset {
            schema: self.schema.clone(),
            values,
        }
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(self.schema.names()).map_err(csv_io)?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn csv_io(e: csv::Error) -> FpnError {
    FpnError::Io(std::io::Error::other(e))
}

/// Reads a CSV file: a header of variable names, then integer rows.
///
/// With no schema, the cardinality of each column is one more than the
/// largest value observed in it.
pub fn load_csv(path: impl AsRef<Path>, schema: Option<&Schema>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv(input: impl Read, schema: Option<&Schema>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => {
            return Err(FpnError::Data {
                line: 1,
                msg: "empty file".into(),
            })
        }
        Some(rec) => rec.map_err(|e| csv_error(e, 1))?,
    };
    let names: Vec<String> = header.iter().map(str::to_owned).collect();
    if let Some(s) = schema {
        if s.names() != names.as_slice() {
            return Err(FpnError::Data {
                line: 1,
                msg: format!("header {:?} does not match schema names {:?}", names, s.names()),
            });
        }
    }
    let n = names.len();
    let mut values = Vec::new();
    let mut line = 1;
    for rec in records {
        let rec = rec.map_err(|e| csv_error(e, line + 1))?;
        line = rec.position().map_or(line + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != n {
            return Err(FpnError::Data {
                line,
                msg: format!("expected {n} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: usize = cell.parse().map_err(|_| FpnError::Data {
                line,
                msg: format!("cell {cell:?} in column {:?} is not a non-negative integer", names[j]),
            })?;
            if let Some(s) = schema {
                if v >= s.cards()[j] {
                    return Err(FpnError::Data {
                        line,
                        msg: format!(
                            "value {v} in column {:?} exceeds cardinality {}",
                            names[j],
                            s.cards()[j]
                        ),
                    });
                }
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(FpnError::Data {
            line: line + 1,
            msg: "no data rows".into(),
        });
    }
    let schema = match schema {
        Some(s) => s.clone(),
        None => {
            let mut cards = vec![1usize; n];
            for (k, &v) in values.iter().enumerate() {
                cards[k % n] = cards[k % n].max(v + 1);
            }
            Schema::new(names, cards).map_err(|e| FpnError::Data {
                line: 1,
                msg: e.to_string(),
            })?
        }
    };
    Dataset::from_flat(schema, values)
}

fn csv_error(e: csv::Error, line: usize) -> FpnError {
    let line = e.position().map_or(line, |p| p.line() as usize);
    FpnError::Data {
        line,
        msg: e.to_string(),
    }
}

/// Empirical joint distribution, subject to the default dense limit.
pub fn empirical_joint(d: &Dataset) -> Result<JointTable> {
    empirical_joint_limited(d, dist::DEFAULT_DENSE_LIMIT)
}

pub fn empirical_joint_limited(d: &Dataset, limit: usize) -> Result<JointTable> {
    let space = d.schema().state_space(limit)?;
    if d.num_rows() == 0 {
        return Err(FpnError::InvalidDistribution("dataset has no rows".into()));
    }
    let mut counts = vec![0u64; space.total_states()];
    for row in d.rows() {
        counts[space.encode(row)] += 1;
    }
    let n = d.num_rows() as f64;
    let probs = counts.into_iter().map(|c| c as f64 / n).collect();
    Ok(JointTable::from_parts(space, probs))
}

/// Per source configuration, the counts of each target value. Groups are
/// sorted by source configuration (lexicographic in spec order), so sums over
/// them are reproducible run to run.
pub fn grouped_counts(d: &Dataset, spec: &CondSpec) -> Vec<(Vec<usize>, Vec<u64>)> {
    let cards = d.schema().cards();
    let target = spec.target();
    let target_card = cards[target];
    let sources = spec.sources();
    let source_cards: Vec<usize> = sources.iter().map(|&j| cards[j]).collect();

    let fits = dist::state_count(&source_cards) < u128::MAX;
    if fits {
        let mut groups: HashMap<u128, Vec<u64>> = HashMap::new();
        for row in d.rows() {
            let key = sources
                .iter()
                .zip(&source_cards)
                .fold(0u128, |acc, (&j, &c)| acc * c as u128 + row[j] as u128);
            groups.entry(key).or_insert_with(|| vec![0; target_card])[row[target]] += 1;
        }
        let mut sorted: Vec<(u128, Vec<u64>)> = groups.into_iter().collect();
        sorted.sort_unstable_by_key(|(k, _)| *k);
        sorted
            .into_iter()
            .map(|(mut key, counts)| {
                let mut values = vec![0; sources.len()];
                for (slot, &c) in values.iter_mut().zip(&source_cards).rev() {
                    *slot = (key % c as u128) as usize;
                    key /= c as u128;
                }
                (values, counts)
            })
            .collect()
    } else {
        let mut groups: HashMap<Vec<usize>, Vec<u64>> = HashMap::new();
        for row in d.rows() {
            groups
                .entry(spec.source_values(row))
                .or_insert_with(|| vec![0; target_card])[row[target]] += 1;
        }
        let mut sorted: Vec<_> = groups.into_iter().collect();
        sorted.sort_unstable();
        sorted
    }
}

/// `H_pi(X_i | Y_i)` from counts in one pass over the rows.
pub fn cond_entropy_counts(d: &Dataset, spec: &CondSpec) -> f64 {
    let n = d.num_rows() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    for (_, counts) in grouped_counts(d, spec) {
        let total: u64 = counts.iter().sum();
        let total = total as f64;
        for &c in &counts {
            if c > 0 {
                let c = c as f64;
                h -= (c / n) * (c / total).ln();
            }
        }
    }
    h.max(0.0)
}

/// Empirical conditional `pi(X_i | Y_i)` with a fallback row for source
/// configurations that never occur.
pub fn empirical_cpt(d: &Dataset, spec: &CondSpec, fallback: FallbackPolicy) -> Cpt {
    let target_card = d.schema().cards()[spec.target()];
    let mut marginal = vec![0u64; target_card];
    let rows: std::collections::BTreeMap<Vec<usize>, Vec<f64>> = grouped_counts(d, spec)
        .into_iter()
        .map(|(key, counts)| {
            let total: u64 = counts.iter().sum();
            for (m, &c) in marginal.iter_mut().zip(&counts) {
                *m += c;
            }
            (key, counts.iter().map(|&c| c as f64 / total as f64).collect::<Vec<f64>>())
        })
        .collect();
    let fallback_row = match fallback {
        FallbackPolicy::Uniform => vec![1.0 / target_card as f64; target_card],
        FallbackPolicy::Marginal => {
            let total: u64 = marginal.iter().sum();
            if total == 0 {
                vec![1.0 / target_card as f64; target_card]
            } else {
                marginal.iter().map(|&c| c as f64 / total as f64).collect()
            }
        }
    };
    Cpt::from_parts(spec.clone(), target_card, rows, fallback_row, fallback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{conditional, cond_entropy, ConditionalDist};
    use approx::assert_abs_diff_eq;

    fn ds(cards: &[usize], rows: &[&[usize]]) -> Dataset {
        let names = (0..cards.len()).map(|i| format!("v{i}")).collect();
        Dataset::new(
            Schema::new(names, cards.to_vec()).unwrap(),
            rows.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn infers_cardinalities() {
        let d = read_csv("a,b\n0,1\n1,0\n".as_bytes(), None).unwrap();
        assert_eq!(d.num_rows(), 2);
        assert_eq!(d.schema().cards(), &[2, 2]);
        assert_eq!(d.schema().names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn schema_overrides_inference() {
        let s = Schema::new(vec!["a".into(), "b".into()], vec![3, 2]).unwrap();
        let d = read_csv("a,b\r\n0,1\r\n1,0\r\n".as_bytes(), Some(&s)).unwrap();
        assert_eq!(d.schema().cards(), &[3, 2]);
    }

    #[test]
    fn reports_line_of_bad_rows() {
        let s = Schema::new(vec!["a".into(), "b".into()], vec![2, 2]).unwrap();
        let err = read_csv("a,b\n0,1\n2,0\n".as_bytes(), Some(&s)).unwrap_err();
        assert!(matches!(err, FpnError::Data { line: 3, .. }), "{err}");
        let err = read_csv("a,b\n0,1\n0,x\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, FpnError::Data { line: 3, .. }), "{err}");
        let err = read_csv("a,b\n0,1\n0\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, FpnError::Data { line: 3, .. }), "{err}");
        let err = read_csv("".as_bytes(), None).unwrap_err();
        assert!(matches!(err, FpnError::Data { line: 1, .. }), "{err}");
        let err = read_csv("a,b\n-1,0\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, FpnError::Data { line: 2, .. }), "{err}");
        let wrong = Schema::new(vec!["b".into(), "a".into()], vec![2, 2]).unwrap();
        assert!(read_csv("a,b\n0,1\n".as_bytes(), Some(&wrong)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = ds(&[2, 3], &[&[0, 2], &[1, 0], &[1, 1]]);
        let text = d.to_csv_string();
        assert_eq!(text, "v0,v1\n0,2\n1,0\n1,1\n");
        let back = read_csv(text.as_bytes(), Some(d.schema())).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn empirical_joint_examples() {
        let single = ds(&[2, 2], &[&[0, 1]]);
        assert_eq!(empirical_joint(&single).unwrap().probs(), &[0.0, 1.0, 0.0, 0.0]);
        let all = ds(&[2, 2], &[&[0, 0], &[0, 1], &[1, 0], &[1, 1]]);
        assert_eq!(empirical_joint(&all).unwrap().probs(), &[0.25; 4]);
        let mut rows: Vec<&[usize]> = vec![&[0, 0]; 3];
        rows.extend(std::iter::repeat(&[1usize, 1][..]).take(7));
        let ten = ds(&[2, 2], &rows);
        assert_abs_diff_eq!(empirical_joint(&ten).unwrap().probs()[0], 0.3, epsilon = 1e-15);

        let wide = Dataset::new(
            Schema::new((0..21).map(|i| format!("v{i}")).collect(), vec![2; 21]).unwrap(),
            vec![vec![0; 21]],
        )
        .unwrap();
        assert!(matches!(empirical_joint(&wide), Err(FpnError::TooLarge { .. })));
    }

    #[test]
    fn empirical_cpt_examples() {
        let d = ds(&[2, 2], &[&[0, 0], &[0, 1], &[1, 1]]);
        let cpt = empirical_cpt(&d, &CondSpec::new(1, [0]).unwrap(), FallbackPolicy::Marginal);
        assert_eq!(cpt.row(&[0]).unwrap(), &[0.5, 0.5]);
        assert_eq!(cpt.row(&[1]).unwrap(), &[0.0, 1.0]);

        let cpt = empirical_cpt(&d, &CondSpec::empty(1), FallbackPolicy::Marginal);
        assert_abs_diff_eq!(cpt.row(&[]).unwrap()[1], 2.0 / 3.0, epsilon = 1e-15);

        let d = ds(&[2, 3], &[&[0, 0], &[0, 1], &[0, 1], &[0, 2]]);
        let cpt = empirical_cpt(&d, &CondSpec::new(1, [0]).unwrap(), FallbackPolicy::Marginal);
        assert!(cpt.stored_row(&[1]).is_none());
        assert_eq!(cpt.row(&[1]).unwrap(), &[0.25, 0.5, 0.25]);
        let cpt = empirical_cpt(&d, &CondSpec::new(1, [0]).unwrap(), FallbackPolicy::Uniform);
        assert_eq!(cpt.row(&[1]).unwrap(), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn cond_entropy_counts_examples() {
        let d = ds(&[2, 2], &[&[0, 0], &[0, 1], &[1, 1]]);
        let h = cond_entropy_counts(&d, &CondSpec::new(1, [0]).unwrap());
        assert_abs_diff_eq!(h, (2.0 / 3.0) * 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(h, 0.4621, epsilon = 5e-5);

        let det = ds(&[2, 2], &[&[0, 0], &[1, 1], &[1, 1]]);
        assert_eq!(cond_entropy_counts(&det, &CondSpec::new(1, [0]).unwrap()), 0.0);
        let fair = ds(&[2], &[&[0], &[1], &[0], &[1]]);
        assert_abs_diff_eq!(cond_entropy_counts(&fair, &CondSpec::empty(0)), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn counting_matches_dense_tables() {
        let d = ds(
            &[2, 3, 2],
            &[&[0, 0, 1], &[0, 2, 1], &[1, 1, 0], &[1, 1, 1], &[0, 0, 0], &[1, 2, 1], &[0, 1, 1]],
        );
        let joint = empirical_joint(&d).unwrap();
        for target in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&j| j != target).collect();
            for mask in 0..4u32 {
                let sources = others.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &j)| j);
                let spec = CondSpec::new(target, sources).unwrap();
                assert_abs_diff_eq!(
                    cond_entropy_counts(&d, &spec),
                    cond_entropy(&joint, &spec).unwrap(),
                    epsilon = 1e-12
                );
                let table = conditional(&joint, &spec).unwrap();
                let cpt = empirical_cpt(&d, &spec, FallbackPolicy::Marginal);
                for (key, row) in cpt.stored_rows() {
                    let dense = table.row(key).unwrap();
                    for (a, b) in row.iter().zip(dense) {
                        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
                    }
                }
            }
        }
    }
}
