use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{adjacency_violations, erdos_renyi_with, CollisionMode, ConflictGraph, NetworkInstance};
use crate::markov::{self, SolveOptions};
use crate::rng;
use crate::sim;

pub const CSV_HEADER: [&str; 8] = ["n", "T", "adjacency", "p", "theta", "label_source", "seed", "collision_mode"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Sim,
    Mc,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Sim => "sim",
            LabelSource::Mc => "mc",
        }
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(LabelSource::Sim),
            "mc" => Ok(LabelSource::Mc),
            other => Err(Error::param(format!("unknown label source {other:?}"))),
        }
    }
}

/// How a generated sample is labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Labeler {
    /// Monte Carlo simulation over `slots` slots.
    Sim { slots: u64 },
    /// Exact stationary solve.
    Mc,
}

impl Labeler {
    pub fn source(self) -> LabelSource {
        match self {
            Labeler::Sim { .. } => LabelSource::Sim,
            Labeler::Mc => LabelSource::Mc,
        }
    }
}

impl FromStr for Labeler {
    type Err = Error;

    /// `mc` or `sim:L`, where `L` may be written as `1e6`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "mc" {
            return Ok(Labeler::Mc);
        }
        let bad = || Error::param(format!("labeler must be `mc` or `sim:L`, got {s:?}"));
        let l = s.strip_prefix("sim:").ok_or_else(bad)?;
        let slots = l
            .parse::<u64>()
            .ok()
            .or_else(|| l.parse::<f64>().ok().filter(|v| v.fract() == 0.0 && *v >= 1.0).map(|v| v as u64))
            .ok_or_else(bad)?;
        if slots == 0 {
            return Err(bad());
        }
        Ok(Labeler::Sim { slots })
    }
}

impl fmt::Display for Labeler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Labeler::Sim { slots } => write!(f, "sim:{slots}"),
            Labeler::Mc => f.write_str("mc"),
        }
    }
}

/// One labeled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub graph: ConflictGraph,
    pub t: usize,
    pub p: Vec<f64>,
    pub theta: Vec<f64>,
    pub label_source: LabelSource,
    pub seed: u64,
    pub collision_mode: CollisionMode,
}

impl DatasetRow {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn instance(&self) -> Result<NetworkInstance> {
        NetworkInstance::new(self.graph.clone(), self.p.clone(), self.t)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.n();
        if self.p.len() != n {
            v.push(format!("p has {} entries for n={n}", self.p.len()));
        }
        if self.theta.len() != n {
            v.push(format!("theta has {} entries for n={n}", self.theta.len()));
        }
        if self.t < 1 {
            v.push("T must be ≥ 1".into());
        }
        for (i, &x) in self.p.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("p[{i}]={x} outside [0,1]"));
            }
        }
        for (i, &x) in self.theta.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("theta[{i}]={x} outside [0,1]"));
            }
        }
        v
    }
}

/// 17 significant digits, which round-trips every `f64` exactly.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn join(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_float(x)).collect::<Vec<_>>().join(";")
}

pub fn write_csv<W: Write>(rows: &[DatasetRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.n().to_string(),
            r.t.to_string(),
            r.graph.to_adjacency_string(),
            join(&r.p),
            join(&r.theta),
            r.label_source.to_string(),
            r.seed.to_string(),
            r.collision_mode.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(rows: &[DatasetRow], path: impl AsRef<Path>) -> Result<()> {
    write_csv(rows, BufWriter::new(File::create(path)?))
}

fn parse_list(s: &str, what: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(';')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("{what}: {x:?} is not a number")))
        .collect()
}

fn parse_record(rec: &csv::StringRecord, line: usize) -> Result<DatasetRow> {
    let parse_err = |message: String| Error::Parse { line, message };
    if rec.len() != CSV_HEADER.len() {
        return Err(parse_err(format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len())));
    }
    let n: usize = rec[0].parse().map_err(|_| parse_err(format!("n: {:?} is not an integer", &rec[0])))?;
    let t: usize = rec[1].parse().map_err(|_| parse_err(format!("T: {:?} is not an integer", &rec[1])))?;
    let adj = &rec[2];
    if n == 0 || adj.len() != n * n || adj.bytes().any(|c| c != b'0' && c != b'1') {
        return Err(parse_err(format!(
            "adjacency must be {} characters of 0/1 for n={n}, found {} characters",
            n * n,
            adj.len()
        )));
    }
    let p = parse_list(&rec[3], "p").map_err(parse_err)?;
    let theta = parse_list(&rec[4], "theta").map_err(parse_err)?;
    let label_source = rec[5].parse().map_err(|e: Error| parse_err(e.to_string()))?;
    let seed = rec[6].parse().map_err(|_| parse_err(format!("seed: {:?} is not an integer", &rec[6])))?;
    let collision_mode = rec[7].parse().map_err(|e: Error| parse_err(e.to_string()))?;

    let asym = adjacency_violations(n, adj);
    if !asym.is_empty() {
        return Err(Error::Validation(asym.into_iter().map(|m| format!("row at line {line}: {m}")).collect()));
    }
    let row = DatasetRow {
        graph: ConflictGraph::from_adjacency_str(n, adj)?,
        t,
        p,
        theta,
        label_source,
        seed,
        collision_mode,
    };
    let v = row.validate();
    if !v.is_empty() {
        return Err(Error::Validation(v.into_iter().map(|m| format!("row at line {line}: {m}")).collect()));
    }
    Ok(row)
}

/// Reads and validates every row. Line numbers in errors count the header
/// as line 1.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<DatasetRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push(parse_record(&rec, line)?);
    }
    Ok(rows)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRow>> {
    read_csv(BufReader::new(File::open(path)?))
}

/// What to generate: `count` samples per `(n, T)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_list: Vec<usize>,
    pub t_list: Vec<usize>,
    pub count: usize,
    pub p_edge: f64,
    pub labeler: Labeler,
    pub seed: u64,
    pub mode: CollisionMode,
    pub state_cap: u64,
    /// Overrides the `U(0,1)` draw with one fixed probability.
    pub fixed_p: Option<f64>,
}

impl DatasetSpec {
    pub fn new(n_list: Vec<usize>, t_list: Vec<usize>, count: usize, labeler: Labeler, seed: u64) -> Self {
        Self {
            n_list,
            t_list,
            count,
            p_edge: 0.5,
            labeler,
            seed,
            mode: CollisionMode::TimerRule,
            state_cap: markov::DEFAULT_STATE_CAP,
            fixed_p: None,
        }
    }

    /// `(n, T)` pairs in generation order: `n` outer, `T` inner.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.n_list
            .iter()
            .flat_map(|&n| self.t_list.iter().map(move |&t| (n, t)))
            .collect()
    }

    fn check(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.n_list.is_empty() || self.t_list.is_empty() {
            v.push("n-list and T-list must be non-empty".to_string());
        }
        if self.n_list.contains(&0) {
            v.push("every n must be ≥ 1".into());
        }
        if self.t_list.contains(&0) {
            v.push("every T must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_edge) {
            v.push(format!("p_edge={} outside [0,1]", self.p_edge));
        }
        if let Some(p) = self.fixed_p.filter(|p| !(0.0..=1.0).contains(p)) {
            v.push(format!("fixed p={p} outside [0,1]"));
        }
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        if self.labeler == Labeler::Mc {
            let over: Vec<String> = self
                .cells()
                .into_iter()
                .filter_map(|(n, t)| match markov::full_state_count(n, t) {
                    Some(c) if c <= self.state_cap => None,
                    Some(c) => Some(format!("(n={n}, T={t}): T^n = {t}^{n} = {c}")),
                    None => Some(format!("(n={n}, T={t}): T^n = {t}^{n} overflows")),
                })
                .collect();
            if !over.is_empty() {
                return Err(Error::Resource(format!(
                    "exact labeling refused, state cap of {} exceeded by {}",
                    self.state_cap,
                    over.join(", ")
                )));
            }
        }
        Ok(())
    }
}

/// Draws and labels sample `index` of the run. Graph, probabilities and
/// simulation use separate streams of the per-row seed.
pub fn generate_row(spec: &DatasetSpec, n: usize, t: usize, index: u64) -> Result<DatasetRow> {
    let seed = rng::derive_seed(spec.seed, index);
    let graph = erdos_renyi_with(n, spec.p_edge, &mut rng::child(seed, rng::GRAPH_STREAM))?;
    let p: Vec<f64> = match spec.fixed_p {
        Some(p) => vec![p; n],
        None => {
            let mut r = rng::child(seed, rng::PROB_STREAM);
            (0..n).map(|_| r.random::<f64>()).collect()
        }
    };
    let inst = NetworkInstance::new(graph, p, t)?;
    let theta = match spec.labeler {
        Labeler::Mc => {
            let opts = SolveOptions { state_cap: spec.state_cap, ..SolveOptions::default().with_mode(spec.mode) };
            markov::solve(&inst, &opts)?.theta
        }
        Labeler::Sim { slots } => {
            let mut r = rng::child(seed, rng::SIM_STREAM);
            sim::simulate_observed(&inst, slots, &mut r, seed, spec.mode, |_, _| {})?.theta_hat
        }
    };
    Ok(DatasetRow {
        graph: inst.graph,
        t,
        p: inst.p,
        theta,
        label_source: spec.labeler.source(),
        seed,
        collision_mode: spec.mode,
    })
}

/// Generates every cell in order. `progress(n, T, rows)` runs after each
/// cell completes.
pub fn generate_dataset_with(
    spec: &DatasetSpec,
    mut progress: impl FnMut(usize, usize, usize),
) -> Result<Vec<DatasetRow>> {
    spec.check()?;
    let mut rows = Vec::with_capacity(spec.count * spec.cells().len());
    for (c, (n, t)) in spec.cells().into_iter().enumerate() {
        let base = (c * spec.count) as u64;
        let cell: Vec<DatasetRow> = (0..spec.count as u64)
            .into_par_iter()
            .map(|k| generate_row(spec, n, t, base + k))
            .collect::<Result<_>>()?;
        for r in &cell {
            if r.theta.iter().any(|th| !(0.0..=1.0).contains(th)) {
                return Err(Error::Numeric(format!("label outside [0,1] for row seed {}", r.seed)));
            }
        }
        progress(n, t, cell.len());
        rows.extend(cell);
    }
    Ok(rows)
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<DatasetRow>> {
    generate_dataset_with(spec, |_, _, _| {})
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<DatasetRow>,
    pub val: Vec<DatasetRow>,
    pub test: Vec<DatasetRow>,
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

/// Uniform shuffle with a fixed seed, then contiguous slices. Train and
/// validation sizes are rounded; the test set takes the remainder.
pub fn split(rows: &[DatasetRow], fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let n = rows.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let take = |r: &[usize]| r.iter().map(|&i| rows[i].clone()).collect();
    Ok(Split {
        train: take(&idx[..n_train]),
        val: take(&idx[n_train..n_train + n_val]),
        test: take(&idx[n_train + n_val..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_n3() -> DatasetSpec {
        DatasetSpec::new(vec![3], vec![2], 10, Labeler::Mc, 5)
    }

    #[test]
    fn mc_rows_are_labeled_in_range() {
        let rows = generate_dataset(&spec_n3()).unwrap();
        assert_eq!(rows.len(), 10);
        for r in &rows {
            assert_eq!(r.label_source, LabelSource::Mc);
            assert!(r.theta.iter().all(|t| (0.0..=1.0).contains(t)));
        }
    }

    #[test]
    fn fixed_single_node_label() {
        let spec = DatasetSpec { fixed_p: Some(0.5), ..DatasetSpec::new(vec![1], vec![2], 1, Labeler::Mc, 0) };
        let rows = generate_dataset(&spec).unwrap();
        assert!((rows[0].theta[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_byte_identical_per_seed() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&generate_dataset(&spec_n3()).unwrap(), &mut a).unwrap();
        write_csv(&generate_dataset(&spec_n3()).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let other = DatasetSpec { seed: 6, ..spec_n3() };
        let mut c = Vec::new();
        write_csv(&generate_dataset(&other).unwrap(), &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cap_violations_are_listed_up_front() {
        let spec = DatasetSpec::new(vec![4, 12, 13], vec![2, 5], 1000, Labeler::Mc, 0);
        let msg = generate_dataset(&spec).unwrap_err().to_string();
        assert!(msg.contains("(n=12, T=5)") && msg.contains("(n=13, T=5)"), "{msg}");
        assert!(!msg.contains("n=4"));
        assert!(msg.contains("5^12"));
    }

    #[test]
    fn sim_labeler_tags_rows() {
        let spec = DatasetSpec::new(vec![3], vec![2], 2, "sim:1e4".parse().unwrap(), 1);
        let rows = generate_dataset(&spec).unwrap();
        assert!(rows.iter().all(|r| r.label_source == LabelSource::Sim));
    }

    #[test]
    fn labeler_parsing() {
        assert_eq!("mc".parse::<Labeler>().unwrap(), Labeler::Mc);
        assert_eq!("sim:1000000".parse::<Labeler>().unwrap(), Labeler::Sim { slots: 1_000_000 });
        assert_eq!("sim:1e6".parse::<Labeler>().unwrap(), Labeler::Sim { slots: 1_000_000 });
        assert!("sim:0".parse::<Labeler>().is_err());
        assert!("exact".parse::<Labeler>().is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let rows = generate_dataset(&spec_n3()).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    const GOOD: &str = "n,T,adjacency,p,theta,label_source,seed,collision_mode\n\
        2,2,0110,0.5;0.5,0.4;0.4,mc,1,timer-rule\n";

    #[test]
    fn corrupt_rows_name_their_line() {
        assert_eq!(read_csv(GOOD.as_bytes()).unwrap().len(), 1);
        let short = GOOD.to_string() + "2,2,011,0.5;0.5,0.4;0.4,mc,2,timer-rule\n";
        match read_csv(short.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("adjacency"));
            }
            other => panic!("{other:?}"),
        }
        let asym = GOOD.to_string() + "2,2,0100,0.5;0.5,0.4;0.4,mc,2,timer-rule\n";
        let err = read_csv(asym.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("line 3"));
        let range = GOOD.replace("0.4;0.4", "1.4;0.4");
        assert!(matches!(read_csv(range.as_bytes()), Err(Error::Validation(_))));
        let header = GOOD.replace("theta", "thetas");
        assert!(matches!(read_csv(header.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let rows = generate_dataset(&spec_n3()).unwrap();
        let s = split(&rows, DEFAULT_FRACTIONS, 9).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split(&rows, DEFAULT_FRACTIONS, 9).unwrap());
        let other = split(&rows, DEFAULT_FRACTIONS, 10).unwrap();
        assert_ne!(s.train, other.train);
        assert!(split(&rows, [0.5, 0.5, 0.5], 0).is_err());
    }
}
