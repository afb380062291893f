use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use pcsma::{ConflictGraph, Error, Result};
use serde::Serialize;

/// One of `--graph FILE`, `--edges u-v,…` or `--adjacency 0110`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct GraphArgs {
    /// File holding an adjacency string (optionally split into rows) or an
    /// edge list `u-v` separated by commas or whitespace
    #[arg(long, conflicts_with_all = ["edges", "adjacency"])]
    pub graph: Option<PathBuf>,
    /// Inline edge list, e.g. `0-1,1-2`
    #[arg(long, conflicts_with = "adjacency", allow_hyphen_values = true)]
    pub edges: Option<String>,
    /// Inline row-major adjacency string of length n²
    #[arg(long)]
    pub adjacency: Option<String>,
    /// Node count for edge lists; defaults to the length of the probability list
    #[arg(long)]
    pub n: Option<usize>,
}

impl GraphArgs {
    pub fn is_given(&self) -> bool {
        self.graph.is_some() || self.edges.is_some() || self.adjacency.is_some()
    }

    /// Builds the graph; `default_n` is used for edge lists without `--n`.
    pub fn load(&self, default_n: usize) -> Result<ConflictGraph> {
        let n = self.n.unwrap_or(default_n);
        if let Some(a) = &self.adjacency {
            return adjacency(a, self.n);
        }
        if let Some(e) = &self.edges {
            return ConflictGraph::from_edge_list_str(n, e);
        }
        let Some(path) = &self.graph else {
            return Err(Error::Parameter("give one of --graph, --edges or --adjacency".into()));
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Parameter(format!("cannot read graph file {}: {e}", path.display())))?;
        let compact: String = text.split_whitespace().collect();
        if !compact.is_empty() && compact.bytes().all(|b| b == b'0' || b == b'1') {
            adjacency(&compact, self.n)
        } else {
            let list = text.split(|c: char| c == ',' || c.is_whitespace()).collect::<Vec<_>>().join(",");
            ConflictGraph::from_edge_list_str(n, &list)
        }
    }
}

fn adjacency(s: &str, n: Option<usize>) -> Result<ConflictGraph> {
    let n = match n.or_else(|| ConflictGraph::order_of_adjacency_str(s)) {
        Some(n) => n,
        None => return Err(Error::Validation(vec![format!("adjacency length {} is not a square", s.len())])),
    };
    ConflictGraph::from_adjacency_str(n, s)
}

/// Parses `a..b` (inclusive) or `a,b,c`.
pub fn parse_range(s: &str) -> std::result::Result<Vec<usize>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| format!("bad range start in {s:?}"))?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| format!("bad range end in {s:?}"))?;
        if a > b {
            return Err(format!("empty range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad integer {x:?}")))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub threads: usize,
    pub version: String,
    pub wall_time_s: f64,
}

/// Collects what a run touched and writes the manifest next to its output.
pub struct Run {
    pub started: Instant,
    pub subcommand: &'static str,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl Run {
    pub fn new(subcommand: &'static str, config: &impl Serialize) -> Self {
        Self {
            started: Instant::now(),
            subcommand,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, v: u64) {
        self.seeds.insert(name.to_string(), v);
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    /// Writes `<out>.manifest.json`.
    pub fn finish(self, out: &Path) -> Result<PathBuf> {
        let mut outputs = self.outputs;
        outputs.insert(0, out.display().to_string());
        let m = RunManifest {
            subcommand: self.subcommand.to_string(),
            argv: std::env::args().collect(),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs,
            threads: rayon::current_num_threads(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let path = manifest_path(out);
        write_json(&path, &m)?;
        Ok(path)
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `v` to `out` with a manifest, or prints it when `out` is absent.
pub fn emit(run: Run, out: Option<&Path>, v: &impl Serialize) -> Result<()> {
    match out {
        Some(path) => {
            write_json(path, v)?;
            run.finish(path)?;
        }
        None => print_stdout(&serde_json::to_string_pretty(v)?)?,
    }
    Ok(())
}

/// Prints a line, treating a closed pipe as success.
pub fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
