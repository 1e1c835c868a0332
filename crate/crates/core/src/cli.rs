//! Batch front end: run one config, compare a policy × partition × seed
//! matrix, plot traces, and report partitions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{self, InteractionLog};
use crate::error::{Error, Result};
use crate::orchestrator::{config_hash, write_trace_csv, Experiment, PartitionConfig, RunConfig, RunOutput};
use crate::partition::{assign_users, ubi_of_counts};
use crate::rng::{self, domain};
use crate::selection::PolicyKind;

/// Environment variable naming the artifact root (default `out`).
pub const OUT_ENV: &str = "FEDSEL_OUT";

/// Process exit code for an error: 2 for I/O, 3 for validation.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        3
    } else {
        2
    }
}

/// Artifact root: explicit argument, else `$FEDSEL_OUT`, else `out`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Flat command-line overrides of the matrix dimensions.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub policy: Option<String>,
    pub ubi: Option<f64>,
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub k: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, mut config: RunConfig) -> Result<RunConfig> {
        if let Some(p) = &self.policy {
            config.policy.kind = PolicyKind::parse(p)?;
        }
        if let Some(u) = self.ubi {
            config.partition.ubi = u;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(r) = self.rounds {
            config.rounds = r;
        }
        if let Some(k) = self.k {
            config.policy.k = k;
        }
        config.validate()?;
        Ok(config)
    }
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Where a run's artifacts went.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub output: RunOutput,
}

/// Writes `trace.csv`, `summary.json` and `config-echo.json` for a finished
/// run into `<root>/<config-hash>/`.
pub fn write_artifacts(root: &Path, exp: &Experiment, output: &RunOutput) -> Result<PathBuf> {
    let dir = root.join(config_hash(&exp.config)?);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut trace = Vec::new();
    write_trace_csv(&output.records, exp.num_clients(), &mut trace)?;
    write_file(&dir.join("trace.csv"), &trace)?;
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&output.summary)?.as_bytes())?;
    write_file(&dir.join("config-echo.json"), serde_json::to_string_pretty(&exp.config)?.as_bytes())?;
    Ok(dir)
}

fn run_with_log(config: RunConfig, log: &InteractionLog, root: &Path) -> Result<RunArtifacts> {
    let features = config.data.features.as_ref().map(dataset::ModalityBundle::load).transpose()?;
    let exp = Experiment::prepare(config, log, features)?;
    let output = exp.run()?;
    let dir = write_artifacts(root, &exp, &output)?;
    Ok(RunArtifacts { dir, output })
}

/// `run`: one experiment from a config file plus overrides.
pub fn cmd_run(config_path: &Path, overrides: &Overrides, out_root: Option<&Path>) -> Result<RunArtifacts> {
    let config = overrides.apply(read_config(config_path)?)?;
    let log = dataset::load_movielens(&config.data.ratings)?;
    run_with_log(config, &log, &output_root(out_root))
}

/// A policy × partition × seed grid over a base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMatrix {
    #[serde(default)]
    pub base: RunConfig,
    pub policies: Vec<String>,
    pub partitions: Vec<PartitionConfig>,
    pub seeds: Vec<u64>,
    /// Where `comparison.csv` and per-run directories go; the output root
    /// when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentMatrix {
    /// Every run config in (partition, policy, seed) order.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        if self.policies.is_empty() || self.partitions.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("matrix needs at least one policy, partition and seed"));
        }
        let mut out = Vec::new();
        for part in &self.partitions {
            for p in &self.policies {
                let kind = PolicyKind::parse(p)?;
                for &seed in &self.seeds {
                    let mut c = self.base.clone();
                    c.partition = *part;
                    c.policy.kind = kind;
                    c.seed = seed;
                    c.validate()?;
                    out.push(c);
                }
            }
        }
        Ok(out)
    }
}

/// Table III's column set, preceded by the matrix coordinates.
pub const COMPARE_COLUMNS: [&str; 9] = [
    "distribution",
    "ubi",
    "policy",
    "seed",
    "total_time_s",
    "time_to_target_s",
    "auc",
    "ndcg50",
    "recall50",
];

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// One comparison row: (distribution, ubi, policy, seed) + Table III values.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub distribution: String,
    pub ubi: f64,
    pub policy: String,
    /// Seed, or `None` for a seed-averaged aggregate row.
    pub seed: Option<u64>,
    pub total_time: f64,
    /// `None` when the target was never reached (in the aggregate: by any seed).
    pub time_to_target: Option<f64>,
    pub auc: f64,
    pub ndcg: f64,
    pub recall: f64,
}

/// `compare`: runs the matrix and writes `comparison.csv`; returns the rows
/// (per-run rows first, then one aggregate per (distribution, ubi, policy)).
pub fn cmd_compare(matrix_path: &Path, out_root: Option<&Path>) -> Result<(PathBuf, Vec<CompareRow>)> {
    let text = std::fs::read_to_string(matrix_path).map_err(|e| Error::io(matrix_path, e))?;
    let matrix: ExperimentMatrix = serde_json::from_str(&text)?;
    let configs = matrix.expand()?;
    let root = matrix.output.clone().unwrap_or_else(|| output_root(out_root));
    let mut logs: BTreeMap<PathBuf, InteractionLog> = BTreeMap::new();
    let mut rows = Vec::new();
    for c in configs {
        if !logs.contains_key(&c.data.ratings) {
            logs.insert(c.data.ratings.clone(), dataset::load_movielens(&c.data.ratings)?);
        }
        let art = run_with_log(c.clone(), &logs[&c.data.ratings], &root)?;
        let s = &art.output.summary;
        rows.push(CompareRow {
            distribution: c.partition.strategy.name().to_string(),
            ubi: c.partition.ubi,
            policy: c.policy.kind.name().to_string(),
            seed: Some(c.seed),
            total_time: s.total_time,
            time_to_target: s.time_to_target,
            auc: s.final_metrics.auc,
            ndcg: s.final_metrics.ndcg,
            recall: s.final_metrics.recall,
        });
    }
    let mut groups: Vec<(String, u64, String)> = Vec::new();
    for r in &rows {
        let key = (r.distribution.clone(), r.ubi.to_bits(), r.policy.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let aggregates: Vec<CompareRow> = groups
        .iter()
        .map(|(d, ubi, p)| {
            let g: Vec<&CompareRow> = rows
                .iter()
                .filter(|r| &r.distribution == d && r.ubi.to_bits() == *ubi && &r.policy == p)
                .collect();
            let n = g.len() as f64;
            let mean = |f: fn(&CompareRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            let ttt: Option<Vec<f64>> = g.iter().map(|r| r.time_to_target).collect();
            CompareRow {
                distribution: d.clone(),
                ubi: f64::from_bits(*ubi),
                policy: p.clone(),
                seed: None,
                total_time: mean(|r| r.total_time),
                time_to_target: ttt.map(|v| v.iter().sum::<f64>() / n),
                auc: mean(|r| r.auc),
                ndcg: mean(|r| r.ndcg),
                recall: mean(|r| r.recall),
            }
        })
        .collect();
    rows.extend(aggregates);

    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let path = root.join("comparison.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COMPARE_COLUMNS)?;
    for r in &rows {
        w.write_record([
            r.distribution.clone(),
            format!("{}", r.ubi),
            r.policy.clone(),
            r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()),
            format!("{:.6}", r.total_time),
            cell(r.time_to_target),
            format!("{:.6}", r.auc),
            format!("{:.6}", r.ndcg),
            format!("{:.6}", r.recall),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
    write_file(&path, &bytes)?;
    Ok((path, rows))
}

/// `(clock, auc)` points of a trace CSV (rows without an evaluation skipped).
pub fn read_trace_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    })?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("{}: missing column `{name}`", path.display())))
    };
    let (ci, ai) = (col("clock")?, col("auc")?);
    let mut pts = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec[ai].is_empty() {
            continue;
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::invalid(format!("{}: bad number `{s}`: {e}", path.display())))
        };
        pts.push((parse(&rec[ci])?, parse(&rec[ai])?));
    }
    Ok(pts)
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Standalone SVG line chart, one polyline per labelled series of
/// `(simulated seconds, AUC)` points.
pub fn render_svg(series: &[(String, Vec<(f64, f64)>)]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Empty("no traces to plot".into()));
    }
    if let Some((name, _)) = series.iter().find(|(_, p)| p.is_empty()) {
        return Err(Error::Empty(format!("trace `{name}` has no evaluated rounds")));
    }
    let (w, h, ml, mr, mt, mb) = (720.0, 440.0, 70.0, 170.0, 30.0, 55.0);
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 0.01;
    }
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#,
        h - mb,
        w - mr,
        h - mb,
        h - mb
    );
    for i in 0..=5 {
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.0}</text>"#, px(fx), h - mb + 18.0, fx);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, ml - 6.0, py(fy) + 4.0, fy);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">Simulated time (s)</text>"#, (ml + w - mr) / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">Test AUC</text>"#,
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0
    );
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" "));
        let ly = mt + 18.0 * k as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            w - mr + 10.0,
            w - mr + 30.0,
            w - mr + 36.0,
            ly + 4.0,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// `plot`: AUC-vs-simulated-time SVG of the given traces.
pub fn cmd_plot(traces: &[PathBuf], out: &Path) -> Result<()> {
    let series = traces
        .iter()
        .map(|p| {
            let label = p
                .parent()
                .and_then(|d| d.file_name())
                .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            Ok((label, read_trace_points(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    write_file(out, render_svg(&series)?.as_bytes())
}

/// `partition-report`: per-client users, interactions and realized UBI.
pub fn cmd_partition_report(config_path: &Path, overrides: &Overrides, out: Option<&Path>) -> Result<String> {
    let config = overrides.apply(read_config(config_path)?)?;
    let log = dataset::load_movielens(&config.data.ratings)?;
    let report = partition_report(&config, &log)?;
    if let Some(p) = out {
        write_file(p, report.as_bytes())?;
    }
    Ok(report)
}

/// CSV `client_id,num_users,num_interactions,realized_ubi`.
pub fn partition_report(config: &RunConfig, log: &InteractionLog) -> Result<String> {
    let n = config.fleet()?.len();
    let portions = config.partition.portions(n)?;
    let a = assign_users(log, &portions, rng::derive_seed(config.seed, &[domain::PARTITION]))?;
    let counts = a.counts();
    let ubi = ubi_of_counts(&counts)?;
    let mut s = String::from("client_id,num_users,num_interactions,realized_ubi\n");
    for (c, users) in a.client_users.iter().enumerate() {
        let _ = writeln!(s, "{c},{},{},{ubi:.6}", users.len(), counts[c]);
    }
    Ok(s)
}
