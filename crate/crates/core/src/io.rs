//! Edge-list ingestion and the JSON/CSV documents written by the CLI.
//!
//! Edge lists hold one edge per line, `tail head [ignored...]`, separated by
//! whitespace or commas. Lines starting with `#` or `%` are comments. Node
//! labels are arbitrary tokens, numbered in order of first appearance.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, MultiGraph};
use crate::meanfield::{MeanFieldCurve, MeanFieldError};
use crate::planner::{Audit, Diagnostics, LpReport, PlanResult, Regime};
use crate::typestats::{
    moments, nu, CostRule, InterventionRecord, Moment, StatRecord, StatIntervention, Statistics,
    TypeStatsError,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}: no edges found")]
    NoEdges(String),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Stats(#[from] TypeStatsError),
    #[error(transparent)]
    MeanField(#[from] MeanFieldError),
}

pub type Result<T> = std::result::Result<T, IoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfLoopPolicy {
    #[default]
    Reject,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EdgeListOptions {
    /// Each line gives both directions.
    pub undirected: bool,
    pub self_loops: SelfLoopPolicy,
}

#[derive(Debug, Clone)]
pub struct EdgeList {
    pub graph: MultiGraph,
    /// Original token of each node.
    pub labels: Vec<String>,
    pub dropped_self_loops: usize,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| IoError::File {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn data_lines<R: BufRead>(
    reader: R,
    name: &str,
) -> impl Iterator<Item = Result<(usize, Vec<String>)>> {
    let name = name.to_string();
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                return Some(Err(IoError::Parse {
                    path: name.clone(),
                    line: i + 1,
                    message: e.to_string(),
                }))
            }
        };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('%') {
            return None;
        }
        let tokens = trimmed
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        Some(Ok((i + 1, tokens)))
    })
}

pub fn parse_edge_list<R: BufRead>(reader: R, name: &str, opts: EdgeListOptions) -> Result<EdgeList> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut edges = Vec::new();
    let mut dropped = 0;
    let mut id_of = |tok: &str, labels: &mut Vec<String>| -> usize {
        if let Some(&i) = ids.get(tok) {
            return i;
        }
        let i = labels.len();
        ids.insert(tok.to_string(), i);
        labels.push(tok.to_string());
        i
    };
    for item in data_lines(reader, name) {
        let (line, tokens) = item?;
        if tokens.len() < 2 {
            return Err(IoError::Parse {
                path: name.to_string(),
                line,
                message: format!("expected `tail head`, found {:?}", tokens.join(" ")),
            });
        }
        if tokens[0] == tokens[1] {
            match opts.self_loops {
                SelfLoopPolicy::Drop => {
                    dropped += 1;
                    id_of(&tokens[0], &mut labels);
                    continue;
                }
                SelfLoopPolicy::Reject => {
                    return Err(IoError::Parse {
                        path: name.to_string(),
                        line,
                        message: format!("self-loop on node {}", tokens[0]),
                    })
                }
            }
        }
        let a = id_of(&tokens[0], &mut labels);
        let b = id_of(&tokens[1], &mut labels);
        edges.push((a, b));
        if opts.undirected {
            edges.push((b, a));
        }
    }
    if labels.is_empty() {
        return Err(IoError::NoEdges(name.to_string()));
    }
    let graph = MultiGraph::new(labels.len(), &edges)?;
    Ok(EdgeList {
        graph,
        labels,
        dropped_self_loops: dropped,
    })
}

pub fn read_edge_list(path: &Path, opts: EdgeListOptions) -> Result<EdgeList> {
    parse_edge_list(BufReader::new(open(path)?), &path.display().to_string(), opts)
}

/// Per-node thresholds from `label value` lines; every node must appear.
pub fn read_thresholds(path: &Path, labels: &[String]) -> Result<Vec<u32>> {
    let name = path.display().to_string();
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut out: Vec<Option<u32>> = vec![None; labels.len()];
    for item in data_lines(BufReader::new(open(path)?), &name) {
        let (line, tokens) = item?;
        let bad = |message: String| IoError::Parse {
            path: name.clone(),
            line,
            message,
        };
        if tokens.len() != 2 {
            return Err(bad("expected `label threshold`".into()));
        }
        let &i = index
            .get(tokens[0].as_str())
            .ok_or_else(|| bad(format!("unknown node {}", tokens[0])))?;
        let v = tokens[1]
            .parse::<u32>()
            .map_err(|e| bad(format!("bad threshold {:?}: {e}", tokens[1])))?;
        out[i] = Some(v);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| IoError::Parse {
                path: name.clone(),
                line: 0,
                message: format!("no threshold for node {}", labels[i]),
            })
        })
        .collect()
}

/// Cost tables from `d k r c(0) c(1) ... c(r)` lines.
pub fn read_cost_table(path: &Path) -> Result<CostRule> {
    let name = path.display().to_string();
    let mut map = BTreeMap::new();
    for item in data_lines(BufReader::new(open(path)?), &name) {
        let (line, tokens) = item?;
        let bad = |message: String| IoError::Parse {
            path: name.clone(),
            line,
            message,
        };
        if tokens.len() < 4 {
            return Err(bad("expected `d k r c0 ... cr`".into()));
        }
        let ints = tokens[..3]
            .iter()
            .map(|t| t.parse::<u32>().map_err(|e| bad(format!("bad integer {t:?}: {e}"))))
            .collect::<Result<Vec<u32>>>()?;
        let costs = tokens[3..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|e| bad(format!("bad cost {t:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if costs.len() != ints[2] as usize + 1 {
            return Err(bad(format!("{} costs given for r = {}", costs.len(), ints[2])));
        }
        map.insert((ints[0], ints[1], ints[2]), costs);
    }
    Ok(CostRule::Table(map))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(BufReader::new(open(path)?)).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n: Option<u64>,
    pub edges: Option<usize>,
    pub types: usize,
    pub d_min: u32,
    pub d_max: u32,
    pub k_max: u32,
    pub mean_d: f64,
    pub mean_k: f64,
    pub second_moment_d: f64,
    pub second_moment_k: f64,
    pub cross_moment_dk: f64,
    pub nu: f64,
}

pub fn summarize(p: &Statistics, edges: Option<usize>) -> StatsSummary {
    let support: Vec<_> = p.support().map(|(t, _)| t).collect();
    StatsSummary {
        n: p.population(),
        edges,
        types: support.len(),
        d_min: support.iter().map(|t| t.d).min().unwrap_or(0),
        d_max: support.iter().map(|t| t.d).max().unwrap_or(0),
        k_max: support.iter().map(|t| t.k).max().unwrap_or(0),
        mean_d: moments(p, Moment::D),
        mean_k: moments(p, Moment::K),
        second_moment_d: moments(p, Moment::D2),
        second_moment_k: moments(p, Moment::K2),
        cross_moment_dk: moments(p, Moment::DK),
        nu: nu(p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsDocument {
    pub config: serde_json::Value,
    pub summary: StatsSummary,
    /// Node counts per type, when the statistics came from a network.
    pub counts: Option<Vec<u64>>,
    pub types: Vec<StatRecord>,
}

impl StatisticsDocument {
    pub fn new(p: &Statistics, edges: Option<usize>, config: serde_json::Value) -> Self {
        Self {
            config,
            summary: summarize(p, edges),
            counts: p.counts().map(<[u64]>::to_vec),
            types: p.to_records(),
        }
    }

    pub fn statistics(&self) -> Result<Statistics> {
        match &self.counts {
            Some(c) if c.len() == self.types.len() => {
                let entries = self
                    .types
                    .iter()
                    .zip(c)
                    .map(|(rec, &n)| {
                        Ok((
                            crate::typestats::AgentType::new(rec.d, rec.k, rec.r, rec.cost.clone())?,
                            n,
                        ))
                    })
                    .collect::<std::result::Result<Vec<_>, TypeStatsError>>()?;
                Ok(Statistics::from_counts(entries)?)
            }
            _ => Ok(Statistics::from_records(&self.types)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub config: serde_json::Value,
    pub eps: f64,
    pub alpha_eps: f64,
    pub delta_used: f64,
    #[serde(rename = "delta_N")]
    pub delta_n: f64,
    pub regime: String,
    pub cost: f64,
    pub xi: Vec<InterventionRecord>,
    pub audit: serde_json::Value,
    pub lp: serde_json::Value,
    pub diagnostics: serde_json::Value,
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("plain data serializes")
}

impl PlanDocument {
    pub fn new(res: &PlanResult, config: serde_json::Value) -> Self {
        let regime = match res.regime {
            Regime::Guarantee => "guarantee",
            Regime::Empirical => "empirical (delta < delta_N)",
        };
        Self {
            config,
            eps: res.config.eps,
            alpha_eps: res.alpha_eps,
            delta_used: res.delta_used,
            delta_n: res.delta_n,
            regime: regime.into(),
            cost: res.cost,
            xi: res.xi.to_records(),
            audit: to_value::<Audit>(&res.audit),
            lp: to_value::<LpReport>(&res.lp),
            diagnostics: to_value::<Diagnostics>(&res.diagnostics),
        }
    }

    pub fn intervention(&self) -> Result<StatIntervention> {
        Ok(StatIntervention::from_records(&self.xi)?)
    }
}

/// `z, psi, phi, phi_minus_z` on `points + 1` equally spaced `z` in `[0, 1]`.
pub fn write_curve_csv(path: &Path, p: &Statistics, points: usize) -> Result<()> {
    let curve = MeanFieldCurve::new(p);
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["z", "psi", "phi", "phi_minus_z"])?;
    let points = points.max(1);
    for i in 0..=points {
        let z = i as f64 / points as f64;
        let (ps, ph) = curve.both(z)?;
        w.serialize((z, ps, ph, ph - z))?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// `t, Y, Z, y_recursion, z_recursion`, each series held at its last value
/// to the common length.
pub fn write_trajectory_csv(
    path: &Path,
    y: &[f64],
    z: &[f64],
    y_rec: &[f64],
    z_rec: &[f64],
) -> Result<()> {
    let at = |s: &[f64], t: usize| s.get(t).or(s.last()).copied().unwrap_or(0.0);
    // Stop once both sides have settled.
    let len = y.len().max(z.len()).max(y_rec.len().min(y.len() + 50));
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["t", "Y", "Z", "y_recursion", "z_recursion"])?;
    for t in 0..len {
        w.serialize((t, at(y, t), at(z, t), at(y_rec, t), at(z_rec, t)))?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::typestats::{extract_statistics, ThresholdRule};

    fn parse(text: &str, opts: EdgeListOptions) -> Result<EdgeList> {
        parse_edge_list(text.as_bytes(), "mem", opts)
    }

    #[test]
    fn path_file_statistics() {
        let el = parse(
            "# path\n1 2\n2 3\n",
            EdgeListOptions {
                undirected: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(el.labels, vec!["1", "2", "3"]);
        assert_eq!(el.graph.edge_count(), 4);
        let (rho, _) = ThresholdRule::Explicit(vec![1, 2, 1]).thresholds(&el.graph, false).unwrap();
        let (p, _) = extract_statistics(&el.graph, &rho, &CostRule::Linear).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.counts().unwrap(), &[2, 1]);
    }

    #[test]
    fn comments_commas_and_extra_columns() {
        let el = parse("% header\na,b,0.5\n\n  b c 7 x\n", EdgeListOptions::default()).unwrap();
        assert_eq!(el.graph.node_count(), 3);
        assert_eq!(el.graph.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn malformed_line_is_numbered() {
        let err = parse("1 2\n3\n", EdgeListOptions::default()).unwrap_err();
        assert!(err.to_string().starts_with("mem:2:"), "{err}");
    }

    #[test]
    fn self_loop_policy() {
        assert!(parse("1 1\n1 2\n", EdgeListOptions::default()).is_err());
        let el = parse(
            "1 1\n1 2\n",
            EdgeListOptions {
                self_loops: SelfLoopPolicy::Drop,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(el.dropped_self_loops, 1);
        assert_eq!(el.graph.edge_count(), 1);
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(
            parse("# nothing\n", EdgeListOptions::default()),
            Err(IoError::NoEdges(_))
        ));
    }

    #[test]
    fn threshold_and_cost_files() {
        let dir = tempfile::tempdir().unwrap();
        let th = dir.path().join("th.txt");
        std::fs::write(&th, "b 1\na 0\n").unwrap();
        let labels = vec!["a".to_string(), "b".to_string()];
        assert_eq!(read_thresholds(&th, &labels).unwrap(), vec![0, 1]);
        std::fs::write(&th, "a 0\n").unwrap();
        assert!(read_thresholds(&th, &labels).is_err());

        let cost = dir.path().join("cost.txt");
        std::fs::write(&cost, "# d k r costs\n2 2 1 0 5\n").unwrap();
        let rule = read_cost_table(&cost).unwrap();
        assert_eq!(rule.table(2, 2, 1).unwrap().values(), &[0.0, 5.0]);
        std::fs::write(&cost, "2 2 1 0\n").unwrap();
        assert!(read_cost_table(&cost).is_err());
    }

    #[test]
    fn documents_round_trip() {
        let el = parse(
            "1 2\n2 3\n",
            EdgeListOptions {
                undirected: true,
                ..Default::default()
            },
        )
        .unwrap();
        let (rho, _) = ThresholdRule::HalfOutDegree.thresholds(&el.graph, false).unwrap();
        let (p, _) = extract_statistics(&el.graph, &rho, &CostRule::Linear).unwrap();
        let doc = StatisticsDocument::new(&p, Some(4), serde_json::json!({"seed": 1}));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        write_json(&path, &doc).unwrap();
        let back: StatisticsDocument = read_json(&path).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.statistics().unwrap(), p);
        assert_eq!(back.summary.n, Some(3));

        let curve = dir.path().join("curve.csv");
        write_curve_csv(&curve, &p, 4).unwrap();
        let text = std::fs::read_to_string(&curve).unwrap();
        assert!(text.starts_with("z,psi,phi,phi_minus_z\n"));
        assert_eq!(text.lines().count(), 6);

        let traj = dir.path().join("t.csv");
        write_trajectory_csv(&traj, &[0.0, 0.5], &[0.0, 0.25], &[0.0, 0.4, 0.5], &[0.0, 0.2, 0.3])
            .unwrap();
        let text = std::fs::read_to_string(&traj).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,Y,Z,y_recursion,z_recursion");
        assert_eq!(text.lines().count(), 4);
    }
}
