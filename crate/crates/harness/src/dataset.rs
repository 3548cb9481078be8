//! Citation-network files and partition files.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use fedcog_core::graph::GlobalGraph;
use fedcog_core::partition::Partition;
use ndarray::Array2;

use crate::error::{AtStage, HarnessError, Result, Stage};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Lines with their 1-based numbers, blank lines skipped.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Loads `id<TAB>f1..fF<TAB>label` content lines and `target<TAB>source` cites lines.
///
/// Node ids keep file order, class ids follow first appearance of each label.
/// Cites are undirected; duplicates collapse and self-citations are dropped.
pub fn load_citation_dataset(content_path: &Path, cites_path: &Path) -> Result<GlobalGraph> {
    let content = read(content_path)?;
    let malformed = |line: usize, reason: String| HarnessError::Malformed {
        path: content_path.to_path_buf(),
        line,
        reason,
    };

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut classes: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut features = Vec::new();
    let mut width = None;
    for (line, text) in numbered_lines(&content) {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() < 2 {
            return Err(malformed(line, "expected an id and a label".into()));
        }
        let f = fields.len() - 2;
        match width {
            None => width = Some(f),
            Some(w) if w != f => return Err(malformed(line, format!("{f} features, earlier lines have {w}"))),
            _ => {}
        }
        for (k, v) in fields[1..=f].iter().enumerate() {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| malformed(line, format!("feature {} is not a number: {v:?}", k + 1)))?;
            features.push(x);
        }
        let id = fields[0].trim().to_string();
        if index.insert(id.clone(), labels.len()).is_some() {
            return Err(malformed(line, format!("node {id} listed twice")));
        }
        let next = classes.len();
        labels.push(*classes.entry(fields[f + 1].trim().to_string()).or_insert(next));
    }
    let n = labels.len();
    if n == 0 {
        return Err(malformed(0, "no nodes".into()));
    }

    let cites = read(cites_path)?;
    let mut edges = Vec::new();
    for (line, text) in numbered_lines(&cites) {
        let fields: Vec<&str> = text.split('\t').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(HarnessError::Malformed {
                path: cites_path.to_path_buf(),
                line,
                reason: format!("expected 2 fields, found {}", fields.len()),
            });
        }
        let mut ends = [0usize; 2];
        for (slot, id) in ends.iter_mut().zip(&fields) {
            *slot = *index.get(*id).ok_or_else(|| HarnessError::Dangling {
                path: cites_path.to_path_buf(),
                line,
                id: id.to_string(),
            })?;
        }
        if ends[0] != ends[1] {
            edges.push((ends[0], ends[1]));
        }
    }

    let x = Array2::from_shape_vec((n, width.unwrap_or(0)), features).expect("rows share one width");
    GlobalGraph::new(n, edges, x, labels, classes.len()).at(Stage::Load)
}

/// One `node_id<TAB>party_id` line per node, ascending node id.
pub fn write_partition(p: &Partition, path: &Path) -> Result<()> {
    let io = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for (u, owner) in p.owners().iter().enumerate() {
        writeln!(out, "{u}\t{owner}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_partition(path: &Path, num_nodes: usize) -> Result<Partition> {
    let text = read(path)?;
    let malformed = |line, reason: String| HarnessError::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut owner = vec![None; num_nodes];
    for (line, l) in numbered_lines(&text) {
        let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [u, p] => u.parse::<usize>().ok().zip(p.parse::<usize>().ok()),
            _ => None,
        };
        let (u, p) = parsed.ok_or_else(|| malformed(line, "expected node_id<TAB>party_id".into()))?;
        if u >= num_nodes {
            return Err(malformed(line, format!("node {u} out of range")));
        }
        if owner[u].replace(p).is_some() {
            return Err(malformed(line, format!("node {u} assigned twice")));
        }
    }
    let owner: Vec<usize> = owner
        .into_iter()
        .enumerate()
        .map(|(u, o)| o.ok_or_else(|| malformed(0, format!("node {u} missing"))))
        .collect::<Result<_>>()?;
    let m = owner.iter().max().map_or(0, |&p| p + 1);
    Partition::new(owner, m).at(Stage::Partition)
}
