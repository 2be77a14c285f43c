//! Plain-text dataset format.
//!
//! ```text
//! n m d C
//! src dst            (m lines, 0-based, read as undirected and symmetrized)
//! x_1 ... x_d        (n lines of features)
//! label split        (n lines, split in {train, val, test, none})
//! ```
//!
//! Blank lines are skipped. The converter for the LINQS citation dumps
//! (`<name>.content` / `<name>.cites`) lives here too.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, LabeledDataset, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    EdgeText,
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    match format {
        DatasetFormat::EdgeText => parse_edge_text(&text),
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from '{tok}'")))
}

pub fn parse_edge_text(text: &str) -> Result<LabeledDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 4 {
        return Err(parse_err(hline, format!("header needs 4 fields 'n m d C', got {}", head.len())));
    }
    let n: usize = parse_num(head[0], hline, "n")?;
    let m: usize = parse_num(head[1], hline, "m")?;
    let d: usize = parse_num(head[2], hline, "d")?;
    let c: usize = parse_num(head[3], hline, "C")?;

    let mut edges = Vec::with_capacity(m);
    for k in 0..m {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::InconsistentCounts(format!("expected {m} edge lines, found {k}")))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(ln, "edge line needs 'src dst'"));
        }
        let src: usize = parse_num(toks[0], ln, "src")?;
        let dst: usize = parse_num(toks[1], ln, "dst")?;
        if src >= n || dst >= n {
            return Err(parse_err(ln, format!("edge ({src}, {dst}) out of range for n={n}")));
        }
        edges.push((dst, src));
    }

    let mut values = Vec::with_capacity(n * d);
    for row in 0..n {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::InconsistentCounts(format!("expected {n} feature lines, found {row}")))?;
        let before = values.len();
        for tok in l.split_whitespace() {
            let v: f64 = parse_num(tok, ln, "feature")?;
            if !v.is_finite() {
                return Err(parse_err(ln, "non-finite feature value"));
            }
            values.push(v);
        }
        if values.len() - before != d {
            return Err(parse_err(
                ln,
                format!("feature line has {} values, expected d={d}", values.len() - before),
            ));
        }
    }

    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for row in 0..n {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::InconsistentCounts(format!("expected {n} label lines, found {row}")))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(ln, "label line needs 'label split'"));
        }
        let label: usize = parse_num(toks[0], ln, "label")?;
        if label >= c {
            return Err(Error::LabelOutOfRange {
                node: row,
                label,
                num_classes: c,
            });
        }
        let split: Split = toks[1].parse().map_err(|e: String| parse_err(ln, e))?;
        labels.push(label);
        splits.push(split);
    }

    if let Some((ln, _)) = lines.next() {
        return Err(Error::InconsistentCounts(format!(
            "trailing content at line {ln} after {n} label lines"
        )));
    }

    let graph = Graph::from_edges(n, &edges, true)?;
    let features = FeatureMatrix::new(n, d, values)?;
    LabeledDataset::new(graph, features, labels, c, &splits)
}

/// Serializes a dataset. Each undirected pair is written once (`src < dst`
/// plus self-loops), so a load of the output reproduces the graph exactly
/// when the graph is symmetric.
pub fn write_edge_text(ds: &LabeledDataset) -> String {
    let g = &ds.graph;
    let pairs: Vec<(usize, usize)> = g.edges().filter(|&(i, j)| j <= i).map(|(i, j)| (j, i)).collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {} {}",
        g.num_nodes(),
        pairs.len(),
        ds.features.cols(),
        ds.num_classes
    );
    for (src, dst) in &pairs {
        let _ = writeln!(out, "{src} {dst}");
    }
    for i in 0..g.num_nodes() {
        let row: Vec<String> = ds.features.row(i).iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    for i in 0..g.num_nodes() {
        let _ = writeln!(out, "{} {}", ds.labels[i], ds.split_of(i).as_str());
    }
    out
}

/// Split sizes for the standard semi-supervised citation protocol.
#[derive(Debug, Clone, Copy)]
pub struct PlanetoidSplit {
    pub train_per_class: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub seed: u64,
}

impl Default for PlanetoidSplit {
    fn default() -> Self {
        Self {
            train_per_class: 20,
            num_val: 500,
            num_test: 1000,
            seed: 0,
        }
    }
}

/// Converts a LINQS-style citation dump into a [`LabeledDataset`].
///
/// `content` lines are `paper_id f_1 .. f_d class_name`; `cites` lines are
/// `cited_id citing_id`. Citations naming unknown papers are dropped, as in
/// the reference loaders. Class ids follow sorted class-name order and the
/// split draws `train_per_class` nodes per class, then validation and test
/// nodes from the remainder, under a seeded shuffle.
pub fn convert_linqs(content: &str, cites: &str, split: PlanetoidSplit) -> Result<LabeledDataset> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut values = Vec::new();
    let mut class_names = Vec::new();
    let mut d = None;
    for (ln, line) in content.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 3 {
            return Err(parse_err(ln + 1, "content line needs id, features and class"));
        }
        let feats = &toks[1..toks.len() - 1];
        match d {
            None => d = Some(feats.len()),
            Some(d) if d != feats.len() => {
                return Err(parse_err(ln + 1, format!("expected {d} features, got {}", feats.len())))
            }
            _ => {}
        }
        if ids.insert(toks[0].to_string(), ids.len()).is_some() {
            return Err(parse_err(ln + 1, format!("duplicate paper id {}", toks[0])));
        }
        for f in feats {
            values.push(parse_num::<f64>(f, ln + 1, "feature")?);
        }
        class_names.push(toks[toks.len() - 1].to_string());
    }
    let n = ids.len();
    let d = d.unwrap_or(0);

    let mut classes: Vec<&String> = class_names.iter().collect();
    classes.sort();
    classes.dedup();
    let labels: Vec<usize> = class_names
        .iter()
        .map(|c| classes.binary_search(&c).unwrap())
        .collect();
    let num_classes = classes.len();

    let mut edges = Vec::new();
    for (ln, line) in cites.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            return Err(parse_err(ln + 1, "cites line needs two ids"));
        }
        if let (Some(&a), Some(&b)) = (ids.get(toks[0]), ids.get(toks[1])) {
            if a != b {
                edges.push((a, b));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges, true)?;
    let features = FeatureMatrix::new(n, d, values)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split.seed));
    let mut splits = vec![Split::None; n];
    let mut per_class = vec![0usize; num_classes];
    let mut rest = Vec::new();
    for &i in &order {
        if per_class[labels[i]] < split.train_per_class {
            per_class[labels[i]] += 1;
            splits[i] = Split::Train;
        } else {
            rest.push(i);
        }
    }
    for (k, &i) in rest.iter().enumerate() {
        if k < split.num_val {
            splits[i] = Split::Val;
        } else if k < split.num_val + split.num_test {
            splits[i] = Split::Test;
        }
    }
    LabeledDataset::new(graph, features, labels, num_classes, &splits)
}
