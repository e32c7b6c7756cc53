//! End-to-end labeling: grids and graphs in, labelings, certificates,
//! trajectories and phase-portrait samples out.

use std::io::Write;

use crate::counterexample::representative_field;
use crate::error::{invalid, FlowError, Result};
use crate::flow::{sflow_init, sflow_rhs};
use crate::integrator::{certified_round, integrate, IntegratorConfig, TerminationRecord, Trajectory};
use crate::simplex::AssignmentState;
use crate::stability::{classify, StabilityReport};
use crate::weights::{DistanceMatrix, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryPolicy {
    /// Windows are cut off at the grid border.
    #[default]
    Shrink,
}

/// Pixel grid with Chebyshev-radius neighborhoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub neighborhood_radius: usize,
    pub boundary_policy: BoundaryPolicy,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, neighborhood_radius: usize) -> Self {
        Self { height, width, neighborhood_radius, boundary_policy: BoundaryPolicy::Shrink }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Row-major indices of the window around pixel `i`, itself included.
    pub fn neighborhood(&self, i: usize) -> Vec<usize> {
        let r = self.neighborhood_radius;
        let (y, x) = (i / self.width, i % self.width);
        let mut out = Vec::new();
        for yy in y.saturating_sub(r)..=(y + r).min(self.height - 1) {
            for xx in x.saturating_sub(r)..=(x + r).min(self.width - 1) {
                out.push(self.index(yy, xx));
            }
        }
        out
    }
}

/// `ω_ik = 1/|N_i|`, stored with the factorization `w = |N_i|`, `Ω̂` the
/// 0/1 adjacency including self loops.
pub fn build_uniform_weights(grid: &GridSpec) -> Result<WeightMatrix> {
    if grid.is_empty() {
        return Err(invalid("grid must have at least one pixel"));
    }
    let m = grid.len();
    let mut adj = Vec::new();
    let mut w = Vec::with_capacity(m);
    for i in 0..m {
        let nb = grid.neighborhood(i);
        w.push(nb.len() as f64);
        adj.extend(nb.into_iter().map(|k| (i, k, 1.0)));
    }
    WeightMatrix::from_factorization(w, WeightMatrix::from_triplets(m, adj)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
}

/// Prototypes `f*_j` with the distance `D_ij = scale · d(f_i, f*_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    prototypes: Vec<Vec<f64>>,
    pub metric: Metric,
    pub scale: f64,
}

impl LabelSet {
    pub fn new(prototypes: Vec<Vec<f64>>, scale: f64) -> Result<Self> {
        if prototypes.len() < 2 {
            return Err(invalid("at least two prototypes are required"));
        }
        let dim = prototypes[0].len();
        if dim == 0 || prototypes.iter().any(|p| p.len() != dim) {
            return Err(invalid("prototypes must share a positive dimension"));
        }
        if prototypes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("prototypes must be finite"));
        }
        for a in 0..prototypes.len() {
            for b in a + 1..prototypes.len() {
                if prototypes[a] == prototypes[b] {
                    return Err(invalid(format!("prototypes {a} and {b} coincide")));
                }
            }
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("scale must be positive"));
        }
        Ok(Self { prototypes, metric: Metric::Euclidean, scale })
    }

    /// Unit vectors `e_1..e_n` as prototypes.
    pub fn unit_vectors(n: usize, scale: f64) -> Result<Self> {
        let protos = (0..n).map(|j| (0..n).map(|k| (j == k) as u8 as f64).collect()).collect();
        Self::new(protos, scale)
    }

    pub fn n(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }
}

pub fn compute_distances(data: &[Vec<f64>], labels: &LabelSet) -> Result<DistanceMatrix> {
    let n = labels.n();
    let mut d = Vec::with_capacity(data.len() * n);
    for (i, f) in data.iter().enumerate() {
        if f.len() != labels.dim() {
            return Err(invalid(format!(
                "feature {i} has dimension {}, prototypes have {}",
                f.len(),
                labels.dim()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::Data { index: i, message: "non-finite feature".into() });
        }
        for p in labels.prototypes() {
            let dist = match labels.metric {
                Metric::Euclidean => f.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            };
            d.push(labels.scale * dist);
        }
    }
    DistanceMatrix::new(data.len(), n, d)
}

#[derive(Debug, Clone)]
pub struct LabelOutcome {
    /// Row-wise argmax of the final state; ties go to the lowest label.
    pub labeling: Vec<usize>,
    pub final_state: AssignmentState,
    pub trajectory: Trajectory,
    pub termination: TerminationRecord,
    /// Stability report of the rounded labeling, when one exists.
    pub report: Option<StabilityReport>,
}

impl LabelOutcome {
    pub fn certified(&self) -> bool {
        self.termination.certificate.as_ref().is_some_and(|c| c.certified)
    }

    /// Certificate and stability report as `key=value` lines.
    pub fn certificate_kv(&self) -> String {
        let t = &self.termination;
        let mut s = format!(
            "certified={}\ncriterion={}\nsteps={}\nfinal_entropy={}\n",
            self.certified(),
            t.criterion.as_str(),
            t.steps,
            t.final_entropy
        );
        if let Some(c) = &t.certificate {
            s += &format!(
                "stable={}\nepsilon={}\ndistance={}\nmargin={}\ntie_rows={}\n",
                c.stable,
                c.epsilon,
                c.distance,
                c.margin,
                c.tie_rows.len()
            );
            if let Some(r) = &c.reason {
                s += &format!("reason={r}\n");
            }
        }
        if let Some(r) = &self.report {
            for line in r.to_kv().lines() {
                s += &format!("report.{line}\n");
            }
        }
        s
    }
}

/// `sflow_init → integrate → certified_round`, from a precomputed distance
/// matrix. Runs that stop without a certificate (entropy or fixed-step
/// modes) are rounded through [`certified_round`] on the final state.
pub fn label_distances(d: &DistanceMatrix, omega: &WeightMatrix, cfg: &IntegratorConfig) -> Result<LabelOutcome> {
    let s0 = sflow_init(d, omega)?;
    let (trajectory, mut termination) = integrate(&s0, omega, cfg)?;
    let final_state = trajectory.last().expect("trajectory records the start").clone();
    if termination.certificate.is_none() {
        termination.certificate = Some(certified_round(&final_state, omega));
    }
    let labeling = final_state.argmax_rows_lowest();
    let report = match termination.certificate.as_ref().and_then(|c| c.sstar.as_ref()) {
        Some(sstar) => Some(classify(sstar, omega)?),
        None => None,
    };
    Ok(LabelOutcome { labeling, final_state, trajectory, termination, report })
}

pub fn label(data: &[Vec<f64>], labels: &LabelSet, omega: &WeightMatrix, cfg: &IntegratorConfig) -> Result<LabelOutcome> {
    label_distances(&compute_distances(data, labels)?, omega, cfg)
}

/// System sampled by [`phase_portrait`].
#[derive(Debug, Clone, Copy)]
pub enum PortraitSystem<'a> {
    /// S-flow with two labels on up to three vertices; coordinate `i` is `S_i1`.
    SFlow(&'a WeightMatrix),
    /// Representative flow on `Δ_3`; coordinates `(p_1, p_2)`.
    Representative(&'a WeightMatrix),
}

/// Samples the vector field on a regular grid of `resolution` points per
/// free coordinate (endpoints included) and writes long-format CSV
/// `sample,vertex,label,state,rhs`. Returns the number of samples.
pub fn phase_portrait<W: Write>(system: PortraitSystem<'_>, resolution: usize, mut out: W) -> Result<usize> {
    if resolution < 2 {
        return Err(invalid("resolution must be at least 2"));
    }
    let axis: Vec<f64> = (0..resolution).map(|k| k as f64 / (resolution - 1) as f64).collect();
    writeln!(out, "sample,vertex,label,state,rhs")?;
    let mut count = 0;
    match system {
        PortraitSystem::SFlow(omega) => {
            let m = omega.m();
            if m > 3 {
                return Err(FlowError::Unsupported(format!("{m} free coordinates; at most 3 can be gridded")));
            }
            let total = resolution.pow(m as u32);
            for idx in 0..total {
                let mut rows = Vec::with_capacity(m);
                let mut r = idx;
                for _ in 0..m {
                    let x = axis[r % resolution];
                    r /= resolution;
                    rows.push(vec![x, 1.0 - x]);
                }
                let s = AssignmentState::from_rows(&rows)?;
                let f = sflow_rhs(&s, omega)?;
                for i in 0..m {
                    for j in 0..2 {
                        writeln!(out, "{count},{i},{j},{},{}", s.get(i, j), f.row(i)[j])?;
                    }
                }
                count += 1;
            }
        }
        PortraitSystem::Representative(omega) => {
            if omega.m() != 3 {
                return Err(FlowError::Unsupported("representative portraits need n = 3".into()));
            }
            for (a, &p1) in axis.iter().enumerate() {
                for &p2 in &axis[..resolution - a] {
                    let p = [p1, p2, (1.0 - p1 - p2).max(0.0)];
                    let f = representative_field(&p, omega);
                    for j in 0..3 {
                        writeln!(out, "{count},0,{j},{},{}", p[j], f[j])?;
                    }
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// Integer labels, one grid row per line (`width` values), row-major.
pub fn write_labeling_csv<W: Write>(labels: &[usize], width: usize, mut out: W) -> Result<()> {
    if width == 0 {
        return Err(invalid("width must be positive"));
    }
    for row in labels.chunks(width) {
        let line: Vec<String> = row.iter().map(usize::to_string).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_labeling_csv(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        for tok in line.split(',') {
            out.push(tok.trim().parse().map_err(|_| FlowError::Parse(format!("line {}: bad label {tok:?}", ln + 1)))?);
        }
    }
    Ok(out)
}

/// One feature vector per non-empty line, comma separated. Lines starting
/// with `#` are skipped.
pub fn read_feature_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| FlowError::Parse(format!("line {}: {e}", ln + 1)))?;
        if let Some(first) = out.first().map(Vec::len) {
            if row.len() != first {
                return Err(FlowError::Parse(format!("line {}: expected {first} columns", ln + 1)));
            }
        }
        out.push(row);
    }
    if out.is_empty() {
        return Err(FlowError::Parse("no feature rows".into()));
    }
    Ok(out)
}

/// Edge list `i,k,omega`, 0-based. The vertex count is the largest index
/// plus one unless `m` is given.
pub fn read_edge_list(text: &str, m: Option<usize>) -> Result<WeightMatrix> {
    let mut entries = Vec::new();
    let mut max = 0;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('i') {
            continue;
        }
        let toks: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || FlowError::Parse(format!("line {}: expected i,k,omega", ln + 1));
        if toks.len() != 3 {
            return Err(bad());
        }
        let i: usize = toks[0].parse().map_err(|_| bad())?;
        let k: usize = toks[1].parse().map_err(|_| bad())?;
        let w: f64 = toks[2].parse().map_err(|_| bad())?;
        max = max.max(i).max(k);
        entries.push((i, k, w));
    }
    let m = m.unwrap_or(if entries.is_empty() { 0 } else { max + 1 });
    WeightMatrix::from_triplets(m, entries)
}

/// Decoded PGM (one feature) or PPM (three features), values scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub features: Vec<Vec<f64>>,
}

/// Binary `P5`/`P6` with maxval at most 255.
pub fn read_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FlowError::Parse("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(FlowError::Unsupported(format!("image format {other}"))),
    };
    let mut num = || -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| FlowError::Parse(format!("bad header value {t:?}")))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval == 0 || maxval > 255 {
        return Err(FlowError::Unsupported(format!("maxval {maxval}")));
    }
    // a single whitespace byte separates header and raster
    let raster = &bytes[(pos + 1).min(bytes.len())..];
    let need = width * height * channels;
    if raster.len() < need {
        return Err(FlowError::Parse(format!("raster has {} bytes, expected {need}", raster.len())));
    }
    let features = raster[..need]
        .chunks(channels)
        .map(|px| px.iter().map(|&b| b as f64 / maxval as f64).collect())
        .collect();
    Ok(Image { width, height, features })
}

/// Reference 12×12 instance: red background with a green rectangle inside
/// the image and a blue one resting on the bottom border. RGB features,
/// unit-vector prototypes at scale 10.
#[derive(Debug, Clone)]
pub struct TriColorInstance {
    pub grid: GridSpec,
    pub data: Vec<Vec<f64>>,
    pub input_labels: Vec<usize>,
    pub labels: LabelSet,
    /// Corners of the rectangles that are not on the image border.
    pub corners: Vec<usize>,
}

pub fn tricolor_instance() -> TriColorInstance {
    let grid = GridSpec::new(12, 12, 1);
    // (label, rows, cols), inclusive
    let rects = [(1, (2, 5), (2, 5)), (2, (7, 11), (6, 9))];
    let mut input_labels = vec![0; grid.len()];
    let mut corners = Vec::new();
    for &(l, (r0, r1), (c0, c1)) in &rects {
        for r in r0..=r1 {
            for c in c0..=c1 {
                input_labels[grid.index(r, c)] = l;
            }
        }
        for (r, c) in [(r0, c0), (r0, c1), (r1, c0), (r1, c1)] {
            if r > 0 && c > 0 && r + 1 < grid.height && c + 1 < grid.width {
                corners.push(grid.index(r, c));
            }
        }
    }
    let data = input_labels.iter().map(|&l| (0..3).map(|j| (j == l) as u8 as f64).collect()).collect();
    TriColorInstance {
        grid,
        data,
        input_labels,
        labels: LabelSet::unit_vectors(3, 10.0).expect("three distinct prototypes"),
        corners,
    }
}
