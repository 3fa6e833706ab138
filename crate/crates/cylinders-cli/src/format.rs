//! Problem and controller file formats.
//!
//! Problems are TOML documents with sections `plant`, `reference` (optional),
//! `controller_order`, `target`, `bound`, `simulation` (optional) and
//! `options` (optional); matrices are arrays of row arrays of decimals.
//! Synthesized controllers are written back as TOML with full round-trip
//! precision.

use anyhow::{anyhow, bail, Context, Result};
use cylinders::linalg::SymMat;
use cylinders::simulation::{SignalKind, SignalSpec};
use cylinders::synthesis::{
    Controller, Dims, PlantModel, ReferenceModel, SynthesisProblem, TargetMap,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub type MatrixRows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller_order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSection>,
    pub bound: BoundSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Options::is_default")]
    pub options: Options,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(rename = "A1")]
    pub a1: MatrixRows,
    #[serde(rename = "B1")]
    pub b1: MatrixRows,
    #[serde(rename = "C1")]
    pub c1: MatrixRows,
    #[serde(rename = "D1")]
    pub d1: MatrixRows,
    #[serde(rename = "E1", skip_serializing_if = "Option::is_none")]
    pub e1: Option<MatrixRows>,
    #[serde(rename = "F1", skip_serializing_if = "Option::is_none")]
    pub f1: Option<MatrixRows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(rename = "A2")]
    pub a2: MatrixRows,
    #[serde(rename = "C2", skip_serializing_if = "Option::is_none")]
    pub c2: Option<MatrixRows>,
    #[serde(rename = "D2")]
    pub d2: MatrixRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    #[serde(rename = "K1")]
    pub k1: MatrixRows,
    #[serde(rename = "K2", skip_serializing_if = "Option::is_none")]
    pub k2: Option<MatrixRows>,
    #[serde(rename = "K3", skip_serializing_if = "Option::is_none")]
    pub k3: Option<MatrixRows>,
}

/// Standalone disturbed system for the analyze command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(rename = "A")]
    pub a: MatrixRows,
    #[serde(rename = "B")]
    pub b: MatrixRows,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none")]
    pub c: Option<MatrixRows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    #[serde(rename = "G")]
    pub g: MatrixRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalEntry {
    Sine {
        amplitude: f64,
        omega: f64,
    },
    Square {
        offset: f64,
        amplitude: f64,
        omega: f64,
    },
    Constant {
        value: f64,
    },
    Sampled {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl SignalEntry {
    fn to_kind(&self) -> SignalKind {
        match self {
            SignalEntry::Sine { amplitude, omega } => SignalKind::Sine {
                amplitude: *amplitude,
                omega: *omega,
            },
            SignalEntry::Square {
                offset,
                amplitude,
                omega,
            } => SignalKind::SquareSgnSine {
                offset: *offset,
                amplitude: *amplitude,
                omega: *omega,
            },
            SignalEntry::Constant { value } => SignalKind::Constant { value: *value },
            SignalEntry::Sampled { times, values } => SignalKind::Sampled {
                times: times.clone(),
                values: values.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub signals: Vec<SignalEntry>,
    pub s0: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    /// 1-based state indices of the plotted plane.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projection_axes: Option<[usize; 2]>,
    /// Optional explicit corridor pairs (1-based indices); derived from the
    /// target map when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corridor_pairs: Option<Vec<[usize; 2]>>,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_horizon() -> f64 {
    100.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_grid: Option<Vec<f64>>,
    /// Alpha pinned by --paper-mode runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paper_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_exit: Option<bool>,
}

impl Options {
    fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

// ---------------------------------------------------------------------------
// conversions
// ---------------------------------------------------------------------------

pub fn to_matrix(rows: &MatrixRows, name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            bail!(
                "matrix {name}: row {} has {} entries, expected {c}",
                i + 1,
                row.len()
            );
        }
        if row.iter().any(|v| !v.is_finite()) {
            bail!("matrix {name}: non-finite entry in row {}", i + 1);
        }
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn expect_shape(m: &DMatrix<f64>, rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        bail!(
            "matrix {name} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        );
    }
    Ok(())
}

pub fn from_matrix(m: &DMatrix<f64>) -> MatrixRows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    toml::from_str(text).map_err(|e| anyhow!("{e}"))
}

pub fn load_problem(path: &std::path::Path) -> Result<ProblemFile> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_problem(&text).with_context(|| format!("parsing {}", path.display()))
}

impl ProblemFile {
    /// Builds the synthesis problem, validating every dimension.
    pub fn synthesis_problem(&self) -> Result<SynthesisProblem> {
        let plant_sec = self
            .plant
            .as_ref()
            .ok_or_else(|| anyhow!("missing [plant] section"))?;
        let a = to_matrix(&plant_sec.a1, "A1")?;
        let n1 = a.nrows();
        if !a.is_square() || n1 == 0 {
            bail!("A1 must be square and nonempty");
        }
        let b_u = to_matrix(&plant_sec.b1, "B1")?;
        expect_shape(&b_u, n1, b_u.ncols(), "B1")?;
        let b_w = to_matrix(&plant_sec.c1, "C1")?;
        expect_shape(&b_w, n1, b_w.ncols(), "C1")?;
        let c = to_matrix(&plant_sec.d1, "D1")?;
        expect_shape(&c, c.nrows(), n1, "D1")?;
        let (b1, c1, b2) = (b_u.ncols(), b_w.ncols(), c.nrows());
        let d_u = match &plant_sec.e1 {
            Some(rows) => {
                let m = to_matrix(rows, "E1")?;
                expect_shape(&m, b2, b1, "E1")?;
                m
            }
            None => DMatrix::zeros(b2, b1),
        };
        let d_w = match &plant_sec.f1 {
            Some(rows) => {
                let m = to_matrix(rows, "F1")?;
                expect_shape(&m, b2, c1, "F1")?;
                m
            }
            None => DMatrix::zeros(b2, c1),
        };
        let plant = PlantModel::new(a, b_u, b_w, c, d_u, d_w).map_err(|e| anyhow!("{e}"))?;

        let reference = match &self.reference {
            Some(sec) => {
                let a2 = to_matrix(&sec.a2, "A2")?;
                if !a2.is_square() {
                    bail!("A2 must be square");
                }
                let n2 = a2.nrows();
                let b = match &sec.c2 {
                    Some(rows) => {
                        let m = to_matrix(rows, "C2")?;
                        expect_shape(&m, n2, m.ncols(), "C2")?;
                        m
                    }
                    None => DMatrix::zeros(n2, 0),
                };
                let cr = to_matrix(&sec.d2, "D2")?;
                expect_shape(&cr, c1, n2, "D2")?;
                ReferenceModel::new(a2, b, cr).map_err(|e| anyhow!("{e}"))?
            }
            None => ReferenceModel::empty(c1),
        };

        let order = self.controller_order.unwrap_or(0);
        let target_sec = self
            .target
            .as_ref()
            .ok_or_else(|| anyhow!("missing [target] section"))?;
        let k1 = to_matrix(&target_sec.k1, "K1")?;
        expect_shape(&k1, k1.nrows(), n1, "K1")?;
        let k = k1.nrows();
        let k2 = match &target_sec.k2 {
            Some(rows) => {
                let m = to_matrix(rows, "K2")?;
                expect_shape(&m, k, reference.state_dim(), "K2")?;
                m
            }
            None => DMatrix::zeros(k, reference.state_dim()),
        };
        let k3 = match &target_sec.k3 {
            Some(rows) => {
                let m = to_matrix(rows, "K3")?;
                expect_shape(&m, k, order, "K3")?;
                m
            }
            None => DMatrix::zeros(k, order),
        };
        let target = TargetMap {
            on_plant: k1,
            on_reference: k2,
            on_controller: k3,
        };

        let g = self.bound_matrix()?;
        let dist = c1 + reference.command_dim();
        if g.dim() != dist {
            bail!(
                "G must be {dist}x{dist} for the stacked disturbance, got {0}x{0}",
                g.dim()
            );
        }
        SynthesisProblem::new(plant, reference, order, target, g).map_err(|e| anyhow!("{e}"))
    }

    pub fn bound_matrix(&self) -> Result<SymMat> {
        let g = to_matrix(&self.bound.g, "G")?;
        SymMat::new(g).map_err(|e| anyhow!("G: {e}"))
    }

    /// Disturbed system for the analyze command: the [analysis] section when
    /// present, otherwise the open-loop plant driven by its disturbance.
    pub fn analysis_system(
        &self,
    ) -> Result<(cylinders::analysis::DisturbedSystem, Option<DMatrix<f64>>)> {
        let g = self.bound_matrix()?;
        if let Some(sec) = &self.analysis {
            let a = to_matrix(&sec.a, "A")?;
            let b = to_matrix(&sec.b, "B")?;
            let c = sec
                .c
                .as_ref()
                .map(|rows| to_matrix(rows, "C"))
                .transpose()?;
            let sys =
                cylinders::analysis::DisturbedSystem::new(a, b, g).map_err(|e| anyhow!("{e}"))?;
            return Ok((sys, c));
        }
        let plant_sec = self
            .plant
            .as_ref()
            .ok_or_else(|| anyhow!("need an [analysis] or [plant] section"))?;
        let a = to_matrix(&plant_sec.a1, "A1")?;
        let b = to_matrix(&plant_sec.c1, "C1")?;
        let sys = cylinders::analysis::DisturbedSystem::new(a, b, g).map_err(|e| anyhow!("{e}"))?;
        Ok((sys, None))
    }

    pub fn signal_spec(&self) -> Result<Option<SignalSpec>> {
        let Some(sim) = &self.simulation else {
            return Ok(None);
        };
        let kinds: Vec<SignalKind> = sim.signals.iter().map(|s| s.to_kind()).collect();
        Ok(Some(SignalSpec::new(kinds).map_err(|e| anyhow!("{e}"))?))
    }
}

// ---------------------------------------------------------------------------
// controller files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    pub controller: ControllerSection,
    pub certificate: CertificateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub order: usize,
    #[serde(rename = "A3")]
    pub a3: MatrixRows,
    #[serde(rename = "B3")]
    pub b3: MatrixRows,
    #[serde(rename = "C3")]
    pub c3: MatrixRows,
    #[serde(rename = "D3")]
    pub d3: MatrixRows,
    #[serde(rename = "E3")]
    pub e3: MatrixRows,
    #[serde(rename = "F3")]
    pub f3: MatrixRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    pub alpha: f64,
    #[serde(rename = "P")]
    pub p: MatrixRows,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

impl ControllerFile {
    pub fn from_parts(ctrl: &Controller, p: &SymMat, alpha: f64, margin: Option<f64>) -> Self {
        Self {
            controller: ControllerSection {
                order: ctrl.order(),
                a3: from_matrix(&ctrl.a),
                b3: from_matrix(&ctrl.b_y),
                c3: from_matrix(&ctrl.b_g),
                d3: from_matrix(&ctrl.c),
                e3: from_matrix(&ctrl.d_y),
                f3: from_matrix(&ctrl.d_g),
            },
            certificate: CertificateSection {
                alpha,
                p: from_matrix(p.as_matrix()),
                margin,
            },
        }
    }

    /// Reassembles the controller, validating against the problem dims.
    pub fn controller(&self, dims: &Dims) -> Result<Controller> {
        let sec = &self.controller;
        if sec.order != dims.controller {
            bail!(
                "controller order {} does not match the problem's controller_order {}",
                sec.order,
                dims.controller
            );
        }
        let fetch = |rows: &MatrixRows, r: usize, c: usize, name: &str| -> Result<DMatrix<f64>> {
            let mut m = to_matrix(rows, name)?;
            // zero-sized matrices lose one dimension in row-list form
            if m.nrows() == r && (m.ncols() == c || r == 0 || c == 0) {
                if m.ncols() != c {
                    m = DMatrix::zeros(r, c);
                }
            } else if r == 0 || c == 0 {
                m = DMatrix::zeros(r, c);
            } else {
                expect_shape(&m, r, c, name)?;
            }
            Ok(m)
        };
        let (a3, b1) = (dims.controller, dims.control);
        let (b2, c1) = (dims.output, dims.dist_plant);
        Ok(Controller {
            a: fetch(&sec.a3, a3, a3, "A3")?,
            b_y: fetch(&sec.b3, a3, b2, "B3")?,
            b_g: fetch(&sec.c3, a3, c1, "C3")?,
            c: fetch(&sec.d3, b1, a3, "D3")?,
            d_y: fetch(&sec.e3, b1, b2, "E3")?,
            d_g: fetch(&sec.f3, b1, c1, "F3")?,
        })
    }

    pub fn p_matrix(&self) -> Result<SymMat> {
        let p = to_matrix(&self.certificate.p, "P")?;
        SymMat::new(p).map_err(|e| anyhow!("P: {e}"))
    }
}

pub fn save_controller(path: &std::path::Path, file: &ControllerFile) -> Result<()> {
    let text = toml::to_string_pretty(file).context("serializing controller")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_controller(path: &std::path::Path) -> Result<ControllerFile> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Geometry tool input: a quadratic form plus an optional linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryFile {
    pub cylinder: CylinderSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderSection {
    #[serde(rename = "Q")]
    pub q: MatrixRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSection {
    #[serde(rename = "C")]
    pub c: MatrixRows,
}

pub fn load_geometry(path: &std::path::Path) -> Result<GeometryFile> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Parses a matrix literal like "1 -1; 0 1" (rows split by ';').
pub fn parse_matrix_literal(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|e| anyhow!("bad number {tok}: {e}"))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    to_matrix(&rows, "literal")
}

/// Derives corridor pairs from target rows containing exactly one +1 and one
/// −1 entry (all 0-based).
pub fn corridor_pairs_from_target(k: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..k.nrows() {
        let mut pos = None;
        let mut neg = None;
        let mut clean = true;
        for j in 0..k.ncols() {
            let v = k[(i, j)];
            if v == 0.0 {
                continue;
            } else if (v - 1.0).abs() <= 1e-12 && pos.is_none() {
                pos = Some(j);
            } else if (v + 1.0).abs() <= 1e-12 && neg.is_none() {
                neg = Some(j);
            } else {
                clean = false;
            }
        }
        if clean {
            if let (Some(p), Some(n)) = (pos, neg) {
                pairs.push((p, n));
            }
        }
    }
    pairs
}

/// The state vector companion labels used in reports.
pub fn state_labels(dims: &Dims) -> Vec<String> {
    let mut labels = Vec::with_capacity(dims.state());
    for i in 0..dims.plant {
        labels.push(format!("x{}", i + 1));
    }
    for i in 0..dims.reference {
        labels.push(format!("xr{}", i + 1));
    }
    for i in 0..dims.controller {
        labels.push(format!("xc{}", i + 1));
    }
    labels
}

/// DVector from a plain list with a length check.
pub fn to_vector(values: &[f64], len: usize, name: &str) -> Result<DVector<f64>> {
    if values.len() != len {
        bail!("{name} must have {len} entries, got {}", values.len());
    }
    Ok(DVector::from_column_slice(values))
}
