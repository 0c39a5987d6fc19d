//! Python bindings. Volumes cross the boundary as flat lists in the crate's
//! layout (x fastest, then y, z, channel); configs and phantom specs as dicts.

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use umcf_core::eval::{self, PhantomSpec};
use umcf_core::field::{self, Temperature};
use umcf_core::fusion::{self, FusionConfig, FusionInputs, GateMode};
use umcf_core::io::{self, TokenFile};
use umcf_core::spatial::{self, TumorClass};
use umcf_core::tokens::{self, Modality};
use umcf_core::uncertainty::UncertaintyFields;
use umcf_core::UmcfError;

create_exception!(umcf, FusionError, PyValueError);

fn to_py(e: UmcfError) -> PyErr {
    match e {
        UmcfError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => FusionError::new_err(other.to_string()),
    }
}

fn json_text(obj: Option<&Bound<'_, PyAny>>) -> PyResult<String> {
    match obj {
        None => Ok("{}".to_string()),
        Some(o) if o.is_none() => Ok("{}".to_string()),
        Some(o) => o.py().import("json")?.call_method1("dumps", (o,))?.extract(),
    }
}

fn json_value<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_class(name: &str) -> PyResult<TumorClass> {
    TumorClass::ALL
        .into_iter()
        .find(|c| c.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| PyValueError::new_err(format!("unknown class {name:?}; expected ET, TC or WT")))
}

fn parse_mode(name: &str) -> PyResult<GateMode> {
    match name {
        "joint" => Ok(GateMode::Joint),
        "pairwise" => Ok(GateMode::Pairwise),
        "mean" => Ok(GateMode::Mean),
        _ => Err(PyValueError::new_err(format!("unknown gate mode {name:?}"))),
    }
}

/// Dense voxel field with `channels` values per voxel.
#[pyclass(name = "VoxelGrid", module = "umcf", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyVoxelGrid {
    inner: field::VoxelGrid,
}

#[pymethods]
impl PyVoxelGrid {
    #[new]
    fn new(dims: [usize; 3], channels: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: field::VoxelGrid::new(dims, channels, data).map_err(to_py)?,
        })
    }

    /// Builds a grid from voxel-major rows (`channels` consecutive values per voxel).
    #[staticmethod]
    fn from_rows(dims: [usize; 3], channels: usize, rows: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: field::VoxelGrid::from_rows(dims, channels, &rows).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_volume(path).map_err(to_py)?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        io::write_volume(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        let [a, b, c] = self.inner.dims();
        (a, b, c)
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn voxel_count(&self) -> usize {
        self.inner.voxel_count()
    }

    /// Channel-planar values.
    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn to_rows(&self) -> Vec<f64> {
        self.inner.to_rows()
    }

    fn channel(&self, c: usize) -> PyResult<Vec<f64>> {
        if c >= self.inner.channels() {
            return Err(PyValueError::new_err(format!("channel {c} out of range")));
        }
        Ok(self.inner.channel(c).to_vec())
    }

    fn voxel(&self, v: usize) -> PyResult<Vec<f64>> {
        if v >= self.inner.voxel_count() {
            return Err(PyValueError::new_err(format!("voxel {v} out of range")));
        }
        Ok(self.inner.voxel(v))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let [a, b, c] = self.inner.dims();
        format!("VoxelGrid(dims=({a}, {b}, {c}), channels={})", self.inner.channels())
    }
}

/// ET, TC and WT probability maps, each in [0, 1].
#[pyclass(name = "ProbMaps", module = "umcf", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyProbMaps {
    inner: spatial::ProbMaps,
}

#[pymethods]
impl PyProbMaps {
    #[new]
    fn new(grid: &PyVoxelGrid) -> PyResult<Self> {
        Ok(Self {
            inner: spatial::ProbMaps::new(grid.inner.clone()).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_planes(dims: [usize; 3], et: Vec<f64>, tc: Vec<f64>, wt: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: spatial::ProbMaps::from_planes(dims, &et, &tc, &wt).map_err(to_py)?,
        })
    }

    #[getter]
    fn grid(&self) -> PyVoxelGrid {
        PyVoxelGrid {
            inner: self.inner.grid().clone(),
        }
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        let [a, b, c] = self.inner.dims();
        (a, b, c)
    }

    fn plane(&self, class_name: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.class(parse_class(class_name)?).to_vec())
    }

    #[pyo3(signature = (class_name, threshold = 0.5))]
    fn hardened(&self, class_name: &str, threshold: f64) -> PyResult<Vec<bool>> {
        Ok(self.inner.hardened(parse_class(class_name)?, threshold))
    }
}

/// Unit-norm tokens of one modality plus their normalized prototype.
#[pyclass(name = "TokenSet", module = "umcf", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyTokenSet {
    inner: tokens::TokenSet,
}

#[pymethods]
impl PyTokenSet {
    /// Parses a token file, projecting to `dim` with `seed` when its dim differs.
    #[staticmethod]
    #[pyo3(signature = (text, dim, seed = 0))]
    fn from_json(text: &str, dim: usize, seed: u64) -> PyResult<Self> {
        let file = TokenFile::from_json(text).map_err(to_py)?;
        Ok(Self {
            inner: file.to_token_set(dim, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, dim, seed = 0))]
    fn read(path: &str, dim: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_tokens(path, dim, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_vectors(vectors: Vec<Vec<f64>>, labels: Vec<String>) -> PyResult<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        Ok(Self {
            inner: tokens::TokenSet::from_vectors(Modality::Semantic, dim, &vectors, labels).map_err(to_py)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn vectors(&self) -> Vec<Vec<f64>> {
        self.inner.tokens().iter().map(|t| t.values().to_vec()).collect()
    }

    #[getter]
    fn prototype(&self) -> Vec<f64> {
        self.inner.prototype().values().to_vec()
    }

    #[getter]
    fn prototype_degenerate(&self) -> bool {
        self.inner.prototype().is_degenerate()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Phantom", module = "umcf", frozen, get_all)]
pub struct PyPhantom {
    features: PyVoxelGrid,
    probmaps: PyProbMaps,
    ground_truth: PyProbMaps,
    /// Token file contents (JSON) for the phantom's phrases.
    tokens_json: String,
    violation_rate: f64,
}

#[pymethods]
impl PyPhantom {
    /// Semantic tokens at the phantom's feature dim.
    fn tokens(&self) -> PyResult<PyTokenSet> {
        PyTokenSet::from_json(&self.tokens_json, self.features.inner.channels(), 0)
    }

    /// Writes the same files as the `phantom` command.
    fn save(&self, outdir: &str) -> PyResult<()> {
        let dir = std::path::Path::new(outdir);
        std::fs::create_dir_all(dir).map_err(|e| PyOSError::new_err(e.to_string()))?;
        io::write_volume(dir.join("features.vol"), &self.features.inner).map_err(to_py)?;
        io::write_volume(dir.join("probmaps.vol"), self.probmaps.inner.grid()).map_err(to_py)?;
        io::write_volume(dir.join("truth.vol"), self.ground_truth.inner.grid()).map_err(to_py)?;
        std::fs::write(dir.join("tokens.json"), &self.tokens_json).map_err(|e| PyOSError::new_err(e.to_string()))
    }
}

#[pyclass(name = "FusionResult", module = "umcf", frozen, get_all)]
pub struct PyFusionResult {
    field: PyVoxelGrid,
    probmaps: PyProbMaps,
    residuals: Vec<f64>,
    violation_rate_before: f64,
    violation_rate_after: f64,
    /// JSON-per-line diagnostics report.
    report: String,
}

#[pymethods]
impl PyFusionResult {
    /// The report parsed into a list of dicts.
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let items = self
            .report
            .lines()
            .map(|l| json_value(py, l))
            .collect::<PyResult<Vec<_>>>()?;
        PyList::new(py, items)
    }
}

/// Generates a nested-ellipsoid phantom; `spec` keys override the defaults.
#[pyfunction]
#[pyo3(signature = (spec = None))]
fn generate_phantom(spec: Option<&Bound<'_, PyAny>>) -> PyResult<PyPhantom> {
    let spec: PhantomSpec =
        serde_json::from_str(&json_text(spec)?).map_err(|e| FusionError::new_err(format!("phantom spec: {e}")))?;
    let ph = eval::generate_phantom(&spec).map_err(to_py)?;
    Ok(PyPhantom {
        violation_rate: eval::hierarchy_violation_rate(&ph.probmaps, 0.5),
        features: PyVoxelGrid { inner: ph.features },
        probmaps: PyProbMaps { inner: ph.probmaps },
        ground_truth: PyProbMaps { inner: ph.ground_truth },
        tokens_json: ph.tokens.to_json(),
    })
}

/// Runs the fusion iteration; `config` keys override the defaults.
#[pyfunction]
#[pyo3(signature = (features, tokens, probmaps, config = None))]
fn run_fusion(
    py: Python<'_>,
    features: &PyVoxelGrid,
    tokens: &PyTokenSet,
    probmaps: &PyProbMaps,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<PyFusionResult> {
    let cfg = FusionConfig::from_json(&json_text(config)?).map_err(to_py)?;
    let inputs = FusionInputs {
        features: features.inner.clone(),
        semantic: tokens.inner.clone(),
        probmaps: probmaps.inner.clone(),
    };
    let out = py.detach(|| fusion::run_fusion(&inputs, &cfg)).map_err(to_py)?;
    Ok(PyFusionResult {
        residuals: out.diagnostics.residuals(),
        violation_rate_before: out.diagnostics.violation_rate_before,
        violation_rate_after: out.diagnostics.violation_rate_after,
        report: out.diagnostics.to_json_lines(),
        field: PyVoxelGrid { inner: out.field },
        probmaps: PyProbMaps { inner: out.probmaps },
    })
}

/// Signed distance of a single-channel mask (voxels >= 0.5 inside);
/// returns the distance grid and the degenerate flag.
#[pyfunction]
fn signed_distance_transform(mask: &PyVoxelGrid) -> PyResult<(PyVoxelGrid, bool)> {
    let sdt = spatial::signed_distance_transform(&mask.inner).map_err(to_py)?;
    Ok((PyVoxelGrid { inner: sdt.grid }, sdt.degenerate))
}

/// Eigenvalues of a symmetric 3x3 matrix, descending.
#[pyfunction]
fn sym3_eigenvalues(m: [[f64; 3]; 3]) -> PyResult<(f64, f64, f64)> {
    let [a, b, c] = spatial::sym3_eigenvalues(&spatial::SymMat3(m)).map_err(to_py)?;
    Ok((a, b, c))
}

/// Centroid, covariance, eigenvalues and mean signed distance of one class.
#[pyfunction]
#[pyo3(signature = (probmaps, class_name, threshold = 0.5))]
fn spatial_stats<'py>(
    py: Python<'py>,
    probmaps: &PyProbMaps,
    class_name: &str,
    threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let stats = spatial::spatial_stats(&probmaps.inner, parse_class(class_name)?, threshold).map_err(to_py)?;
    json_value(py, &serde_json::to_string(&stats).expect("stats serialize"))
}

/// The four uncertainty fields for maps `probmaps` and semantic field `phi`.
#[pyfunction]
fn uncertainty_fields<'py>(
    py: Python<'py>,
    probmaps: &PyProbMaps,
    phi: &PyVoxelGrid,
) -> PyResult<Bound<'py, PyDict>> {
    let u = UncertaintyFields::compute(&probmaps.inner, &phi.inner).map_err(to_py)?;
    let out = PyDict::new(py);
    for (name, grid) in ["u_v", "u_t", "u_s", "u_ts"].into_iter().zip(u.as_array()) {
        out.set_item(name, PyVoxelGrid { inner: grid.clone() })?;
    }
    Ok(out)
}

/// Semantic field `logistic(sim(F(x), prototype) / tau)` of unit-norm rows.
#[pyfunction]
#[pyo3(signature = (features, tokens, tau = 0.1))]
fn semantic_field(features: &PyVoxelGrid, tokens: &PyTokenSet, tau: f64) -> PyResult<PyVoxelGrid> {
    let tau = Temperature::new(tau).map_err(to_py)?;
    let f = fusion::renormalize_rows(&features.inner).map_err(to_py)?;
    let s = fusion::semantic_field(&f, tokens.inner.prototype(), tau).map_err(to_py)?;
    Ok(PyVoxelGrid { inner: s.phi })
}

/// Per-stream gate weights (V, T, S, TS) at one voxel.
#[pyfunction]
#[pyo3(signature = (u, enabled = [true; 4], mode = "joint"))]
fn fusion_weights(u: [f64; 4], enabled: [bool; 4], mode: &str) -> PyResult<[f64; 4]> {
    fusion::fusion_weights(u, enabled, parse_mode(mode)?).map_err(to_py)
}

#[pyfunction]
fn dice(a: Vec<bool>, b: Vec<bool>) -> PyResult<f64> {
    eval::dice(&a, &b).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (probmaps, threshold = 0.5))]
fn hierarchy_violation_rate(probmaps: &PyProbMaps, threshold: f64) -> f64 {
    eval::hierarchy_violation_rate(&probmaps.inner, threshold)
}

/// Seeded projection of `raw` vectors to `target_dim`; returns the vectors
/// and whether they were zero-padded instead.
#[pyfunction]
#[pyo3(signature = (raw, target_dim, seed = 0))]
fn project_embeddings(raw: Vec<Vec<f64>>, target_dim: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, bool)> {
    let p = tokens::project_embeddings(&raw, target_dim, seed).map_err(to_py)?;
    Ok((p.vectors, p.padded))
}

#[pymodule]
fn umcf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FusionError", m.py().get_type::<FusionError>())?;
    m.add_class::<PyVoxelGrid>()?;
    m.add_class::<PyProbMaps>()?;
    m.add_class::<PyTokenSet>()?;
    m.add_class::<PyPhantom>()?;
    m.add_class::<PyFusionResult>()?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(run_fusion, m)?)?;
    m.add_function(wrap_pyfunction!(signed_distance_transform, m)?)?;
    m.add_function(wrap_pyfunction!(sym3_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(spatial_stats, m)?)?;
    m.add_function(wrap_pyfunction!(uncertainty_fields, m)?)?;
    m.add_function(wrap_pyfunction!(semantic_field, m)?)?;
    m.add_function(wrap_pyfunction!(fusion_weights, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(hierarchy_violation_rate, m)?)?;
    m.add_function(wrap_pyfunction!(project_embeddings, m)?)?;
    Ok(())
}
