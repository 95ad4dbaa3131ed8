//! Python bindings for the literoof roofline model.

use literoof_core::hardware::{self, DieSpec, GpuSpec, LiteOverrides};
use literoof_core::report::{self, ChartSpec, TableFormat};
use literoof_core::roofline::{self, ClusterConfig, Overlap, RooflineOptions};
use literoof_core::search::{self, BatchGrid, Constraints, SweepGrid};
use literoof_core::workload::{self, ModelSpec, Phase};
use literoof_core::Error;
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Unknown { .. } => PyKeyError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn phase(name: &str) -> PyResult<Phase> {
    match name.to_ascii_lowercase().as_str() {
        "prefill" => Ok(Phase::Prefill),
        "decode" => Ok(Phase::Decode),
        _ => Err(PyValueError::new_err(format!(
            "phase must be 'prefill' or 'decode', got '{name}'"
        ))),
    }
}

fn options(overlap: &str, ignore_network: bool) -> PyResult<RooflineOptions> {
    let overlap = match overlap {
        "serial" => Overlap::Serial,
        "collectives" => Overlap::Collectives,
        "full" => Overlap::Full,
        _ => {
            return Err(PyValueError::new_err(format!(
                "overlap must be 'serial', 'collectives' or 'full', got '{overlap}'"
            )))
        }
    };
    Ok(RooflineOptions {
        overlap,
        ignore_network,
        ..Default::default()
    })
}

#[pyclass(name = "GpuSpec", frozen, skip_from_py_object, module = "literoof")]
#[derive(Clone)]
struct PyGpuSpec {
    inner: GpuSpec,
}

#[pymethods]
impl PyGpuSpec {
    #[new]
    fn new(
        name: String,
        tflops: f64,
        mem_capacity_gb: f64,
        mem_bw_gbps: f64,
        net_bw_gbps: f64,
        sms: u32,
        max_gpus: u32,
    ) -> PyResult<Self> {
        let inner = GpuSpec {
            name,
            tflops,
            mem_capacity_gb,
            mem_bw_gbps,
            net_bw_gbps,
            sms,
            max_gpus,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyGpuSpec { inner })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }
    #[getter]
    fn tflops(&self) -> f64 {
        self.inner.tflops
    }
    #[getter]
    fn mem_capacity_gb(&self) -> f64 {
        self.inner.mem_capacity_gb
    }
    #[getter]
    fn mem_bw_gbps(&self) -> f64 {
        self.inner.mem_bw_gbps
    }
    #[getter]
    fn net_bw_gbps(&self) -> f64 {
        self.inner.net_bw_gbps
    }
    #[getter]
    fn sms(&self) -> u32 {
        self.inner.sms
    }
    #[getter]
    fn max_gpus(&self) -> u32 {
        self.inner.max_gpus
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let g = &self.inner;
        format!(
            "GpuSpec(name={:?}, tflops={}, mem_capacity_gb={}, mem_bw_gbps={}, net_bw_gbps={}, sms={}, max_gpus={})",
            g.name, g.tflops, g.mem_capacity_gb, g.mem_bw_gbps, g.net_bw_gbps, g.sms, g.max_gpus
        )
    }
}

#[pyclass(name = "ModelSpec", frozen, skip_from_py_object, module = "literoof")]
#[derive(Clone)]
struct PyModelSpec {
    inner: ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }
    #[getter]
    fn layers(&self) -> u64 {
        self.inner.layers
    }
    #[getter]
    fn hidden(&self) -> u64 {
        self.inner.hidden
    }
    #[getter]
    fn heads(&self) -> u64 {
        self.inner.heads
    }
    #[getter]
    fn kv_heads(&self) -> u64 {
        self.inner.kv_heads
    }
    #[getter]
    fn head_dim(&self) -> u64 {
        self.inner.head_dim()
    }
    #[getter]
    fn ffn_dim(&self) -> u64 {
        self.inner.ffn_dim
    }
    #[getter]
    fn vocab(&self) -> u64 {
        self.inner.vocab
    }
    #[getter]
    fn bytes_per_param(&self) -> f64 {
        self.inner.bytes_per_param
    }
    #[getter]
    fn bytes_per_act(&self) -> f64 {
        self.inner.bytes_per_act
    }

    fn param_count(&self) -> u64 {
        workload::param_count(&self.inner)
    }

    /// Copy with other weight and activation datatype widths.
    fn with_dtype(&self, bytes_per_param: f64, bytes_per_act: f64) -> PyResult<Self> {
        let m = self.inner.with_dtype(bytes_per_param, bytes_per_act);
        m.validate().map_err(to_py)?;
        Ok(PyModelSpec { inner: m })
    }

    #[pyo3(signature = (batch, context_len, tp=1))]
    fn kv_cache_bytes(&self, batch: u64, context_len: u64, tp: u64) -> PyResult<f64> {
        workload::kv_cache_bytes(&self.inner, batch, context_len, tp).map_err(to_py)
    }

    #[pyo3(signature = (batch, seq, tp=1))]
    fn prefill_flops(&self, batch: u64, seq: u64, tp: u64) -> PyResult<f64> {
        let w = workload::prefill_stage_costs(&self.inner, batch, seq, tp).map_err(to_py)?;
        Ok(w.total_flops())
    }

    fn __repr__(&self) -> String {
        let m = &self.inner;
        format!(
            "ModelSpec(name={:?}, layers={}, hidden={}, heads={}, kv_heads={}, ffn_dim={}, vocab={})",
            m.name, m.layers, m.hidden, m.heads, m.kv_heads, m.ffn_dim, m.vocab
        )
    }
}

#[pyclass(name = "PhaseResult", frozen, module = "literoof")]
struct PyPhaseResult {
    inner: roofline::PhaseResult,
}

#[pymethods]
impl PyPhaseResult {
    #[getter]
    fn ttft(&self) -> f64 {
        self.inner.metrics.ttft
    }
    #[getter]
    fn tbt(&self) -> f64 {
        self.inner.metrics.tbt
    }
    #[getter]
    fn prefill_tput(&self) -> f64 {
        self.inner.metrics.prefill_tput
    }
    #[getter]
    fn decode_tput(&self) -> f64 {
        self.inner.metrics.decode_tput
    }
    #[getter]
    fn prefill_tput_per_sm(&self) -> f64 {
        self.inner.metrics.prefill_tput_per_sm
    }
    #[getter]
    fn decode_tput_per_sm(&self) -> f64 {
        self.inner.metrics.decode_tput_per_sm
    }
    #[getter]
    fn fits_memory(&self) -> bool {
        self.inner.metrics.fits_memory
    }
    #[getter]
    fn mem_per_gpu_bytes(&self) -> f64 {
        self.inner.metrics.mem_per_gpu_bytes
    }

    fn bottleneck(&self, phase_name: &str) -> PyResult<&'static str> {
        Ok(self.inner.metrics.bottleneck(phase(phase_name)?).as_str())
    }

    /// Per-stage timings as a list of dicts.
    fn stages<'py>(&self, py: Python<'py>, phase_name: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .breakdown(phase(phase_name)?)
            .stages
            .iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("label", s.label())?;
                d.set_item("layer", s.layer)?;
                d.set_item("compute_s", s.times.compute)?;
                d.set_item("memory_s", s.times.memory)?;
                d.set_item("network_s", s.times.network)?;
                d.set_item("time_s", s.time)?;
                d.set_item("bottleneck", s.bottleneck.as_str())?;
                Ok(d)
            })
            .collect()
    }

    fn explain(&self) -> String {
        report::explain(&self.inner)
    }

    fn __repr__(&self) -> String {
        let m = &self.inner.metrics;
        format!(
            "PhaseResult(ttft={}, tbt={}, fits_memory={})",
            m.ttft, m.tbt, m.fits_memory
        )
    }
}

#[pyclass(name = "SweepResult", frozen, module = "literoof")]
struct PySweepResult {
    inner: search::SweepResult,
}

#[pymethods]
impl PySweepResult {
    #[getter]
    fn model(&self) -> &str {
        &self.inner.model
    }

    #[getter]
    fn gpus(&self) -> Vec<String> {
        self.inner.gpus.iter().map(|g| g.gpu.name.clone()).collect()
    }

    /// Best config for one GPU type and phase as
    /// `(tp, batch, PhaseResult)`, or `None` when nothing is feasible.
    fn best(&self, gpu: &str, phase_name: &str) -> PyResult<Option<(u32, u64, PyPhaseResult)>> {
        let p = phase(phase_name)?;
        let g = self
            .inner
            .gpu(gpu)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown GPU type '{gpu}'")))?;
        Ok(g.best(p).map(|b| {
            (
                b.config.tp,
                b.config.batch,
                PyPhaseResult {
                    inner: b.result.clone(),
                },
            )
        }))
    }

    fn binding_constraint(&self, gpu: &str) -> PyResult<Option<&'static str>> {
        let g = self
            .inner
            .gpu(gpu)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown GPU type '{gpu}'")))?;
        Ok(g.binding_constraint().map(|v| v.as_str()))
    }

    /// Number of evaluated grid points and how many were feasible.
    fn counts(&self, gpu: &str) -> PyResult<(usize, usize)> {
        let g = self
            .inner
            .gpu(gpu)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown GPU type '{gpu}'")))?;
        Ok((g.candidates.len(), g.feasible().count()))
    }

    #[pyo3(signature = (format="csv"))]
    fn table(&self, format: &str) -> PyResult<String> {
        table_for(std::slice::from_ref(&self.inner), format)
    }
}

fn table_for(sweeps: &[search::SweepResult], format: &str) -> PyResult<String> {
    let f = match format {
        "csv" => TableFormat::Csv,
        "json" => TableFormat::Json,
        _ => return Err(PyValueError::new_err("format must be 'csv' or 'json'")),
    };
    Ok(report::emit_table(sweeps, f))
}

fn gpus_of(gpus: Vec<PyRef<'_, PyGpuSpec>>) -> Vec<GpuSpec> {
    gpus.iter().map(|g| g.inner.clone()).collect()
}

#[pyfunction]
fn default_gpu_specs() -> Vec<PyGpuSpec> {
    hardware::default_gpu_specs()
        .into_iter()
        .map(|inner| PyGpuSpec { inner })
        .collect()
}

#[pyfunction]
fn default_models() -> Vec<PyModelSpec> {
    workload::default_models()
        .into_iter()
        .map(|inner| PyModelSpec { inner })
        .collect()
}

/// Parses a TOML GPU config (`[[gpu]]` tables).
#[pyfunction]
fn load_gpu_specs(config_text: &str) -> PyResult<Vec<PyGpuSpec>> {
    Ok(hardware::load_gpu_specs(config_text)
        .map_err(to_py)?
        .into_iter()
        .map(|inner| PyGpuSpec { inner })
        .collect())
}

/// Parses a TOML model config (`[[model]]` tables).
#[pyfunction]
fn load_models(config_text: &str) -> PyResult<Vec<PyModelSpec>> {
    Ok(workload::load_models(config_text)
        .map_err(to_py)?
        .into_iter()
        .map(|inner| PyModelSpec { inner })
        .collect())
}

#[pyfunction]
#[pyo3(signature = (base, split_factor, tflops=None, mem_capacity=None, mem_bw=None, net_bw=None))]
fn derive_lite_spec(
    base: &PyGpuSpec,
    split_factor: u32,
    tflops: Option<f64>,
    mem_capacity: Option<f64>,
    mem_bw: Option<f64>,
    net_bw: Option<f64>,
) -> PyResult<PyGpuSpec> {
    let o = LiteOverrides {
        tflops,
        mem_capacity,
        mem_bw,
        net_bw,
    };
    hardware::derive_lite_spec(&base.inner, split_factor, Some(&o))
        .map(|inner| PyGpuSpec { inner })
        .map_err(to_py)
}

#[pyfunction]
fn shoreline_bandwidth_ratio(split_factor: u32) -> PyResult<f64> {
    hardware::shoreline_bandwidth_ratio(split_factor).map_err(to_py)
}

fn die(area: Option<f64>, defect_density: Option<f64>, alpha: Option<f64>) -> DieSpec {
    let d = DieSpec::default();
    DieSpec {
        area: area.unwrap_or(d.area),
        defect_density: defect_density.unwrap_or(d.defect_density),
        cluster_alpha: alpha.unwrap_or(d.cluster_alpha),
    }
}

#[pyfunction]
#[pyo3(signature = (area=None, defect_density=None, alpha=None))]
fn die_yield(area: Option<f64>, defect_density: Option<f64>, alpha: Option<f64>) -> PyResult<f64> {
    hardware::die_yield(&die(area, defect_density, alpha)).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (split_factor, area=None, defect_density=None, alpha=None))]
fn relative_cost_per_compute(
    split_factor: u32,
    area: Option<f64>,
    defect_density: Option<f64>,
    alpha: Option<f64>,
) -> PyResult<f64> {
    hardware::relative_cost_per_compute(&die(area, defect_density, alpha), split_factor)
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (model, gpu, tp, batch, prompt_len=1500, decode_ctx=1500, overlap="collectives", ignore_network=false))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    model: &PyModelSpec,
    gpu: &PyGpuSpec,
    tp: u32,
    batch: u64,
    prompt_len: u64,
    decode_ctx: u64,
    overlap: &str,
    ignore_network: bool,
) -> PyResult<PyPhaseResult> {
    let cfg = ClusterConfig {
        gpu: gpu.inner.clone(),
        tp,
        batch,
        prompt_len,
        decode_ctx,
        options: options(overlap, ignore_network)?,
    };
    roofline::evaluate_config(&model.inner, &cfg)
        .map(|inner| PyPhaseResult { inner })
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (
    model, gpus, max_ttft=1.0, max_tbt=0.05, prompt_len=1500, decode_ctx=1500,
    tp=None, batch=None, overlap="collectives",
))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    model: &PyModelSpec,
    gpus: Vec<PyRef<'_, PyGpuSpec>>,
    max_ttft: f64,
    max_tbt: f64,
    prompt_len: u64,
    decode_ctx: u64,
    tp: Option<Vec<u32>>,
    batch: Option<Vec<u64>>,
    overlap: &str,
) -> PyResult<PySweepResult> {
    let gpus = gpus_of(gpus);
    let c = Constraints {
        max_ttft,
        max_tbt,
        prompt_len,
        decode_ctx,
    };
    let grid = SweepGrid {
        tp,
        batch: batch.map_or_else(BatchGrid::default, BatchGrid::Explicit),
        options: options(overlap, false)?,
    };
    let model = model.inner.clone();
    py.detach(|| search::sweep(&model, &gpus, &c, &grid))
        .map(|inner| PySweepResult { inner })
        .map_err(to_py)
}

/// Best tokens/s/SM of every GPU type relative to `baseline`, as a list of
/// dicts with keys model, phase, gpu, tput_per_sm and ratio.
#[pyfunction]
fn compare<'py>(
    py: Python<'py>,
    sweeps: Vec<PyRef<'py, PySweepResult>>,
    baseline: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let owned: Vec<_> = sweeps.iter().map(|s| s.inner.clone()).collect();
    let cmp = search::compare_types(&owned, baseline).map_err(to_py)?;
    cmp.rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("model", &r.model)?;
            d.set_item("phase", r.phase.as_str())?;
            d.set_item("gpu", &r.gpu)?;
            d.set_item("tput_per_sm", r.tput_per_sm)?;
            d.set_item("ratio", r.ratio)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (sweeps, format="csv"))]
fn emit_table(sweeps: Vec<PyRef<'_, PySweepResult>>, format: &str) -> PyResult<String> {
    let owned: Vec<_> = sweeps.iter().map(|s| s.inner.clone()).collect();
    table_for(&owned, format)
}

/// SVG bar chart of one phase across the given sweeps.
#[pyfunction]
#[pyo3(signature = (sweeps, phase_name, normalize=None))]
fn emit_barchart(
    sweeps: Vec<PyRef<'_, PySweepResult>>,
    phase_name: &str,
    normalize: Option<&str>,
) -> PyResult<String> {
    let owned: Vec<_> = sweeps.iter().map(|s| s.inner.clone()).collect();
    let chart = ChartSpec::from_sweeps(&owned, phase(phase_name)?, normalize).map_err(to_py)?;
    report::emit_barchart(&chart).map_err(to_py)
}

#[pymodule]
fn literoof(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGpuSpec>()?;
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyPhaseResult>()?;
    m.add_class::<PySweepResult>()?;
    m.add_function(wrap_pyfunction!(default_gpu_specs, m)?)?;
    m.add_function(wrap_pyfunction!(default_models, m)?)?;
    m.add_function(wrap_pyfunction!(load_gpu_specs, m)?)?;
    m.add_function(wrap_pyfunction!(load_models, m)?)?;
    m.add_function(wrap_pyfunction!(derive_lite_spec, m)?)?;
    m.add_function(wrap_pyfunction!(shoreline_bandwidth_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(die_yield, m)?)?;
    m.add_function(wrap_pyfunction!(relative_cost_per_compute, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(emit_table, m)?)?;
    m.add_function(wrap_pyfunction!(emit_barchart, m)?)?;
    Ok(())
}
