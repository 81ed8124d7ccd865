//! Python bindings: `import edgevla`.

use ::edgevla as core;
use core::cli::{resolve_hardware, resolve_model, CliError};
use core::scheduler::SimError;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn config_err(e: core::ConfigError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Capacity(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn sim_err(e: SimError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

#[pyclass(name = "HardwareSpec", module = "edgevla", from_py_object)]
#[derive(Clone)]
pub struct PyHardwareSpec(core::HardwareSpec);

#[pymethods]
impl PyHardwareSpec {
    /// A catalog entry by name, or a hardware TOML file.
    #[staticmethod]
    fn load(source: &str) -> PyResult<Self> {
        resolve_hardware(source).map(Self).map_err(cli_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        core::HardwareSpec::from_toml(text).map(Self).map_err(config_err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn bw_gbps(&self) -> f64 {
        self.0.headline_bandwidth() / core::hw::GB
    }

    #[getter]
    fn tflops(&self) -> f64 {
        self.0.total_peak_compute() / core::hw::TFLOPS
    }

    #[getter]
    fn capacity_gb(&self) -> f64 {
        self.0.memory_capacity / core::hw::GB
    }

    #[getter]
    fn has_pim(&self) -> bool {
        self.0.pim.is_some()
    }

    /// FLOP/byte at which the SoC roofline bends.
    fn ridge_point(&self) -> f64 {
        self.0.ridge_point(core::Domain::Soc).unwrap_or(f64::NAN)
    }

    fn __repr__(&self) -> String {
        format!("HardwareSpec({:?}, {} GB/s, {} TFLOPS)", self.0.name, self.bw_gbps(), self.tflops())
    }
}

#[pyclass(name = "VlaModelSpec", module = "edgevla", from_py_object)]
#[derive(Clone)]
pub struct PyVlaModelSpec(core::VlaModelSpec);

#[pymethods]
impl PyVlaModelSpec {
    /// A bundled model by name, or a model TOML file.
    #[staticmethod]
    fn load(source: &str) -> PyResult<Self> {
        resolve_model(source).map(Self).map_err(cli_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        core::VlaModelSpec::from_toml(text).map(Self).map_err(config_err)
    }

    #[staticmethod]
    fn molmoact_7b_class() -> Self {
        Self(core::VlaModelSpec::molmoact_7b_class())
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    /// A resized copy with about `target_params` parameters.
    fn scale_to(&self, target_params: u64) -> PyResult<Self> {
        core::scale_to(target_params, &self.0)
            .map(Self)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn param_count(&self) -> u64 {
        self.0.param_count()
    }

    #[getter]
    fn weight_bytes(&self) -> u64 {
        self.0.weight_bytes()
    }

    #[getter]
    fn decoder_layers(&self) -> u64 {
        self.0.decoder.layers
    }

    #[getter]
    fn d_model(&self) -> u64 {
        self.0.decoder.d_model
    }

    fn __repr__(&self) -> String {
        format!("VlaModelSpec({:?}, {} params)", self.0.name, self.0.param_count())
    }
}

#[pyclass(name = "RequestProfile", module = "edgevla", from_py_object)]
#[derive(Clone)]
pub struct PyRequestProfile(core::RequestProfile);

#[pymethods]
impl PyRequestProfile {
    #[new]
    #[pyo3(signature = (n_images=1, prompt_tokens=64, generated_tokens=core::workload::DEFAULT_GENERATED_TOKENS, actions_per_inference=8, target_hz=10.0))]
    fn new(
        n_images: u64,
        prompt_tokens: u64,
        generated_tokens: u64,
        actions_per_inference: u64,
        target_hz: f64,
    ) -> PyResult<Self> {
        let r = core::RequestProfile {
            n_images,
            prompt_tokens,
            generated_tokens,
            actions_per_inference,
            target_frequency: target_hz,
        };
        r.validate().map_err(config_err)?;
        Ok(Self(r))
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        core::RequestProfile::from_toml(text).map(Self).map_err(config_err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    #[getter]
    fn generated_tokens(&self) -> u64 {
        self.0.generated_tokens
    }

    #[getter]
    fn actions_per_inference(&self) -> u64 {
        self.0.actions_per_inference
    }

    #[getter]
    fn target_hz(&self) -> f64 {
        self.0.target_frequency
    }
}

#[pyclass(name = "StepReport", module = "edgevla")]
pub struct PyStepReport(core::StepReport);

#[pymethods]
impl PyStepReport {
    #[getter]
    fn model_name(&self) -> String {
        self.0.model_name.clone()
    }

    #[getter]
    fn hw_name(&self) -> String {
        self.0.hw_name.clone()
    }

    #[getter]
    fn total_s(&self) -> f64 {
        self.0.total_latency
    }

    #[getter]
    fn generation_share(&self) -> f64 {
        self.0.generation_share
    }

    #[getter]
    fn control_hz(&self) -> f64 {
        self.0.control_frequency
    }

    #[getter]
    fn per_token_ms(&self) -> f64 {
        self.0.per_token_decode_latency * 1e3
    }

    #[getter]
    fn meets_target(&self) -> bool {
        self.0.meets_target
    }

    #[getter]
    fn capacity_overflow_bytes(&self) -> Option<f64> {
        self.0.capacity_overflow
    }

    /// Phase label -> seconds.
    fn phase_latencies(&self) -> Vec<(String, f64)> {
        self.0
            .phases()
            .iter()
            .map(|p| (p.phase.label().to_string(), p.latency))
            .collect()
    }

    /// Full report, including per-operator costs, as JSON.
    fn to_json(&self) -> String {
        core::report::reports_json(std::slice::from_ref(&self.0))
    }

    fn __repr__(&self) -> String {
        format!(
            "StepReport({:?} on {:?}: {:.4} s, {:.4} Hz)",
            self.0.model_name, self.0.hw_name, self.0.total_latency, self.0.control_frequency
        )
    }
}

fn options(prefetch: bool, capacity: &str, frequency: &str) -> PyResult<core::EvalOptions> {
    let capacity = match capacity {
        "warn" => core::CapacityMode::Warn,
        "strict" => core::CapacityMode::Strict,
        other => return Err(PyValueError::new_err(format!("capacity must be warn|strict, got {other:?}"))),
    };
    let frequency = match frequency {
        "amortized" => core::FrequencyMode::Amortized,
        "per-inference" | "per_inference" => core::FrequencyMode::PerInference,
        other => {
            return Err(PyValueError::new_err(format!(
                "frequency must be amortized|per-inference, got {other:?}"
            )))
        }
    };
    Ok(core::EvalOptions {
        prefetch,
        capacity,
        frequency,
    })
}

/// The built-in edge hardware catalog.
#[pyfunction]
fn catalog() -> Vec<PyHardwareSpec> {
    core::builtin_catalog().into_iter().map(PyHardwareSpec).collect()
}

/// Names of the bundled model configurations.
#[pyfunction]
fn bundled_models() -> Vec<&'static str> {
    core::bundled::MODELS.iter().map(|(name, _)| *name).collect()
}

/// One model on one system.
#[pyfunction]
#[pyo3(signature = (model, hw, request=None, prefetch=true, capacity="warn", frequency="amortized"))]
fn simulate(
    py: Python<'_>,
    model: &PyVlaModelSpec,
    hw: &PyHardwareSpec,
    request: Option<&PyRequestProfile>,
    prefetch: bool,
    capacity: &str,
    frequency: &str,
) -> PyResult<PyStepReport> {
    let opts = options(prefetch, capacity, frequency)?;
    let req = request.map(|r| r.0.clone()).unwrap_or_default();
    let (m, h) = (model.0.clone(), hw.0.clone());
    py.detach(|| core::step_latency(&m, &h, &req, &opts))
        .map(PyStepReport)
        .map_err(sim_err)
}

/// Every model on every system, model-major.
#[pyfunction]
#[pyo3(signature = (models, hws, request=None, prefetch=true, capacity="warn", frequency="amortized"))]
fn sweep(
    py: Python<'_>,
    models: Vec<PyVlaModelSpec>,
    hws: Vec<PyHardwareSpec>,
    request: Option<&PyRequestProfile>,
    prefetch: bool,
    capacity: &str,
    frequency: &str,
) -> PyResult<Vec<PyStepReport>> {
    let opts = options(prefetch, capacity, frequency)?;
    let req = request.map(|r| r.0.clone()).unwrap_or_default();
    let models: Vec<_> = models.into_iter().map(|m| m.0).collect();
    let hws: Vec<_> = hws.into_iter().map(|h| h.0).collect();
    let rows = py
        .detach(|| core::control_frequency_sweep(&models, &hws, &req, &opts))
        .map_err(sim_err)?;
    Ok(rows.into_iter().map(PyStepReport).collect())
}

/// Sweep rows rendered as the CLI's CSV.
#[pyfunction]
fn sweep_csv(reports: Vec<PyRef<'_, PyStepReport>>) -> PyResult<String> {
    let rows: Vec<core::StepReport> = reports.iter().map(|r| r.0.clone()).collect();
    let mut buf = Vec::new();
    core::report::write_sweep_csv(&mut buf, &rows).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "edgevla")]
fn edgevla_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHardwareSpec>()?;
    m.add_class::<PyVlaModelSpec>()?;
    m.add_class::<PyRequestProfile>()?;
    m.add_class::<PyStepReport>()?;
    m.add_function(wrap_pyfunction!(catalog, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_models, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_csv, m)?)?;
    Ok(())
}
