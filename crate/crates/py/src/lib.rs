//! Python bindings: the model, corpus generation, bias measurement,
//! mediation analysis, and mitigation behind a small typed surface.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vlbias::{
    evaluate_mitigation, generate, label_gender_from_captions, toy_average_precision, CmaEngine,
    GenConfig, GenderLabel, InterventionKind, LabeledSample, MediatorSet, MitigationConfig,
    MitigationTarget, ModelConfig, ModuleId, ToyVlm,
};

fn to_py_err(e: vlbias::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_module(name: &str) -> PyResult<ModuleId> {
    name.parse().map_err(|e: vlbias::Error| PyValueError::new_err(e.to_string()))
}

fn parse_intervention(name: &str) -> PyResult<InterventionKind> {
    match name {
        "null" => Ok(InterventionKind::Null),
        "replace_gender" => Ok(InterventionKind::ReplaceGender),
        "mask_gender" => Ok(InterventionKind::MaskGender),
        "both" => Ok(InterventionKind::Both),
        other => Err(PyValueError::new_err(format!(
            "unknown intervention {other:?} (null, replace_gender, mask_gender, both)"
        ))),
    }
}

fn parse_target(name: &str) -> PyResult<MitigationTarget> {
    match name {
        "none" => Ok(MitigationTarget::None),
        "text_fair" => Ok(MitigationTarget::TextFair),
        "image_fair" => Ok(MitigationTarget::ImageFair),
        "both_fair" => Ok(MitigationTarget::BothFair),
        other => Err(PyValueError::new_err(format!(
            "unknown mitigation target {other:?} (none, text_fair, image_fair, both_fair)"
        ))),
    }
}

/// A generated benchmark corpus.
#[pyclass(name = "Dataset")]
struct PyDataset {
    samples: Vec<LabeledSample>,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.samples.len()
    }

    /// Number of images with a gendered person.
    fn gendered_count(&self) -> usize {
        self.samples.iter().filter(|s| s.gender.is_some()).count()
    }
}

/// The toy vision-language detector with its planted-bias terms.
#[pyclass(name = "Model")]
struct PyModel {
    model: ToyVlm,
}

#[pymethods]
impl PyModel {
    /// Build a model from a JSON model config and a JSON injection list
    /// (same schemas as the CLI config's `model` and `injections` blocks).
    #[new]
    #[pyo3(signature = (config_json = None, injections_json = None))]
    fn new(config_json: Option<&str>, injections_json: Option<&str>) -> PyResult<Self> {
        let config: ModelConfig = match config_json {
            None => ModelConfig::default(),
            Some(text) => serde_json::from_str(text)
                .map_err(|e| PyValueError::new_err(format!("model config: {e}")))?,
        };
        let injections: Vec<vlbias::InjectionSpec> = match injections_json {
            None => Vec::new(),
            Some(text) => serde_json::from_str(text)
                .map_err(|e| PyValueError::new_err(format!("injections: {e}")))?,
        };
        Ok(Self {
            model: ToyVlm::new(config, &injections).map_err(to_py_err)?,
        })
    }

    /// The all-default model with the standard planted-bias set.
    #[staticmethod]
    fn default_planted() -> PyResult<Self> {
        Ok(Self {
            model: ToyVlm::default_planted().map_err(to_py_err)?,
        })
    }

    fn categories(&self) -> Vec<String> {
        self.model.vocab().categories().to_vec()
    }

    /// Generate a corpus for this model's categories.
    #[pyo3(signature = (n_images = 2000, seed = 7, cooccur_skew = 0.8))]
    fn generate(&self, n_images: usize, seed: u64, cooccur_skew: f64) -> PyResult<PyDataset> {
        let cfg = GenConfig {
            n_images,
            seed,
            cooccur_skew,
            ..GenConfig::default()
        };
        Ok(PyDataset {
            samples: generate(&cfg, &self.model).map_err(to_py_err)?,
        })
    }

    /// Bias score (summed absolute FPR gap) over the gendered subset.
    fn bias(&self, dataset: &PyDataset) -> PyResult<f64> {
        let engine = CmaEngine::new(&self.model, &dataset.samples).map_err(to_py_err)?;
        Ok(engine
            .measure_y(
                InterventionKind::Null,
                &MediatorSet::empty(),
                InterventionKind::Null,
            )
            .map_err(to_py_err)?
            .value)
    }

    /// Mean average precision of image-level detection.
    fn average_precision(&self, dataset: &PyDataset) -> PyResult<f64> {
        Ok(toy_average_precision(&self.model, &dataset.samples)
            .map_err(to_py_err)?
            .mean)
    }

    /// Effect decomposition for an intervention mediated by the heads of
    /// layers 0..=depth of one module. Returns a dict with y_o, y_e, y_d,
    /// y_i, e, de, ie and the percentage fields.
    fn effects<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        intervention: &str,
        module: &str,
        depth: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let intervention = parse_intervention(intervention)?;
        let module = parse_module(module)?;
        let mediator = MediatorSet::layers_up_to(self.model.config(), module, depth)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let engine = CmaEngine::new(&self.model, &dataset.samples).map_err(to_py_err)?;
        let r = engine.effects(intervention, &mediator).map_err(to_py_err)?;
        let out = PyDict::new(py);
        out.set_item("y_o", r.y_o)?;
        out.set_item("y_e", r.y_e)?;
        out.set_item("y_d", r.y_d)?;
        out.set_item("y_i", r.y_i)?;
        out.set_item("e", r.e)?;
        out.set_item("de", r.de)?;
        out.set_item("ie", r.ie)?;
        out.set_item("pct_e", r.pct_e)?;
        out.set_item("pct_de", r.pct_de)?;
        out.set_item("pct_ie", r.pct_ie)?;
        Ok(out)
    }

    /// Feature-averaging mitigation report: dict with bias_before,
    /// bias_after, pct_mitigated, ap_before, ap_after.
    fn mitigate<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        target: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = MitigationConfig::new(parse_target(target)?, &self.model);
        let r = evaluate_mitigation(&self.model, &dataset.samples, &cfg).map_err(to_py_err)?;
        let out = PyDict::new(py);
        out.set_item("target", r.target.as_str())?;
        out.set_item("bias_before", r.bias_before.value)?;
        out.set_item("bias_after", r.bias_after.value)?;
        out.set_item("pct_mitigated", r.pct_mitigated)?;
        out.set_item("ap_before", r.ap_before)?;
        out.set_item("ap_after", r.ap_after)?;
        Ok(out)
    }
}

/// Keyword gender label for a list of captions: "male", "female", or
/// "excluded".
#[pyfunction]
fn label_gender(captions: Vec<String>) -> &'static str {
    match label_gender_from_captions(&captions) {
        GenderLabel::Male => "male",
        GenderLabel::Female => "female",
        GenderLabel::Excluded => "excluded",
    }
}

#[pymodule]
fn vlbias_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(label_gender, m)?)?;
    Ok(())
}
