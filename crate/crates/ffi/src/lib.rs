//! C ABI over the proxy-debias library.
//!
//! Datasets and trained models cross the boundary as opaque handles that the
//! caller releases with the matching `*_free` function. Every fallible call
//! returns a [`PdStatus`]; on failure a message is stored per thread and can
//! be read with [`pd_last_error_message`]. Panics are caught at the boundary
//! and reported as [`PdStatus::Panic`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use proxy_debias::data::{balanced_test, generate, load_csv, save_csv, Dataset, GeneratorConfig, Provenance};
use proxy_debias::harness::artifacts::ModelFile;
use proxy_debias::harness::config::hash_bytes;
use proxy_debias::metrics::evaluate;
use proxy_debias::model::{predict_interventional, ModelConfig};
use proxy_debias::numeric::Tensor;
use proxy_debias::train::{train, Mode, TrainConfig, TrainedModel};
use proxy_debias::Error;

/// Largest number of bias attributes [`PdMetrics`] can hold.
pub const PD_MAX_BIAS: usize = 8;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdStatus {
    Ok = 0,
    Shape = 1,
    Index = 2,
    Contract = 3,
    Numeric = 4,
    Config = 5,
    Resource = 6,
    UndefinedRate = 7,
    Parse = 8,
    Io = 9,
    NullPointer = 10,
    InvalidArgument = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdMode {
    Vanilla = 0,
    NaivePd = 1,
    ActivePd = 2,
}

impl From<PdMode> for Mode {
    fn from(m: PdMode) -> Mode {
        match m {
            PdMode::Vanilla => Mode::Vanilla,
            PdMode::NaivePd => Mode::NaivePd,
            PdMode::ActivePd => Mode::ActivePd,
        }
    }
}

/// Opaque dataset handle.
pub struct PdDataset {
    inner: Dataset,
}

/// Opaque trained-model handle.
pub struct PdModel {
    inner: TrainedModel,
}

/// Training options. Start from [`pd_train_params_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct PdTrainParams {
    pub mode: PdMode,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub enhancement_learning_rate: f64,
    /// Proxy width used for every bias attribute.
    pub proxy_dim: usize,
    /// Hidden layer widths; null with `hidden_len == 0` keeps the default.
    pub hidden: *const usize,
    pub hidden_len: usize,
}

/// Evaluation results; arrays hold `num_bias` meaningful entries.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct PdMetrics {
    pub accuracy: f64,
    pub n_evaluated: usize,
    pub num_bias: usize,
    pub equalodds: [f64; PD_MAX_BIAS],
    pub equal_opportunity: [f64; PD_MAX_BIAS],
    pub statistical_parity: [f64; PD_MAX_BIAS],
    pub counter_p: [f64; PD_MAX_BIAS],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PdStatus {
    match e {
        Error::Shape(_) => PdStatus::Shape,
        Error::Index(_) => PdStatus::Index,
        Error::Contract(_) => PdStatus::Contract,
        Error::Numeric(_) => PdStatus::Numeric,
        Error::Config(_) => PdStatus::Config,
        Error::Resource(_) => PdStatus::Resource,
        Error::UndefinedRate(_) => PdStatus::UndefinedRate,
        Error::Parse { .. } => PdStatus::Parse,
        Error::Io { .. } => PdStatus::Io,
    }
}

struct Failure(PdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PdStatus::NullPointer, format!("{} is null", what))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PdStatus::InvalidArgument, msg.into())
}

/// Runs `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {}", msg));
            PdStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{} is not UTF-8", what)))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_ptr<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null after a
/// success. Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn pd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Draws a dataset from a generator config given as JSON. With `balanced`
/// set, builds the balanced evaluation set of `n_test` samples instead.
#[no_mangle]
pub unsafe extern "C" fn pd_dataset_generate(
    config_json: *const c_char,
    balanced: bool,
    out: *mut *mut PdDataset,
) -> PdStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|_| invalid("config_json is not UTF-8"))?;
        let cfg: GeneratorConfig =
            serde_json::from_str(text).map_err(|e| Failure(PdStatus::Config, format!("generator config: {}", e)))?;
        let ds = if balanced {
            balanced_test(&GeneratorConfig {
                n_samples: cfg.n_test,
                ..cfg
            })?
        } else {
            generate(&cfg)?
        };
        out_ptr(out, PdDataset { inner: ds })
    })
}

/// Reference generator with `k` bias attributes coupled by `rho[0..k]`.
#[no_mangle]
pub unsafe extern "C" fn pd_dataset_generate_reference(
    rho: *const f64,
    k: usize,
    seed: u64,
    balanced: bool,
    out: *mut *mut PdDataset,
) -> PdStatus {
    guard(|| {
        if rho.is_null() || k == 0 {
            return Err(invalid("rho must point to at least one value"));
        }
        let rho = std::slice::from_raw_parts(rho, k);
        let cfg = GeneratorConfig::reference(rho, seed);
        let ds = if balanced {
            balanced_test(&GeneratorConfig {
                n_samples: cfg.n_test,
                ..cfg
            })?
        } else {
            generate(&cfg)?
        };
        out_ptr(out, PdDataset { inner: ds })
    })
}

#[no_mangle]
pub unsafe extern "C" fn pd_dataset_load_csv(path: *const c_char, out: *mut *mut PdDataset) -> PdStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        out_ptr(out, PdDataset { inner: load_csv(&path)? })
    })
}

#[no_mangle]
pub unsafe extern "C" fn pd_dataset_save_csv(ds: *const PdDataset, path: *const c_char) -> PdStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let path = path_arg(path, "path")?;
        save_csv(&ds.inner, &path)?;
        Ok(())
    })
}

/// Number of samples; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pd_dataset_len(ds: *const PdDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

#[no_mangle]
pub unsafe extern "C" fn pd_dataset_feature_dim(ds: *const PdDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.feature_dim())
}

#[no_mangle]
pub unsafe extern "C" fn pd_dataset_num_bias(ds: *const PdDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.num_bias())
}

/// Releases a dataset. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pd_dataset_free(ds: *mut PdDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Library defaults for `mode` and `seed`.
#[no_mangle]
pub extern "C" fn pd_train_params_default(mode: PdMode, seed: u64) -> PdTrainParams {
    let t = TrainConfig::new(mode.into(), seed);
    PdTrainParams {
        mode,
        seed,
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        weight_decay: t.weight_decay,
        enhancement_learning_rate: t.enhancement_learning_rate,
        proxy_dim: proxy_debias::model::DEFAULT_PROXY_DIM,
        hidden: ptr::null(),
        hidden_len: 0,
    }
}

#[no_mangle]
pub unsafe extern "C" fn pd_model_train(
    ds: *const PdDataset,
    params: *const PdTrainParams,
    out: *mut *mut PdModel,
) -> PdStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.inner;
        let p = *handle(params, "params")?;
        let mut cfg = TrainConfig::new(p.mode.into(), p.seed);
        cfg.epochs = p.epochs;
        cfg.batch_size = p.batch_size;
        cfg.learning_rate = p.learning_rate;
        cfg.weight_decay = p.weight_decay;
        cfg.enhancement_learning_rate = p.enhancement_learning_rate;
        let mut model_cfg = ModelConfig::new(ds.feature_dim(), vec![p.proxy_dim; ds.num_bias()]);
        model_cfg.num_classes = ds.target_classes.max(2);
        if p.hidden_len > 0 {
            if p.hidden.is_null() {
                return Err(null("params.hidden"));
            }
            model_cfg.hidden_dims = std::slice::from_raw_parts(p.hidden, p.hidden_len).to_vec();
        }
        let (model, _) = train(ds, &cfg, &model_cfg)?;
        out_ptr(out, PdModel { inner: model })
    })
}

/// Reads a model file written by the command-line tool or [`pd_model_save`].
#[no_mangle]
pub unsafe extern "C" fn pd_model_load(path: *const c_char, out: *mut *mut PdModel) -> PdStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let file = ModelFile::load(&path)?;
        out_ptr(out, PdModel { inner: file.model })
    })
}

/// Writes the model in the command-line tool's format. The config hash
/// covers the stored model and training configs.
#[no_mangle]
pub unsafe extern "C" fn pd_model_save(model: *const PdModel, path: *const c_char) -> PdStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let path = path_arg(path, "path")?;
        let configs = serde_json::to_vec(&(&m.model_config, &m.train_config)).expect("configs serialise");
        ModelFile::new(m.clone(), hash_bytes(&configs), Vec::new()).save(&path)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pd_model_input_dim(model: *const PdModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.params.input_dim())
}

#[no_mangle]
pub unsafe extern "C" fn pd_model_num_classes(model: *const PdModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.params.num_classes())
}

/// Scores interventional predictions on `ds`.
#[no_mangle]
pub unsafe extern "C" fn pd_model_evaluate(
    model: *const PdModel,
    ds: *const PdDataset,
    out: *mut PdMetrics,
) -> PdStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let ds = &handle(ds, "dataset")?.inner;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        if ds.num_bias() > PD_MAX_BIAS {
            return Err(invalid(format!(
                "dataset has {} bias attributes, at most {} are supported",
                ds.num_bias(),
                PD_MAX_BIAS
            )));
        }
        if ds.feature_dim() != m.params.input_dim() {
            return Err(Failure(
                PdStatus::Config,
                format!(
                    "model expects {} features, dataset has {}",
                    m.params.input_dim(),
                    ds.feature_dim()
                ),
            ));
        }
        let (report, _) = evaluate(&m.params, &m.bank, ds)?;
        let mut metrics = PdMetrics {
            accuracy: report.accuracy,
            n_evaluated: report.n_evaluated,
            num_bias: ds.num_bias(),
            ..PdMetrics::default()
        };
        let k = ds.num_bias();
        metrics.equalodds[..k].copy_from_slice(&report.equalodds);
        metrics.equal_opportunity[..k].copy_from_slice(&report.equal_opportunity);
        metrics.statistical_parity[..k].copy_from_slice(&report.statistical_parity);
        metrics.counter_p[..k].copy_from_slice(&report.counter_p);
        *out = metrics;
        Ok(())
    })
}

/// Interventional class probabilities for a row-major `rows × cols` input.
/// `out` must hold `rows × num_classes` values; `out_len` is its capacity.
#[no_mangle]
pub unsafe extern "C" fn pd_model_predict(
    model: *const PdModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> PdStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        if x.is_null() || out.is_null() {
            return Err(null("input or output buffer"));
        }
        let need = rows * m.params.num_classes();
        if out_len < need {
            return Err(invalid(format!("output buffer holds {} values, need {}", out_len, need)));
        }
        let values = std::slice::from_raw_parts(x, rows * cols).to_vec();
        let x = Tensor::new(vec![rows, cols], values)?;
        let probs = predict_interventional(&m.params, &m.bank, &x)?;
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(probs.values());
        Ok(())
    })
}

/// Releases a model. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pd_model_free(model: *mut PdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Whether `ds` was produced by the generator (as opposed to a CSV file).
#[no_mangle]
pub unsafe extern "C" fn pd_dataset_is_generated(ds: *const PdDataset) -> bool {
    ds.as_ref()
        .is_some_and(|d| matches!(d.inner.provenance, Provenance::Generated { .. }))
}
