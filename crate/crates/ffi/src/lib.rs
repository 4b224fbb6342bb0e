//! C ABI over the detector: opaque model and detector handles, integer
//! error codes, and a thread-local last-error message. The matching header
//! is `include/provsage.h`.
//!
//! Conventions: every function returns `PROVSAGE_OK` (0) on success;
//! `PROVSAGE_INVALID_ARGUMENT` (2) marks null pointers, bad UTF-8 or bad
//! config text; `PROVSAGE_ERROR` (1) is any runtime failure. The failure
//! detail is readable via `provsage_last_error` until the next call on the
//! same thread. Strings returned through out-parameters must be released
//! with `provsage_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::ptr;

use provsage::config::Config;
use provsage::ensemble::{train_on_graph_sequence, Ensemble};
use provsage::graph::{EdgeRecord, MemGraph};
use provsage::pipeline::StreamingDetector;

pub const PROVSAGE_OK: c_int = 0;
pub const PROVSAGE_ERROR: c_int = 1;
pub const PROVSAGE_INVALID_ARGUMENT: c_int = 2;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn fail(code: c_int, msg: &str) -> c_int {
    set_error(msg);
    code
}

/// Opaque trained-ensemble handle.
pub struct ProvsageModel {
    ensemble: Ensemble,
}

/// Opaque streaming-detector handle; consumed by `provsage_detector_finish`.
pub struct ProvsageDetector {
    // finish() takes the detector by value, so the slot empties afterwards
    inner: Option<StreamingDetector>,
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, c_int> {
    if p.is_null() {
        set_error("null string argument");
        return Err(PROVSAGE_INVALID_ARGUMENT);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        PROVSAGE_INVALID_ARGUMENT
    })
}

fn parse_config(text: &str) -> Result<Config, c_int> {
    let mut cfg = Config::default();
    if !text.is_empty() {
        cfg.load_str(text).map_err(|e| {
            set_error(&e.to_string());
            PROVSAGE_INVALID_ARGUMENT
        })?;
    }
    cfg.validate().map_err(|e| {
        set_error(&e.to_string());
        PROVSAGE_INVALID_ARGUMENT
    })?;
    Ok(cfg)
}

fn load_edge_stream(path: &str) -> Result<MemGraph, provsage::Error> {
    let file = fs::File::open(Path::new(path))?;
    let mut g = MemGraph::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        g.append(&EdgeRecord::parse(&line, i + 1)?)?;
    }
    Ok(g)
}

/// Message of the most recent failure on this thread; empty string when the
/// last call succeeded. The pointer stays valid until the next failing call.
#[no_mangle]
pub extern "C" fn provsage_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Trains an ensemble on `n_inputs` benign edge-stream files.
/// `config_text` is flat `key = value` text and may be null for defaults.
///
/// # Safety
/// `inputs` must point to `n_inputs` valid C strings; `out` must be a valid
/// destination pointer.
#[no_mangle]
pub unsafe extern "C" fn provsage_train(
    inputs: *const *const c_char,
    n_inputs: usize,
    config_text: *const c_char,
    out: *mut *mut ProvsageModel,
) -> c_int {
    if out.is_null() || (inputs.is_null() && n_inputs > 0) {
        return fail(PROVSAGE_INVALID_ARGUMENT, "null pointer argument");
    }
    let cfg = match if config_text.is_null() {
        Ok(Config::default())
    } else {
        cstr(config_text).and_then(parse_config)
    } {
        Ok(c) => c,
        Err(code) => return code,
    };
    let mut graphs = Vec::with_capacity(n_inputs);
    for i in 0..n_inputs {
        let path = match cstr(*inputs.add(i)) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match load_edge_stream(path) {
            Ok(g) => graphs.push(g),
            Err(e) => return fail(PROVSAGE_ERROR, &format!("{path}: {e}")),
        }
    }
    let refs: Vec<&MemGraph> = graphs.iter().collect();
    match train_on_graph_sequence(&refs, &cfg) {
        Ok((ensemble, _)) => {
            *out = Box::into_raw(Box::new(ProvsageModel { ensemble }));
            set_error("");
            PROVSAGE_OK
        }
        Err(e) => fail(PROVSAGE_ERROR, &e.to_string()),
    }
}

/// Loads a serialized ensemble from `path`.
///
/// # Safety
/// `path` must be a valid C string; `out` a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn provsage_model_load(
    path: *const c_char,
    out: *mut *mut ProvsageModel,
) -> c_int {
    if out.is_null() {
        return fail(PROVSAGE_INVALID_ARGUMENT, "null out pointer");
    }
    let path = match cstr(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) => return fail(PROVSAGE_ERROR, &format!("{path}: {e}")),
    };
    match Ensemble::from_bytes(&bytes) {
        Ok(ensemble) => {
            *out = Box::into_raw(Box::new(ProvsageModel { ensemble }));
            set_error("");
            PROVSAGE_OK
        }
        Err(e) => fail(PROVSAGE_ERROR, &e.to_string()),
    }
}

/// Serializes the ensemble to `path`; byte-stable for a given model.
///
/// # Safety
/// `model` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn provsage_model_save(
    model: *const ProvsageModel,
    path: *const c_char,
) -> c_int {
    if model.is_null() {
        return fail(PROVSAGE_INVALID_ARGUMENT, "null model handle");
    }
    let path = match cstr(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let bytes = match (*model).ensemble.to_bytes() {
        Ok(b) => b,
        Err(e) => return fail(PROVSAGE_ERROR, &e.to_string()),
    };
    match fs::write(path, bytes) {
        Ok(()) => {
            set_error("");
            PROVSAGE_OK
        }
        Err(e) => fail(PROVSAGE_ERROR, &format!("{path}: {e}")),
    }
}

/// Number of stacked submodels, or -1 on a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn provsage_model_cnt(model: *const ProvsageModel) -> c_int {
    if model.is_null() {
        return -1;
    }
    (*model).ensemble.cnt() as c_int
}

/// # Safety
/// `model` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn provsage_model_free(model: *mut ProvsageModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Creates a streaming detector over a copy of the model.
/// `config_text` may be null for defaults.
///
/// # Safety
/// `model` must be a live handle; `out` a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn provsage_detector_new(
    model: *const ProvsageModel,
    config_text: *const c_char,
    out: *mut *mut ProvsageDetector,
) -> c_int {
    if model.is_null() || out.is_null() {
        return fail(PROVSAGE_INVALID_ARGUMENT, "null pointer argument");
    }
    let cfg = match if config_text.is_null() {
        Ok(Config::default())
    } else {
        cstr(config_text).and_then(parse_config)
    } {
        Ok(c) => c,
        Err(code) => return code,
    };
    let det = StreamingDetector::new((*model).ensemble.clone(), cfg);
    *out = Box::into_raw(Box::new(ProvsageDetector { inner: Some(det) }));
    set_error("");
    PROVSAGE_OK
}

/// Ingests one canonical tab-separated edge line. When the edge completed a
/// detection flush, `*flushed` (if non-null) is set to 1 and the number of
/// nodes flagged in that flush is stored in `*flagged` (if non-null).
///
/// # Safety
/// `detector` must be a live, unfinished handle; `line` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn provsage_detector_ingest(
    detector: *mut ProvsageDetector,
    line: *const c_char,
    flushed: *mut c_int,
    flagged: *mut c_int,
) -> c_int {
    if !flushed.is_null() {
        *flushed = 0;
    }
    if !flagged.is_null() {
        *flagged = 0;
    }
    if detector.is_null() {
        return fail(PROVSAGE_INVALID_ARGUMENT, "null detector handle");
    }
    let det = match (*detector).inner.as_mut() {
        Some(d) => d,
        None => return fail(PROVSAGE_INVALID_ARGUMENT, "detector already finished"),
    };
    let line = match cstr(line) {
        Ok(l) => l,
        Err(code) => return code,
    };
    let rec = match EdgeRecord::parse(line, 0) {
        Ok(r) => r,
        Err(e) => return fail(PROVSAGE_ERROR, &e.to_string()),
    };
    match det.ingest_record(&rec) {
        Ok(Some(report)) => {
            if !flushed.is_null() {
                *flushed = 1;
            }
            if !flagged.is_null() {
                *flagged = report.anomalous.len() as c_int;
            }
            set_error("");
            PROVSAGE_OK
        }
        Ok(None) => {
            set_error("");
            PROVSAGE_OK
        }
        Err(e) => fail(PROVSAGE_ERROR, &e.to_string()),
    }
}

/// Final flush, queue aging, and summary. On success stores a heap JSON
/// summary string in `*summary_json` (release with `provsage_string_free`);
/// the handle stays allocated but cannot ingest afterwards.
///
/// # Safety
/// `detector` must be a live handle; `summary_json` a valid destination
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn provsage_detector_finish(
    detector: *mut ProvsageDetector,
    summary_json: *mut *mut c_char,
) -> c_int {
    if detector.is_null() || summary_json.is_null() {
        return fail(PROVSAGE_INVALID_ARGUMENT, "null pointer argument");
    }
    let det = match (*detector).inner.take() {
        Some(d) => d,
        None => return fail(PROVSAGE_INVALID_ARGUMENT, "detector already finished"),
    };
    let summary = match det.finish() {
        Ok((summary, _)) => summary,
        Err(e) => return fail(PROVSAGE_ERROR, &e.to_string()),
    };
    let json = match serde_json::to_string(&summary) {
        Ok(j) => j,
        Err(e) => return fail(PROVSAGE_ERROR, &e.to_string()),
    };
    *summary_json = CString::new(json).unwrap().into_raw();
    set_error("");
    PROVSAGE_OK
}

/// # Safety
/// `detector` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn provsage_detector_free(detector: *mut ProvsageDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

/// Releases a string returned through an out-parameter.
///
/// # Safety
/// `s` must be null or a string produced by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn provsage_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use provsage::synth;
    use std::ffi::CString;

    fn write_stream(path: &Path, graph: &MemGraph) {
        let lines: Vec<String> = (0..graph.edge_count())
            .map(|i| graph.record_for(i).to_line())
            .collect();
        fs::write(path, lines.join("\n") + "\n").unwrap();
    }

    const CFG: &str = "split_size = 10000\nepoch = 200\nBS = 64\nhidden = 8\nseed = 0\n";

    fn train(dir: &Path) -> *mut ProvsageModel {
        let stream = dir.join("benign.tsv");
        write_stream(&stream, &synth::two_role_graph(7, 16));
        let c_path = CString::new(stream.to_str().unwrap()).unwrap();
        let inputs = [c_path.as_ptr()];
        let cfg = CString::new(CFG).unwrap();
        let mut model: *mut ProvsageModel = ptr::null_mut();
        let rc = unsafe { provsage_train(inputs.as_ptr(), 1, cfg.as_ptr(), &mut model) };
        assert_eq!(rc, PROVSAGE_OK, "{:?}", unsafe {
            CStr::from_ptr(provsage_last_error())
        });
        model
    }

    #[test]
    fn train_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = train(dir.path());
        assert!(unsafe { provsage_model_cnt(model) } >= 1);

        let out = CString::new(dir.path().join("m.bin").to_str().unwrap()).unwrap();
        assert_eq!(unsafe { provsage_model_save(model, out.as_ptr()) }, PROVSAGE_OK);
        let mut loaded: *mut ProvsageModel = ptr::null_mut();
        assert_eq!(
            unsafe { provsage_model_load(out.as_ptr(), &mut loaded) },
            PROVSAGE_OK
        );
        assert_eq!(unsafe { provsage_model_cnt(loaded) }, unsafe {
            provsage_model_cnt(model)
        });
        unsafe {
            provsage_model_free(model);
            provsage_model_free(loaded);
        }
    }

    #[test]
    fn detector_flags_injected_stream() {
        let dir = tempfile::tempdir().unwrap();
        let model = train(dir.path());
        let mut g = synth::two_role_graph(7, 16);
        synth::inject_anomalies(&mut g, 3, 5);

        let cfg = CString::new(CFG).unwrap();
        let mut det: *mut ProvsageDetector = ptr::null_mut();
        assert_eq!(
            unsafe { provsage_detector_new(model, cfg.as_ptr(), &mut det) },
            PROVSAGE_OK
        );
        for i in 0..g.edge_count() {
            let line = CString::new(g.record_for(i).to_line()).unwrap();
            let rc = unsafe {
                provsage_detector_ingest(det, line.as_ptr(), ptr::null_mut(), ptr::null_mut())
            };
            assert_eq!(rc, PROVSAGE_OK);
        }
        let mut json: *mut c_char = ptr::null_mut();
        assert_eq!(unsafe { provsage_detector_finish(det, &mut json) }, PROVSAGE_OK);
        let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
        let summary: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(summary["alert_raised"], true, "{text}");
        assert!(summary["confirmed"].as_array().unwrap().len() > 2);

        // a finished handle refuses further work but frees cleanly
        let line = CString::new(g.record_for(0).to_line()).unwrap();
        let rc = unsafe {
            provsage_detector_ingest(det, line.as_ptr(), ptr::null_mut(), ptr::null_mut())
        };
        assert_eq!(rc, PROVSAGE_INVALID_ARGUMENT);
        unsafe {
            provsage_string_free(json);
            provsage_detector_free(det);
            provsage_model_free(model);
        }
    }

    #[test]
    fn error_paths_set_codes_and_messages() {
        let mut model: *mut ProvsageModel = ptr::null_mut();
        let missing = CString::new("/no/such/model.bin").unwrap();
        assert_eq!(
            unsafe { provsage_model_load(missing.as_ptr(), &mut model) },
            PROVSAGE_ERROR
        );
        let msg = unsafe { CStr::from_ptr(provsage_last_error()) }.to_str().unwrap();
        assert!(msg.contains("/no/such/model.bin"), "{msg}");

        assert_eq!(
            unsafe { provsage_train(ptr::null(), 1, ptr::null(), &mut model) },
            PROVSAGE_INVALID_ARGUMENT
        );
        let bad_cfg = CString::new("R = banana").unwrap();
        let inputs: [*const c_char; 0] = [];
        assert_eq!(
            unsafe { provsage_train(inputs.as_ptr(), 0, bad_cfg.as_ptr(), &mut model) },
            PROVSAGE_INVALID_ARGUMENT
        );
        assert_eq!(unsafe { provsage_model_cnt(ptr::null()) }, -1);
        unsafe {
            provsage_model_free(ptr::null_mut());
            provsage_detector_free(ptr::null_mut());
            provsage_string_free(ptr::null_mut());
        }
    }
}
