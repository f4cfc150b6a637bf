//! C ABI over the bivpost library.
//!
//! Every function returns a [`BivpostStatus`]; on failure the message is
//! available from [`bivpost_last_error`] on the same thread until the next
//! failing call. Models are opaque handles released with their `_free`
//! function. Arrays are row-major `double` buffers whose lengths are passed
//! explicitly.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bivpost::copula::FamilyMenu;
use bivpost::emos::{emos_fit, emos_predict_design, EmosDesign, EmosFit, EmosVariant};
use bivpost::verify;
use bivpost::yvine::{yvine_fit, YVineConfig, YVineModel};
use bivpost::{link_to_params, BivNormalParams, Error, PredictorVector};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BivpostStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    FitFailure = 5,
    MissingArtifact = 6,
    Panic = 7,
}

/// Bivariate normal parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivpostParams {
    pub mu_u: f64,
    pub mu_v: f64,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub rho: f64,
}

impl From<BivNormalParams> for BivpostParams {
    fn from(p: BivNormalParams) -> Self {
        Self {
            mu_u: p.mu_u,
            mu_v: p.mu_v,
            sigma_u: p.sigma_u,
            sigma_v: p.sigma_v,
            rho: p.rho,
        }
    }
}

/// Family menu of a Y-vine fit.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BivpostMenu {
    Gaussian = 0,
    Parametric = 1,
    All = 2,
}

/// Fitted EMOS model (opaque).
pub struct BivpostEmos(EmosFit);

/// Fitted Y-vine model (opaque).
pub struct BivpostYVine(YVineModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BivpostStatus {
    match e.exit_code() {
        2 => match e {
            Error::Config(_) => BivpostStatus::Config,
            _ => BivpostStatus::InvalidArgument,
        },
        3 => BivpostStatus::Data,
        4 => BivpostStatus::FitFailure,
        5 => BivpostStatus::MissingArtifact,
        _ => BivpostStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BivpostStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BivpostStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            BivpostStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            BivpostStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn pairs<'a>(p: *const f64, n: usize, what: &'static str) -> Result<Vec<[f64; 2]>, Fail> {
    Ok(slice(p, 2 * n, what)?.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    // SAFETY: caller guarantees a valid, aligned, writable pointer when non-null.
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bivpost_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bivpost_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Maps the five linear predictors to distribution parameters.
///
/// # Safety
/// `eta` must point to 5 doubles and `out_params` to a writable `BivpostParams`.
#[no_mangle]
pub unsafe extern "C" fn bivpost_link_to_params(eta: *const f64, out_params: *mut BivpostParams) -> BivpostStatus {
    guard(|| {
        let e = slice(eta, 5, "eta")?;
        let p = link_to_params(&PredictorVector::from_array([e[0], e[1], e[2], e[3], e[4]]))?;
        *out(out_params, "out_params")? = p.into();
        Ok(())
    })
}

/// Bivariate normal log-density at `y` (2 doubles).
///
/// # Safety
/// `params` and `out_value` must be valid; `y` must point to 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn bivpost_logpdf(
    params: *const BivpostParams,
    y: *const f64,
    out_value: *mut f64,
) -> BivpostStatus {
    guard(|| {
        let p = params.as_ref().ok_or(Fail::Null("params"))?;
        let y = slice(y, 2, "y")?;
        let law = BivNormalParams::new(p.mu_u, p.mu_v, p.sigma_u, p.sigma_v, p.rho)?;
        *out(out_value, "out_value")? = law.logpdf([y[0], y[1]])?;
        Ok(())
    })
}

/// Fits IND-EMOS (`bivariate == 0`) or BIV-EMOS on `n` days. Each design row
/// holds 8 doubles: mean_u, ctrl_u, mean_v, ctrl_v, log-sd_u, log-sd_v and
/// the two direction-speed products; `y` holds `n` (u, v) pairs.
///
/// # Safety
/// Buffers must hold `8 n` and `2 n` doubles; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bivpost_emos_fit(
    bivariate: i32,
    design: *const f64,
    y: *const f64,
    n: usize,
    out_model: *mut *mut BivpostEmos,
) -> BivpostStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = ptr::null_mut();
        let d = slice(design, 8 * n, "design")?;
        let rows: Vec<EmosDesign> = d
            .chunks_exact(8)
            .map(|r| EmosDesign {
                mu_u: [r[0], r[1]],
                mu_v: [r[2], r[3]],
                sigma_u: r[4],
                sigma_v: r[5],
                rho: [r[6], r[7]],
            })
            .collect();
        let variant = if bivariate == 0 {
            EmosVariant::Ind
        } else {
            EmosVariant::Biv
        };
        let fit = emos_fit(&rows, &pairs(y, n, "y")?, variant)?;
        *slot = Box::into_raw(Box::new(BivpostEmos(fit)));
        Ok(())
    })
}

/// Number of coefficients of a fitted EMOS model (10 or 13).
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bivpost_emos_n_coefficients(model: *const BivpostEmos, out_n: *mut usize) -> BivpostStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        *out(out_n, "out_n")? = m.0.coefficients.values.len();
        Ok(())
    })
}

/// Copies the coefficients into `values` (capacity `len`).
///
/// # Safety
/// `values` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bivpost_emos_coefficients(
    model: *const BivpostEmos,
    values: *mut f64,
    len: usize,
) -> BivpostStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let c = &m.0.coefficients.values;
        if len < c.len() {
            return Err(Error::invalid(format!("buffer holds {len} values, {} needed", c.len())).into());
        }
        if values.is_null() {
            return Err(Fail::Null("values"));
        }
        std::slice::from_raw_parts_mut(values, c.len()).copy_from_slice(c);
        Ok(())
    })
}

/// Predictive parameters for one design row of 8 doubles.
///
/// # Safety
/// `model` must be live, `design` must hold 8 doubles.
#[no_mangle]
pub unsafe extern "C" fn bivpost_emos_predict(
    model: *const BivpostEmos,
    design: *const f64,
    out_params: *mut BivpostParams,
) -> BivpostStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let r = slice(design, 8, "design")?;
        let d = EmosDesign {
            mu_u: [r[0], r[1]],
            mu_v: [r[2], r[3]],
            sigma_u: r[4],
            sigma_v: r[5],
            rho: [r[6], r[7]],
        };
        *out(out_params, "out_params")? = emos_predict_design(&m.0.coefficients, &d)?.into();
        Ok(())
    })
}

/// Releases an EMOS handle; null is ignored.
///
/// # Safety
/// `model` must come from `bivpost_emos_fit` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bivpost_emos_free(model: *mut BivpostEmos) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fits a Y-vine on `n` days of responses (`2 n` doubles) and `p`
/// candidate covariates (`n p` doubles, row-major). `max_k == 0` allows all
/// covariates.
///
/// # Safety
/// Buffers must have the stated sizes; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bivpost_yvine_fit(
    y: *const f64,
    x: *const f64,
    n: usize,
    p: usize,
    menu: BivpostMenu,
    max_k: usize,
    bandwidth_scale: f64,
    out_model: *mut *mut BivpostYVine,
) -> BivpostStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = ptr::null_mut();
        let yv = pairs(y, n, "y")?;
        let xs: Vec<Vec<f64>> = if p == 0 {
            vec![Vec::new(); n]
        } else {
            slice(x, n * p, "x")?.chunks_exact(p).map(<[f64]>::to_vec).collect()
        };
        let names: Vec<String> = (0..p).map(|j| format!("x{}", j + 1)).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let config = YVineConfig {
            menu: match menu {
                BivpostMenu::Gaussian => FamilyMenu::G,
                BivpostMenu::Parametric => FamilyMenu::P,
                BivpostMenu::All => FamilyMenu::All,
            },
            max_k: if max_k == 0 { p } else { max_k },
            bandwidth_scale,
        };
        let m = yvine_fit(&yv, &xs, &names, &config)?;
        *slot = Box::into_raw(Box::new(BivpostYVine(m)));
        Ok(())
    })
}

/// Number of selected covariates and their 0-based indices in selection
/// order (`selected` may be null to query the count only).
///
/// # Safety
/// `selected` must be null or writable for `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn bivpost_yvine_selected(
    model: *const BivpostYVine,
    selected: *mut usize,
    capacity: usize,
    out_k: *mut usize,
) -> BivpostStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        *out(out_k, "out_k")? = m.0.k();
        if !selected.is_null() {
            let n = capacity.min(m.0.k());
            std::slice::from_raw_parts_mut(selected, n).copy_from_slice(&m.0.selected[..n]);
        }
        Ok(())
    })
}

/// Conditional log-density of `y` (2 doubles) given covariates `x` (`p`
/// doubles, the fit's candidate count).
///
/// # Safety
/// Buffers must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn bivpost_yvine_logdensity(
    model: *const BivpostYVine,
    y: *const f64,
    x: *const f64,
    p: usize,
    out_value: *mut f64,
) -> BivpostStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let y = slice(y, 2, "y")?;
        *out(out_value, "out_value")? = m.0.logdensity([y[0], y[1]], slice(x, p, "x")?)?;
        Ok(())
    })
}

/// Writes `n` conditional draws as `2 n` doubles into `samples`.
///
/// # Safety
/// `samples` must be writable for `2 n` doubles.
#[no_mangle]
pub unsafe extern "C" fn bivpost_yvine_sample(
    model: *const BivpostYVine,
    x: *const f64,
    p: usize,
    n: usize,
    seed: u64,
    samples: *mut f64,
) -> BivpostStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let draws = m.0.sample(slice(x, p, "x")?, n, seed)?;
        if n > 0 && samples.is_null() {
            return Err(Fail::Null("samples"));
        }
        let dst = std::slice::from_raw_parts_mut(samples, 2 * n);
        for (d, s) in dst.chunks_exact_mut(2).zip(draws) {
            d.copy_from_slice(&s);
        }
        Ok(())
    })
}

/// Serializes the model to JSON. The returned string is released with
/// `bivpost_string_free`.
///
/// # Safety
/// `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bivpost_yvine_to_json(model: *const BivpostYVine, out_json: *mut *mut c_char) -> BivpostStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let slot = out(out_json, "out_json")?;
        let s = serde_json::to_string(&m.0).map_err(Error::from)?;
        *slot = CString::new(s).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Restores a model from `bivpost_yvine_to_json` output.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bivpost_yvine_from_json(json: *const c_char, out_model: *mut *mut BivpostYVine) -> BivpostStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = ptr::null_mut();
        if json.is_null() {
            return Err(Fail::Null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| Error::invalid("model JSON is not UTF-8"))?;
        let m: YVineModel = serde_json::from_str(text).map_err(Error::from)?;
        m.validate()?;
        *slot = Box::into_raw(Box::new(BivpostYVine(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bivpost_yvine_free(model: *mut BivpostYVine) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bivpost_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Energy score and ES-based PIT from two samples of `n` pairs each.
///
/// # Safety
/// `r` and `r_star` must hold `2 n` doubles, `y` 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn bivpost_energy_score(
    r: *const f64,
    r_star: *const f64,
    n: usize,
    y: *const f64,
    out_es: *mut f64,
    out_pit: *mut f64,
) -> BivpostStatus {
    guard(|| {
        let y = slice(y, 2, "y")?;
        let e = verify::energy_evaluation(&pairs(r, n, "r")?, &pairs(r_star, n, "r_star")?, [y[0], y[1]])?;
        *out(out_es, "out_es")? = e.es;
        if !out_pit.is_null() {
            *out_pit = e.pit;
        }
        Ok(())
    })
}

/// Variogram score of order 0.5 from `n` pairs.
///
/// # Safety
/// `r` must hold `2 n` doubles, `y` 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn bivpost_variogram_score(
    r: *const f64,
    n: usize,
    y: *const f64,
    out_value: *mut f64,
) -> BivpostStatus {
    guard(|| {
        let y = slice(y, 2, "y")?;
        *out(out_value, "out_value")? = verify::variogram_score(&pairs(r, n, "r")?, [y[0], y[1]])?;
        Ok(())
    })
}

/// Diebold–Mariano test of two score series of length `n`.
///
/// # Safety
/// `a` and `b` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn bivpost_dm_test(
    a: *const f64,
    b: *const f64,
    n: usize,
    out_statistic: *mut f64,
    out_p_value: *mut f64,
) -> BivpostStatus {
    guard(|| {
        let r = verify::dm_test(slice(a, n, "a")?, slice(b, n, "b")?)?;
        *out(out_statistic, "out_statistic")? = r.statistic;
        *out(out_p_value, "out_p_value")? = r.p_value;
        Ok(())
    })
}

/// Benjamini–Hochberg rejections: `reject[i]` is set to 1 or 0.
///
/// # Safety
/// `p` must hold `m` doubles and `reject` must be writable for `m` bytes.
#[no_mangle]
pub unsafe extern "C" fn bivpost_benjamini_hochberg(
    p: *const f64,
    m: usize,
    alpha: f64,
    reject: *mut u8,
) -> BivpostStatus {
    guard(|| {
        let flags = verify::benjamini_hochberg(slice(p, m, "p")?, alpha)?;
        if m > 0 && reject.is_null() {
            return Err(Fail::Null("reject"));
        }
        for (i, f) in flags.into_iter().enumerate() {
            *reject.add(i) = u8::from(f);
        }
        Ok(())
    })
}
