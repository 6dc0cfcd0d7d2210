//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export has a plain Rust twin returning `Result<_, String>` so the
//! logic can be tested natively; the `#[wasm_bindgen]` wrappers only turn
//! errors into JS exceptions.

use rofdecide::binary::{pack, xnor_popcount_dot, SignTensor};
use rofdecide::link::{self, ChannelConfig, DistancePreset, FEC_LIMIT};
use wasm_bindgen::prelude::*;

/// Samples per eye trace: two symbol periods plus the closing sample.
pub fn eye_trace_len(sps: usize) -> usize {
    2 * sps + 1
}

fn channel(distance: &str) -> Result<ChannelConfig, String> {
    let d: DistancePreset = distance.parse().map_err(|e: rofdecide::Error| e.to_string())?;
    Ok(ChannelConfig::preset(d))
}

/// Overlaid received traces centred on each symbol instant, flattened.
/// Each trace spans one symbol period either side of the decided sample.
pub fn eye_traces(distance: &str, power_dbm: f64, traces: usize, seed: u64) -> Result<Vec<f64>, String> {
    let cfg = channel(distance)?;
    let w = link::simulate_link(&cfg, traces + 2, power_dbm, seed).map_err(|e| e.to_string())?;
    let len = eye_trace_len(w.sps);
    let mut out = Vec::with_capacity(traces * len);
    for k in 1..=traces {
        let start = (k - 1) * w.sps;
        out.extend_from_slice(&w.samples[start..start + len]);
    }
    Ok(out)
}

/// Threshold-detector BER at every grid power, as `[power, ber]` pairs.
pub fn threshold_curve(distance: &str, symbols: usize, seed: u64) -> Result<Vec<f64>, String> {
    let cfg = channel(distance)?;
    let mut out = Vec::with_capacity(2 * cfg.power_grid_dbm.len());
    for (i, &p) in cfg.power_grid_dbm.iter().enumerate() {
        let w = link::simulate_link(&cfg, symbols, p, seed.wrapping_add(i as u64)).map_err(|e| e.to_string())?;
        out.push(p);
        out.push(link::threshold_errors(&w) as f64 / symbols as f64);
    }
    Ok(out)
}

fn parse_signs(text: &str) -> Result<Vec<i8>, String> {
    text.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '+' | '1' => Ok(1),
            '-' | '0' => Ok(-1),
            other => Err(format!("unexpected character {other:?}; use + and -")),
        })
        .collect()
}

/// `[naive dot, xnor-popcount dot, matching positions]` for two sign strings.
pub fn sign_dot(a: &str, b: &str) -> Result<Vec<i32>, String> {
    let (a, b) = (parse_signs(a)?, parse_signs(b)?);
    if a.len() != b.len() {
        return Err(format!("lengths differ: {} vs {}", a.len(), b.len()));
    }
    let n = a.len();
    let naive: i32 = a.iter().zip(&b).map(|(&x, &y)| i32::from(x) * i32::from(y)).sum();
    let pa = pack(&SignTensor::new(vec![n], a).map_err(|e| e.to_string())?);
    let pb = pack(&SignTensor::new(vec![n], b).map_err(|e| e.to_string())?);
    let packed = xnor_popcount_dot(pa.row(0), pb.row(0), n).map_err(|e| e.to_string())? as i32;
    Ok(vec![naive, packed, (packed + n as i32) / 2])
}

#[wasm_bindgen(js_name = eyeTraces)]
pub fn eye_traces_js(distance: &str, power_dbm: f64, traces: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    eye_traces(distance, power_dbm, traces, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = eyeTraceLength)]
pub fn eye_trace_len_js() -> usize {
    eye_trace_len(ChannelConfig::preset(DistancePreset::D10km).sps)
}

#[wasm_bindgen(js_name = thresholdCurve)]
pub fn threshold_curve_js(distance: &str, symbols: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    threshold_curve(distance, symbols, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = fecLimit)]
pub fn fec_limit() -> f64 {
    FEC_LIMIT
}

#[wasm_bindgen(js_name = signDot)]
pub fn sign_dot_js(a: &str, b: &str) -> Result<Vec<i32>, JsError> {
    sign_dot(a, b).map_err(|e| JsError::new(&e))
}
