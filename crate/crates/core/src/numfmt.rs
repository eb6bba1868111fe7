//! Fixed-precision number serialization shared by every file format.

use serde::Serializer;

/// Rounds to six decimal places. Idempotent: `round6(round6(x)) == round6(x)`.
pub fn round6(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn ser_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round6(*v))
}

pub fn ser_opt_f64<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_f64(round6(*v)),
        None => s.serialize_none(),
    }
}
