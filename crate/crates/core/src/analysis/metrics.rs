use serde::Serialize;

use crate::error::{Error, Result};

fn check_latency(latency_ms: f64) -> Result<()> {
    if latency_ms > 0.0 && latency_ms.is_finite() {
        Ok(())
    } else {
        Err(Error::Latency(latency_ms))
    }
}

/// Computational density: `flops_m / latency_ms`, i.e. MFLOPs per
/// millisecond (numerically GFLOP/s).
pub fn teraflops(flops_m: f64, latency_ms: f64) -> Result<f64> {
    check_latency(latency_ms)?;
    Ok(flops_m / latency_ms)
}

/// Parameter density: `params_k / latency_ms`, thousands of parameters per
/// millisecond.
pub fn teraparams(params_k: f64, latency_ms: f64) -> Result<f64> {
    check_latency(latency_ms)?;
    Ok(params_k / latency_ms)
}

/// Counts joined with one latency measurement.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub target: String,
    pub kind: String,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub batch: usize,
    pub params_k: f64,
    pub flops_m: f64,
    pub latency_ms: f64,
    pub teraparams: f64,
    pub teraflops: f64,
    pub env: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_examples() {
        assert!((teraflops(7098.0, 86.9).unwrap() - 81.68).abs() < 0.01);
        assert!((teraparams(658.0, 86.9).unwrap() - 7.57).abs() < 0.01);
    }

    #[test]
    fn rejects_non_positive_latency() {
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(teraflops(1.0, bad).is_err());
            assert!(teraparams(1.0, bad).is_err());
        }
    }

    proptest::proptest! {
        #[test]
        fn homogeneous(f in 1e-3f64..1e6, l in 1e-3f64..1e3, k in 1e-2f64..1e2) {
            let base = teraflops(f, l).unwrap();
            proptest::prop_assert!((teraflops(k * f, k * l).unwrap() - base).abs() <= 1e-9 * base);
            proptest::prop_assert!((teraflops(f, 2.0 * l).unwrap() - base / 2.0).abs() <= 1e-12 * base);
        }
    }
}
