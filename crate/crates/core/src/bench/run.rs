use std::time::Instant;

use crate::arch::{init_weights, instantiate, ArchSpec, Model};
use crate::blocks::{Block, BlockConfig};
use crate::error::{Error, Result};
use crate::tensor::{rand_normal, Rng, Tensor};

use super::{LatencyRecord, Source};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistic {
    Median,
    Mean,
    Min,
}

impl Statistic {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "median" => Some(Statistic::Median),
            "mean" => Some(Statistic::Mean),
            "min" => Some(Statistic::Min),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub warmup: usize,
    pub iterations: usize,
    pub batch: usize,
    pub statistic: Statistic,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 10,
            iterations: 50,
            batch: 1,
            statistic: Statistic::Median,
        }
    }
}

impl BenchConfig {
    pub fn check(&self) -> Result<()> {
        if self.warmup < 1 || self.iterations < 3 || self.batch < 1 {
            return Err(Error::invalid(
                "bench",
                format!(
                    "need warmup >= 1, iterations >= 3 and batch >= 1 (got {}, {}, {})",
                    self.warmup, self.iterations, self.batch
                ),
            ));
        }
        Ok(())
    }
}

/// What to time: one block on a fixed map, or a whole network.
#[derive(Clone, Debug)]
pub enum BenchTarget {
    Block { config: BlockConfig, h: usize, w: usize },
    Model { spec: ArchSpec, resolution: usize },
}

impl BenchTarget {
    fn key(&self) -> (String, String, usize, usize, usize, usize) {
        match self {
            BenchTarget::Block { config, h, w } => {
                let k = config.kind.name().to_string();
                (k.clone(), k, config.in_channels, config.out_channels, *h, *w)
            }
            BenchTarget::Model { spec, resolution } => (
                spec.name.clone(),
                "model".into(),
                3,
                spec.num_classes,
                *resolution,
                *resolution,
            ),
        }
    }
}

/// Timed samples of one target plus the summary record.
#[derive(Clone, Debug)]
pub struct Measurement {
    pub record: LatencyRecord,
    pub samples_ms: Vec<f64>,
    /// Output of the last timed call.
    pub output: Tensor,
}

impl Measurement {
    pub fn min(&self) -> f64 {
        self.samples_ms.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples_ms.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.samples_ms.iter().sum::<f64>() / self.samples_ms.len() as f64
    }

    pub fn median(&self) -> f64 {
        let mut s = self.samples_ms.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        }
    }

    pub fn statistic(&self, stat: Statistic) -> f64 {
        match stat {
            Statistic::Median => self.median(),
            Statistic::Mean => self.mean(),
            Statistic::Min => self.min(),
        }
    }
}

#[allow(clippy::large_enum_variant)]
enum Runner {
    Block(Block<f32>),
    Model(Model<f32>),
}

impl Runner {
    fn run(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Runner::Block(b) => b.forward(x, None),
            Runner::Model(m) => m.forward(x),
        }
    }
}

fn host_env(batch: usize) -> String {
    format!(
        "cpu {}-{} single-thread batch={batch}",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

/// Builds `target` with weights and input drawn from `rng`, runs the
/// warm-up calls, then times each measured call on the same input with a
/// monotonic clock. Runs on the calling thread only.
pub fn bench_target(target: &BenchTarget, cfg: &BenchConfig, rng: &mut Rng) -> Result<Measurement> {
    cfg.check()?;
    let (runner, input_shape) = match target {
        BenchTarget::Block { config, h, w } => {
            let mut b = Block::new(config.clone(), config.kind.name())?;
            init_weights(&mut b, rng);
            (Runner::Block(b), vec![cfg.batch, config.in_channels, *h, *w])
        }
        BenchTarget::Model { spec, resolution } => {
            crate::arch::check_resolution(*resolution)?;
            (
                Runner::Model(instantiate(spec, rng)?),
                vec![cfg.batch, 3, *resolution, *resolution],
            )
        }
    };
    let x = rand_normal(rng, &input_shape, 1.0);
    for _ in 0..cfg.warmup {
        runner.run(&x)?;
    }
    let mut samples_ms = Vec::with_capacity(cfg.iterations);
    let mut output = None;
    for _ in 0..cfg.iterations {
        let start = Instant::now();
        let y = runner.run(&x)?;
        samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
        output = Some(y);
    }
    let (target_name, kind, c_in, c_out, h, w) = target.key();
    let mut m = Measurement {
        record: LatencyRecord {
            target: target_name,
            kind,
            c_in,
            c_out,
            h,
            w,
            batch: cfg.batch,
            latency_ms: 0.0,
            source: Source::MeasuredLocal,
            env: host_env(cfg.batch),
        },
        samples_ms,
        output: output.expect("at least three iterations"),
    };
    // a timer tick of zero would make the record invalid
    m.record.latency_ms = m.statistic(cfg.statistic).max(1e-6);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(batch: usize) -> BenchConfig {
        BenchConfig {
            warmup: 1,
            iterations: 5,
            batch,
            statistic: Statistic::Median,
        }
    }

    #[test]
    fn order_statistics_and_determinism() {
        let t = BenchTarget::Block {
            config: BlockConfig::bottleneck(64, 64, 1, 3),
            h: 16,
            w: 16,
        };
        let a = bench_target(&t, &quick(2), &mut Rng::new(4)).unwrap();
        let b = bench_target(&t, &quick(2), &mut Rng::new(4)).unwrap();
        assert!(a.record.latency_ms > 0.0);
        assert!(a.min() <= a.median() && a.median() <= a.max());
        assert!(a.min() <= a.mean() && a.mean() <= a.max());
        assert_eq!(a.output, b.output);
        assert_eq!(a.record.source, Source::MeasuredLocal);
    }

    #[test]
    fn config_limits() {
        assert!(BenchConfig {
            iterations: 2,
            ..quick(1)
        }
        .check()
        .is_err());
        assert!(BenchConfig { warmup: 0, ..quick(1) }.check().is_err());
        assert!(BenchConfig::default().check().is_ok());
    }
}
