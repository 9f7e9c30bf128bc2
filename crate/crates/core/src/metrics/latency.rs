use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-call wall-clock latency in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub samples: usize,
}

/// Times `f(i)` for every item index, `repetitions` times over, after
/// `warmup` untimed calls.
pub fn bench<F>(items: usize, warmup: usize, repetitions: usize, mut f: F) -> Result<LatencyStats>
where
    F: FnMut(usize) -> Result<()>,
{
    if items == 0 || repetitions == 0 {
        return Err(Error::Config(
            "benchmark needs at least one item and one repetition".into(),
        ));
    }
    for w in 0..warmup {
        f(w % items)?;
    }
    let mut times = Vec::with_capacity(items * repetitions);
    for _ in 0..repetitions {
        for i in 0..items {
            let t0 = Instant::now();
            f(i)?;
            times.push(t0.elapsed().as_secs_f64() * 1e3);
        }
    }
    times.sort_by(|a, b| a.total_cmp(b));
    let n = times.len();
    let mean = times.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    let p95 = times[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
    Ok(LatencyStats {
        mean_ms: mean,
        median_ms: median,
        p95_ms: p95,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_are_positive_and_ordered() {
        let s = bench(4, 2, 3, |i| {
            std::hint::black_box((0..1000 * (i + 1)).sum::<usize>());
            Ok(())
        })
        .unwrap();
        assert_eq!(s.samples, 12);
        assert!(s.mean_ms > 0.0 && s.mean_ms.is_finite());
        assert!(s.median_ms <= s.p95_ms);
    }

    #[test]
    fn zero_repetitions_rejected() {
        assert!(bench(3, 0, 0, |_| Ok(())).is_err());
        assert!(bench(0, 0, 1, |_| Ok(())).is_err());
    }
}
