use super::{Formula, Interval};
use crate::error::{Error, Result};

const GRID_EPS: f64 = 1e-9;

/// Uniformly sampled output trajectory with `t_k = k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub dt: f64,
    pub samples: Vec<Vec<f64>>,
}

impl Signal {
    pub fn new(dt: f64, samples: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Argument(format!("sample period must be positive, got {dt}")));
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|s| s.len() != first.len()) {
                return Err(Error::Dimension("signal samples differ in length".into()));
            }
        }
        Ok(Self { dt, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len().saturating_sub(1) as f64 * self.dt
    }

    fn index_of(&self, t: f64) -> usize {
        (t / self.dt).round().max(0.0) as usize
    }

    fn window(&self, k: usize, iv: Interval) -> Result<(usize, usize)> {
        let t = k as f64 * self.dt;
        let mut lo = ((t + iv.a) / self.dt - GRID_EPS).ceil() as usize;
        let mut hi = ((t + iv.b) / self.dt + GRID_EPS).floor() as usize;
        if lo > hi {
            lo = self.index_of(t + iv.a);
            hi = lo;
        }
        if hi >= self.len() {
            return Err(Error::InsufficientData {
                needed: hi as f64 * self.dt,
                available: self.duration(),
            });
        }
        Ok((lo, hi))
    }
}

/// Time span of future samples a formula depends on.
pub fn horizon(f: &Formula) -> f64 {
    match f {
        Formula::True | Formula::Atom(_) => 0.0,
        Formula::And(children) => children.iter().map(horizon).fold(0.0, f64::max),
        Formula::Eventually { interval, child } | Formula::Always { interval, child } => {
            interval.b + horizon(child)
        }
        Formula::Until {
            interval,
            left,
            right,
        } => interval.b + horizon(left).max(horizon(right)),
    }
}

fn check_coverage(signal: &Signal, f: &Formula, t: f64) -> Result<usize> {
    if !(t >= 0.0) {
        return Err(Error::Argument(format!("evaluation time must be nonnegative, got {t}")));
    }
    let needed = ((t + horizon(f)) / signal.dt + GRID_EPS).floor() as usize + 1;
    if needed > signal.len() {
        return Err(Error::InsufficientData {
            needed: t + horizon(f),
            available: signal.duration(),
        });
    }
    Ok(signal.index_of(t))
}

/// Quantitative robustness of `f` on `signal` at time `t`.
pub fn robustness(signal: &Signal, f: &Formula, t: f64) -> Result<f64> {
    let k = check_coverage(signal, f, t)?;
    rho(signal, f, k)
}

fn rho(s: &Signal, f: &Formula, k: usize) -> Result<f64> {
    Ok(match f {
        Formula::True => f64::INFINITY,
        Formula::Atom(a) => a.eval(&s.samples[k]),
        Formula::And(children) => {
            let mut m = f64::INFINITY;
            for c in children {
                m = m.min(rho(s, c, k)?);
            }
            m
        }
        Formula::Eventually { interval, child } => {
            let (lo, hi) = s.window(k, *interval)?;
            let mut m = f64::NEG_INFINITY;
            for j in lo..=hi {
                m = m.max(rho(s, child, j)?);
            }
            m
        }
        Formula::Always { interval, child } => {
            let (lo, hi) = s.window(k, *interval)?;
            let mut m = f64::INFINITY;
            for j in lo..=hi {
                m = m.min(rho(s, child, j)?);
            }
            m
        }
        Formula::Until {
            interval,
            left,
            right,
        } => {
            let (lo, hi) = s.window(k, *interval)?;
            let mut left_min = f64::INFINITY;
            for j in k..lo {
                left_min = left_min.min(rho(s, left, j)?);
            }
            let mut best = f64::NEG_INFINITY;
            for j in lo..=hi {
                left_min = left_min.min(rho(s, left, j)?);
                best = best.max(rho(s, right, j)?.min(left_min));
            }
            best
        }
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    /// Always windows must elapse before satisfaction counts as determined.
    Determined,
    /// Always operators are checked over the whole trace but do not delay completion.
    Witnessed,
}

/// Earliest time at which the prefix of `signal` settles satisfaction of `f`
/// at time 0, or `None` when the trace does not satisfy `f`.
pub fn completion_time(signal: &Signal, f: &Formula) -> Result<Option<f64>> {
    check_coverage(signal, f, 0.0)?;
    Ok(settle(signal, f, 0, Mode::Determined)?.map(|k| k as f64 * signal.dt))
}

/// Like [`completion_time`], but counts only the liveness obligations
/// (eventually and until witnesses). Invariance obligations must still hold
/// over the trace, they just do not push the completion time out to the end
/// of their windows.
pub fn witness_time(signal: &Signal, f: &Formula) -> Result<Option<f64>> {
    check_coverage(signal, f, 0.0)?;
    Ok(settle(signal, f, 0, Mode::Witnessed)?.map(|k| k as f64 * signal.dt))
}

fn settle(s: &Signal, f: &Formula, k: usize, mode: Mode) -> Result<Option<usize>> {
    Ok(match f {
        Formula::True => Some(k),
        Formula::Atom(a) => (a.eval(&s.samples[k]) > 0.0).then_some(k),
        Formula::And(children) => {
            let mut latest = k;
            for c in children {
                match settle(s, c, k, mode)? {
                    Some(j) => latest = latest.max(j),
                    None => return Ok(None),
                }
            }
            Some(latest)
        }
        Formula::Eventually { interval, child } => {
            let (lo, hi) = s.window(k, *interval)?;
            for j in lo..=hi {
                if let Some(done) = settle(s, child, j, mode)? {
                    return Ok(Some(done));
                }
            }
            None
        }
        Formula::Always { interval, child } => {
            let (lo, hi) = s.window(k, *interval)?;
            let mut latest = k;
            for j in lo..=hi {
                match settle(s, child, j, mode)? {
                    Some(done) => latest = latest.max(done),
                    None => return Ok(None),
                }
            }
            match mode {
                Mode::Determined => Some(latest.max(hi)),
                Mode::Witnessed => Some(k),
            }
        }
        Formula::Until {
            interval,
            left,
            right,
        } => {
            let (lo, hi) = s.window(k, *interval)?;
            for j in k..=hi {
                if settle(s, left, j, mode)?.is_none() {
                    return Ok(None);
                }
                if j >= lo && settle(s, right, j, mode)?.is_some() {
                    return Ok(Some(j));
                }
            }
            None
        }
    })
}
