//! Monte Carlo sampling of the prepare-and-measure protocol.
//!
//! This module deliberately shares nothing with the analytic post-selection
//! code beyond the parameter types: records are drawn directly, thresholds are
//! applied symbol by symbol and moments are accumulated with compensated sums.
//!
//! Batch `i` draws from the ChaCha20 stream `i` of a generator keyed by the
//! seed, and batches are merged in index order, so results do not depend on
//! how batches are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, ProtocolParams};
use crate::error::{check, Result};
use crate::postselection::{PostSelectedStats, PostSelectionRegion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub sample_count: u64,
    pub seed: u64,
    pub batch_size: u64,
    /// Rotate each symbol's record pairs by a random common angle before
    /// post-selection.
    pub symmetrise: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            sample_count: 1_000_000,
            seed: 42,
            batch_size: 65_536,
            symmetrise: false,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        check(
            self.sample_count >= 1,
            "sample_count",
            self.sample_count as f64,
            "must be >= 1",
        )?;
        check(
            self.batch_size >= 1,
            "batch_size",
            self.batch_size as f64,
            "must be >= 1",
        )?;
        Ok(())
    }
}

/// One symbol: Alice's amplitudes `(x, p)` and Bob's heterodyne records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub alice: [f64; 2],
    pub bob: [f64; 2],
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.carry);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Kept-ensemble sums for one batch.
#[derive(Debug, Clone, Default)]
struct Tally {
    symbols: u64,
    kept: u64,
    disagree: u64,
    aa: CompensatedSum,
    aa2: CompensatedSum,
    bb: CompensatedSum,
    bb2: CompensatedSum,
    ab: CompensatedSum,
    ab2: CompensatedSum,
}

impl Tally {
    fn push(&mut self, rec: &Record, r: &PostSelectionRegion) {
        self.symbols += 1;
        let inside = |v: f64, lo: f64, hi: f64| {
            let m = v.abs();
            m >= lo && m <= hi
        };
        let keep = rec.alice.iter().all(|&a| inside(a, r.la, r.ua)) && rec.bob.iter().all(|&b| inside(b, r.lb, r.ub));
        if !keep {
            return;
        }
        self.kept += 1;
        for (&a, &b) in rec.alice.iter().zip(&rec.bob) {
            let (aa, bb, ab) = (a * a, b * b, a * b);
            self.aa.add(aa);
            self.aa2.add(aa * aa);
            self.bb.add(bb);
            self.bb2.add(bb * bb);
            self.ab.add(ab);
            self.ab2.add(ab * ab);
            if (a < 0.0) != (b < 0.0) {
                self.disagree += 1;
            }
        }
    }

    fn merge(&mut self, o: &Tally) {
        self.symbols += o.symbols;
        self.kept += o.kept;
        self.disagree += o.disagree;
        self.aa.merge(&o.aa);
        self.aa2.merge(&o.aa2);
        self.bb.merge(&o.bb);
        self.bb2.merge(&o.bb2);
        self.ab.merge(&o.ab);
        self.ab2.merge(&o.ab2);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// Mean of i.i.d. draws from their first two power sums.
    fn mean(sum: f64, sum_sq: f64, n: u64) -> Self {
        if n == 0 {
            return Self {
                value: f64::NAN,
                std_error: f64::INFINITY,
            };
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            f64::INFINITY
        };
        Self {
            value: mean,
            std_error: (var / nf).sqrt(),
        }
    }

    /// Bernoulli rate; the error uses `(k + 1/2) / (n + 1)` so it stays
    /// positive when no or all trials succeed.
    fn rate(k: u64, n: u64) -> Self {
        if n == 0 {
            return Self {
                value: f64::NAN,
                std_error: f64::INFINITY,
            };
        }
        let nf = n as f64;
        let smooth = (k as f64 + 0.5) / (nf + 1.0);
        Self {
            value: k as f64 / nf,
            std_error: (smooth * (1.0 - smooth) / nf).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub samples: u64,
    pub kept: u64,
    pub p_ps: Estimate,
    pub var_a: Estimate,
    pub var_b: Estimate,
    pub cov: Estimate,
    pub p_e: Estimate,
    pub warning: Option<String>,
}

impl McReport {
    fn from_tally(t: &Tally) -> Self {
        // Quadratures of a kept symbol are independent under the AND rule,
        // so x and p samples are pooled.
        let n = 2 * t.kept;
        Self {
            samples: t.symbols,
            kept: t.kept,
            p_ps: Estimate::rate(t.kept, t.symbols),
            var_a: Estimate::mean(t.aa.value(), t.aa2.value(), n),
            var_b: Estimate::mean(t.bb.value(), t.bb2.value(), n),
            cov: Estimate::mean(t.ab.value(), t.ab2.value(), n),
            p_e: Estimate::rate(t.disagree, n),
            warning: (t.kept == 0).then(|| "no symbols kept by the post-selection region".to_string()),
        }
    }
}

fn batch_rng(seed: u64, batch: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    rng
}

fn draw_record<R: Rng>(rng: &mut R, sd_a: f64, gain: f64, sd_noise: f64) -> Record {
    let mut alice = [0.0; 2];
    let mut bob = [0.0; 2];
    for k in 0..2 {
        let a: f64 = sd_a * rng.sample::<f64, _>(StandardNormal);
        let n: f64 = sd_noise * rng.sample::<f64, _>(StandardNormal);
        alice[k] = a;
        bob[k] = gain * a + n;
    }
    Record { alice, bob }
}

fn rotate(rec: &Record, theta: f64) -> Record {
    let (s, c) = theta.sin_cos();
    let rot = |v: [f64; 2]| [c * v[0] - s * v[1], s * v[0] + c * v[1]];
    Record {
        alice: rot(rec.alice),
        bob: rot(rec.bob),
    }
}

fn uniform_angle<R: Rng>(rng: &mut R) -> f64 {
    rng.random::<f64>() * std::f64::consts::TAU
}

/// Draw `n` raw symbols: Alice's amplitudes with variance `V_A` per
/// quadrature, Bob's records with mean `sqrt(T/2)` times the amplitude and
/// conditional variance `(2 + xi) / 2`.
pub fn sample_records(p: &ProtocolParams, ch: &ChannelParams, n: usize, seed: u64) -> Vec<Record> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (sd_a, gain, sd_noise) = record_model(p, ch);
    (0..n).map(|_| draw_record(&mut rng, sd_a, gain, sd_noise)).collect()
}

fn record_model(p: &ProtocolParams, ch: &ChannelParams) -> (f64, f64, f64) {
    (p.va.sqrt(), (ch.t / 2.0).sqrt(), ((2.0 + ch.xi) / 2.0).sqrt())
}

/// Rotate every symbol's Alice pair and Bob pair by a common random angle,
/// independent between symbols.
pub fn symmetrise(records: &[Record], seed: u64) -> Vec<Record> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    records.iter().map(|rec| rotate(rec, uniform_angle(&mut rng))).collect()
}

/// Sample the protocol, post-select with the symbol AND rule and report the
/// kept-ensemble statistics.
pub fn simulate_pm(
    p: &ProtocolParams,
    ch: &ChannelParams,
    r: &PostSelectionRegion,
    cfg: &McConfig,
) -> Result<McReport> {
    cfg.validate()?;
    let (sd_a, gain, sd_noise) = record_model(p, ch);
    let batches = cfg.sample_count.div_ceil(cfg.batch_size);
    let tallies: Vec<Tally> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = batch_rng(cfg.seed, b);
            let start = b * cfg.batch_size;
            let len = cfg.batch_size.min(cfg.sample_count - start);
            let mut tally = Tally::default();
            for _ in 0..len {
                let rec = draw_record(&mut rng, sd_a, gain, sd_noise);
                let rec = if cfg.symmetrise {
                    rotate(&rec, uniform_angle(&mut rng))
                } else {
                    rec
                };
                tally.push(&rec, r);
            }
            tally
        })
        .collect();
    let total = tallies.iter().fold(Tally::default(), |mut acc, t| {
        acc.merge(t);
        acc
    });
    Ok(McReport::from_tally(&total))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifyStatus {
    Pass,
    Fail,
    NoData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub name: String,
    pub analytic: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub status: VerifyStatus,
    pub z_max: f64,
    pub scores: Vec<ZScore>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.status == VerifyStatus::Pass
    }
}

/// Compare analytic statistics with a Monte Carlo report.
pub fn verify(analytic: &PostSelectedStats, empirical: &McReport, z_max: f64) -> Verification {
    let pairs = [
        ("P_ps", analytic.p_ps, empirical.p_ps),
        ("V_a", analytic.var_a, empirical.var_a),
        ("V_b", analytic.var_b, empirical.var_b),
        ("C", analytic.cov, empirical.cov),
        ("p_e", analytic.p_e, empirical.p_e),
    ];
    let scores: Vec<ZScore> = pairs
        .iter()
        .map(|&(name, a, e)| {
            let diff = e.value - a;
            let z = if diff == 0.0 { 0.0 } else { diff / e.std_error };
            ZScore {
                name: name.to_string(),
                analytic: a,
                empirical: e.value,
                std_error: e.std_error,
                z,
            }
        })
        .collect();
    let status = if empirical.kept == 0 {
        VerifyStatus::NoData
    } else if scores.iter().all(|s| s.z.abs() <= z_max) {
        VerifyStatus::Pass
    } else {
        VerifyStatus::Fail
    };
    Verification { status, z_max, scores }
}
