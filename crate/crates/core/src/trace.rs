//! Length traces: one prompt's group of `G` sampled completions, reduced to
//! their token lengths.
//!
//! A [`Trace`] stands in for real policy sampling. Generators draw lengths
//! from a small family of synthetic distributions, and the predictor
//! abstraction fills in `pred_len` the way a prefix-conditioned length
//! regressor would, without running one.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "id,true_len,pred_len";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub id: usize,
    /// Response tokens, excluding the prompt.
    pub true_len: u64,
    pub pred_len: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    /// Prefill tokens shared by every sample in the group.
    pub prompt_len: u64,
    pub samples: Vec<SequenceSpec>,
    /// Seed the trace was generated with, 0 when it came from elsewhere.
    pub seed: u64,
}

impl Trace {
    /// Builds a validated trace from true lengths, ids assigned in order.
    pub fn from_lengths(prompt_len: u64, lengths: &[u64]) -> Result<Self> {
        let samples = lengths
            .iter()
            .enumerate()
            .map(|(id, &true_len)| SequenceSpec {
                id,
                true_len,
                pred_len: None,
            })
            .collect();
        let trace = Trace {
            prompt_len,
            samples,
            seed: 0,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Data("trace must contain at least one sample".into()));
        }
        for (idx, s) in self.samples.iter().enumerate() {
            if s.id != idx {
                return Err(Error::Data(format!(
                    "sample ids must be contiguous from 0; found id {} at position {}",
                    s.id, idx
                )));
            }
            if s.true_len == 0 {
                return Err(Error::Data(format!("sample {} has true_len 0", s.id)));
            }
            if s.pred_len == Some(0) {
                return Err(Error::Data(format!("sample {} has pred_len 0", s.id)));
            }
        }
        Ok(())
    }

    /// Group size `G`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn true_lengths(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.true_len).collect()
    }

    /// Predicted lengths, or `None` if any sample lacks one.
    pub fn pred_lengths(&self) -> Option<Vec<u64>> {
        self.samples.iter().map(|s| s.pred_len).collect()
    }

    pub fn total_len(&self) -> u64 {
        self.samples.iter().map(|s| s.true_len).sum()
    }

    pub fn max_len(&self) -> u64 {
        self.samples.iter().map(|s| s.true_len).max().unwrap_or(0)
    }

    pub fn mean_len(&self) -> f64 {
        self.total_len() as f64 / self.len() as f64
    }

    /// Keeps the first `count` samples.
    pub fn truncated(&self, count: usize) -> Result<Trace> {
        if count == 0 || count > self.len() {
            return Err(Error::config(
                "count",
                format!("cannot take {count} samples from a trace of {}", self.len()),
            ));
        }
        let mut out = self.clone();
        out.samples.truncate(count);
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# prompt_len={} seed={}\n{}\n",
            self.prompt_len, self.seed, TRACE_HEADER
        );
        for s in &self.samples {
            match s.pred_len {
                Some(p) => out.push_str(&format!("{},{},{}\n", s.id, s.true_len, p)),
                None => out.push_str(&format!("{},{},\n", s.id, s.true_len)),
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Trace> {
        let mut prompt_len = 0;
        let mut seed = 0;
        let mut rows: Vec<(usize, SequenceSpec)> = Vec::new();
        let mut seen_header = false;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if seen_header || !rows.is_empty() {
                    return Err(parse_err(
                        line_no,
                        "metadata comment must precede the header",
                    ));
                }
                for token in meta.split_whitespace() {
                    let (key, value) = token.split_once('=').ok_or_else(|| {
                        parse_err(line_no, format!("expected key=value, got `{token}`"))
                    })?;
                    let value: u64 = value.parse().map_err(|_| {
                        parse_err(line_no, format!("`{key}` must be a nonnegative integer"))
                    })?;
                    match key {
                        "prompt_len" => prompt_len = value,
                        "seed" => seed = value,
                        other => {
                            return Err(parse_err(
                                line_no,
                                format!("unknown metadata key `{other}`"),
                            ))
                        }
                    }
                }
                continue;
            }
            if !seen_header {
                if line != TRACE_HEADER && line != "id,true_len" {
                    return Err(parse_err(
                        line_no,
                        format!("expected header `{TRACE_HEADER}`"),
                    ));
                }
                seen_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(parse_err(
                    line_no,
                    format!("expected 2 or 3 fields, got {}", fields.len()),
                ));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad id `{}`", fields[0])))?;
            let true_len: u64 = fields[1]
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad true_len `{}`", fields[1])))?;
            let pred_len = match fields.get(2) {
                None | Some(&"") => None,
                Some(p) => Some(
                    p.parse::<u64>()
                        .map_err(|_| parse_err(line_no, format!("bad pred_len `{p}`")))?,
                ),
            };
            rows.push((
                line_no,
                SequenceSpec {
                    id,
                    true_len,
                    pred_len,
                },
            ));
        }

        if !seen_header {
            return Err(parse_err(1, "missing header line"));
        }

        let mut seen = std::collections::HashSet::new();
        for (line_no, spec) in &rows {
            if !seen.insert(spec.id) {
                return Err(Error::Data(format!(
                    "duplicate id {} (line {line_no})",
                    spec.id
                )));
            }
        }
        let mut slots: Vec<Option<SequenceSpec>> = vec![None; rows.len()];
        for (line_no, spec) in rows {
            if spec.id >= slots.len() {
                return Err(Error::Data(format!(
                    "id {} out of range (line {line_no}); ids must be contiguous from 0",
                    spec.id
                )));
            }
            let id = spec.id;
            slots[id] = Some(spec);
        }
        let samples: Vec<SequenceSpec> = slots
            .into_iter()
            .enumerate()
            .map(|(id, s)| s.ok_or_else(|| Error::Data(format!("missing id {id}"))))
            .collect::<Result<_>>()?;

        let trace = Trace {
            prompt_len,
            samples,
            seed,
        };
        trace.validate()?;
        Ok(trace)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, trace.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Trace::from_csv(&text)
}

/// Synthetic response-length distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthDist {
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `short` with probability `p`, otherwise `long`.
    Bimodal {
        short: f64,
        long: f64,
        p: f64,
    },
}

impl LengthDist {
    pub fn validate(&self) -> Result<()> {
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, "must be finite"))
            }
        };
        match *self {
            LengthDist::LogNormal { mu, sigma } => {
                finite("mu", mu)?;
                finite("sigma", sigma)?;
                if sigma < 0.0 {
                    return Err(Error::config("sigma", "must be >= 0"));
                }
            }
            LengthDist::Uniform { lo, hi } => {
                finite("lo", lo)?;
                finite("hi", hi)?;
                if lo > hi {
                    return Err(Error::config(
                        "lo",
                        format!("lo ({lo}) must not exceed hi ({hi})"),
                    ));
                }
            }
            LengthDist::Bimodal { short, long, p } => {
                finite("l1", short)?;
                finite("l2", long)?;
                finite("p", p)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::config("p", "must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Coefficient of variation of the unclamped distribution.
    pub fn coefficient_of_variation(&self) -> f64 {
        match *self {
            LengthDist::LogNormal { sigma, .. } => ((sigma * sigma).exp() - 1.0).sqrt(),
            LengthDist::Uniform { lo, hi } => {
                let mean = (lo + hi) / 2.0;
                (hi - lo) / 12f64.sqrt() / mean
            }
            LengthDist::Bimodal { short, long, p } => {
                let mean = p * short + (1.0 - p) * long;
                let var = p * (short - mean).powi(2) + (1.0 - p) * (long - mean).powi(2);
                var.sqrt() / mean
            }
        }
    }

    /// LogNormal with the given mean and coefficient of variation.
    pub fn lognormal_with_mean_cv(mean: f64, cv: f64) -> Self {
        let sigma2 = (1.0 + cv * cv).ln();
        LengthDist::LogNormal {
            mu: mean.ln() - sigma2 / 2.0,
            sigma: sigma2.sqrt(),
        }
    }
}

impl fmt::Display for LengthDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LengthDist::LogNormal { mu, sigma } => write!(f, "lognormal:{mu}:{sigma}"),
            LengthDist::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            LengthDist::Bimodal { short, long, p } => write!(f, "bimodal:{short}:{long}:{p}"),
        }
    }
}

impl FromStr for LengthDist {
    type Err = Error;

    /// `lognormal:MU:SIGMA`, `uniform:LO:HI` or `bimodal:L1:L2:P`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let params: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::config("dist", format!("bad number `{p}` in `{s}`")))
            })
            .collect::<Result<_>>()?;
        let want = |n: usize| {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::config(
                    "dist",
                    format!("`{kind}` takes {n} parameters, got {}", params.len()),
                ))
            }
        };
        let dist = match kind {
            "lognormal" => {
                want(2)?;
                LengthDist::LogNormal {
                    mu: params[0],
                    sigma: params[1],
                }
            }
            "uniform" => {
                want(2)?;
                LengthDist::Uniform {
                    lo: params[0],
                    hi: params[1],
                }
            }
            "bimodal" => {
                want(3)?;
                LengthDist::Bimodal {
                    short: params[0],
                    long: params[1],
                    p: params[2],
                }
            }
            other => {
                return Err(Error::config(
                    "dist",
                    format!("unknown distribution `{other}`"),
                ))
            }
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Draws one unclamped real-valued length.
fn draw(dist: &LengthDist, rng: &mut ChaCha8Rng) -> Result<f64> {
    Ok(match *dist {
        LengthDist::LogNormal { mu, sigma } => LogNormal::new(mu, sigma)
            .map_err(|e| Error::config("sigma", e.to_string()))?
            .sample(rng),
        LengthDist::Uniform { lo, hi } => Uniform::new_inclusive(lo, hi)
            .map_err(|e| Error::config("lo", e.to_string()))?
            .sample(rng),
        LengthDist::Bimodal { short, long, p } => {
            if rng.random_bool(p) {
                short
            } else {
                long
            }
        }
    })
}

fn clamp_len(x: f64, max_len: u64) -> u64 {
    let r = x.round();
    if r < 1.0 {
        1
    } else if r >= max_len as f64 {
        max_len
    } else {
        r as u64
    }
}

pub fn generate_trace(
    dist: &LengthDist,
    count: usize,
    max_len: u64,
    prompt_len: u64,
    seed: u64,
) -> Result<Trace> {
    dist.validate()?;
    if count == 0 {
        return Err(Error::config("count", "must be >= 1"));
    }
    if max_len == 0 {
        return Err(Error::config("max_len", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    for id in 0..count {
        let true_len = clamp_len(draw(dist, &mut rng)?, max_len);
        samples.push(SequenceSpec {
            id,
            true_len,
            pred_len: None,
        });
    }
    Ok(Trace {
        prompt_len,
        samples,
        seed,
    })
}

/// Unbounded, deterministic stream of lengths resampled from a trace.
pub struct ResampleStream {
    lengths: Vec<u64>,
    rng: ChaCha8Rng,
}

impl ResampleStream {
    pub fn new(lengths: Vec<u64>, seed: u64) -> Self {
        ResampleStream {
            lengths,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_len(&mut self) -> u64 {
        let idx = self.rng.random_range(0..self.lengths.len());
        self.lengths[idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Exact lengths.
    Oracle,
    /// Multiplicative Gaussian relative error.
    Noisy,
    Constant,
    /// Predictions already present on the trace.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    /// Tokens decoded before the prediction is made.
    pub prefix_k: u64,
    pub noise_sigma: f64,
    pub constant_value: u64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            kind: PredictorKind::Oracle,
            prefix_k: 0,
            noise_sigma: 0.0,
            constant_value: 1,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn oracle() -> Self {
        Self::default()
    }

    pub fn noisy(sigma: f64, seed: u64) -> Self {
        PredictorConfig {
            kind: PredictorKind::Noisy,
            noise_sigma: sigma,
            seed,
            ..Self::default()
        }
    }

    /// Parses the CLI form: `oracle`, `noisy:SIGMA`, `constant:VALUE` or `file`.
    pub fn parse_kind(spec: &str) -> Result<Self> {
        let (kind, arg) = match spec.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (spec, None),
        };
        let mut cfg = Self::default();
        match (kind, arg) {
            ("oracle", None) => {}
            ("file", None) => cfg.kind = PredictorKind::File,
            ("noisy", Some(a)) => {
                cfg.kind = PredictorKind::Noisy;
                cfg.noise_sigma = a
                    .parse()
                    .map_err(|_| Error::config("noise_sigma", format!("bad number `{a}`")))?;
            }
            ("constant", Some(a)) => {
                cfg.kind = PredictorKind::Constant;
                cfg.constant_value = a
                    .parse()
                    .map_err(|_| Error::config("constant_value", format!("bad integer `{a}`")))?;
            }
            _ => {
                return Err(Error::config(
                    "predictor",
                    format!("unrecognized predictor `{spec}`"),
                ))
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::config("noise_sigma", "must be finite and >= 0"));
        }
        if self.constant_value == 0 {
            return Err(Error::config("constant_value", "must be >= 1"));
        }
        Ok(())
    }
}

/// splitmix64 finalizer; decorrelates per-sample seeds.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn sample_seed(seed: u64, id: u64) -> u64 {
    mix64(seed ^ mix64(id.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

pub fn predict_lengths(trace: &Trace, cfg: &PredictorConfig) -> Result<Trace> {
    cfg.validate()?;
    if cfg.kind == PredictorKind::File {
        let missing: Vec<String> = trace
            .samples
            .iter()
            .filter(|s| s.pred_len.is_none())
            .map(|s| s.id.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "file predictor requires pred_len for every sample; missing ids: {}",
                missing.join(",")
            )));
        }
    }
    let normal = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::config("noise_sigma", e.to_string()))?;

    let mut out = trace.clone();
    for s in &mut out.samples {
        if s.true_len <= cfg.prefix_k {
            // finished inside the prefix phase
            s.pred_len = Some(s.true_len);
            continue;
        }
        s.pred_len = Some(match cfg.kind {
            PredictorKind::Oracle => s.true_len,
            PredictorKind::Constant => cfg.constant_value,
            PredictorKind::File => s.pred_len.expect("checked above"),
            PredictorKind::Noisy => {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, s.id as u64));
                let e: f64 = normal.sample(&mut rng);
                let p = (s.true_len as f64 * (1.0 + e)).round();
                if p < 1.0 {
                    1
                } else {
                    p as u64
                }
            }
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_uniform_is_constant() {
        let t = generate_trace(&LengthDist::Uniform { lo: 7.0, hi: 7.0 }, 4, 1024, 0, 99).unwrap();
        assert_eq!(t.true_lengths(), vec![7, 7, 7, 7]);
    }

    #[test]
    fn bimodal_with_zero_p_always_long() {
        let dist = LengthDist::Bimodal {
            short: 10.0,
            long: 100.0,
            p: 0.0,
        };
        let t = generate_trace(&dist, 3, 1024, 0, 5).unwrap();
        assert_eq!(t.true_lengths(), vec![100, 100, 100]);
    }

    #[test]
    fn lengths_are_clamped() {
        let t = generate_trace(
            &LengthDist::Uniform {
                lo: -50.0,
                hi: -10.0,
            },
            5,
            8,
            0,
            1,
        )
        .unwrap();
        assert!(t.true_lengths().iter().all(|&l| l == 1));
        let t = generate_trace(
            &LengthDist::Uniform {
                lo: 500.0,
                hi: 900.0,
            },
            5,
            8,
            0,
            1,
        )
        .unwrap();
        assert!(t.true_lengths().iter().all(|&l| l == 8));
    }

    #[test]
    fn invalid_distributions_name_the_field() {
        let cases = [
            (
                LengthDist::LogNormal {
                    mu: 1.0,
                    sigma: -0.1,
                },
                "sigma",
            ),
            (LengthDist::Uniform { lo: 9.0, hi: 3.0 }, "lo"),
            (
                LengthDist::Bimodal {
                    short: 1.0,
                    long: 2.0,
                    p: 1.5,
                },
                "p",
            ),
        ];
        for (dist, field) in cases {
            match generate_trace(&dist, 3, 10, 0, 0) {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected config error for {dist:?}, got {other:?}"),
            }
        }
        assert!(generate_trace(&LengthDist::Uniform { lo: 1.0, hi: 2.0 }, 0, 10, 0, 0).is_err());
        assert!(generate_trace(&LengthDist::Uniform { lo: 1.0, hi: 2.0 }, 3, 0, 0, 0).is_err());
    }

    #[test]
    fn dist_parsing() {
        assert_eq!(
            "lognormal:5.0:0.6".parse::<LengthDist>().unwrap(),
            LengthDist::LogNormal {
                mu: 5.0,
                sigma: 0.6
            }
        );
        assert_eq!(
            "uniform:7:7".parse::<LengthDist>().unwrap(),
            LengthDist::Uniform { lo: 7.0, hi: 7.0 }
        );
        assert!("uniform:7".parse::<LengthDist>().is_err());
        assert!("gamma:1:2".parse::<LengthDist>().is_err());
        assert!("bimodal:1:2:x".parse::<LengthDist>().is_err());
    }

    #[test]
    fn mean_cv_parameterization() {
        let d = LengthDist::lognormal_with_mean_cv(186.0, 0.6);
        assert!((d.coefficient_of_variation() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn oracle_constant_and_zero_noise_predictors() {
        let t = Trace::from_lengths(0, &[5, 3, 4, 2]).unwrap();
        let p = predict_lengths(&t, &PredictorConfig::oracle()).unwrap();
        assert_eq!(p.pred_lengths().unwrap(), vec![5, 3, 4, 2]);

        let t = Trace::from_lengths(0, &[100]).unwrap();
        let p = predict_lengths(&t, &PredictorConfig::noisy(0.0, 17)).unwrap();
        assert_eq!(p.pred_lengths().unwrap(), vec![100]);

        let t = Trace::from_lengths(0, &[200]).unwrap();
        let cfg = PredictorConfig {
            kind: PredictorKind::Constant,
            constant_value: 50,
            ..PredictorConfig::default()
        };
        assert_eq!(
            predict_lengths(&t, &cfg).unwrap().pred_lengths().unwrap(),
            vec![50]
        );
    }

    #[test]
    fn short_samples_keep_exact_prediction_under_prefix() {
        let t = Trace::from_lengths(0, &[3, 40]).unwrap();
        let cfg = PredictorConfig {
            kind: PredictorKind::Constant,
            constant_value: 7,
            prefix_k: 4,
            ..PredictorConfig::default()
        };
        assert_eq!(
            predict_lengths(&t, &cfg).unwrap().pred_lengths().unwrap(),
            vec![3, 7]
        );
    }

    #[test]
    fn noisy_predictions_are_seeded_per_sample() {
        let t = Trace::from_lengths(0, &[100, 100, 100, 100]).unwrap();
        let a = predict_lengths(&t, &PredictorConfig::noisy(0.3, 1)).unwrap();
        let b = predict_lengths(&t, &PredictorConfig::noisy(0.3, 1)).unwrap();
        let c = predict_lengths(&t, &PredictorConfig::noisy(0.3, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pred_lengths(), c.pred_lengths());
        // same length, different ids: draws are not shared
        let p = a.pred_lengths().unwrap();
        assert!(p.iter().any(|&x| x != p[0]));
    }

    #[test]
    fn file_predictor_lists_missing_ids() {
        let mut t = Trace::from_lengths(0, &[5, 3, 4]).unwrap();
        t.samples[1].pred_len = Some(2);
        let cfg = PredictorConfig {
            kind: PredictorKind::File,
            ..PredictorConfig::default()
        };
        match predict_lengths(&t, &cfg) {
            Err(Error::Data(msg)) => assert!(msg.ends_with("0,2"), "{msg}"),
            other => panic!("{other:?}"),
        }
        t.samples[0].pred_len = Some(9);
        t.samples[2].pred_len = Some(1);
        assert_eq!(predict_lengths(&t, &cfg).unwrap(), t);
    }

    #[test]
    fn predictor_kind_parsing() {
        assert_eq!(
            PredictorConfig::parse_kind("oracle").unwrap().kind,
            PredictorKind::Oracle
        );
        let n = PredictorConfig::parse_kind("noisy:0.3").unwrap();
        assert_eq!((n.kind, n.noise_sigma), (PredictorKind::Noisy, 0.3));
        assert_eq!(
            PredictorConfig::parse_kind("constant:50")
                .unwrap()
                .constant_value,
            50
        );
        assert!(PredictorConfig::parse_kind("constant:0").is_err());
        assert!(PredictorConfig::parse_kind("noisy:-1").is_err());
        assert!(PredictorConfig::parse_kind("bert").is_err());
    }

    #[test]
    fn csv_format_is_exact() {
        let mut t = Trace::from_lengths(32, &[5, 3]).unwrap();
        t.samples[1].pred_len = Some(4);
        assert_eq!(
            t.to_csv(),
            "# prompt_len=32 seed=0\nid,true_len,pred_len\n0,5,\n1,3,4\n"
        );
        assert_eq!(Trace::from_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn csv_optional_pred_len() {
        let t = Trace::from_csv("id,true_len,pred_len\n0,5,\n1,3,4\n").unwrap();
        assert_eq!(t.samples[0].pred_len, None);
        assert_eq!(t.samples[1].pred_len, Some(4));
        assert_eq!(t.prompt_len, 0);
    }

    #[test]
    fn csv_rejects_duplicates_and_garbage() {
        match Trace::from_csv("id,true_len,pred_len\n0,5\n0,7\n") {
            Err(Error::Data(msg)) => assert!(msg.contains("duplicate id 0"), "{msg}"),
            other => panic!("{other:?}"),
        }
        match Trace::from_csv("id,true_len,pred_len\n0,5,\n1,x,\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Trace::from_csv("id,true_len,pred_len\n0,5,\n2,3,\n"),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            Trace::from_csv("0,5,\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Trace::from_csv("id,true_len,pred_len\n0,0,\n"),
            Err(Error::Data(_))
        ));
    }
}
