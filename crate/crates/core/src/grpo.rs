//! Group-relative policy objective: KL-penalised rewards, group-normalised
//! advantages, the clipped token-level surrogate and its micro-group mean.
//!
//! Values only; nothing here differentiates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub logp_new: f64,
    pub logp_old: f64,
    pub logp_ref: f64,
}

impl TokenRecord {
    pub fn new(logp_new: f64, logp_old: f64, logp_ref: f64) -> Self {
        TokenRecord {
            logp_new,
            logp_old,
            logp_ref,
        }
    }

    /// Importance ratio `π_new / π_old`.
    pub fn ratio(&self) -> f64 {
        (self.logp_new - self.logp_old).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: usize,
    pub rm_score: f64,
    pub tokens: Vec<TokenRecord>,
}

impl SampleScore {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Data(format!("sample {} has no tokens", self.id)));
        }
        if !self.rm_score.is_finite() {
            return Err(Error::Data(format!(
                "sample {} has a non-finite reward",
                self.id
            )));
        }
        for t in &self.tokens {
            if !(t.logp_new.is_finite() && t.logp_old.is_finite() && t.logp_ref.is_finite()) {
                return Err(Error::Data(format!(
                    "sample {} has a non-finite log-probability",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// `Σ_t (logp_new − logp_ref)`, the sequence log-ratio against the reference.
    pub fn ref_log_ratio(&self) -> f64 {
        self.tokens.iter().map(|t| t.logp_new - t.logp_ref).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// `(r − mean) / std`, population std.
    #[default]
    StdNorm,
    /// `r − mean`.
    MeanOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// `e^x − x − 1` with `x = logp_ref − logp_new`; never negative.
    #[default]
    K3,
    /// `logp_new − logp_ref`.
    LogDiff,
}

impl FromStr for AdvantageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std_norm" => Ok(AdvantageMode::StdNorm),
            "mean_only" => Ok(AdvantageMode::MeanOnly),
            _ => Err(Error::config(
                "advantage_mode",
                format!("expected std_norm|mean_only, got `{s}`"),
            )),
        }
    }
}

impl FromStr for KlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k3" => Ok(KlMode::K3),
            "logdiff" => Ok(KlMode::LogDiff),
            _ => Err(Error::config(
                "kl_mode",
                format!("expected k3|logdiff, got `{s}`"),
            )),
        }
    }
}

impl fmt::Display for AdvantageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdvantageMode::StdNorm => "std_norm",
            AdvantageMode::MeanOnly => "mean_only",
        })
    }
}

impl fmt::Display for KlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KlMode::K3 => "k3",
            KlMode::LogDiff => "logdiff",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub clip_eps: f64,
    pub beta: f64,
    pub advantage_mode: AdvantageMode,
    pub kl_mode: KlMode,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            clip_eps: 0.2,
            beta: 0.0,
            advantage_mode: AdvantageMode::StdNorm,
            kl_mode: KlMode::K3,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config("clip_eps", "must lie in (0, 1)"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("beta", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// `r_i = rm_i − β · Σ_t (logp_new − logp_ref)`.
pub fn compute_rewards(samples: &[SampleScore], beta: f64) -> Vec<f64> {
    samples
        .iter()
        .map(|s| {
            if beta == 0.0 {
                s.rm_score
            } else {
                s.rm_score - beta * s.ref_log_ratio()
            }
        })
        .collect()
}

/// Group-relative advantages. A group with no spread gets all zeros.
pub fn compute_advantages(rewards: &[f64], mode: AdvantageMode) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let centred: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    match mode {
        AdvantageMode::MeanOnly => centred,
        AdvantageMode::StdNorm => {
            let std = (centred.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
            let scale = rewards.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
            if std <= 4.0 * f64::EPSILON * scale || std == 0.0 {
                vec![0.0; rewards.len()]
            } else {
                centred.iter().map(|d| d / std).collect()
            }
        }
    }
}

/// Per-token KL penalty term.
pub fn kl_term(token: &TokenRecord, mode: KlMode) -> f64 {
    match mode {
        KlMode::K3 => {
            let x = token.logp_ref - token.logp_new;
            // e^x − 1 − x; exp_m1 keeps it accurate and nonnegative near 0
            (x.exp_m1() - x).max(0.0)
        }
        KlMode::LogDiff => token.logp_new - token.logp_ref,
    }
}

/// `min(λA, clip(λ, 1−ε, 1+ε)A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Token-mean of the penalised surrogate for one sample.
fn sample_objective(sample: &SampleScore, advantage: f64, cfg: &GrpoConfig) -> f64 {
    let total: f64 = sample
        .tokens
        .iter()
        .map(|t| {
            let surrogate = clipped_surrogate(t.ratio(), advantage, cfg.clip_eps);
            if cfg.beta == 0.0 {
                surrogate
            } else {
                surrogate - cfg.beta * kl_term(t, cfg.kl_mode)
            }
        })
        .sum();
    total / sample.tokens.len() as f64
}

/// Objective of one micro group: the mean over its samples of each sample's
/// token-mean surrogate.
pub fn micro_objective(group: &[SampleScore], advantages: &[f64], cfg: &GrpoConfig) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::Data("micro group is empty".into()));
    }
    if group.len() != advantages.len() {
        return Err(Error::Data(format!(
            "{} samples but {} advantages",
            group.len(),
            advantages.len()
        )));
    }
    let total: f64 = group
        .iter()
        .zip(advantages)
        .map(|(s, &a)| sample_objective(s, a, cfg))
        .sum();
    Ok(total / group.len() as f64)
}

/// Mean of the micro-group objectives.
pub fn aggregate_micro(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("no micro-group values".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Objective over the whole group, with advantages computed from it.
pub fn full_objective(samples: &[SampleScore], cfg: &GrpoConfig) -> Result<f64> {
    cfg.validate()?;
    let advantages = compute_advantages(&compute_rewards(samples, cfg.beta), cfg.advantage_mode);
    micro_objective(samples, &advantages, cfg)
}

/// Objective computed micro group by micro group. Advantages still come from
/// the whole group; `micro_size` must divide the group.
pub fn micro_batched_objective(
    samples: &[SampleScore],
    micro_size: usize,
    cfg: &GrpoConfig,
) -> Result<f64> {
    cfg.validate()?;
    if micro_size == 0 || !samples.len().is_multiple_of(micro_size) {
        return Err(Error::config(
            "micro_size",
            format!(
                "{micro_size} does not divide the group of {}",
                samples.len()
            ),
        ));
    }
    let advantages = compute_advantages(&compute_rewards(samples, cfg.beta), cfg.advantage_mode);
    let values: Vec<f64> = samples
        .chunks(micro_size)
        .zip(advantages.chunks(micro_size))
        .map(|(group, adv)| micro_objective(group, adv, cfg))
        .collect::<Result<_>>()?;
    aggregate_micro(&values)
}

fn data_rows<'a>(text: &'a str, header: &str) -> impl Iterator<Item = (usize, Vec<String>)> + 'a {
    let header = header.to_string();
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(move |(_, l)| !l.is_empty() && !l.starts_with('#') && *l != header)
        .map(|(n, l)| (n, l.split(',').map(|f| f.trim().to_string()).collect()))
}

fn parse_field<T: FromStr>(line: usize, what: &str, raw: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.parse().map_err(|e: T::Err| Error::Parse {
        line,
        message: format!("bad {what} `{raw}`: {e}"),
    })
}

/// Joins a per-token file (`sample_id,logp_new,logp_old,logp_ref`) with a
/// per-sample file (`sample_id,rm_score`). Samples come back in id order.
pub fn parse_scores(tokens_csv: &str, rewards_csv: &str) -> Result<Vec<SampleScore>> {
    let mut samples: BTreeMap<usize, SampleScore> = BTreeMap::new();
    for (line, fields) in data_rows(rewards_csv, "sample_id,rm_score") {
        if fields.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, got {}", fields.len()),
            });
        }
        let id = parse_field(line, "sample_id", &fields[0])?;
        let rm_score = parse_field(line, "rm_score", &fields[1])?;
        if samples
            .insert(
                id,
                SampleScore {
                    id,
                    rm_score,
                    tokens: Vec::new(),
                },
            )
            .is_some()
        {
            return Err(Error::Data(format!("sample {id} has more than one reward")));
        }
    }
    for (line, fields) in data_rows(tokens_csv, "sample_id,logp_new,logp_old,logp_ref") {
        if fields.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let id: usize = parse_field(line, "sample_id", &fields[0])?;
        let token = TokenRecord::new(
            parse_field(line, "logp_new", &fields[1])?,
            parse_field(line, "logp_old", &fields[2])?,
            parse_field(line, "logp_ref", &fields[3])?,
        );
        samples
            .get_mut(&id)
            .ok_or_else(|| Error::Data(format!("tokens for sample {id}, which has no reward")))?
            .tokens
            .push(token);
    }
    if samples.is_empty() {
        return Err(Error::Data("no samples".into()));
    }
    let samples: Vec<SampleScore> = samples.into_values().collect();
    for s in &samples {
        s.validate()?;
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(logp_new: f64, logp_old: f64, logp_ref: f64) -> SampleScore {
        SampleScore {
            id: 0,
            rm_score: 0.0,
            tokens: vec![TokenRecord::new(logp_new, logp_old, logp_ref)],
        }
    }

    fn cfg(clip_eps: f64, beta: f64) -> GrpoConfig {
        GrpoConfig {
            clip_eps,
            beta,
            ..GrpoConfig::default()
        }
    }

    #[test]
    fn rewards() {
        let mut s = one(-1.0, -1.0, -1.0);
        s.rm_score = 1.0;
        assert_eq!(compute_rewards(&[s.clone()], 0.1), vec![1.0]);
        s.rm_score = 2.0;
        s.tokens = vec![
            TokenRecord::new(-1.0, 0.0, -2.0),
            TokenRecord::new(-1.0, 0.0, -2.0),
        ];
        assert_eq!(compute_rewards(&[s.clone()], 0.5), vec![1.0]);
        assert_eq!(compute_rewards(&[s], 0.0), vec![2.0]);
    }

    #[test]
    fn advantages() {
        let a = compute_advantages(&[1.0, 2.0, 3.0, 4.0], AdvantageMode::StdNorm);
        let s = 1.25_f64.sqrt();
        for (x, want) in a.iter().zip([-1.5 / s, -0.5 / s, 0.5 / s, 1.5 / s]) {
            assert!((x - want).abs() < 1e-15);
        }
        assert!((a[0] + 1.3416).abs() < 1e-4);
        assert_eq!(
            compute_advantages(&[0.7; 3], AdvantageMode::StdNorm),
            vec![0.0; 3]
        );
        assert_eq!(
            compute_advantages(&[1.0, 3.0], AdvantageMode::MeanOnly),
            vec![-1.0, 1.0]
        );
        assert!(compute_advantages(&[], AdvantageMode::MeanOnly).is_empty());
    }

    #[test]
    fn surrogate_examples() {
        let c = cfg(0.2, 0.0);
        assert_eq!(
            micro_objective(&[one(-1.0, -1.0, -1.0)], &[1.0], &c).unwrap(),
            1.0
        );
        let up = micro_objective(&[one(2f64.ln() - 1.0, -1.0, -1.0)], &[1.0], &c).unwrap();
        assert!((up - 1.2).abs() < 1e-12);
        let down = micro_objective(&[one(0.5f64.ln() - 1.0, -1.0, -1.0)], &[-1.0], &c).unwrap();
        assert!((down + 0.8).abs() < 1e-12);
    }

    #[test]
    fn kl_terms() {
        let same = TokenRecord::new(-0.3, -0.3, -0.3);
        assert_eq!(kl_term(&same, KlMode::K3), 0.0);
        assert_eq!(kl_term(&same, KlMode::LogDiff), 0.0);
        let t = TokenRecord::new(-1.0, -1.0, -2.0);
        assert!((kl_term(&t, KlMode::K3) - ((-1f64).exp() + 1.0 - 1.0)).abs() < 1e-15);
        assert_eq!(kl_term(&t, KlMode::LogDiff), 1.0);
    }

    #[test]
    fn beta_penalty_applies_per_token_mean() {
        let s = SampleScore {
            id: 0,
            rm_score: 0.0,
            tokens: vec![
                TokenRecord::new(-1.0, -1.0, -1.0),
                TokenRecord::new(-1.0, -1.0, -3.0),
            ],
        };
        let mut c = cfg(0.2, 0.5);
        c.kl_mode = KlMode::LogDiff;
        // surrogate 1 per token; KL 0 and 2 → mean penalty 0.5 · 1
        assert!((micro_objective(&[s], &[1.0], &c).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn aggregate() {
        assert_eq!(aggregate_micro(&[1.0]).unwrap(), 1.0);
        assert_eq!(aggregate_micro(&[1.0, 3.0]).unwrap(), 2.0);
        assert!(aggregate_micro(&[]).is_err());
    }

    #[test]
    fn micro_matches_full_small() {
        let samples: Vec<SampleScore> = (0..4)
            .map(|i| SampleScore {
                id: i,
                rm_score: i as f64 * 0.3,
                tokens: (0..=i)
                    .map(|t| TokenRecord::new(-0.1 * t as f64, -0.2, -0.15))
                    .collect(),
            })
            .collect();
        let c = cfg(0.2, 0.04);
        let full = full_objective(&samples, &c).unwrap();
        for g in [1, 2, 4] {
            let micro = micro_batched_objective(&samples, g, &c).unwrap();
            assert!((micro - full).abs() <= 1e-12 * full.abs().max(1.0));
        }
        assert!(micro_batched_objective(&samples, 3, &c).is_err());
    }

    #[test]
    fn config_bounds() {
        assert!(cfg(0.0, 0.0).validate().is_err());
        assert!(cfg(1.0, 0.0).validate().is_err());
        assert!(cfg(0.2, -1.0).validate().is_err());
        assert!(cfg(0.2, 0.0).validate().is_ok());
    }

    #[test]
    fn score_files() {
        let tokens =
            "sample_id,logp_new,logp_old,logp_ref\n1,-0.5,-0.5,-0.5\n0,-1,-1,-1\n0,-2,-2,-2\n";
        let rewards = "sample_id,rm_score\n0,1.0\n1,0.0\n";
        let s = parse_scores(tokens, rewards).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tokens.len(), 2);
        assert_eq!(s[1].rm_score, 0.0);

        assert!(matches!(
            parse_scores(tokens, "sample_id,rm_score\n0,1\n"),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            parse_scores("0,-1,-1,-1\n", "0,1\n1,2\n"),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            parse_scores("0,x,-1,-1\n", "0,1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_scores("0,-1,-1\n", "0,1\n"),
            Err(Error::Parse { .. })
        ));
    }
}
