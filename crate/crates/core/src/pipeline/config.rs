use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SspError};

/// What to do when a thresholded self-support estimate selects no pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
#[derive(Default)]
pub enum EmptyMaskFallback {
    /// Drop the self-support prototype; blending falls back to the support
    /// prototype alone.
    #[default]
    SupportOnly,
    /// Pool the `k` most confident pixels instead.
    TopK(usize),
}

impl fmt::Display for EmptyMaskFallback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmptyMaskFallback::SupportOnly => f.write_str("support_only"),
            EmptyMaskFallback::TopK(k) => write!(f, "topk:{k}"),
        }
    }
}

impl FromStr for EmptyMaskFallback {
    type Err = SspError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "support_only" {
            return Ok(EmptyMaskFallback::SupportOnly);
        }
        let k = s
            .strip_prefix("topk:")
            .or_else(|| s.strip_prefix("topk="))
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k > 0)
            .ok_or_else(|| {
                SspError::InvalidConfig(format!(
                    "empty_mask_fallback must be `support_only` or `topk:<k>` with k > 0, got `{s}`"
                ))
            })?;
        Ok(EmptyMaskFallback::TopK(k))
    }
}

impl TryFrom<String> for EmptyMaskFallback {
    type Error = SspError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EmptyMaskFallback> for String {
    fn from(f: EmptyMaskFallback) -> String {
        f.to_string()
    }
}

/// Thresholds, blending weights and loss weights of the matcher.
///
/// Defaults are the published settings; `temperature` scales cosine scores
/// before every two-way softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SspConfig {
    pub tau_fg: f64,
    pub tau_bg: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub refine_alpha1: f64,
    pub refine_alpha2: f64,
    pub refine_alpha3: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub temperature: f64,
    pub empty_mask_fallback: EmptyMaskFallback,
    /// Run the second self-support pass on top of the final matching.
    pub refine: bool,
}

impl Default for SspConfig {
    fn default() -> Self {
        Self {
            tau_fg: 0.7,
            tau_bg: 0.6,
            alpha1: 0.5,
            alpha2: 0.5,
            refine_alpha1: 0.5,
            refine_alpha2: 0.2,
            refine_alpha3: 0.3,
            beta1: 0.3,
            beta2: 0.7,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.2,
            temperature: 1.0,
            empty_mask_fallback: EmptyMaskFallback::SupportOnly,
            refine: false,
        }
    }
}

const SUM_TOLERANCE: f64 = 1e-9;

impl SspConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SspError::InvalidConfig(msg));
        for (name, v) in [("tau_fg", self.tau_fg), ("tau_bg", self.tau_bg)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("refine_alpha1", self.refine_alpha1),
            ("refine_alpha2", self.refine_alpha2),
            ("refine_alpha3", self.refine_alpha3),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!(
                    "{name} must be a finite non-negative number, got {v}"
                ));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(SspError::InvalidTemperature(self.temperature));
        }
        if (self.beta1 + self.beta2 - 1.0).abs() > SUM_TOLERANCE {
            return bad(format!(
                "beta1 + beta2 must equal 1, got {}",
                self.beta1 + self.beta2
            ));
        }
        let refine_sum = self.refine_alpha1 + self.refine_alpha2 + self.refine_alpha3;
        if (refine_sum - 1.0).abs() > SUM_TOLERANCE {
            return bad(format!("refine_alpha1..3 must sum to 1, got {refine_sum}"));
        }
        if let EmptyMaskFallback::TopK(0) = self.empty_mask_fallback {
            return bad("topk fallback needs k > 0".into());
        }
        Ok(())
    }

    /// Sets one field from its textual `key=value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value.trim().parse::<f64>().map_err(|_| {
                SspError::InvalidConfig(format!("{key} expects a number, got `{value}`"))
            })
        };
        match key {
            "tau_fg" => self.tau_fg = num()?,
            "tau_bg" => self.tau_bg = num()?,
            "alpha1" => self.alpha1 = num()?,
            "alpha2" => self.alpha2 = num()?,
            "refine_alpha1" => self.refine_alpha1 = num()?,
            "refine_alpha2" => self.refine_alpha2 = num()?,
            "refine_alpha3" => self.refine_alpha3 = num()?,
            "beta1" => self.beta1 = num()?,
            "beta2" => self.beta2 = num()?,
            "lambda1" => self.lambda1 = num()?,
            "lambda2" => self.lambda2 = num()?,
            "lambda3" => self.lambda3 = num()?,
            "temperature" => self.temperature = num()?,
            "empty_mask_fallback" => self.empty_mask_fallback = value.parse()?,
            "refine" => {
                self.refine = value.trim().parse().map_err(|_| {
                    SspError::InvalidConfig(format!("refine expects true/false, got `{value}`"))
                })?
            }
            _ => return Err(SspError::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}
