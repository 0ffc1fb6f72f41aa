//! Central finite differences against the analytic matching-loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use ssp_core::loss::{loss_grad_query, loss_matching};
use ssp_core::{FeatureMap, Mask, Prototype, PrototypeField, Role};

use crate::error::Result;

/// Components whose analytic gradient is smaller than this are skipped.
pub const SKIP_BELOW: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCase {
    pub fg: Prototype,
    pub bg: PrototypeField,
    pub features: FeatureMap,
    pub gt: Mask,
    pub temperature: f64,
}

/// Uniform features and prototypes in `[-1, 1)`, a random binary target and
/// a temperature in `[0.5, 5)`.
pub fn random_case(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> GradCase {
    let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let fg = Prototype::new(Role::Foreground, draw(c)).expect("finite");
    let bg = PrototypeField::new(c, h, w, draw(c * h * w)).expect("finite");
    let features = FeatureMap::new(c, h, w, draw(c * h * w)).expect("finite");
    let bits: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.5)).collect();
    GradCase {
        fg,
        bg,
        features,
        gt: Mask::from_bools(h, w, &bits).expect("shape"),
        temperature: rng.random_range(0.5..5.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseResult {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares every component of the analytic gradient with
/// `(L(x + h) - L(x - h)) / (x_+ - x_-)`, where `x_±` are the perturbed
/// values after rounding to `f32`.
pub fn check_case(case: &GradCase, step: f64) -> Result<CaseResult> {
    let analytic = loss_grad_query(
        &case.fg,
        &case.bg,
        &case.features,
        &case.gt,
        case.temperature,
    )?;
    let (c, h, w) = case.features.dims();
    let loss = |data: Vec<f32>| -> Result<f64> {
        let f = FeatureMap::new(c, h, w, data)?;
        Ok(loss_matching(
            &case.fg,
            &case.bg,
            &f,
            &case.gt,
            case.temperature,
        )?)
    };
    let base = case.features.data();
    let mut out = CaseResult {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (i, &g) in analytic.data.iter().enumerate() {
        if g.abs() < SKIP_BELOW {
            out.skipped += 1;
            continue;
        }
        let x = f64::from(base[i]);
        let (up, down) = ((x + step) as f32, (x - step) as f32);
        let mut data = base.to_vec();
        data[i] = up;
        let lp = loss(data.clone())?;
        data[i] = down;
        let lm = loss(data)?;
        let numeric = (lp - lm) / (f64::from(up) - f64::from(down));
        let rel = (g - numeric).abs() / g.abs().max(numeric.abs());
        out.max_rel_error = out.max_rel_error.max(rel);
        out.checked += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub shape: (usize, usize, usize),
    pub step: f64,
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn gradcheck(
    seed: u64,
    cases: usize,
    shape: (usize, usize, usize),
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = shape;
    let results = (0..cases)
        .map(|_| check_case(&random_case(&mut rng, c, h, w), step))
        .collect::<Result<Vec<_>>>()?;
    let max_rel_error = results
        .iter()
        .fold(0.0, |m, r| f64::max(m, r.max_rel_error));
    Ok(GradCheckReport {
        seed,
        shape,
        step,
        tolerance,
        passed: max_rel_error < tolerance,
        cases: results,
        max_rel_error,
    })
}
