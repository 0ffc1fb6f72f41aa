//! Synthetic episodes with controllable object/background statistics.
//!
//! Every pixel feature is a unit vector. A class owns a centroid `mu`; each
//! image draws its own object centroid by displacing `mu` by
//! `fg_centroid_distance` along a random orthogonal direction and adding
//! Gaussian jitter of norm about `cross_object_spread`. Object pixels
//! scatter around their image's centroid with spread
//! `intra_object_spread`. Background pixels come from `bg_cluster_count`
//! clusters shared by all images of an episode. Cluster directions are
//! orthonormal to `mu` and to each other, tilted towards `mu` by
//! `background_bias`, and shifted per image by the same cross-image jitter. `noise_sigma` is isotropic noise on every pixel.
//!
//! Spreads are expressed as expected noise norms: a spread of `s` adds
//! `N(0, s^2 / C)` per channel. Vectors are normalized after noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssp_core::{FeatureMap, Mask, Shot};

use crate::episode::Episode;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub fg_centroid_distance: f64,
    pub intra_object_spread: f64,
    pub cross_object_spread: f64,
    pub bg_cluster_count: usize,
    pub background_bias: f64,
    pub noise_sigma: f64,
    pub classes: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            channels: 32,
            height: 24,
            width: 24,
            fg_centroid_distance: 1.0,
            intra_object_spread: 0.5,
            cross_object_spread: 0.3,
            bg_cluster_count: 4,
            background_bias: 0.5,
            noise_sigma: 0.3,
            classes: 20,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// All spreads, distance, noise and background tilt zero: every object
    /// pixel of every image in an episode equals the class centroid, and
    /// background clusters are orthogonal to it.
    pub fn zero_spread() -> Self {
        Self {
            fg_centroid_distance: 0.0,
            background_bias: 0.0,
            intra_object_spread: 0.0,
            cross_object_spread: 0.0,
            noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("channels, height and width must be positive".into());
        }
        if self.bg_cluster_count == 0 {
            return bad("bg_cluster_count must be at least 1".into());
        }
        if self.classes == 0 {
            return bad("classes must be at least 1".into());
        }
        for (name, v) in [
            ("fg_centroid_distance", self.fg_centroid_distance),
            ("intra_object_spread", self.intra_object_spread),
            ("cross_object_spread", self.cross_object_spread),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.background_bias.is_finite() {
            return bad("background_bias must be finite".into());
        }
        Ok(())
    }

    /// Overrides one field from text, e.g. `("noise_sigma", "0.1")`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut json = serde_json::to_value(&*self).expect("spec serializes");
        let fields = json.as_object_mut().expect("spec is an object");
        if !fields.contains_key(key) {
            return Err(HarnessError::InvalidSpec(format!("unknown key `{key}`")));
        }
        let parsed: serde_json::Value = serde_json::from_str(value.trim())
            .map_err(|_| HarnessError::InvalidSpec(format!("`{key}`: cannot parse `{value}`")))?;
        fields.insert(key.to_string(), parsed);
        let updated: SyntheticSpec = serde_json::from_value(json)
            .map_err(|e| HarnessError::InvalidSpec(format!("`{key}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn gaussian(rng: &mut ChaCha8Rng, c: usize, norm: f64) -> Vec<f64> {
    let scale = norm / (c as f64).sqrt();
    (0..c)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, c, 1.0);
        if v.iter().any(|&x| x != 0.0) {
            return normalize(v);
        }
    }
}

/// Unit vector orthogonal to every (orthonormal) vector in `basis`; an
/// unconstrained unit vector once the basis spans the space.
fn orthogonal_unit(rng: &mut ChaCha8Rng, c: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    if basis.len() < c {
        for _ in 0..16 {
            let mut v = gaussian(rng, c, 1.0);
            for b in basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
                return normalize(v);
            }
        }
    }
    random_unit(rng, c)
}

fn add(a: &[f64], b: &[f64], wb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + wb * y).collect()
}

fn class_centroid(spec: &SyntheticSpec, class_id: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_c1a5_5000_0000);
    rng.set_stream(u64::from(class_id));
    random_unit(&mut rng, spec.channels)
}

/// Object ellipse plus a Voronoi partition of the background into clusters.
/// Returns the object mask and a cluster index per pixel.
fn layout(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> (Vec<bool>, Vec<usize>) {
    let (h, w) = (spec.height, spec.width);
    let (hf, wf) = (h as f64, w as f64);
    let cy = rng.random_range(0.3..=0.7) * hf;
    let cx = rng.random_range(0.3..=0.7) * wf;
    let ry = rng.random_range(0.2..=0.35) * hf;
    let rx = rng.random_range(0.2..=0.35) * wf;
    let centre = ((cy as usize).min(h - 1), (cx as usize).min(w - 1));
    let object: Vec<bool> = (0..h * w)
        .map(|p| {
            let (y, x) = (p / w, p % w);
            let dy = (y as f64 + 0.5 - cy) / ry;
            let dx = (x as f64 + 0.5 - cx) / rx;
            dy * dy + dx * dx <= 1.0 || (y, x) == centre
        })
        .collect();

    let k = spec.bg_cluster_count;
    let mut best = Vec::new();
    for _ in 0..32 {
        let seeds: Vec<(f64, f64)> = (0..k)
            .map(|_| (rng.random_range(0.0..hf), rng.random_range(0.0..wf)))
            .collect();
        let cluster: Vec<usize> = (0..h * w)
            .map(|p| {
                let (y, x) = ((p / w) as f64 + 0.5, (p % w) as f64 + 0.5);
                (0..k)
                    .min_by(|&a, &b| {
                        let da = (seeds[a].0 - y).powi(2) + (seeds[a].1 - x).powi(2);
                        let db = (seeds[b].0 - y).powi(2) + (seeds[b].1 - x).powi(2);
                        da.total_cmp(&db)
                    })
                    .expect("at least one cluster")
            })
            .collect();
        let mut seen = vec![false; k];
        for p in (0..h * w).filter(|&p| !object[p]) {
            seen[cluster[p]] = true;
        }
        best = cluster;
        if seen.iter().all(|&s| s) {
            break;
        }
    }
    (object, best)
}

struct Scene<'a> {
    spec: &'a SyntheticSpec,
    mu: Vec<f64>,
    backgrounds: Vec<Vec<f64>>,
}

impl Scene<'_> {
    fn image(&self, rng: &mut ChaCha8Rng) -> (FeatureMap, Mask) {
        let s = self.spec;
        let c = s.channels;
        let shift = orthogonal_unit(rng, c, std::slice::from_ref(&self.mu));
        let jitter = gaussian(rng, c, s.cross_object_spread);
        let object_centre = normalize(add(
            &add(&self.mu, &shift, s.fg_centroid_distance),
            &jitter,
            1.0,
        ));
        let bg_centres: Vec<Vec<f64>> = self
            .backgrounds
            .iter()
            .map(|b| normalize(add(b, &gaussian(rng, c, s.cross_object_spread), 1.0)))
            .collect();
        let (object, cluster) = layout(rng, s);
        let columns: Vec<Vec<f32>> = (0..s.height * s.width)
            .map(|p| {
                let v = if object[p] {
                    add(
                        &object_centre,
                        &gaussian(rng, c, s.intra_object_spread),
                        1.0,
                    )
                } else {
                    bg_centres[cluster[p]].clone()
                };
                let v = normalize(add(&v, &gaussian(rng, c, s.noise_sigma), 1.0));
                v.into_iter().map(|x| x as f32).collect()
            })
            .collect();
        let features = FeatureMap::from_columns(s.height, s.width, &columns)
            .expect("generated features are finite and well shaped");
        let mask = Mask::from_bools(s.height, s.width, &object).expect("mask shape");
        (features, mask)
    }
}

/// One episode; `episode_id` selects an independent random stream.
pub fn generate_indexed(spec: &SyntheticSpec, shots: usize, episode_id: u64) -> Result<Episode> {
    spec.validate()?;
    if shots == 0 {
        return Err(HarnessError::InvalidSpec("shots must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(episode_id);
    let class_id = rng.random_range(0..spec.classes);
    let mu = class_centroid(spec, class_id);
    // cluster directions are orthonormal to mu and to each other
    let mut basis = vec![mu.clone()];
    for _ in 0..spec.bg_cluster_count {
        let dir = orthogonal_unit(&mut rng, spec.channels, &basis);
        basis.push(dir);
    }
    let backgrounds = basis[1..]
        .iter()
        .map(|dir| normalize(add(dir, &mu, spec.background_bias)))
        .collect();
    let scene = Scene {
        spec,
        mu,
        backgrounds,
    };
    let supports = (0..shots)
        .map(|_| {
            let (f, m) = scene.image(&mut rng);
            Shot::new(f, m).expect("matching shapes")
        })
        .collect();
    let (query, query_gt) = scene.image(&mut rng);
    Episode::new(supports, query, query_gt, class_id, episode_id)
}

/// Episode 0 of the spec's seed.
pub fn generate_episode(spec: &SyntheticSpec, shots: usize) -> Result<Episode> {
    generate_indexed(spec, shots, 0)
}

/// Episodes `0..count`, generated in parallel; order and content do not
/// depend on the thread count.
pub fn suite(spec: &SyntheticSpec, count: usize, shots: usize) -> Result<Vec<Episode>> {
    (0..count as u64)
        .into_par_iter()
        .map(|id| generate_indexed(spec, shots, id))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_episode() {
        let spec = SyntheticSpec::default();
        let a = generate_indexed(&spec, 2, 5).unwrap();
        let b = generate_indexed(&spec, 2, 5).unwrap();
        assert_eq!(a, b);
        let c = generate_indexed(&spec, 2, 6).unwrap();
        assert_ne!(a.query, c.query);
        let other = SyntheticSpec { seed: 1, ..spec };
        assert_ne!(generate_indexed(&other, 2, 5).unwrap().query, a.query);
    }

    #[test]
    fn features_are_unit_vectors() {
        let e = generate_episode(&SyntheticSpec::default(), 1).unwrap();
        for p in 0..e.query.pixels() {
            let n: f64 = e
                .query
                .column(p)
                .iter()
                .map(|&v| f64::from(v).powi(2))
                .sum();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_spread_objects_are_identical() {
        let e = generate_indexed(&SyntheticSpec::zero_spread(), 3, 2).unwrap();
        let q = e.query_gt.active_pixels()[0];
        let reference = e.query.column(q);
        for shot in &e.supports {
            for p in shot.mask.active_pixels() {
                assert_eq!(shot.features.column(p), reference);
            }
        }
    }

    #[test]
    fn every_background_cluster_is_visible() {
        let spec = SyntheticSpec::zero_spread();
        for id in 0..20 {
            let e = generate_indexed(&spec, 1, id).unwrap();
            let mut distinct: Vec<Vec<u32>> = e
                .query_gt
                .inverted()
                .active_pixels()
                .into_iter()
                .map(|p| e.query.column(p).iter().map(|v| v.to_bits()).collect())
                .collect();
            distinct.sort();
            distinct.dedup();
            assert_eq!(distinct.len(), spec.bg_cluster_count, "episode {id}");
        }
    }

    #[test]
    fn tiny_images_still_have_an_object() {
        let spec = SyntheticSpec {
            height: 1,
            width: 1,
            channels: 1,
            ..SyntheticSpec::default()
        };
        let e = generate_episode(&spec, 1).unwrap();
        assert_eq!(e.query_gt.count_active(), 1);
    }

    #[test]
    fn set_overrides_and_validates() {
        let mut spec = SyntheticSpec::default();
        spec.set("noise_sigma", "0.05").unwrap();
        spec.set("height", "16").unwrap();
        assert_eq!((spec.noise_sigma, spec.height), (0.05, 16));
        assert!(spec.set("nope", "1").is_err());
        assert!(spec.set("noise_sigma", "-1").is_err());
        assert!(spec.set("height", "abc").is_err());
        assert_eq!(spec.noise_sigma, 0.05);
    }

    #[test]
    fn suite_is_ordered() {
        let spec = SyntheticSpec {
            height: 8,
            width: 8,
            ..SyntheticSpec::default()
        };
        let s = suite(&spec, 6, 1).unwrap();
        assert!(s.iter().enumerate().all(|(i, e)| e.episode_id == i as u64));
        assert_eq!(s[3], generate_indexed(&spec, 1, 3).unwrap());
    }
}
