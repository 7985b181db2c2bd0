//! Seeded Gaussian-blob images. Valence follows the blob's horizontal
//! position and arousal its brightness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fer::{LabeledImageSet, CLASSES};
use super::{AnnotationTrack, FrameSequence, Partition, FRAME_MS, PIXELS, SIDE};
use crate::error::{param_err, Result};
use crate::nn::mix_seed;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const CENTER: f64 = (SIDE as f64 - 1.0) / 2.0;
const X_RANGE: f64 = 14.0;
const SIGMA: f64 = 5.0;
const BACKGROUND: f64 = 0.05;
const NOISE: f64 = 0.03;
/// Weight of the newest sample in the label smoother.
const SMOOTHING: f64 = 0.5;

fn render(rng: &mut ChaCha8Rng, cx: f64, cy: f64, amplitude: f64) -> Vec<u8> {
    let mut px = Vec::with_capacity(PIXELS);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            let v = BACKGROUND
                + amplitude * (-d2 / (2.0 * SIGMA * SIGMA)).exp()
                + rng.gen_range(-NOISE..NOISE);
            px.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    px
}

/// Smooth latent in [-1, 1]: a sum of slow sinusoids rescaled to unit peak.
fn latent(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..1.0),
                rng.gen_range(120.0..500.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let raw: Vec<f64> = (0..n)
        .map(|t| {
            waves
                .iter()
                .map(|&(a, p, phi)| a * (std::f64::consts::TAU * t as f64 / p + phi).sin())
                .sum()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    raw.into_iter().map(|v| v / peak).collect()
}

fn smooth(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut s = x[0];
    for &v in x {
        s += SMOOTHING * (v - s);
        out.push(s.clamp(-1.0, 1.0));
    }
    out
}

/// `n_subjects` training-partition subjects of `n_frames` frames each.
pub fn synth_dataset(
    seed: u64,
    n_subjects: usize,
    n_frames: usize,
) -> Result<Vec<(FrameSequence, AnnotationTrack)>> {
    if n_frames < 10 {
        return Err(param_err!(
            "synthetic subjects need at least 10 frames, got {n_frames}"
        ));
    }
    (0..n_subjects)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, s as u64));
            let pos = latent(&mut rng, n_frames);
            let energy = latent(&mut rng, n_frames);
            let frames = pos
                .iter()
                .zip(&energy)
                .map(|(&p, &e)| {
                    Some(render(
                        &mut rng,
                        CENTER + X_RANGE * p,
                        CENTER,
                        0.55 + 0.4 * e,
                    ))
                })
                .collect();
            let name = format!("synth_{s:02}");
            let ts = (0..n_frames as u64).map(|i| i * FRAME_MS).collect();
            let seq = FrameSequence::new(&name, Partition::Train, ts, frames)?;
            let track = AnnotationTrack::new(&name, smooth(&pos), smooth(&energy))?;
            Ok((seq, track))
        })
        .collect()
}

/// Seven-class blob images: the class fixes the horizontal position bin,
/// brightness and vertical offset are random. Labels cycle `0..7`.
pub fn synth_blob_classes<T: Scalar>(seed: u64, n_per_class: usize) -> Result<LabeledImageSet<T>> {
    if n_per_class == 0 {
        return Err(param_err!("need at least one image per class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
    let n = n_per_class * CLASSES;
    let mut data = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % CLASSES;
        let cx = CENTER - X_RANGE
            + 2.0 * X_RANGE * k as f64 / (CLASSES - 1) as f64
            + rng.gen_range(-1.0..1.0);
        let cy = CENTER + rng.gen_range(-4.0..4.0);
        let amplitude = rng.gen_range(0.3..0.95);
        let px = render(&mut rng, cx, cy, amplitude);
        data.extend(px.iter().map(|&p| T::lit(p as f64 / 255.0)));
        labels.push(k);
    }
    LabeledImageSet::new(
        Tensor::new(vec![n, SIDE, SIDE, 1], data)?,
        labels,
        Partition::Train,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synth_dataset(11, 2, 60).unwrap();
        assert_eq!(a, synth_dataset(11, 2, 60).unwrap());
        assert_ne!(a, synth_dataset(12, 2, 60).unwrap());
        for (s, t) in &a {
            assert_eq!(s.len(), 60);
            assert_eq!(s.missing(), 0);
            assert!(t
                .valence
                .iter()
                .chain(&t.arousal)
                .all(|v| (-1.0..=1.0).contains(v)));
        }
        assert!(synth_dataset(1, 1, 9).is_err());
    }

    #[test]
    fn blob_classes_balanced() {
        let s = synth_blob_classes::<f32>(5, 3).unwrap();
        assert_eq!(s.len(), 21);
        for k in 0..CLASSES {
            assert_eq!(s.labels.iter().filter(|&&l| l == k).count(), 3);
        }
        assert_eq!(s, synth_blob_classes::<f32>(5, 3).unwrap());
    }
}
