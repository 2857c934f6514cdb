//! Per-pixel binary cross-entropy between a predicted and a target frame.

use super::network::BCE_EPS;
use super::NnError;
use crate::frames::Frame;

/// Mean over all (channel, cell) of −[t·ln p + (1−t)·ln(1−p)], with p
/// clamped to [1e-7, 1−1e-7]. Accumulated in 64-bit.
pub fn bce_loss(pred: &Frame, target: &Frame) -> Result<f64, NnError> {
    if pred.channels() != target.channels()
        || pred.side() != target.side()
        || pred.dim() != target.dim()
    {
        return Err(NnError::Shape(format!(
            "loss shapes differ: ({}, n={}, d={}) vs ({}, n={}, d={})",
            pred.channels(),
            pred.side(),
            pred.dim(),
            target.channels(),
            target.side(),
            target.dim()
        )));
    }
    let mut sum = 0.0f64;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let pf = (*p as f64).clamp(BCE_EPS, 1.0 - BCE_EPS);
        let tf = *t as f64;
        sum -= tf * pf.ln() + (1.0 - tf) * (1.0 - pf).ln();
    }
    Ok(sum / pred.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::RngSeed;
    use rand::Rng;

    fn frame_with(side: usize, channels: usize, f: impl Fn(usize) -> f32) -> Frame {
        let mut fr = Frame::zeros(channels, side, 2);
        for (i, v) in fr.data_mut().iter_mut().enumerate() {
            *v = f(i);
        }
        fr
    }

    #[test]
    fn uniform_half_gives_ln2() {
        let pred = frame_with(5, 3, |_| 0.5);
        let target = frame_with(5, 3, |i| (i % 2) as f32);
        let loss = bce_loss(&pred, &target).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let target = frame_with(4, 3, |i| (i % 3 == 0) as u8 as f32);
        let loss = bce_loss(&target.clone(), &target).unwrap();
        assert!(loss >= 0.0 && loss <= 1e-6, "loss {loss}");
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = RngSeed(5).rng();
        let pred = frame_with(6, 3, |_| 0.0);
        let mut pred = pred;
        for v in pred.data_mut() {
            *v = rng.random_range(0.0f32..1.0);
        }
        let mut target = frame_with(6, 3, |_| 0.0);
        for v in target.data_mut() {
            *v = if rng.random::<f32>() < 0.5 { 0.0 } else { 1.0 };
        }
        // Independent per-channel accumulation.
        let mut want = 0.0f64;
        for c in 0..3 {
            for (p, t) in pred.channel(c).iter().zip(target.channel(c)) {
                let pf = (*p as f64).clamp(1e-7, 1.0 - 1e-7);
                want += if *t > 0.5 { -pf.ln() } else { -(1.0 - pf).ln() };
            }
        }
        want /= (3 * 36) as f64;
        let got = bce_loss(&pred, &target).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let a = frame_with(4, 3, |_| 0.5);
        let b = frame_with(5, 3, |_| 0.5);
        assert!(bce_loss(&a, &b).is_err());
    }
}
