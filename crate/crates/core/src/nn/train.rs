//! Teacher-forced training loop: Adam over mini-batches of clips.

use super::adam::{adam_step, AdamState};
use super::network::{backward, NetConfig, NetworkParams};
use super::scalar::Scalar;
use super::NnError;
use crate::frames::{pad_clip, Clip};
use crate::util::RngSeed;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Frames 0..j-1 are observation context; frames j..T-1 are targets.
    pub j: usize,
    pub seed: RngSeed,
}

/// Train a freshly initialized network. Clips may have different lengths;
/// each mini-batch is drawn as a window over a length-sorted order and
/// padded to the window maximum (never below J+1) by repeating last frames.
/// Deterministic in the seed: the parameter init and the batch-sampling
/// stream are fixed derived streams. Returns the parameters and the
/// per-iteration loss trace.
pub fn train<S: Scalar>(
    meta: NetConfig,
    clips: &[Clip],
    cfg: &TrainConfig,
) -> Result<(NetworkParams<S>, Vec<f64>), NnError> {
    train_with_progress(meta, clips, cfg, |_, _| {})
}

pub fn train_with_progress<S: Scalar>(
    meta: NetConfig,
    clips: &[Clip],
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(NetworkParams<S>, Vec<f64>), NnError> {
    if clips.is_empty() {
        return Err(NnError::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(NnError::Config("batch size must be >= 1".into()));
    }
    let longest = clips.iter().map(Clip::len).max().unwrap();
    if cfg.j == 0 || cfg.j >= longest {
        return Err(NnError::Config(format!(
            "need 1 <= J < T for the longest clip, got J={}, T={longest}",
            cfg.j
        )));
    }

    let mut params = NetworkParams::<S>::init(meta, cfg.seed.derive("init", 0))?;
    let mut adam = AdamState::new(&params);
    let mut batch_rng = cfg.seed.derive("batch", 0).rng();
    // Sorting by length keeps batch members close in length, so the padding
    // overhead of a batch stays near zero.
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.sort_by_key(|&i| (clips[i].len(), i));
    let mut trace = Vec::with_capacity(cfg.iterations);
    let lr = S::from_f64(cfg.lr);

    for it in 0..cfg.iterations {
        let start = batch_rng.random_range(0..order.len());
        let picks: Vec<usize> =
            (0..cfg.batch_size).map(|k| order[(start + k) % order.len()]).collect();
        let t_len = picks
            .iter()
            .map(|&i| clips[i].len())
            .max()
            .unwrap()
            .max(cfg.j + 1);
        let padded: Vec<Clip> = picks
            .iter()
            .map(|&i| pad_clip(&clips[i], t_len))
            .collect::<Result<_, _>>()
            .map_err(|e| NnError::Shape(e.to_string()))?;
        let pairs: Vec<(&Clip, &Clip)> = padded.iter().map(|c| (c, c)).collect();
        let (loss, grads) = backward(&params, &pairs, cfg.j)?;
        adam_step(&mut params, &grads, &mut adam, lr);
        trace.push(loss);
        progress(it, loss);
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{path_to_clip, PatchSpec};
    use crate::grid::{astar_oracle, gen_random_forest, sample_free_pair, OccupancyGrid};
    use crate::nn::network::OutputMode;

    fn overfit_clip() -> Clip {
        let g = gen_random_forest(8, 2, 2, RngSeed(3)).unwrap();
        let (s, t) = sample_free_pair(&g, 5.0, RngSeed(4)).unwrap();
        let path = astar_oracle(&g, &s, &t).unwrap();
        path_to_clip(&g, &[path], &[t], PatchSpec::new(3).unwrap()).unwrap()
    }

    fn meta8(output_mode: OutputMode) -> NetConfig {
        NetConfig {
            side: 8,
            dim: 2,
            in_channels: 3,
            hidden: 8,
            kernel: 3,
            layers: 4,
            output_mode,
        }
    }

    #[test]
    fn single_clip_overfit() {
        let clip = overfit_clip();
        assert!(clip.len() >= 4, "clip too short for the overfit setup");
        let cfg = TrainConfig {
            batch_size: 1,
            iterations: 2000,
            lr: 2e-3,
            j: 2,
            seed: RngSeed(11),
        };
        let (_, trace) = train::<f32>(meta8(OutputMode::FullFrame), &[clip], &cfg).unwrap();
        let best = trace.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(best < 0.05, "best loss {best} after {} iterations", trace.len());
        assert_eq!(trace.len(), cfg.iterations);
    }

    #[test]
    fn loss_trace_length_matches_iterations() {
        let clip = overfit_clip();
        let cfg = TrainConfig { batch_size: 2, iterations: 7, lr: 1e-3, j: 2, seed: RngSeed(1) };
        let (_, trace) = train::<f32>(meta8(OutputMode::FullFrame), &[clip], &cfg).unwrap();
        assert_eq!(trace.len(), 7);
    }

    #[test]
    fn deterministic_in_seed() {
        let clip = overfit_clip();
        let cfg = TrainConfig { batch_size: 1, iterations: 5, lr: 1e-3, j: 2, seed: RngSeed(21) };
        let meta = meta8(OutputMode::FullFrame);
        let (p1, t1) = train::<f32>(meta, std::slice::from_ref(&clip), &cfg).unwrap();
        let (p2, t2) = train::<f32>(meta, std::slice::from_ref(&clip), &cfg).unwrap();
        assert_eq!(t1, t2);
        for ((_, a), (_, b)) in p1.named_tensors().iter().zip(p2.named_tensors().iter()) {
            assert_eq!(a.data(), b.data());
        }
        let cfg2 = TrainConfig { seed: RngSeed(22), ..cfg };
        let (_, t3) = train::<f32>(meta, std::slice::from_ref(&clip), &cfg2).unwrap();
        assert_ne!(t1, t3);
    }

    #[test]
    fn prob_only_trains() {
        let clip = overfit_clip();
        let cfg =
            TrainConfig { batch_size: 1, iterations: 300, lr: 2e-3, j: 2, seed: RngSeed(31) };
        let (_, trace) = train::<f32>(meta8(OutputMode::ProbOnly), &[clip], &cfg).unwrap();
        let early: f64 = trace[..20].iter().sum::<f64>() / 20.0;
        let late: f64 = trace[trace.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(late < early * 0.5, "loss did not fall: {early} -> {late}");
    }

    #[test]
    fn pads_mixed_lengths_and_rejects_bad_j() {
        let clip = overfit_clip();
        let g = OccupancyGrid::new_free(8, 2).unwrap();
        let short = path_to_clip(
            &g,
            &[crate::grid::Path::new(vec![crate::grid::Cell::new2(0, 0)])],
            &[crate::grid::Cell::new2(0, 0)],
            PatchSpec::new(3).unwrap(),
        )
        .unwrap();
        let meta = meta8(OutputMode::FullFrame);
        let cfg = TrainConfig { batch_size: 2, iterations: 6, lr: 1e-3, j: 2, seed: RngSeed(0) };
        let (_, trace) = train::<f32>(meta, &[clip.clone(), short], &cfg).unwrap();
        assert_eq!(trace.len(), 6);
        assert!(trace.iter().all(|l| l.is_finite()));
        let bad_j = TrainConfig { j: clip.len(), ..cfg };
        assert!(train::<f32>(meta, &[clip], &bad_j).is_err());
        let no_clips: &[Clip] = &[];
        assert!(train::<f32>(meta, no_clips, &cfg).is_err());
    }
}
