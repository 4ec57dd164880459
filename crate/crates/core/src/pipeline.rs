//! End-to-end orchestration: preprocessing, one-shot full-batch training
//! with Adam and early stopping, full-resolution stylization, and
//! abundance export.

use crate::diffgraph::Tape;
use crate::error::{Error, Result};
use crate::imageio::{resize_max_side, ImageTensor};
use crate::losses::{build_loss_graph, LossBreakdown, LossWeights};
use crate::matrix::Matrix;
use crate::model::{decode, encode, init_params, Branch, ModelParams, NUM_BASES};
use crate::wct::wct_transfer_opts;

/// Pixel rows per chunk when encoding full-resolution images.
const ENCODE_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub mu: f64,
    pub k: usize,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub train_max_side: usize,
    pub eps_wct: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            lambda: 0.01,
            mu: 1e-5,
            k: NUM_BASES,
            learning_rate: 1e-3,
            max_iters: 5000,
            patience: 200,
            min_rel_improvement: 1e-4,
            train_max_side: 256,
            eps_wct: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k != NUM_BASES {
            return Err(Error::Config(format!(
                "model is fixed at k = {NUM_BASES} bases, got k = {}",
                self.k
            )));
        }
        if self.alpha < 0.0 || self.lambda < 0.0 || self.mu < 0.0 {
            return Err(Error::Config(
                "alpha, lambda, mu must be non-negative".into(),
            ));
        }
        if self.eps_wct <= 0.0 {
            return Err(Error::Config(format!(
                "eps_wct must be positive, got {}",
                self.eps_wct
            )));
        }
        if self.train_max_side < 1 || self.max_iters < 1 {
            return Err(Error::Config(
                "train_max_side and max_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            lambda: self.lambda,
            mu: self.mu,
        }
    }
}

/// A trained model plus everything needed to reproduce or reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub content_means: [f64; 3],
    pub style_means: [f64; 3],
    pub final_loss: LossBreakdown,
    pub iterations: usize,
}

/// Unfold H x W x 3 into (H*W) x 3, row index y*W + x.
pub fn unfold(img: &ImageTensor) -> Matrix {
    Matrix::from_vec(img.num_pixels(), 3, img.values().to_vec())
}

/// Fold a pixel matrix back into an image, clamping into [0,1].
pub fn fold_clamped(pixels: &Matrix, height: usize, width: usize) -> ImageTensor {
    assert_eq!(pixels.rows(), height * width);
    assert_eq!(pixels.cols(), 3);
    let values = pixels.values().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    ImageTensor::new(height, width, values)
}

/// Unfold and subtract each channel's own mean; returns the means for
/// later re-addition.
pub fn preprocess(img: &ImageTensor) -> (Matrix, [f64; 3]) {
    let mut m = unfold(img);
    let means = m.col_means();
    let mean_arr = [means.get(0, 0), means.get(0, 1), means.get(0, 2)];
    for i in 0..m.rows() {
        for (v, mean) in m.row_mut(i).iter_mut().zip(mean_arr) {
            *v -= mean;
        }
    }
    (m, mean_arr)
}

pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Matrix> = params
            .matrices()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update over every parameter matrix. `grads`
/// must follow the canonical parameter order.
pub fn adam_step(params: &mut ModelParams, grads: &[Matrix], state: &mut AdamState, lr: f64) {
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for ((target, grad), (m, v)) in params
        .matrices_mut()
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for ((p, &g), (m, v)) in target
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .zip(m.values_mut().iter_mut().zip(v.values_mut()))
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

fn is_single_color(img: &ImageTensor) -> bool {
    let first = img.pixel(0, 0);
    (0..img.height).all(|y| (0..img.width).all(|x| img.pixel(y, x) == first))
}

/// One-shot training on a content/style pair. Both images are downsampled
/// to the configured side, zero-centered, and optimized jointly with
/// full-batch Adam until the reconstruction error stalls. Returns the
/// parameters from the best-reconstruction iteration.
pub fn train(content: &ImageTensor, style: &ImageTensor, cfg: &TrainConfig) -> Result<Checkpoint> {
    train_traced(content, style, cfg, |_, _| {})
}

/// [`train`] with a per-iteration observer over the loss breakdown.
pub fn train_traced(
    content: &ImageTensor,
    style: &ImageTensor,
    cfg: &TrainConfig,
    mut trace: impl FnMut(usize, &LossBreakdown),
) -> Result<Checkpoint> {
    cfg.validate()?;
    for (name, img) in [("content", content), ("style", style)] {
        if is_single_color(img) {
            log::warn!("{name} image is a single flat color; training will be degenerate");
        }
    }
    let content_small = resize_max_side(content, cfg.train_max_side);
    let style_small = resize_max_side(style, cfg.train_max_side);
    let (x_content, content_means) = preprocess(&content_small);
    let (x_style, style_means) = preprocess(&style_small);
    let weights = cfg.weights();

    let mut params = init_params(cfg.seed);
    let mut adam = AdamState::new(&params);
    let mut best_recon = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_loss = None;
    let mut best_iter = 0;
    let mut stall = 0usize;
    let mut iterations = 0;

    for iter in 0..cfg.max_iters {
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape);
        let xc = tape.input(x_content.clone());
        let xs = tape.input(x_style.clone());
        let loss = build_loss_graph(&mut tape, &nodes, xc, xs, &weights)?;
        let bd = loss.breakdown(&tape);
        bd.check_finite(iter)?;
        trace(iter, &bd);
        iterations = iter + 1;

        // the breakdown describes the current parameters, pre-update
        if bd.recon_l21 < best_recon {
            let rel = (best_recon - bd.recon_l21) / best_recon.abs().max(f64::MIN_POSITIVE);
            if rel >= cfg.min_rel_improvement {
                stall = 0;
            } else {
                stall += 1;
            }
            best_recon = bd.recon_l21;
            best_params = params.clone();
            best_loss = Some(bd);
            best_iter = iter;
        } else {
            stall += 1;
        }
        if stall >= cfg.patience {
            log::info!(
                "early stop at iteration {iter}: no relative improvement >= {} for {} iterations (best recon {best_recon:.6} at iteration {best_iter})",
                cfg.min_rel_improvement,
                cfg.patience
            );
            break;
        }

        let adj = tape.backward(loss.total)?;
        let grads: Vec<Matrix> = nodes
            .ids()
            .iter()
            .zip(params.matrices())
            .map(|(&id, m)| adj.grad_or_zeros(id, m.rows(), m.cols()))
            .collect();
        adam_step(&mut params, &grads, &mut adam, cfg.learning_rate);
    }

    Ok(Checkpoint {
        params: best_params,
        config: cfg.clone(),
        content_means,
        style_means,
        final_loss: best_loss.expect("max_iters >= 1 guarantees one evaluation"),
        iterations,
    })
}

/// Encode a zero-mean pixel matrix in bounded-memory chunks; the encoder
/// is per-pixel, so chunking cannot change the result.
pub fn encode_abundance(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let p = x.rows();
    let mut out = Matrix::zeros(p, NUM_BASES);
    let mut start = 0;
    while start < p {
        let end = (start + ENCODE_CHUNK).min(p);
        let chunk = Matrix::from_vec(
            end - start,
            x.cols(),
            x.values()[start * x.cols()..end * x.cols()].to_vec(),
        );
        let act = encode(params, &chunk)?;
        for i in 0..end - start {
            out.row_mut(start + i).copy_from_slice(act.s.row(i));
        }
        start = end;
    }
    Ok(out)
}

fn check_compat(ckpt: &Checkpoint) -> Result<()> {
    if ckpt.config.k != NUM_BASES {
        return Err(Error::Checkpoint(format!(
            "checkpoint was configured for k = {}, this build supports k = {NUM_BASES}",
            ckpt.config.k
        )));
    }
    Ok(())
}

/// Stylize the content image: encode both full-resolution images against
/// their own means, match the content abundance distribution to the
/// style's with WCT, decode through the style branch, and re-center with
/// the style image's channel means.
pub fn stylize(
    ckpt: &Checkpoint,
    content: &ImageTensor,
    style: &ImageTensor,
    renormalize_wct: bool,
) -> Result<ImageTensor> {
    check_compat(ckpt)?;
    let (x_content, _) = preprocess(content);
    let (x_style, style_means) = preprocess(style);
    let s_content = encode_abundance(&ckpt.params, &x_content)?;
    let s_style = encode_abundance(&ckpt.params, &x_style)?;
    let s_transfer = wct_transfer_opts(
        &s_content,
        &s_style,
        ckpt.config.eps_wct,
        renormalize_wct,
    )?;
    let mut out = decode(&ckpt.params.decoder, Branch::Style, &s_transfer)?;
    for i in 0..out.rows() {
        for (v, mean) in out.row_mut(i).iter_mut().zip(style_means) {
            *v += mean;
        }
    }
    Ok(fold_clamped(&out, content.height, content.width))
}

/// Reconstruct an image through one decoder branch (no WCT); used for
/// reconstruction-quality checks.
pub fn reconstruct(ckpt: &Checkpoint, img: &ImageTensor, branch: Branch) -> Result<ImageTensor> {
    check_compat(ckpt)?;
    let (x, means) = preprocess(img);
    let s = encode_abundance(&ckpt.params, &x)?;
    let mut out = decode(&ckpt.params.decoder, branch, &s)?;
    for i in 0..out.rows() {
        for (v, mean) in out.row_mut(i).iter_mut().zip(means) {
            *v += mean;
        }
    }
    Ok(fold_clamped(&out, img.height, img.width))
}

/// Peak signal-to-noise ratio in dB between two equal-size images.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> f64 {
    assert_eq!((a.height, a.width), (b.height, b.width));
    let mse: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.values().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Per-basis abundance maps of one image: the raw simplex columns plus
/// per-column max-scaled copies ready to write as grayscale images.
pub struct AbundanceMaps {
    pub height: usize,
    pub width: usize,
    pub raw: Matrix,
    pub scaled: Vec<Vec<f64>>,
}

pub fn export_abundance(ckpt: &Checkpoint, img: &ImageTensor) -> Result<AbundanceMaps> {
    check_compat(ckpt)?;
    let (x, _) = preprocess(img);
    let raw = encode_abundance(&ckpt.params, &x)?;
    let mut scaled = Vec::with_capacity(NUM_BASES);
    for j in 0..NUM_BASES {
        let col: Vec<f64> = (0..raw.rows()).map(|i| raw.get(i, j)).collect();
        let max = col.iter().cloned().fold(0.0f64, f64::max);
        let col = if max > 0.0 {
            col.into_iter().map(|v| v / max).collect()
        } else {
            col
        };
        scaled.push(col);
    }
    Ok(AbundanceMaps {
        height: img.height,
        width: img.width,
        raw,
        scaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect())
    }

    #[test]
    fn preprocess_constant_gray() {
        let img = ImageTensor::filled(4, 4, 0.5);
        let (m, means) = preprocess(&img);
        assert_eq!(means, [0.5, 0.5, 0.5]);
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preprocess_centers_columns() {
        let img = rand_image(8, 6, 1);
        let (m, _) = preprocess(&img);
        for &v in m.col_means().values() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn fold_unfold_round_trip() {
        let img = rand_image(5, 7, 2);
        let folded = fold_clamped(&unfold(&img), 5, 7);
        assert_eq!(folded, img);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut params = init_params(1);
        let before = params.clone();
        let grads: Vec<Matrix> = params
            .matrices()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 1e-3);
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr_sign() {
        let mut params = init_params(2);
        let before = params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grads: Vec<Matrix> = params
            .matrices()
            .iter()
            .map(|m| {
                let vals = (0..m.rows() * m.cols())
                    .map(|_| {
                        let v: f64 = rng.gen_range(-1.0..1.0);
                        if v.abs() < 0.1 {
                            0.5
                        } else {
                            v
                        }
                    })
                    .collect();
                Matrix::from_vec(m.rows(), m.cols(), vals)
            })
            .collect();
        let mut state = AdamState::new(&params);
        let lr = 1e-3;
        adam_step(&mut params, &grads, &mut state, lr);
        for ((after, before), grad) in params
            .matrices()
            .iter()
            .zip(before.matrices())
            .zip(&grads)
        {
            for ((&a, &b), &g) in after
                .values()
                .iter()
                .zip(before.values())
                .zip(grad.values())
            {
                let step = a - b;
                // bias-corrected first step is -lr * g/|g| up to the eps term
                assert!((step + lr * g.signum()).abs() < 1e-6, "step {step} grad {g}");
            }
        }
    }

    #[test]
    fn adam_matches_scalar_two_step_trace() {
        // scalar oracle computed by hand for g = 0.3 then g = -0.1
        let lr = 0.01;
        let (g1, g2) = (0.3, -0.1);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut x = 1.0;
        let mut expect = Vec::new();
        for (t, g) in [(1, g1), (2, g2)] {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
            expect.push(x);
        }

        let mut params = init_params(0);
        params.critic.b2 = Matrix::from_vec(1, 1, vec![1.0]);
        let mut state = AdamState::new(&params);
        let zero_grads = |params: &ModelParams, g: f64| -> Vec<Matrix> {
            ModelParams::names()
                .iter()
                .zip(params.matrices())
                .map(|(&n, m)| {
                    if n == "critic.b2" {
                        Matrix::from_vec(1, 1, vec![g])
                    } else {
                        Matrix::zeros(m.rows(), m.cols())
                    }
                })
                .collect()
        };
        let grads = zero_grads(&params, g1);
        adam_step(&mut params, &grads, &mut state, lr);
        assert!((params.critic.b2.get(0, 0) - expect[0]).abs() < 1e-14);
        let grads = zero_grads(&params, g2);
        adam_step(&mut params, &grads, &mut state, lr);
        assert!((params.critic.b2.get(0, 0) - expect[1]).abs() < 1e-14);
    }

    #[test]
    fn train_is_deterministic() {
        let content = rand_image(8, 8, 4);
        let style = rand_image(8, 8, 5);
        let cfg = TrainConfig {
            max_iters: 25,
            ..TrainConfig::default()
        };
        let a = train(&content, &style, &cfg).unwrap();
        let b = train(&content, &style, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_rejects_wrong_k() {
        let cfg = TrainConfig {
            k: 4,
            ..TrainConfig::default()
        };
        let img = rand_image(4, 4, 6);
        assert!(matches!(train(&img, &img, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn reported_iterations_bounded_by_max() {
        let content = rand_image(8, 8, 7);
        let style = rand_image(8, 8, 8);
        let cfg = TrainConfig {
            max_iters: 40,
            ..TrainConfig::default()
        };
        let ckpt = train(&content, &style, &cfg).unwrap();
        assert!(ckpt.iterations <= 40);
    }

    #[test]
    fn stylize_shape_and_range() {
        let content = rand_image(10, 12, 9);
        let style = rand_image(8, 8, 10);
        let cfg = TrainConfig {
            max_iters: 20,
            ..TrainConfig::default()
        };
        let ckpt = train(&content, &style, &cfg).unwrap();
        let out = stylize(&ckpt, &content, &style, false).unwrap();
        assert_eq!((out.height, out.width), (10, 12));
        assert!(out.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn stylize_does_not_mutate_checkpoint() {
        let content = rand_image(6, 6, 11);
        let style = rand_image(6, 6, 12);
        let cfg = TrainConfig {
            max_iters: 10,
            ..TrainConfig::default()
        };
        let ckpt = train(&content, &style, &cfg).unwrap();
        let snapshot = ckpt.clone();
        let _ = stylize(&ckpt, &content, &style, false).unwrap();
        assert_eq!(ckpt, snapshot);
    }

    #[test]
    fn stylize_rejects_incompatible_k() {
        let content = rand_image(6, 6, 13);
        let style = rand_image(6, 6, 14);
        let cfg = TrainConfig {
            max_iters: 5,
            ..TrainConfig::default()
        };
        let mut ckpt = train(&content, &style, &cfg).unwrap();
        ckpt.config.k = 7;
        assert!(matches!(
            stylize(&ckpt, &content, &style, false),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn abundance_maps_count_scale_and_sum() {
        let content = rand_image(6, 6, 15);
        let style = rand_image(6, 6, 16);
        let cfg = TrainConfig {
            max_iters: 10,
            ..TrainConfig::default()
        };
        let ckpt = train(&content, &style, &cfg).unwrap();
        let maps = export_abundance(&ckpt, &content).unwrap();
        assert_eq!(maps.scaled.len(), NUM_BASES);
        for map in &maps.scaled {
            assert!(map.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        for i in 0..maps.raw.rows() {
            let sum: f64 = maps.raw.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn encode_chunking_is_transparent() {
        let params = init_params(17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let p = ENCODE_CHUNK + 37;
        let x = Matrix::from_vec(p, 3, (0..p * 3).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let chunked = encode_abundance(&params, &x).unwrap();
        let whole = encode(&params, &x).unwrap().s;
        assert_eq!(chunked, whole);
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let img = rand_image(4, 4, 19);
        assert!(psnr(&img, &img).is_infinite());
    }
}
