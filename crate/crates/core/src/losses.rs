//! Terms of the training objective and their weighted combination:
//! row-wise L2,1 reconstruction error, normalized-entropy sparsity on the
//! abundance rows, the negative-sample-free Jensen-Shannon MI objective,
//! and Frobenius weight decay on the decoder.

use crate::diffgraph::{softplus, NodeId, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{
    critic_graph, critic_score, decode_graph, encode_graph, Branch, CriticParams, ModelParams,
    ParamNodes,
};

/// Coefficients of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub mu: f64,
}

/// Per-term values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon_l21: f64,
    pub sparse_h: f64,
    pub mi: f64,
    pub weight_decay: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn check_finite(&self, iter: usize) -> Result<()> {
        for (term, value) in [
            ("recon_l21", self.recon_l21),
            ("sparse_h", self.sparse_h),
            ("mi", self.mi),
            ("weight_decay", self.weight_decay),
            ("total", self.total),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { iter, term, value });
            }
        }
        Ok(())
    }
}

/// Sum over rows of the Euclidean row norm.
pub fn l21(residual: &Matrix) -> f64 {
    (0..residual.rows())
        .map(|i| residual.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum()
}

/// Sum over rows of the Shannon entropy (natural log) of the L1-normalized
/// row. Zero entries contribute nothing; an all-zero row counts as 0.
pub fn entropy_h1(s: &Matrix) -> f64 {
    let mut total = 0.0;
    for i in 0..s.rows() {
        let row = s.row(i);
        let sigma: f64 = row.iter().sum();
        if sigma <= 0.0 {
            log::warn!("entropy_h1: all-zero row {i}, treating entropy as 0");
            continue;
        }
        let a: f64 = row
            .iter()
            .map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 })
            .sum();
        total += sigma.ln() - a / sigma;
    }
    total
}

/// Entropy sparsity over both images' abundances.
pub fn sparse_loss(s_c: &Matrix, s_s: &Matrix) -> f64 {
    entropy_h1(s_c) + entropy_h1(s_s)
}

/// Jensen-Shannon MI objective without negative samples: for each image,
/// the per-pixel mean of -softplus(-T(pixel, abundance)), summed over the
/// two images. Always <= 0; its supremum 0 is approached as scores grow.
pub fn mi_objective(
    critic: &CriticParams,
    i_c: &Matrix,
    s_c: &Matrix,
    i_s: &Matrix,
    s_s: &Matrix,
) -> Result<f64> {
    let term = |x: &Matrix, s: &Matrix| -> Result<f64> {
        let t = critic_score(critic, x, s)?;
        let n = t.rows() as f64;
        Ok(t.values().iter().map(|&v| -softplus(-v)).sum::<f64>() / n)
    };
    Ok(term(i_c, s_c)? + term(i_s, s_s)?)
}

/// Scalar nodes of the assembled objective graph.
pub struct LossNodes {
    pub s_content: NodeId,
    pub s_style: NodeId,
    pub recon: NodeId,
    pub sparse: NodeId,
    pub mi: NodeId,
    pub weight_decay: NodeId,
    pub total: NodeId,
}

fn sum_entries(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    let (r, c) = tape.value(x).shape();
    let ones_row = tape.input(Matrix::filled(1, r, 1.0));
    let ones_col = tape.input(Matrix::filled(c, 1, 1.0));
    let rowsum = tape.matmul(ones_row, x)?;
    tape.matmul(rowsum, ones_col)
}

/// Assemble the full objective over both zero-mean pixel matrices.
pub fn build_loss_graph(
    tape: &mut Tape,
    params: &ParamNodes,
    x_content: NodeId,
    x_style: NodeId,
    weights: &LossWeights,
) -> Result<LossNodes> {
    let enc_c = encode_graph(tape, params, x_content)?;
    let enc_s = encode_graph(tape, params, x_style)?;

    let recon_c = decode_graph(tape, params, Branch::Content, enc_c.s)?;
    let recon_s = decode_graph(tape, params, Branch::Style, enc_s.s)?;
    let res_c = tape.sub(recon_c, x_content)?;
    let res_s = tape.sub(recon_s, x_style)?;
    let l21_c = tape.row_l21(res_c);
    let l21_s = tape.row_l21(res_s);
    let recon = tape.scalar_combine(&[(l21_c, 1.0), (l21_s, 1.0)])?;

    let h_c = tape.entropy_h1(enc_c.s);
    let h_s = tape.entropy_h1(enc_s.s);
    let sparse = tape.scalar_combine(&[(h_c, 1.0), (h_s, 1.0)])?;

    let t_c = critic_graph(tape, params, x_content, enc_c.s)?;
    let t_s = critic_graph(tape, params, x_style, enc_s.s)?;
    let mi_c = tape.softplus_mean(t_c);
    let mi_s = tape.softplus_mean(t_s);
    let mi = tape.scalar_combine(&[(mi_c, 1.0), (mi_s, 1.0)])?;

    let mut wd_parts = Vec::new();
    for &id in params.decoder_ids() {
        let sq = tape.mul(id, id)?;
        wd_parts.push((sum_entries(tape, sq)?, 1.0));
    }
    let weight_decay = tape.scalar_combine(&wd_parts)?;

    let total = tape.scalar_combine(&[
        (recon, 1.0),
        (sparse, weights.alpha),
        (mi, -weights.lambda),
        (weight_decay, weights.mu),
    ])?;

    Ok(LossNodes {
        s_content: enc_c.s,
        s_style: enc_s.s,
        recon,
        sparse,
        mi,
        weight_decay,
        total,
    })
}

impl LossNodes {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            recon_l21: tape.scalar(self.recon),
            sparse_h: tape.scalar(self.sparse),
            mi: tape.scalar(self.mi),
            weight_decay: tape.scalar(self.weight_decay),
            total: tape.scalar(self.total),
        }
    }
}

/// Evaluate the full objective on zero-mean pixel matrices.
pub fn total_loss(
    params: &ModelParams,
    i_c: &Matrix,
    i_s: &Matrix,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let x_c = tape.input(i_c.clone());
    let x_s = tape.input(i_s.clone());
    let loss = build_loss_graph(&mut tape, &nodes, x_c, x_s, weights)?;
    Ok(loss.breakdown(&tape))
}
