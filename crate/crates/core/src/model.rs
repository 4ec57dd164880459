//! Shared sparse simplex encoder, affine color-basis decoder, and the
//! per-pixel critic, with parameter initialization and forward passes.
//!
//! One encoder processes both the content and the style image. Its stick-
//! breaking head produces per-pixel abundance rows on the simplex. The
//! decoder is purely affine: both branches scale and shift one shared
//! color basis, so each branch's effective basis is `a * B + 1*b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffgraph::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Input channels per pixel.
pub const CHANNELS: usize = 3;
/// Number of color bases (abundance columns).
pub const NUM_BASES: usize = 10;
/// Critic input width: pixel channels plus abundance columns.
pub const CRITIC_IN: usize = CHANNELS + NUM_BASES;
/// Widths of the densely connected hidden layers.
pub const HIDDEN_WIDTHS: [usize; 4] = [3, 3, 3, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Content,
    Style,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// Dense-connected hidden layers; layer i consumes the raw pixel
    /// concatenated with all previous hidden outputs (inputs 3, 6, 9, 12).
    pub hidden_w: [Matrix; 4],
    pub hidden_b: [Matrix; 4],
    /// 15 -> 10 head, sigmoid.
    pub u_w: Matrix,
    pub u_b: Matrix,
    /// 15 -> 1 head, softplus.
    pub beta_w: Matrix,
    pub beta_b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// Shared basis, factored as two bias-free maps 10->10 then 10->3.
    pub basis_l1: Matrix,
    pub basis_l2: Matrix,
    pub content_scale: Matrix,
    pub content_shift: Matrix,
    pub style_scale: Matrix,
    pub style_shift: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub critic: CriticParams,
}

/// Encoder intermediates for one image.
#[derive(Debug, Clone)]
pub struct EncoderActivations {
    pub u: Matrix,
    pub beta: Matrix,
    pub v: Matrix,
    pub s: Matrix,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, values)
}

/// Glorot-uniform weights, zero biases; the beta-head bias starts at +1 so
/// the initial exponents sit comfortably above zero.
pub fn init_params(seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_width = CHANNELS;
    let mut hidden_w = Vec::with_capacity(4);
    let mut hidden_b = Vec::with_capacity(4);
    for width in HIDDEN_WIDTHS {
        hidden_w.push(glorot(&mut rng, in_width, width));
        hidden_b.push(Matrix::zeros(1, width));
        in_width += width;
    }
    let encoder = EncoderParams {
        hidden_w: hidden_w.try_into().unwrap(),
        hidden_b: hidden_b.try_into().unwrap(),
        u_w: glorot(&mut rng, in_width, NUM_BASES),
        u_b: Matrix::zeros(1, NUM_BASES),
        beta_w: glorot(&mut rng, in_width, 1),
        beta_b: Matrix::filled(1, 1, 1.0),
    };
    let decoder = DecoderParams {
        basis_l1: glorot(&mut rng, NUM_BASES, NUM_BASES),
        basis_l2: glorot(&mut rng, NUM_BASES, CHANNELS),
        content_scale: glorot(&mut rng, NUM_BASES, NUM_BASES),
        content_shift: Matrix::zeros(1, CHANNELS),
        style_scale: glorot(&mut rng, NUM_BASES, NUM_BASES),
        style_shift: Matrix::zeros(1, CHANNELS),
    };
    let critic = CriticParams {
        w1: glorot(&mut rng, CRITIC_IN, CRITIC_IN),
        b1: Matrix::zeros(1, CRITIC_IN),
        w2: glorot(&mut rng, CRITIC_IN, 1),
        b2: Matrix::zeros(1, 1),
    };
    ModelParams {
        encoder,
        decoder,
        critic,
    }
}

impl ModelParams {
    /// Canonical parameter order, shared by the optimizer, the gradient
    /// extraction, and the checkpoint format.
    pub fn names() -> &'static [&'static str] {
        &[
            "enc.h1_w", "enc.h1_b", "enc.h2_w", "enc.h2_b", "enc.h3_w", "enc.h3_b",
            "enc.h4_w", "enc.h4_b", "enc.u_w", "enc.u_b", "enc.beta_w", "enc.beta_b",
            "dec.basis_l1", "dec.basis_l2", "dec.content_scale", "dec.content_shift",
            "dec.style_scale", "dec.style_shift",
            "critic.w1", "critic.b1", "critic.w2", "critic.b2",
        ]
    }

    pub fn matrices(&self) -> Vec<&Matrix> {
        let e = &self.encoder;
        let d = &self.decoder;
        let c = &self.critic;
        vec![
            &e.hidden_w[0], &e.hidden_b[0], &e.hidden_w[1], &e.hidden_b[1],
            &e.hidden_w[2], &e.hidden_b[2], &e.hidden_w[3], &e.hidden_b[3],
            &e.u_w, &e.u_b, &e.beta_w, &e.beta_b,
            &d.basis_l1, &d.basis_l2, &d.content_scale, &d.content_shift,
            &d.style_scale, &d.style_shift,
            &c.w1, &c.b1, &c.w2, &c.b2,
        ]
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let ModelParams {
            encoder: e,
            decoder: d,
            critic: c,
        } = self;
        let [h1w, h2w, h3w, h4w] = &mut e.hidden_w;
        let [h1b, h2b, h3b, h4b] = &mut e.hidden_b;
        vec![
            h1w, h1b, h2w, h2b, h3w, h3b, h4w, h4b,
            &mut e.u_w, &mut e.u_b, &mut e.beta_w, &mut e.beta_b,
            &mut d.basis_l1, &mut d.basis_l2, &mut d.content_scale, &mut d.content_shift,
            &mut d.style_scale, &mut d.style_shift,
            &mut c.w1, &mut c.b1, &mut c.w2, &mut c.b2,
        ]
    }

    /// Register every parameter matrix on a tape, preserving [`Self::names`] order.
    pub fn register(&self, tape: &mut Tape) -> ParamNodes {
        let ids = self.matrices().iter().map(|m| tape.param((*m).clone())).collect();
        ParamNodes { ids }
    }
}

/// Tape node ids of the registered parameters, in canonical order.
pub struct ParamNodes {
    ids: Vec<NodeId>,
}

impl ParamNodes {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    fn hidden_w(&self, i: usize) -> NodeId {
        self.ids[2 * i]
    }
    fn hidden_b(&self, i: usize) -> NodeId {
        self.ids[2 * i + 1]
    }
    fn u_w(&self) -> NodeId {
        self.ids[8]
    }
    fn u_b(&self) -> NodeId {
        self.ids[9]
    }
    fn beta_w(&self) -> NodeId {
        self.ids[10]
    }
    fn beta_b(&self) -> NodeId {
        self.ids[11]
    }
    fn basis_l1(&self) -> NodeId {
        self.ids[12]
    }
    fn basis_l2(&self) -> NodeId {
        self.ids[13]
    }
    fn scale(&self, branch: Branch) -> NodeId {
        match branch {
            Branch::Content => self.ids[14],
            Branch::Style => self.ids[16],
        }
    }
    fn shift(&self, branch: Branch) -> NodeId {
        match branch {
            Branch::Content => self.ids[15],
            Branch::Style => self.ids[17],
        }
    }
    fn critic_w1(&self) -> NodeId {
        self.ids[18]
    }
    fn critic_b1(&self) -> NodeId {
        self.ids[19]
    }
    fn critic_w2(&self) -> NodeId {
        self.ids[20]
    }
    fn critic_b2(&self) -> NodeId {
        self.ids[21]
    }

    /// Decoder-only parameters (the regularized set).
    pub fn decoder_ids(&self) -> &[NodeId] {
        &self.ids[12..18]
    }
}

/// Encoder outputs on the tape.
pub struct EncodeNodes {
    pub u: NodeId,
    pub beta: NodeId,
    pub v: NodeId,
    pub s: NodeId,
}

/// Build the encoder forward graph for one pixel matrix node.
pub fn encode_graph(tape: &mut Tape, params: &ParamNodes, x: NodeId) -> Result<EncodeNodes> {
    if tape.value(x).cols() != CHANNELS {
        return Err(Error::shape(format!(
            "encoder input must have {CHANNELS} columns, got {}",
            tape.value(x).cols()
        )));
    }
    let mut features = x;
    for i in 0..4 {
        let lin = tape.matmul(features, params.hidden_w(i))?;
        let lin = tape.add_row_bias(lin, params.hidden_b(i))?;
        let h = tape.tanh(lin);
        features = tape.concat_cols(features, h)?;
    }
    let u_lin = tape.matmul(features, params.u_w())?;
    let u_lin = tape.add_row_bias(u_lin, params.u_b())?;
    let u = tape.sigmoid(u_lin);
    let b_lin = tape.matmul(features, params.beta_w())?;
    let b_lin = tape.add_row_bias(b_lin, params.beta_b())?;
    let beta = tape.softplus(b_lin);
    let v = kumaraswamy_graph(tape, u, beta)?;
    let s = tape.stick_break(v);
    Ok(EncodeNodes { u, beta, v, s })
}

/// v = 1 - (1-u)^(1/beta), with both u and v clamped into the open unit
/// interval. The v clamp matters: extreme exponents can round the power
/// to exactly 0 or 1, and a v of exactly 1 would zero a stick-breaking
/// denominator downstream.
pub fn kumaraswamy_graph(tape: &mut Tape, u: NodeId, beta: NodeId) -> Result<NodeId> {
    let (p, k) = tape.value(u).shape();
    let ones = tape.input(Matrix::filled(p, k, 1.0));
    let u_cl = tape.clamp_unit(u);
    let one_minus_u = tape.sub(ones, u_cl)?;
    let pow = tape.pow_inv(one_minus_u, beta)?;
    let v = tape.sub(ones, pow)?;
    Ok(tape.clamp_unit(v))
}

/// Build the decoder forward graph: s * (a * B) + row-broadcast shift.
pub fn decode_graph(
    tape: &mut Tape,
    params: &ParamNodes,
    branch: Branch,
    s: NodeId,
) -> Result<NodeId> {
    let basis = tape.matmul(params.basis_l1(), params.basis_l2())?;
    let scaled = tape.matmul(params.scale(branch), basis)?;
    let out = tape.matmul(s, scaled)?;
    tape.add_row_bias(out, params.shift(branch))
}

/// Build the critic graph: per-pixel score of the [pixel | abundance] row.
pub fn critic_graph(
    tape: &mut Tape,
    params: &ParamNodes,
    x: NodeId,
    s: NodeId,
) -> Result<NodeId> {
    if tape.value(x).rows() != tape.value(s).rows() {
        return Err(Error::shape(format!(
            "critic inputs must pair rows: {} pixels vs {} abundance rows",
            tape.value(x).rows(),
            tape.value(s).rows()
        )));
    }
    let z = tape.concat_cols(x, s)?;
    let h = tape.matmul(z, params.critic_w1())?;
    let h = tape.add_row_bias(h, params.critic_b1())?;
    let h = tape.softplus(h);
    let t = tape.matmul(h, params.critic_w2())?;
    tape.add_row_bias(t, params.critic_b2())
}

/// Plain (non-tape) Kumaraswamy inverse transform.
pub fn kumaraswamy_v(u: &Matrix, beta: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let u = tape.input(u.clone());
    let beta = tape.input(beta.clone());
    let v = kumaraswamy_graph(&mut tape, u, beta)?;
    Ok(tape.value(v).clone())
}

/// Plain stick-breaking of v rows into simplex rows.
pub fn stick_break(v: &Matrix) -> Matrix {
    let mut tape = Tape::new();
    let v = tape.input(v.clone());
    let s = tape.stick_break(v);
    tape.value(s).clone()
}

/// Forward-encode a zero-mean pixel matrix (no gradients retained).
pub fn encode(params: &ModelParams, x: &Matrix) -> Result<EncoderActivations> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let x = tape.input(x.clone());
    let out = encode_graph(&mut tape, &nodes, x)?;
    Ok(EncoderActivations {
        u: tape.value(out.u).clone(),
        beta: tape.value(out.beta).clone(),
        v: tape.value(out.v).clone(),
        s: tape.value(out.s).clone(),
    })
}

/// The branch's effective color basis `a * B + 1*b`, a 10x3 matrix.
pub fn effective_basis(dec: &DecoderParams, branch: Branch) -> Matrix {
    let basis = dec.basis_l1.matmul(&dec.basis_l2).expect("fixed shapes");
    let (scale, shift) = match branch {
        Branch::Content => (&dec.content_scale, &dec.content_shift),
        Branch::Style => (&dec.style_scale, &dec.style_shift),
    };
    let mut eb = scale.matmul(&basis).expect("fixed shapes");
    for i in 0..eb.rows() {
        for (o, &b) in eb.row_mut(i).iter_mut().zip(shift.row(0)) {
            *o += b;
        }
    }
    eb
}

/// Decode abundance rows through one branch: s * (a*B) + b per row.
pub fn decode(dec: &DecoderParams, branch: Branch, s: &Matrix) -> Result<Matrix> {
    if s.cols() != NUM_BASES {
        return Err(Error::shape(format!(
            "decode expects {NUM_BASES} abundance columns, got {}",
            s.cols()
        )));
    }
    let basis = dec.basis_l1.matmul(&dec.basis_l2)?;
    let (scale, shift) = match branch {
        Branch::Content => (&dec.content_scale, &dec.content_shift),
        Branch::Style => (&dec.style_scale, &dec.style_shift),
    };
    let scaled = scale.matmul(&basis)?;
    let mut out = s.matmul(&scaled)?;
    for i in 0..out.rows() {
        for (o, &b) in out.row_mut(i).iter_mut().zip(shift.row(0)) {
            *o += b;
        }
    }
    Ok(out)
}

/// Per-pixel critic scores for paired pixel/abundance rows.
pub fn critic_score(critic: &CriticParams, x: &Matrix, s: &Matrix) -> Result<Matrix> {
    if x.rows() != s.rows() {
        return Err(Error::shape(format!(
            "critic inputs must pair rows: {} pixels vs {} abundance rows",
            x.rows(),
            s.rows()
        )));
    }
    let mut tape = Tape::new();
    let w1 = tape.param(critic.w1.clone());
    let b1 = tape.param(critic.b1.clone());
    let w2 = tape.param(critic.w2.clone());
    let b2 = tape.param(critic.b2.clone());
    let x = tape.input(x.clone());
    let s = tape.input(s.clone());
    let z = tape.concat_cols(x, s)?;
    let h = tape.matmul(z, w1)?;
    let h = tape.add_row_bias(h, b1)?;
    let h = tape.softplus(h);
    let t = tape.matmul(h, w2)?;
    let t = tape.add_row_bias(t, b2)?;
    Ok(tape.value(t).clone())
}
