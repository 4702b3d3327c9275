//! Model parameters: embeddings, per-layer attention/FFN/normalization
//! tensors (sandwich placement: one normalization before and one after
//! each sublayer's residual branch), and the output head. Every tensor
//! carries a freeze flag honored by gradient finalization and the
//! optimizer.

use rand::Rng as _;

use crate::config::ModelShape;
use crate::linalg::{Mat, Scalar};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub mat: Mat<F>,
    pub frozen: bool,
}

impl<F: Scalar> Tensor<F> {
    fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { mat: Mat::zeros(rows, cols), frozen: false }
    }

    fn randn(rows: usize, cols: usize, std: f64, rng: &mut rng::Rng) -> Self {
        let mut t = Tensor::zeros(rows, cols);
        for v in t.mat.data.iter_mut() {
            *v = F::from_f64(gauss(rng) * std);
        }
        t
    }

    fn ones(rows: usize, cols: usize) -> Self {
        let mut t = Tensor::zeros(rows, cols);
        for v in t.mat.data.iter_mut() {
            *v = F::ONE;
        }
        t
    }

    pub fn len(&self) -> usize {
        self.mat.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mat.data.is_empty()
    }
}

fn gauss(rng: &mut rng::Rng) -> f64 {
    // Box-Muller on the shared stream
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LnParams<F> {
    pub gain: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> LnParams<F> {
    fn init(d: usize) -> Self {
        LnParams { gain: Tensor::ones(1, d), bias: Tensor::zeros(1, d) }
    }
}

/// Fused attention projections: `w_qkv` is `d x 3d` with Q, K, V blocks
/// side by side; `w_o` is `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams<F> {
    pub w_qkv: Tensor<F>,
    pub b_qkv: Tensor<F>,
    pub w_o: Tensor<F>,
    pub b_o: Tensor<F>,
}

impl<F: Scalar> AttnParams<F> {
    fn init(d: usize, std: f64, rng: &mut rng::Rng) -> Self {
        AttnParams {
            w_qkv: Tensor::randn(d, 3 * d, std, rng),
            b_qkv: Tensor::zeros(1, 3 * d),
            w_o: Tensor::randn(d, d, std, rng),
            b_o: Tensor::zeros(1, d),
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.w_qkv.frozen = frozen;
        self.b_qkv.frozen = frozen;
        self.w_o.frozen = frozen;
        self.b_o.frozen = frozen;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub ln_attn_in: LnParams<F>,
    pub ln_attn_out: LnParams<F>,
    pub attn: AttnParams<F>,
    pub ln_ffn_in: LnParams<F>,
    pub ln_ffn_out: LnParams<F>,
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub shape: ModelShape,
    /// V x d token embedding table.
    pub tok_emb: Tensor<F>,
    /// 1D position table for the text stream (text, separators, BOS).
    pub text_pos: Tensor<F>,
    /// 2D image position tables; a cell's embedding is row + column.
    pub img_row: Tensor<F>,
    pub img_col: Tensor<F>,
    pub layers: Vec<LayerParams<F>>,
    /// d x V output head.
    pub head_w: Tensor<F>,
    pub head_b: Tensor<F>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn init(shape: &ModelShape, seed: u64) -> Self {
        assert_eq!(shape.d_model % shape.heads, 0, "d_model must divide into heads");
        let mut r = rng::seeded(seed);
        let d = shape.d_model;
        let std = shape.init_std;
        let layers = (0..shape.layers)
            .map(|_| LayerParams {
                ln_attn_in: LnParams::init(d),
                ln_attn_out: LnParams::init(d),
                attn: AttnParams::init(d, std, &mut r),
                ln_ffn_in: LnParams::init(d),
                ln_ffn_out: LnParams::init(d),
                w1: Tensor::randn(d, shape.ffn_mult * d, std, &mut r),
                b1: Tensor::zeros(1, shape.ffn_mult * d),
                w2: Tensor::randn(shape.ffn_mult * d, d, std, &mut r),
                b2: Tensor::zeros(1, d),
            })
            .collect();
        ModelParams {
            shape: shape.clone(),
            tok_emb: Tensor::randn(shape.vocab, d, std, &mut r),
            text_pos: Tensor::randn(shape.text_pos_slots, d, std, &mut r),
            img_row: Tensor::randn(shape.image_side_max, d, std, &mut r),
            img_col: Tensor::randn(shape.image_side_max, d, std, &mut r),
            layers,
            head_w: Tensor::randn(d, shape.vocab, std, &mut r),
            head_b: Tensor::zeros(1, shape.vocab),
        }
    }

    /// Same structure, all values zero; gradient accumulators.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_tensors_mut(|_, t| {
            for v in t.mat.data.iter_mut() {
                *v = F::ZERO;
            }
        });
        z
    }

    pub fn convert<T: Scalar>(&self) -> ModelParams<T> {
        let mut out = ModelParams::<T>::init(&self.shape, 0);
        let src = self.tensors();
        let mut i = 0;
        out.visit_tensors_mut(|name, t| {
            debug_assert_eq!(name, src[i].0);
            t.mat = src[i].1.mat.map_to::<T>();
            t.frozen = src[i].1.frozen;
            i += 1;
        });
        out
    }

    pub fn visit_tensors_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<F>)) {
        f("tok_emb", &mut self.tok_emb);
        f("text_pos", &mut self.text_pos);
        f("img_row", &mut self.img_row);
        f("img_col", &mut self.img_col);
        for (i, l) in self.layers.iter_mut().enumerate() {
            visit_layer_mut(i, l, &mut f);
        }
        f("head.w", &mut self.head_w);
        f("head.b", &mut self.head_b);
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut v: Vec<(String, &Tensor<F>)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("text_pos".into(), &self.text_pos),
            ("img_row".into(), &self.img_row),
            ("img_col".into(), &self.img_col),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (suffix, t) in layer_tensors(l) {
                v.push((format!("layer{i}.{suffix}"), t));
            }
        }
        v.push(("head.w".into(), &self.head_w));
        v.push(("head.b".into(), &self.head_b));
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.mat.all_finite())
    }

    /// Zero out gradient entries belonging to frozen tensors. `self` is
    /// the gradient structure; `params` supplies the flags.
    pub fn apply_freeze_mask(&mut self, params: &ModelParams<F>) {
        let flags: Vec<bool> = params.tensors().iter().map(|(_, t)| t.frozen).collect();
        let mut i = 0;
        self.visit_tensors_mut(|_, t| {
            if flags[i] {
                for v in t.mat.data.iter_mut() {
                    *v = F::ZERO;
                }
            }
            i += 1;
        });
    }

    pub fn freeze_all(&mut self) {
        self.visit_tensors_mut(|_, t| t.frozen = true);
    }
}

fn visit_layer_mut<F, G: FnMut(&str, &mut Tensor<F>)>(i: usize, l: &mut LayerParams<F>, f: &mut G) {
    f(&format!("layer{i}.ln_attn_in.gain"), &mut l.ln_attn_in.gain);
    f(&format!("layer{i}.ln_attn_in.bias"), &mut l.ln_attn_in.bias);
    f(&format!("layer{i}.attn.w_qkv"), &mut l.attn.w_qkv);
    f(&format!("layer{i}.attn.b_qkv"), &mut l.attn.b_qkv);
    f(&format!("layer{i}.attn.w_o"), &mut l.attn.w_o);
    f(&format!("layer{i}.attn.b_o"), &mut l.attn.b_o);
    f(&format!("layer{i}.ln_attn_out.gain"), &mut l.ln_attn_out.gain);
    f(&format!("layer{i}.ln_attn_out.bias"), &mut l.ln_attn_out.bias);
    f(&format!("layer{i}.ln_ffn_in.gain"), &mut l.ln_ffn_in.gain);
    f(&format!("layer{i}.ln_ffn_in.bias"), &mut l.ln_ffn_in.bias);
    f(&format!("layer{i}.ffn.w1"), &mut l.w1);
    f(&format!("layer{i}.ffn.b1"), &mut l.b1);
    f(&format!("layer{i}.ffn.w2"), &mut l.w2);
    f(&format!("layer{i}.ffn.b2"), &mut l.b2);
    f(&format!("layer{i}.ln_ffn_out.gain"), &mut l.ln_ffn_out.gain);
    f(&format!("layer{i}.ln_ffn_out.bias"), &mut l.ln_ffn_out.bias);
}

fn layer_tensors<F>(l: &LayerParams<F>) -> Vec<(&'static str, &Tensor<F>)> {
    vec![
        ("ln_attn_in.gain", &l.ln_attn_in.gain),
        ("ln_attn_in.bias", &l.ln_attn_in.bias),
        ("attn.w_qkv", &l.attn.w_qkv),
        ("attn.b_qkv", &l.attn.b_qkv),
        ("attn.w_o", &l.attn.w_o),
        ("attn.b_o", &l.attn.b_o),
        ("ln_attn_out.gain", &l.ln_attn_out.gain),
        ("ln_attn_out.bias", &l.ln_attn_out.bias),
        ("ln_ffn_in.gain", &l.ln_ffn_in.gain),
        ("ln_ffn_in.bias", &l.ln_ffn_in.bias),
        ("ffn.w1", &l.w1),
        ("ffn.b1", &l.b1),
        ("ffn.w2", &l.w2),
        ("ffn.b2", &l.b2),
        ("ln_ffn_out.gain", &l.ln_ffn_out.gain),
        ("ln_ffn_out.bias", &l.ln_ffn_out.bias),
    ]
}

/// Direct super-resolution parameters: a frozen base model shared by
/// encoder and decoder, plus trainable per-layer decoder attention
/// projections (initialized as copies of the base attention).
#[derive(Debug, Clone, PartialEq)]
pub struct DirectSrParams<F> {
    pub base: ModelParams<F>,
    pub decoder_attn: Vec<AttnParams<F>>,
}

impl<F: Scalar> DirectSrParams<F> {
    /// Freeze everything in the base and clone its attention stacks as
    /// the trainable decoder attention.
    pub fn from_pretrained(mut base: ModelParams<F>) -> Self {
        base.freeze_all();
        let decoder_attn = base
            .layers
            .iter()
            .map(|l| {
                let mut a = l.attn.clone();
                a.set_frozen(false);
                a
            })
            .collect();
        DirectSrParams { base, decoder_attn }
    }
}
