//! Parameter store: every learnable tensor of one encoder and its output heads.

use rand_distr::{Distribution, StandardNormal};

use super::config::EncoderConfig;
use super::tensor::{Matrix, Real};
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `in × out`
    pub weight: Matrix<T>,
    /// `1 × out`
    pub bias: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Matrix<T>,
    pub beta: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub attn_out: Linear<T>,
    pub attn_norm: LayerNorm<T>,
    pub ff_in: Linear<T>,
    pub ff_out: Linear<T>,
    pub ff_norm: LayerNorm<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    /// `vocab × d_model`
    pub token_emb: Matrix<T>,
    /// `2 × d_model`
    pub segment_emb: Matrix<T>,
    pub emb_norm: LayerNorm<T>,
    pub layers: Vec<LayerParams<T>>,
}

/// Masked-token prediction: hidden state → vocabulary logits.
#[derive(Clone, Debug, PartialEq)]
pub struct MtpHead<T> {
    pub proj: Linear<T>,
}

/// Neighbouring-concept prediction: tanh pooler on `[CLS]`, then one logit.
#[derive(Clone, Debug, PartialEq)]
pub struct NcpHead<T> {
    pub pool: Linear<T>,
    pub out: Linear<T>,
}

/// Object-object output layer, `σ(ReLU(h·W_cls)·W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OoHead<T> {
    /// `d_model × d_model`
    pub w_cls: Matrix<T>,
    /// `d_model × 1`
    pub w: Matrix<T>,
}

/// Object-attribute output layer over two concatenated `[CLS]` states, `σ(ReLU([h1;h2]·W_cls)·W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OaHead<T> {
    /// `2·d_model × d_model`
    pub w_cls: Matrix<T>,
    /// `d_model × 1`
    pub w: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: EncoderConfig,
    pub encoder: EncoderParams<T>,
    pub mtp: MtpHead<T>,
    pub ncp: NcpHead<T>,
    pub oo: OoHead<T>,
    pub oa: OaHead<T>,
}

fn normal<T: Real>(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::from_f64c(z * std)
    })
}

impl<T: Real> Linear<T> {
    fn init(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: normal(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt()),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Linear {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: Matrix::zeros(1, self.bias.cols()),
        }
    }

    /// `x · W + b`
    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut y = x.matmul(&self.weight);
        y.add_row(&self.bias);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>, grad: &mut Linear<T>) -> Matrix<T> {
        grad.weight.add_tmatmul(x, dy);
        dy.add_col_sums_to(&mut grad.bias);
        dy.matmul_t(&self.weight)
    }

    fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl<T: Real> LayerNorm<T> {
    fn init(d: usize) -> Self {
        LayerNorm {
            gamma: Matrix::filled(1, d, T::one()),
            beta: Matrix::zeros(1, d),
        }
    }

    fn zeros_like(&self) -> Self {
        LayerNorm {
            gamma: Matrix::zeros(1, self.gamma.cols()),
            beta: Matrix::zeros(1, self.beta.cols()),
        }
    }

    fn cast<U: Real>(&self) -> LayerNorm<U> {
        LayerNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
        }
    }
}

impl<T: Real> LayerParams<T> {
    fn init(rng: &mut Rng, c: &EncoderConfig) -> Self {
        let d = c.d_model;
        LayerParams {
            query: Linear::init(rng, d, d),
            key: Linear::init(rng, d, d),
            value: Linear::init(rng, d, d),
            attn_out: Linear::init(rng, d, d),
            attn_norm: LayerNorm::init(d),
            ff_in: Linear::init(rng, d, c.d_ff),
            ff_out: Linear::init(rng, c.d_ff, d),
            ff_norm: LayerNorm::init(d),
        }
    }

    fn zeros_like(&self) -> Self {
        LayerParams {
            query: self.query.zeros_like(),
            key: self.key.zeros_like(),
            value: self.value.zeros_like(),
            attn_out: self.attn_out.zeros_like(),
            attn_norm: self.attn_norm.zeros_like(),
            ff_in: self.ff_in.zeros_like(),
            ff_out: self.ff_out.zeros_like(),
            ff_norm: self.ff_norm.zeros_like(),
        }
    }

    fn cast<U: Real>(&self) -> LayerParams<U> {
        LayerParams {
            query: self.query.cast(),
            key: self.key.cast(),
            value: self.value.cast(),
            attn_out: self.attn_out.cast(),
            attn_norm: self.attn_norm.cast(),
            ff_in: self.ff_in.cast(),
            ff_out: self.ff_out.cast(),
            ff_norm: self.ff_norm.cast(),
        }
    }
}

impl<T: Real> EncoderParams<T> {
    fn init(rng: &mut Rng, c: &EncoderConfig) -> Self {
        EncoderParams {
            token_emb: normal(rng, c.vocab_size, c.d_model, 0.02),
            segment_emb: normal(rng, 2, c.d_model, 0.02),
            emb_norm: LayerNorm::init(c.d_model),
            layers: (0..c.n_layers).map(|_| LayerParams::init(rng, c)).collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        EncoderParams {
            token_emb: Matrix::zeros(self.token_emb.rows(), self.token_emb.cols()),
            segment_emb: Matrix::zeros(2, self.segment_emb.cols()),
            emb_norm: self.emb_norm.zeros_like(),
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    fn cast<U: Real>(&self) -> EncoderParams<U> {
        EncoderParams {
            token_emb: self.token_emb.cast(),
            segment_emb: self.segment_emb.cast(),
            emb_norm: self.emb_norm.cast(),
            layers: self.layers.iter().map(LayerParams::cast).collect(),
        }
    }
}

impl<T: Real> OoHead<T> {
    pub fn init(rng: &mut Rng, d: usize) -> Self {
        OoHead {
            w_cls: normal(rng, d, d, 1.0 / (d as f64).sqrt()),
            w: normal(rng, d, 1, 1.0 / (d as f64).sqrt()),
        }
    }
}

impl<T: Real> OaHead<T> {
    pub fn init(rng: &mut Rng, d: usize) -> Self {
        OaHead {
            w_cls: normal(rng, 2 * d, d, 1.0 / (2.0 * d as f64).sqrt()),
            w: normal(rng, d, 1, 1.0 / (d as f64).sqrt()),
        }
    }
}

type Named<'a, T> = Vec<(String, &'a Matrix<T>)>;
type NamedMut<'a, T> = Vec<(String, &'a mut Matrix<T>)>;

fn push_linear<'a, T>(out: &mut Named<'a, T>, name: &str, l: &'a Linear<T>) {
    out.push((format!("{name}.weight"), &l.weight));
    out.push((format!("{name}.bias"), &l.bias));
}

fn push_linear_mut<'a, T>(out: &mut NamedMut<'a, T>, name: &str, l: &'a mut Linear<T>) {
    out.push((format!("{name}.weight"), &mut l.weight));
    out.push((format!("{name}.bias"), &mut l.bias));
}

fn push_norm<'a, T>(out: &mut Named<'a, T>, name: &str, l: &'a LayerNorm<T>) {
    out.push((format!("{name}.gamma"), &l.gamma));
    out.push((format!("{name}.beta"), &l.beta));
}

fn push_norm_mut<'a, T>(out: &mut NamedMut<'a, T>, name: &str, l: &'a mut LayerNorm<T>) {
    out.push((format!("{name}.gamma"), &mut l.gamma));
    out.push((format!("{name}.beta"), &mut l.beta));
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialisation: scaled normal weights (std `1/√fan_in`), small normal embeddings,
    /// zero biases, unit layer-norm scales.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.seed);
        let d = config.d_model;
        let encoder = EncoderParams::init(&mut rng, config);
        let mtp = MtpHead {
            proj: Linear::init(&mut rng, d, config.vocab_size),
        };
        let ncp = NcpHead {
            pool: Linear::init(&mut rng, d, d),
            out: Linear::init(&mut rng, d, 1),
        };
        let oo = OoHead::init(&mut rng, d);
        let oa = OaHead::init(&mut rng, d);
        Ok(ModelParams {
            config: config.clone(),
            encoder,
            mtp,
            ncp,
            oo,
            oa,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config.clone(),
            encoder: self.encoder.zeros_like(),
            mtp: MtpHead {
                proj: self.mtp.proj.zeros_like(),
            },
            ncp: NcpHead {
                pool: self.ncp.pool.zeros_like(),
                out: self.ncp.out.zeros_like(),
            },
            oo: OoHead {
                w_cls: Matrix::zeros(self.oo.w_cls.rows(), self.oo.w_cls.cols()),
                w: Matrix::zeros(self.oo.w.rows(), 1),
            },
            oa: OaHead {
                w_cls: Matrix::zeros(self.oa.w_cls.rows(), self.oa.w_cls.cols()),
                w: Matrix::zeros(self.oa.w.rows(), 1),
            },
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            encoder: self.encoder.cast(),
            mtp: MtpHead {
                proj: self.mtp.proj.cast(),
            },
            ncp: NcpHead {
                pool: self.ncp.pool.cast(),
                out: self.ncp.out.cast(),
            },
            oo: OoHead {
                w_cls: self.oo.w_cls.cast(),
                w: self.oo.w.cast(),
            },
            oa: OaHead {
                w_cls: self.oa.w_cls.cast(),
                w: self.oa.w.cast(),
            },
        }
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn named(&self) -> Named<'_, T> {
        let mut out = Vec::new();
        let e = &self.encoder;
        out.push(("encoder.token_emb".to_string(), &e.token_emb));
        out.push(("encoder.segment_emb".to_string(), &e.segment_emb));
        push_norm(&mut out, "encoder.emb_norm", &e.emb_norm);
        for (i, l) in e.layers.iter().enumerate() {
            let p = format!("encoder.layers.{i}");
            push_linear(&mut out, &format!("{p}.query"), &l.query);
            push_linear(&mut out, &format!("{p}.key"), &l.key);
            push_linear(&mut out, &format!("{p}.value"), &l.value);
            push_linear(&mut out, &format!("{p}.attn_out"), &l.attn_out);
            push_norm(&mut out, &format!("{p}.attn_norm"), &l.attn_norm);
            push_linear(&mut out, &format!("{p}.ff_in"), &l.ff_in);
            push_linear(&mut out, &format!("{p}.ff_out"), &l.ff_out);
            push_norm(&mut out, &format!("{p}.ff_norm"), &l.ff_norm);
        }
        push_linear(&mut out, "mtp.proj", &self.mtp.proj);
        push_linear(&mut out, "ncp.pool", &self.ncp.pool);
        push_linear(&mut out, "ncp.out", &self.ncp.out);
        out.push(("oo.w_cls".to_string(), &self.oo.w_cls));
        out.push(("oo.w".to_string(), &self.oo.w));
        out.push(("oa.w_cls".to_string(), &self.oa.w_cls));
        out.push(("oa.w".to_string(), &self.oa.w));
        out
    }

    /// Mutable counterpart of [`named`](Self::named), same order.
    pub fn named_mut(&mut self) -> NamedMut<'_, T> {
        let mut out = Vec::new();
        let e = &mut self.encoder;
        out.push(("encoder.token_emb".to_string(), &mut e.token_emb));
        out.push(("encoder.segment_emb".to_string(), &mut e.segment_emb));
        push_norm_mut(&mut out, "encoder.emb_norm", &mut e.emb_norm);
        for (i, l) in e.layers.iter_mut().enumerate() {
            let p = format!("encoder.layers.{i}");
            push_linear_mut(&mut out, &format!("{p}.query"), &mut l.query);
            push_linear_mut(&mut out, &format!("{p}.key"), &mut l.key);
            push_linear_mut(&mut out, &format!("{p}.value"), &mut l.value);
            push_linear_mut(&mut out, &format!("{p}.attn_out"), &mut l.attn_out);
            push_norm_mut(&mut out, &format!("{p}.attn_norm"), &mut l.attn_norm);
            push_linear_mut(&mut out, &format!("{p}.ff_in"), &mut l.ff_in);
            push_linear_mut(&mut out, &format!("{p}.ff_out"), &mut l.ff_out);
            push_norm_mut(&mut out, &format!("{p}.ff_norm"), &mut l.ff_norm);
        }
        push_linear_mut(&mut out, "mtp.proj", &mut self.mtp.proj);
        push_linear_mut(&mut out, "ncp.pool", &mut self.ncp.pool);
        push_linear_mut(&mut out, "ncp.out", &mut self.ncp.out);
        out.push(("oo.w_cls".to_string(), &mut self.oo.w_cls));
        out.push(("oo.w".to_string(), &mut self.oo.w));
        out.push(("oa.w_cls".to_string(), &mut self.oa.w_cls));
        out.push(("oa.w".to_string(), &mut self.oa.w));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.all_finite())
    }

    /// Set every tensor to zero.
    pub fn zero(&mut self) {
        for (_, m) in self.named_mut() {
            m.fill(T::zero());
        }
    }

    /// Replace the fine-tuning heads with fresh seeded values.
    pub fn reinit_task_heads(&mut self, seed: u64) {
        let mut rng = seeded(seed);
        let d = self.config.d_model;
        self.oo = OoHead::init(&mut rng, d);
        self.oa = OaHead::init(&mut rng, d);
    }

    /// Copy tensors by name from `other`; shapes must match.
    pub fn load_named(&mut self, other: &[(String, Matrix<T>)]) -> Result<()> {
        let mut mine = self.named_mut();
        if mine.len() != other.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                mine.len(),
                other.len()
            )));
        }
        for ((name, dst), (src_name, src)) in mine.iter_mut().zip(other) {
            if name != src_name || dst.shape() != src.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {src_name} {:?} does not fit {name} {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            **dst = src.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_config() {
        let mut c = EncoderConfig::new(12, 9);
        c.d_model = 8;
        c.n_heads = 2;
        c.d_ff = 16;
        c.n_layers = 1;
        let p = ModelParams::<f32>::init(&c).unwrap();
        let named = p.named();
        let shape = |n: &str| named.iter().find(|(k, _)| k == n).unwrap().1.shape();
        assert_eq!(shape("encoder.token_emb"), (12, 8));
        assert_eq!(shape("encoder.segment_emb"), (2, 8));
        assert_eq!(shape("encoder.layers.0.ff_in.weight"), (8, 16));
        assert_eq!(shape("mtp.proj.weight"), (8, 12));
        assert_eq!(shape("oo.w_cls"), (8, 8));
        assert_eq!(shape("oa.w_cls"), (16, 8));
        assert_eq!(shape("oa.w"), (8, 1));
        assert!(p.all_finite());
        let mut p2 = p.clone();
        assert_eq!(p2.named_mut().len(), named.len());
        // init is a pure function of the config
        assert_eq!(ModelParams::<f32>::init(&c).unwrap(), p);
    }
}
