//! Per-modality MLP encoders, unimodal heads and the concatenation fusion head.

mod adam;
mod checkpoint;
mod train;

pub use adam::{step_decay_lr, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use train::{train_epochs, BatchConfig, EpochLog, TrainConfig, TrainLog};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::mixup::{make_mixtures, MixupPlan};
use crate::numgrad::{log_softmax_rows, Graph, Matrix, Tensor};

/// Nonlinearity between the two encoder layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// Makes the encoder affine; used to test that encoding commutes with mixing.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Input width of each modality.
    pub input_dims: Vec<usize>,
    /// Encoder hidden width.
    pub hidden: usize,
    /// Embedding width, shared by all modalities.
    pub embed: usize,
    /// Hidden width of every classifier head.
    pub classifier_hidden: usize,
    pub num_classes: usize,
    pub dropout: f64,
    #[serde(default)]
    pub encoder_activation: Activation,
}

impl ModelDims {
    pub fn num_modalities(&self) -> usize {
        self.input_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("classifier_hidden", self.classifier_hidden),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        if self.input_dims.is_empty() || self.input_dims.contains(&0) {
            return Err(Error::Parameter(format!(
                "input dims must be non-empty and positive, got {:?}",
                self.input_dims
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// `x · weight + bias`, weight stored `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    /// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights, zero bias.
    fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound));
        Self {
            weight,
            bias: Matrix::zeros(1, fan_out),
        }
    }
}

/// Two linear layers with a nonlinearity between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct M3colModel {
    dims: ModelDims,
    encoders: Vec<Mlp>,
    uni_heads: Vec<Mlp>,
    fusion_head: Mlp,
}

/// Leaf handles for every parameter of a model on one graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    encoders: Vec<BoundMlp>,
    uni_heads: Vec<BoundMlp>,
    fusion_head: BoundMlp,
}

#[derive(Debug, Clone, Copy)]
struct BoundMlp {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl BoundModel {
    /// Handles in the same order as [`M3colModel::parameters`].
    pub fn handles(&self) -> Vec<Tensor> {
        self.encoders
            .iter()
            .chain(&self.uni_heads)
            .chain(std::iter::once(&self.fusion_head))
            .flat_map(|m| [m.w1, m.b1, m.w2, m.b2])
            .collect()
    }

    /// Inverse of [`BoundModel::handles`] for a model with `num_modalities` modalities.
    pub fn from_handles(num_modalities: usize, handles: &[Tensor]) -> Result<Self> {
        let expected = 4 * (2 * num_modalities + 1);
        if handles.len() != expected {
            return Err(Error::Contract(format!(
                "{} parameter handles, expected {expected}",
                handles.len()
            )));
        }
        let mut mlps = handles.chunks(4).map(|c| BoundMlp {
            w1: c[0],
            b1: c[1],
            w2: c[2],
            b2: c[3],
        });
        let encoders = mlps.by_ref().take(num_modalities).collect();
        let uni_heads = mlps.by_ref().take(num_modalities).collect();
        let fusion_head = mlps.next().expect("length checked");
        Ok(Self {
            encoders,
            uni_heads,
            fusion_head,
        })
    }

    /// Parameter handles of modality `m`'s encoder.
    pub fn encoder_handles(&self, m: usize) -> [Tensor; 4] {
        let e = &self.encoders[m];
        [e.w1, e.b1, e.w2, e.b2]
    }
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    pub embeddings: Vec<Tensor>,
    /// Encoded mixtures, present when a plan was supplied.
    pub mixed: Option<Vec<Tensor>>,
    pub uni_logits: Vec<Tensor>,
    pub fused_logits: Tensor,
}

/// Class probabilities from an evaluation-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub fused: Matrix,
    pub unimodal: Vec<Matrix>,
}

impl Predictions {
    pub fn fused_labels(&self) -> Vec<usize> {
        self.fused.argmax_rows()
    }

    pub fn unimodal_labels(&self) -> Vec<Vec<usize>> {
        self.unimodal.iter().map(Matrix::argmax_rows).collect()
    }
}

impl M3colModel {
    /// Deterministic initialisation from `seed`.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = |rng: &mut ChaCha8Rng, a: usize, b: usize, c: usize| Mlp {
            first: Linear::init(a, b, rng),
            second: Linear::init(b, c, rng),
        };
        let encoders = dims
            .input_dims
            .iter()
            .map(|&d| mlp(&mut rng, d, dims.hidden, dims.embed))
            .collect();
        let uni_heads = (0..dims.num_modalities())
            .map(|_| mlp(&mut rng, dims.embed, dims.classifier_hidden, dims.num_classes))
            .collect();
        let fusion_head = mlp(
            &mut rng,
            dims.embed * dims.num_modalities(),
            dims.classifier_hidden,
            dims.num_classes,
        );
        Ok(Self {
            dims,
            encoders,
            uni_heads,
            fusion_head,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    fn mlps(&self) -> impl Iterator<Item = &Mlp> {
        self.encoders
            .iter()
            .chain(&self.uni_heads)
            .chain(std::iter::once(&self.fusion_head))
    }

    /// All parameter matrices: per encoder, per unimodal head, then the fusion head;
    /// each as `[w1, b1, w2, b2]`.
    pub fn parameters(&self) -> Vec<&Matrix> {
        self.mlps()
            .flat_map(|m| [&m.first.weight, &m.first.bias, &m.second.weight, &m.second.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoders
            .iter_mut()
            .chain(self.uni_heads.iter_mut())
            .chain(std::iter::once(&mut self.fusion_head))
            .flat_map(|m| {
                [
                    &mut m.first.weight,
                    &mut m.first.bias,
                    &mut m.second.weight,
                    &mut m.second.bias,
                ]
            })
            .collect()
    }

    /// Names matching [`Self::parameters`].
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut push = |prefix: String| {
            for p in ["w1", "b1", "w2", "b2"] {
                names.push(format!("{prefix}.{p}"));
            }
        };
        for m in 0..self.encoders.len() {
            push(format!("encoder{m}"));
        }
        for m in 0..self.uni_heads.len() {
            push(format!("head{m}"));
        }
        push("fusion".into());
        names
    }

    /// Rebuilds a model from dims and parameters in [`Self::parameters`] order.
    pub fn from_parameters(dims: ModelDims, params: Vec<Matrix>) -> Result<Self> {
        let mut model = Self::init(dims, 0)?;
        let slots = model.parameters_mut();
        if slots.len() != params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter matrices, got {}",
                slots.len(),
                params.len()
            )));
        }
        for (slot, p) in slots.into_iter().zip(params) {
            if slot.shape() != p.shape() {
                return Err(Error::shape("from_parameters", slot.shape(), p.shape()));
            }
            *slot = p;
        }
        Ok(model)
    }

    /// Records every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let mut bind = |m: &Mlp| BoundMlp {
            w1: g.leaf(m.first.weight.clone()),
            b1: g.leaf(m.first.bias.clone()),
            w2: g.leaf(m.second.weight.clone()),
            b2: g.leaf(m.second.bias.clone()),
        };
        BoundModel {
            encoders: self.encoders.iter().map(&mut bind).collect(),
            uni_heads: self.uni_heads.iter().map(&mut bind).collect(),
            fusion_head: bind(&self.fusion_head),
        }
    }

    fn encode(&self, g: &mut Graph, p: &BoundMlp, x: Tensor) -> Result<Tensor> {
        let h = g.matmul(x, p.w1)?;
        let h = g.add_row(h, p.b1)?;
        let h = match self.dims.encoder_activation {
            Activation::Relu => g.relu(h),
            Activation::Identity => h,
        };
        let e = g.matmul(h, p.w2)?;
        g.add_row(e, p.b2)
    }

    fn classify<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        p: &BoundMlp,
        x: Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        let h = g.matmul(x, p.w1)?;
        let h = g.add_row(h, p.b1)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.dims.dropout, training, rng)?;
        let o = g.matmul(h, p.w2)?;
        g.add_row(o, p.b2)
    }

    fn check_batch(&self, batch: &LabeledBatch) -> Result<()> {
        let widths = batch.widths();
        if widths != self.dims.input_dims {
            return Err(Error::Shape {
                op: "forward",
                left: format!("model input dims {:?}", self.dims.input_dims),
                right: format!("batch widths {widths:?}"),
            });
        }
        Ok(())
    }

    /// Full pipeline on `g` with parameters already bound.
    ///
    /// Embeddings come from each encoder; when `plan` is given, raw inputs are
    /// mixed and passed through the same encoder leaves. Unimodal heads read
    /// their modality's embedding; the fusion head reads the concatenation.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        batch: &LabeledBatch,
        plan: Option<&MixupPlan>,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardOutputs> {
        self.check_batch(batch)?;
        let mut embeddings = Vec::with_capacity(batch.num_modalities());
        let mut mixed = plan.map(|_| Vec::with_capacity(batch.num_modalities()));
        for (m, x) in batch.modalities().iter().enumerate() {
            let xt = g.leaf(x.clone());
            embeddings.push(self.encode(g, &bound.encoders[m], xt)?);
            if let (Some(plan), Some(mixed)) = (plan, mixed.as_mut()) {
                let xm = make_mixtures(g, xt, plan, m)?;
                mixed.push(self.encode(g, &bound.encoders[m], xm)?);
            }
        }
        let mut uni_logits = Vec::with_capacity(embeddings.len());
        for (m, &e) in embeddings.iter().enumerate() {
            uni_logits.push(self.classify(g, &bound.uni_heads[m], e, training, rng)?);
        }
        let joint = g.concat_columns(&embeddings)?;
        let fused_logits = self.classify(g, &bound.fusion_head, joint, training, rng)?;
        Ok(ForwardOutputs {
            embeddings,
            mixed,
            uni_logits,
            fused_logits,
        })
    }

    /// Evaluation-mode class probabilities.
    pub fn predict(&self, batch: &LabeledBatch) -> Result<Predictions> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        // dropout is inactive, so the rng is never drawn from
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut g, &bound, batch, None, false, &mut rng)?;
        let probs = |t: Tensor| log_softmax_rows(g.value(t)).map(f64::exp);
        Ok(Predictions {
            fused: probs(out.fused_logits),
            unimodal: out.uni_logits.iter().map(|&t| probs(t)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixup::make_plan;

    pub(crate) fn tiny_dims() -> ModelDims {
        ModelDims {
            input_dims: vec![5, 3],
            hidden: 6,
            embed: 4,
            classifier_hidden: 5,
            num_classes: 3,
            dropout: 0.5,
            encoder_activation: Activation::Relu,
        }
    }

    fn tiny_batch(n: usize, seed: u64) -> LabeledBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |d: usize| Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let mods = vec![m(5), m(3)];
        let labels = (0..n).map(|i| i % 3).collect();
        LabeledBatch::new(mods, labels, 3, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = M3colModel::init(tiny_dims(), 9).unwrap();
        let b = M3colModel::init(tiny_dims(), 9).unwrap();
        assert_eq!(a, b);
        let c = M3colModel::init(tiny_dims(), 10).unwrap();
        assert_ne!(a, c);
        for m in a.mlps() {
            for lin in [&m.first, &m.second] {
                let bound = (1.0 / lin.weight.rows() as f64).sqrt();
                assert!(lin.weight.max_abs() <= bound);
                assert_eq!(lin.bias.max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn init_rejects_zero_dims() {
        let mut d = tiny_dims();
        d.embed = 0;
        assert!(matches!(M3colModel::init(d, 0), Err(Error::Parameter(_))));
        let mut d = tiny_dims();
        d.input_dims = vec![4, 0];
        assert!(M3colModel::init(d, 0).is_err());
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model = M3colModel::init(tiny_dims(), 1).unwrap();
        let batch = tiny_batch(7, 2);
        let a = model.predict(&batch).unwrap();
        let b = model.predict(&batch).unwrap();
        assert_eq!(a, b);
        for r in a.fused.row_iter() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_plan_gives_identical_mixed_embeddings() {
        let model = M3colModel::init(tiny_dims(), 1).unwrap();
        let batch = tiny_batch(6, 3);
        let plan = MixupPlan::identity(6, 2).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model
            .forward(&mut g, &bound, &batch, Some(&plan), false, &mut rng)
            .unwrap();
        let mixed = out.mixed.unwrap();
        for (e, m) in out.embeddings.iter().zip(&mixed) {
            assert_eq!(g.value(*e), g.value(*m));
        }
    }

    #[test]
    fn affine_encoder_commutes_with_mixing() {
        let mut dims = tiny_dims();
        dims.encoder_activation = Activation::Identity;
        let model = M3colModel::init(dims, 4).unwrap();
        let batch = tiny_batch(8, 5);
        let plan = make_plan(8, 2, 0.15, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model
            .forward(&mut g, &bound, &batch, Some(&plan), false, &mut rng)
            .unwrap();
        for m in 0..2 {
            let expect =
                crate::mixup::mix_matrix(g.value(out.embeddings[m]), &plan, m).unwrap();
            let got = g.value(out.mixed.as_ref().unwrap()[m]);
            let diff = got.zip_map(&expect, |a, b| (a - b).abs()).unwrap().max_abs();
            assert!(diff < 1e-10, "modality {m}: {diff}");
        }
    }

    #[test]
    fn mixed_path_uses_encoder_leaves() {
        // a loss on mixed embeddings alone must reach the shared encoder parameters
        let model = M3colModel::init(tiny_dims(), 1).unwrap();
        let batch = tiny_batch(4, 3);
        let plan = make_plan(4, 2, 0.15, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model
            .forward(&mut g, &bound, &batch, Some(&plan), false, &mut rng)
            .unwrap();
        let mixed = out.mixed.unwrap();
        let s = g.sum(mixed[0]);
        let grads = g.backward(s).unwrap();
        let w2 = bound.encoder_handles(0)[2];
        assert!(grads.get(w2).unwrap().max_abs() > 0.0);
        // and not the heads
        let head = bound.handles()[8];
        assert_eq!(grads.get(head).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let model = M3colModel::init(tiny_dims(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = vec![Matrix::zeros(2, 5), Matrix::zeros(2, 4)];
        let batch = LabeledBatch::new(x, vec![0, 1], 3, vec!["a".into(), "b".into()]).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        assert!(matches!(
            model.forward(&mut g, &bound, &batch, None, false, &mut rng),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn parameters_round_trip() {
        let model = M3colModel::init(tiny_dims(), 8).unwrap();
        let params: Vec<Matrix> = model.parameters().into_iter().cloned().collect();
        assert_eq!(params.len(), model.parameter_names().len());
        let back = M3colModel::from_parameters(tiny_dims(), params).unwrap();
        assert_eq!(back, model);
    }
}
