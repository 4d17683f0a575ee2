//! The four parametric functions: conditional generator, conditional
//! Wasserstein critic, seen classifier, unseen classifier.
//!
//! Generator and critic are two fully-connected layers with LeakyReLU
//! between them; the generator finishes with a plain ReLU so synthesized
//! features live in the same non-negative cone as real region features,
//! and the critic head is linear (unbounded score). Conditioning is by
//! concatenation of the inputs. Classifiers are a single linear layer.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: Real = 0.2;
pub const INIT_STD: Real = 0.02;

/// Class identity of a region feature. Background has no semantic vector
/// and is never synthesized.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Class(u32),
    Background,
}

impl Label {
    /// On-disk encoding: class id, or -1 for background.
    pub fn to_i32(self) -> i32 {
        match self {
            Label::Class(id) => id as i32,
            Label::Background => -1,
        }
    }

    pub fn from_i32(v: i32) -> Result<Label> {
        if v >= 0 {
            Ok(Label::Class(v as u32))
        } else if v == -1 {
            Ok(Label::Background)
        } else {
            Err(Error::Data(format!("invalid label code {v}")))
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Class(id) => write!(f, "{id}"),
            Label::Background => write!(f, "bg"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearLayer {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl LinearLayer {
    fn init(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let w: Vec<Real> = (0..d_in * d_out).map(|_| normal.sample(rng)).collect();
        LinearLayer {
            weight: Tensor::from_vec(&[d_in, d_out], w).expect("init shape"),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    fn zeros(d_in: usize, d_out: usize) -> Self {
        LinearLayer {
            weight: Tensor::zeros(&[d_in, d_out]),
            bias: Tensor::zeros(&[d_out]),
        }
    }
}

#[derive(Copy, Clone, Debug)]
pub struct ModelConfig {
    pub d_z: usize,
    pub d_w: usize,
    pub d_f: usize,
    pub hidden: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_z == 0 || self.d_w == 0 || self.d_f == 0 || self.hidden == 0 {
            return Err(Error::Config("model dims must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorParams {
    pub layer1: LinearLayer,
    pub layer2: LinearLayer,
    pub d_z: usize,
    pub d_w: usize,
    pub d_f: usize,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorParams {
    pub layer1: LinearLayer,
    pub layer2: LinearLayer,
    pub d_f: usize,
    pub d_w: usize,
}

#[derive(Clone, Debug)]
pub struct ClassifierParams {
    /// `[d_f, classes.len()]`
    pub weight: Tensor,
    /// `[classes.len()]`
    pub bias: Tensor,
    /// Column `j` scores `classes[j]`.
    pub classes: Vec<Label>,
}

/// Generator and critic plus both classifier heads, as produced by
/// [`ModelParams::init`].
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub seen_classifier: ClassifierParams,
    pub unseen_classifier: ClassifierParams,
}

/// Tape handles to a generator's parameters.
#[derive(Copy, Clone, Debug)]
pub struct GeneratorVars {
    pub l1_w: Var,
    pub l1_b: Var,
    pub l2_w: Var,
    pub l2_b: Var,
}

#[derive(Copy, Clone, Debug)]
pub struct DiscriminatorVars {
    pub l1_w: Var,
    pub l1_b: Var,
    pub l2_w: Var,
    pub l2_b: Var,
}

#[derive(Clone, Debug)]
pub struct ClassifierVars {
    pub weight: Var,
    pub bias: Var,
    pub classes: Vec<Label>,
}

impl GeneratorParams {
    pub fn vars(&self, tape: &mut Tape) -> Result<GeneratorVars> {
        Ok(GeneratorVars {
            l1_w: tape.leaf(self.layer1.weight.clone())?,
            l1_b: tape.leaf(self.layer1.bias.clone())?,
            l2_w: tape.leaf(self.layer2.weight.clone())?,
            l2_b: tape.leaf(self.layer2.bias.clone())?,
        })
    }

    /// Batched forward for rows of noise and matching rows of semantics.
    pub fn forward(&self, z_rows: &Tensor, w_rows: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.vars(&mut tape)?;
        let z = tape.leaf(z_rows.clone())?;
        let w = tape.leaf(w_rows.clone())?;
        let out = vars.forward(&mut tape, z, w)?;
        Ok(tape.value(out).clone())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.layer1.weight,
            &self.layer1.bias,
            &self.layer2.weight,
            &self.layer2.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.layer1.weight,
            &mut self.layer1.bias,
            &mut self.layer2.weight,
            &mut self.layer2.bias,
        ]
    }
}

impl GeneratorVars {
    pub fn var_list(&self) -> Vec<Var> {
        vec![self.l1_w, self.l1_b, self.l2_w, self.l2_b]
    }

    /// `relu(leaky_relu(concat(z, w) W1 + b1) W2 + b2)`, rows in parallel.
    pub fn forward(&self, tape: &mut Tape, z: Var, w: Var) -> Result<Var> {
        let x = tape.concat_cols(z, w)?;
        let h = tape.matmul(x, self.l1_w)?;
        let h = tape.add_row(h, self.l1_b)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let o = tape.matmul(h, self.l2_w)?;
        let o = tape.add_row(o, self.l2_b)?;
        tape.relu(o)
    }
}

impl DiscriminatorParams {
    pub fn vars(&self, tape: &mut Tape) -> Result<DiscriminatorVars> {
        Ok(DiscriminatorVars {
            l1_w: tape.leaf(self.layer1.weight.clone())?,
            l1_b: tape.leaf(self.layer1.bias.clone())?,
            l2_w: tape.leaf(self.layer2.weight.clone())?,
            l2_b: tape.leaf(self.layer2.bias.clone())?,
        })
    }

    /// Critic scores for rows of features and matching semantics: `[B]`.
    pub fn forward(&self, f_rows: &Tensor, w_rows: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.vars(&mut tape)?;
        let f = tape.leaf(f_rows.clone())?;
        let w = tape.leaf(w_rows.clone())?;
        let out = vars.forward(&mut tape, f, w)?;
        Ok(tape.value(out).clone())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.layer1.weight,
            &self.layer1.bias,
            &self.layer2.weight,
            &self.layer2.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.layer1.weight,
            &mut self.layer1.bias,
            &mut self.layer2.weight,
            &mut self.layer2.bias,
        ]
    }
}

impl DiscriminatorVars {
    pub fn var_list(&self) -> Vec<Var> {
        vec![self.l1_w, self.l1_b, self.l2_w, self.l2_b]
    }

    /// Unbounded critic score per row: `[B]`. No output activation.
    pub fn forward(&self, tape: &mut Tape, f: Var, w: Var) -> Result<Var> {
        let x = tape.concat_cols(f, w)?;
        let h = tape.matmul(x, self.l1_w)?;
        let h = tape.add_row(h, self.l1_b)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let o = tape.matmul(h, self.l2_w)?;
        let o = tape.add_row(o, self.l2_b)?;
        let rows = tape.value(o).rows();
        tape.reshape(o, &[rows])
    }
}

impl ClassifierParams {
    pub fn zeros(d_f: usize, classes: Vec<Label>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Contract("classifier needs at least one class".into()));
        }
        Ok(ClassifierParams {
            weight: Tensor::zeros(&[d_f, classes.len()]),
            bias: Tensor::zeros(&[classes.len()]),
            classes,
        })
    }

    pub fn init(rng: &mut ChaCha8Rng, d_f: usize, classes: Vec<Label>) -> Result<Self> {
        let mut p = Self::zeros(d_f, classes)?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let n = p.weight.len();
        let w: Vec<Real> = (0..n).map(|_| normal.sample(rng)).collect();
        p.weight = Tensor::from_vec(&[d_f, p.classes.len()], w)?;
        Ok(p)
    }

    pub fn d_f(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, label: Label) -> Option<usize> {
        self.classes.iter().position(|&c| c == label)
    }

    pub fn vars(&self, tape: &mut Tape) -> Result<ClassifierVars> {
        Ok(ClassifierVars {
            weight: tape.leaf(self.weight.clone())?,
            bias: tape.leaf(self.bias.clone())?,
            classes: self.classes.clone(),
        })
    }

    /// Linear logits `[B, K]`; softmax is applied only inside losses and
    /// metrics.
    pub fn forward(&self, f_rows: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.vars(&mut tape)?;
        let f = tape.leaf(f_rows.clone())?;
        let out = vars.forward(&mut tape, f)?;
        Ok(tape.value(out).clone())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl ClassifierVars {
    pub fn var_list(&self) -> Vec<Var> {
        vec![self.weight, self.bias]
    }

    pub fn class_index(&self, label: Label) -> Option<usize> {
        self.classes.iter().position(|&c| c == label)
    }

    pub fn forward(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        let o = tape.matmul(f, self.weight)?;
        tape.add_row(o, self.bias)
    }
}

impl ModelParams {
    /// Weights ~ N(0, 0.02^2), biases 0, deterministic per seed.
    pub fn init(
        cfg: &ModelConfig,
        seen: &[u32],
        unseen: &[u32],
        seed: u64,
    ) -> Result<ModelParams> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = GeneratorParams {
            layer1: LinearLayer::init(&mut rng, cfg.d_z + cfg.d_w, cfg.hidden),
            layer2: LinearLayer::init(&mut rng, cfg.hidden, cfg.d_f),
            d_z: cfg.d_z,
            d_w: cfg.d_w,
            d_f: cfg.d_f,
        };
        let discriminator = DiscriminatorParams {
            layer1: LinearLayer::init(&mut rng, cfg.d_f + cfg.d_w, cfg.hidden),
            layer2: LinearLayer::init(&mut rng, cfg.hidden, 1),
            d_f: cfg.d_f,
            d_w: cfg.d_w,
        };
        let mut seen_classes: Vec<Label> = seen.iter().map(|&c| Label::Class(c)).collect();
        seen_classes.push(Label::Background);
        let unseen_classes: Vec<Label> = unseen.iter().map(|&c| Label::Class(c)).collect();
        let seen_classifier = ClassifierParams::init(&mut rng, cfg.d_f, seen_classes)?;
        let unseen_classifier = if unseen_classes.is_empty() {
            ClassifierParams::zeros(cfg.d_f, vec![Label::Background])?
        } else {
            ClassifierParams::init(&mut rng, cfg.d_f, unseen_classes)?
        };
        Ok(ModelParams {
            generator,
            discriminator,
            seen_classifier,
            unseen_classifier,
        })
    }

    /// All-zero parameters with the same shapes (useful in tests).
    pub fn zeros(cfg: &ModelConfig, seen: &[u32], unseen: &[u32]) -> Result<ModelParams> {
        cfg.validate()?;
        let mut seen_classes: Vec<Label> = seen.iter().map(|&c| Label::Class(c)).collect();
        seen_classes.push(Label::Background);
        let unseen_classes: Vec<Label> = if unseen.is_empty() {
            vec![Label::Background]
        } else {
            unseen.iter().map(|&c| Label::Class(c)).collect()
        };
        Ok(ModelParams {
            generator: GeneratorParams {
                layer1: LinearLayer::zeros(cfg.d_z + cfg.d_w, cfg.hidden),
                layer2: LinearLayer::zeros(cfg.hidden, cfg.d_f),
                d_z: cfg.d_z,
                d_w: cfg.d_w,
                d_f: cfg.d_f,
            },
            discriminator: DiscriminatorParams {
                layer1: LinearLayer::zeros(cfg.d_f + cfg.d_w, cfg.hidden),
                layer2: LinearLayer::zeros(cfg.hidden, 1),
                d_f: cfg.d_f,
                d_w: cfg.d_w,
            },
            seen_classifier: ClassifierParams::zeros(cfg.d_f, seen_classes)?,
            unseen_classifier: ClassifierParams::zeros(cfg.d_f, unseen_classes)?,
        })
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format: "RFSC" magic, u32 version, dims, seed, class lists,
// then parameter arrays in declared order at the build's precision.
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"RFSC";
const CKPT_VERSION: u32 = 1;

fn write_u32(w: &mut impl std::io::Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl std::io::Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl std::io::Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Data("checkpoint truncated".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl std::io::Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Data("checkpoint truncated".into()))?;
    Ok(u64::from_le_bytes(buf))
}

fn write_tensor(w: &mut impl std::io::Write, t: &Tensor) -> Result<()> {
    for &x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl std::io::Read, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; std::mem::size_of::<Real>()];
    for _ in 0..n {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Data("checkpoint truncated".into()))?;
        data.push(Real::from_le_bytes(buf));
    }
    Tensor::from_vec(shape, data)
}

fn write_labels(w: &mut impl std::io::Write, labels: &[Label]) -> Result<()> {
    write_u32(w, labels.len() as u32)?;
    for l in labels {
        w.write_all(&l.to_i32().to_le_bytes())?;
    }
    Ok(())
}

fn read_labels(r: &mut impl std::io::Read) -> Result<Vec<Label>> {
    let n = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Data("checkpoint truncated".into()))?;
        out.push(Label::from_i32(i32::from_le_bytes(buf))?);
    }
    Ok(out)
}

/// Lossless save of all four parameter sets plus dims and seed.
pub fn save_checkpoint(path: &Path, params: &ModelParams, seed: u64) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(CKPT_MAGIC)?;
    write_u32(&mut w, CKPT_VERSION)?;
    write_u32(&mut w, std::mem::size_of::<Real>() as u32)?;
    let g = &params.generator;
    write_u32(&mut w, g.d_z as u32)?;
    write_u32(&mut w, g.d_w as u32)?;
    write_u32(&mut w, g.d_f as u32)?;
    write_u32(&mut w, g.layer1.bias.len() as u32)?; // hidden
    write_u64(&mut w, seed)?;
    write_labels(&mut w, &params.seen_classifier.classes)?;
    write_labels(&mut w, &params.unseen_classifier.classes)?;
    for t in g
        .tensors()
        .into_iter()
        .chain(params.discriminator.tensors())
        .chain(params.seen_classifier.tensors())
        .chain(params.unseen_classifier.tensors())
    {
        write_tensor(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Data("checkpoint truncated".into()))?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Data("malformed checkpoint header".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CKPT_VERSION {
        return Err(Error::Data(format!("unknown checkpoint version {version}")));
    }
    let width = read_u32(&mut r)? as usize;
    if width != std::mem::size_of::<Real>() {
        return Err(Error::Data(format!(
            "checkpoint stores {width}-byte reals; this build uses {}",
            std::mem::size_of::<Real>()
        )));
    }
    let d_z = read_u32(&mut r)? as usize;
    let d_w = read_u32(&mut r)? as usize;
    let d_f = read_u32(&mut r)? as usize;
    let hidden = read_u32(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let seen_classes = read_labels(&mut r)?;
    let unseen_classes = read_labels(&mut r)?;

    let generator = GeneratorParams {
        layer1: LinearLayer {
            weight: read_tensor(&mut r, &[d_z + d_w, hidden])?,
            bias: read_tensor(&mut r, &[hidden])?,
        },
        layer2: LinearLayer {
            weight: read_tensor(&mut r, &[hidden, d_f])?,
            bias: read_tensor(&mut r, &[d_f])?,
        },
        d_z,
        d_w,
        d_f,
    };
    let discriminator = DiscriminatorParams {
        layer1: LinearLayer {
            weight: read_tensor(&mut r, &[d_f + d_w, hidden])?,
            bias: read_tensor(&mut r, &[hidden])?,
        },
        layer2: LinearLayer {
            weight: read_tensor(&mut r, &[hidden, 1])?,
            bias: read_tensor(&mut r, &[1])?,
        },
        d_f,
        d_w,
    };
    let seen_classifier = ClassifierParams {
        weight: read_tensor(&mut r, &[d_f, seen_classes.len()])?,
        bias: read_tensor(&mut r, &[seen_classes.len()])?,
        classes: seen_classes,
    };
    let unseen_classifier = ClassifierParams {
        weight: read_tensor(&mut r, &[d_f, unseen_classes.len()])?,
        bias: read_tensor(&mut r, &[unseen_classes.len()])?,
        classes: unseen_classes,
    };
    Ok(Checkpoint {
        params: ModelParams {
            generator,
            discriminator,
            seen_classifier,
            unseen_classifier,
        },
        seed,
    })
}

#[cfg(all(test, not(feature = "f32")))]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn cfg() -> ModelConfig {
        ModelConfig { d_z: 3, d_w: 4, d_f: 5, hidden: 6 }
    }

    fn randn_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        let data = (0..r * c).map(|_| StandardNormal.sample(rng)).collect();
        Tensor::from_vec(&[r, c], data).unwrap()
    }

    #[test]
    fn zero_generator_outputs_zero() {
        let m = ModelParams::zeros(&cfg(), &[0, 1], &[2]).unwrap();
        let z = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[1, 4]);
        let out = m.generator.forward(&z, &w).unwrap();
        assert_eq!(out.data(), &[0.0; 5]);
    }

    #[test]
    fn hand_set_one_unit_generator() {
        // 1 hidden unit, all weights 1, biases 0, z=[1], w=[1]:
        // relu(leaky_relu(2) * 1) = 2
        let g = GeneratorParams {
            layer1: LinearLayer {
                weight: Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap(),
                bias: Tensor::zeros(&[1]),
            },
            layer2: LinearLayer {
                weight: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
                bias: Tensor::zeros(&[1]),
            },
            d_z: 1,
            d_w: 1,
            d_f: 1,
        };
        let out = g
            .forward(
                &Tensor::matrix(1, 1, vec![1.0]).unwrap(),
                &Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            )
            .unwrap();
        assert_eq!(out.data(), &[2.0]);
    }

    #[test]
    fn batch_of_noise_gives_distinct_features_under_random_init() {
        let m = ModelParams::init(&cfg(), &[0, 1], &[2], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let z = randn_matrix(&mut rng, 300, 3);
        let w_row: Vec<Real> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = Tensor::from_vec(
            &[300, 4],
            w_row.iter().cycle().take(300 * 4).copied().collect(),
        )
        .unwrap();
        let out = m.generator.forward(&z, &w).unwrap();
        for i in 0..300 {
            for j in (i + 1)..300 {
                if out.row(i) == out.row(j) {
                    panic!("rows {i} and {j} coincide");
                }
            }
        }
    }

    #[test]
    fn generator_output_is_non_negative() {
        let m = ModelParams::init(&cfg(), &[0], &[], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = randn_matrix(&mut rng, 64, 3);
        let w = randn_matrix(&mut rng, 64, 4);
        let out = m.generator.forward(&z, &w).unwrap();
        assert!(out.data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn zero_discriminator_scores_zero() {
        let m = ModelParams::zeros(&cfg(), &[0], &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = randn_matrix(&mut rng, 4, 5);
        let w = randn_matrix(&mut rng, 4, 4);
        let s = m.discriminator.forward(&f, &w).unwrap();
        assert_eq!(s.data(), &[0.0; 4]);
    }

    #[test]
    fn critic_score_scales_with_final_layer() {
        let mut m = ModelParams::init(&cfg(), &[0], &[], 21).unwrap();
        // zero the head bias so scaling is exact
        m.discriminator.layer2.bias = Tensor::zeros(&[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = randn_matrix(&mut rng, 3, 5);
        let w = randn_matrix(&mut rng, 3, 4);
        let s1 = m.discriminator.forward(&f, &w).unwrap();
        let scaled: Vec<Real> = m
            .discriminator
            .layer2
            .weight
            .data()
            .iter()
            .map(|x| 3.0 * x)
            .collect();
        m.discriminator.layer2.weight = Tensor::from_vec(&[6, 1], scaled).unwrap();
        let s3 = m.discriminator.forward(&f, &w).unwrap();
        for (a, b) in s1.data().iter().zip(s3.data()) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_set_tiny_critic_matches_arithmetic() {
        // d_f=1, d_w=1, 2 hidden units.
        // input [f, w] = [2, -1]; W1 = [[1, -1],[0.5, 0.5]]; b1 = [0, 0]
        // pre = [2*1 + (-1)*0.5, 2*(-1) + (-1)*0.5] = [1.5, -2.5]
        // leaky(0.2) = [1.5, -0.5]; head w2 = [2, 4], b2 = [1]
        // score = 1.5*2 + (-0.5)*4 + 1 = 2.0
        let d = DiscriminatorParams {
            layer1: LinearLayer {
                weight: Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 0.5]).unwrap(),
                bias: Tensor::zeros(&[2]),
            },
            layer2: LinearLayer {
                weight: Tensor::matrix(2, 1, vec![2.0, 4.0]).unwrap(),
                bias: Tensor::vector(vec![1.0]),
            },
            d_f: 1,
            d_w: 1,
        };
        let s = d
            .forward(
                &Tensor::matrix(1, 1, vec![2.0]).unwrap(),
                &Tensor::matrix(1, 1, vec![-1.0]).unwrap(),
            )
            .unwrap();
        assert!((s.data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_classifier_gives_uniform_softmax() {
        let clf = ClassifierParams::zeros(5, vec![Label::Class(0), Label::Class(1), Label::Background]).unwrap();
        let f = Tensor::matrix(1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let logits = clf.forward(&f).unwrap();
        assert_eq!(logits.data(), &[0.0, 0.0, 0.0]);
        // uniform softmax: each class 1/3
        let p = 1.0 / 3.0;
        let z: Real = logits.data().iter().map(|l| l.exp()).sum();
        for l in logits.data() {
            assert!((l.exp() / z - p).abs() < 1e-15);
        }
    }

    #[test]
    fn favorable_weight_row_wins_argmax() {
        let mut clf = ClassifierParams::zeros(3, vec![Label::Class(0), Label::Class(1)]).unwrap();
        // column 1 keyed to coordinate 2
        clf.weight = Tensor::matrix(3, 2, vec![0.0, 0.0, 0.0, 0.0, 0.0, 10.0]).unwrap();
        let f = Tensor::matrix(1, 3, vec![0.1, 0.1, 1.0]).unwrap();
        let logits = clf.forward(&f).unwrap();
        assert!(logits.data()[1] > logits.data()[0]);
    }

    #[test]
    fn classifier_logits_match_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut clf = ClassifierParams::zeros(4, vec![Label::Class(0), Label::Class(1), Label::Class(2)]).unwrap();
        clf.weight = randn_matrix(&mut rng, 4, 3);
        clf.bias = Tensor::vector((0..3).map(|_| StandardNormal.sample(&mut rng)).collect());
        let f = randn_matrix(&mut rng, 6, 4);
        let logits = clf.forward(&f).unwrap();
        for i in 0..6 {
            for j in 0..3 {
                let mut s = clf.bias.data()[j];
                for k in 0..4 {
                    s += f.data()[i * 4 + k] * clf.weight.data()[k * 3 + j];
                }
                assert!((logits.data()[i * 3 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = ModelParams::init(&cfg(), &[0, 1], &[2], 42).unwrap();
        let b = ModelParams::init(&cfg(), &[0, 1], &[2], 42).unwrap();
        assert!(a.generator.layer1.weight.bit_eq(&b.generator.layer1.weight));
        assert!(a.discriminator.layer2.weight.bit_eq(&b.discriminator.layer2.weight));
        let c = ModelParams::init(&cfg(), &[0, 1], &[2], 43).unwrap();
        assert!(!a.generator.layer1.weight.bit_eq(&c.generator.layer1.weight));
    }

    #[test]
    fn init_weight_statistics() {
        let big = ModelConfig { d_z: 50, d_w: 50, d_f: 50, hidden: 100 };
        let m = ModelParams::init(&big, &[0], &[], 7).unwrap();
        let w = &m.generator.layer1.weight; // 100 x 100 = 1e4 draws
        assert_eq!(w.len(), 10_000);
        let mean: Real = w.data().iter().sum::<Real>() / w.len() as Real;
        let bound = 3.0 * INIT_STD / (w.len() as Real).sqrt();
        assert!(mean.abs() < bound, "mean {mean} vs 3-sigma {bound}");
        assert!(m.generator.layer1.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn forward_is_pure() {
        let m = ModelParams::init(&cfg(), &[0], &[], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = randn_matrix(&mut rng, 2, 3);
        let w = randn_matrix(&mut rng, 2, 4);
        let a = m.generator.forward(&z, &w).unwrap();
        let b = m.generator.forward(&z, &w).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = ModelParams::init(&cfg(), &[0, 1], &[2, 3], 77).unwrap();
        save_checkpoint(&path, &m, 77).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.seed, 77);
        for (a, b) in m
            .generator
            .tensors()
            .into_iter()
            .chain(m.discriminator.tensors())
            .chain(m.seen_classifier.tensors())
            .chain(m.unseen_classifier.tensors())
            .zip(
                loaded
                    .params
                    .generator
                    .tensors()
                    .into_iter()
                    .chain(loaded.params.discriminator.tensors())
                    .chain(loaded.params.seen_classifier.tensors())
                    .chain(loaded.params.unseen_classifier.tensors()),
            )
        {
            assert!(a.bit_eq(b));
        }
        assert_eq!(m.seen_classifier.classes, loaded.params.seen_classifier.classes);
    }

    #[test]
    fn truncated_checkpoint_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = ModelParams::init(&cfg(), &[0], &[1], 5).unwrap();
        save_checkpoint(&path, &m, 5).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Data(_))));
    }
}
