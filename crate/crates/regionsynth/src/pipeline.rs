//! End-to-end training: pretrain the seen classifier, train the region
//! feature synthesizer adversarially with the consistency and contrastive
//! terms, synthesize unseen-class features, train the unseen classifier
//! on them, merge into the frozen seen classifier, and evaluate under the
//! ZSD and GZSD protocols.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Benchmark, FeatureBatch};
use crate::error::{Error, Result};
use crate::losses::{
    cls_consistency_loss, critic_loss, generator_adv_loss, intra_sd_loss, inter_sp_loss_on,
    total_generator_objective, GeneratorObjectiveParts, LossWeights, Origin, PositivePolicy,
};
use crate::models::{
    ClassifierParams, DiscriminatorParams, GeneratorParams, Label, ModelConfig, ModelParams,
};
use crate::optim::Adam;
use crate::sampling::{sample_negatives, sample_positive, sample_query, NoisePairConfig};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Synthesizer epochs over the seen training features.
    pub epochs: usize,
    pub batch_size: usize,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    pub learning_rate: Real,
    pub beta1: Real,
    pub beta2: Real,
    /// Hidden width of generator and critic.
    pub hidden: usize,
    pub weights: LossWeights,
    /// Noise dimension, triplet radius, and negative count.
    pub noise: NoisePairConfig,
    /// Synthesized features per unseen class.
    pub synth_per_class: usize,
    /// Epoch cap for both linear classifiers.
    pub classifier_epochs: usize,
    pub classifier_lr: Real,
    /// Restrict the inter-class pool to synthesized features only.
    pub pool_synth_only: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            critic_steps: 5,
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            hidden: 256,
            weights: LossWeights::default(),
            noise: NoisePairConfig { radius: 1e-4, negatives: 10, dim: 16 },
            synth_per_class: 300,
            classifier_epochs: 300,
            classifier_lr: 0.05,
            pool_synth_only: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.critic_steps == 0
            || self.synth_per_class == 0
            || self.classifier_epochs == 0
            || self.hidden == 0
        {
            return Err(Error::Config("counts must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.classifier_lr > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        self.weights.validate()?;
        NoisePairConfig::new(self.noise.radius, self.noise.negatives, self.noise.dim)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Zsd,
    Gzsd,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zsd" => Ok(EvalMode::Zsd),
            "gzsd" => Ok(EvalMode::Gzsd),
            other => Err(Error::Config(format!("invalid mode `{other}` (zsd|gzsd)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClassAccuracy {
    pub label: Label,
    pub correct: usize,
    pub total: usize,
}

impl ClassAccuracy {
    pub fn percent(&self) -> Real {
        100.0 * self.correct as Real / self.total as Real
    }
}

/// `2SU / (S + U)`, zero whenever either side is zero.
pub fn harmonic_mean(s: Real, u: Real) -> Real {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub per_class: Vec<ClassAccuracy>,
    /// Mean per-class accuracy over seen classes (percent, GZSD only).
    pub seen_mean: Real,
    /// Mean per-class accuracy over unseen classes (percent).
    pub unseen_mean: Real,
    pub harmonic_mean: Real,
    /// Unseen mean accuracy in the unseen-only (+background) logit space.
    pub zsd_accuracy: Real,
    /// Nonzero confusion counts (true label, predicted label, count).
    pub confusion: Vec<(Label, Label, usize)>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("seen_mean,{}\n", self.seen_mean));
        out.push_str(&format!("unseen_mean,{}\n", self.unseen_mean));
        out.push_str(&format!("harmonic_mean,{}\n", self.harmonic_mean));
        out.push_str(&format!("zsd_accuracy,{}\n", self.zsd_accuracy));
        for c in &self.per_class {
            out.push_str(&format!("class_{},{}\n", c.label, c.percent()));
        }
        out
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true,pred,count\n");
        for (t, p, n) in &self.confusion {
            out.push_str(&format!("{t},{p},{n}\n"));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mode = match self.mode {
            EvalMode::Zsd => "ZSD",
            EvalMode::Gzsd => "GZSD",
        };
        let mut out = format!("{mode} evaluation\n");
        out.push_str(&format!("  ZSD unseen accuracy: {:.2}\n", self.zsd_accuracy));
        if self.mode == EvalMode::Gzsd {
            out.push_str(&format!(
                "  S: {:.2}  U: {:.2}  HM: {:.2}\n",
                self.seen_mean, self.unseen_mean, self.harmonic_mean
            ));
        }
        out.push_str("  per-class accuracy:\n");
        for c in &self.per_class {
            out.push_str(&format!(
                "    {:>4}: {:6.2}  ({}/{})\n",
                c.label.to_string(),
                c.percent(),
                c.correct,
                c.total
            ));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub critic_loss: Real,
    pub adv: Real,
    pub l_cs: Real,
    pub l_sd: Real,
    pub l_sp: Real,
    pub total: Real,
    pub wasserstein_gap: Real,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,critic_loss,adv,l_cs,l_sd,l_sp,total\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch, e.critic_loss, e.adv, e.l_cs, e.l_sd, e.l_sp, e.total
            ));
        }
        out
    }
}

fn argmax(row: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn train_accuracy(clf: &ClassifierParams, features: &Tensor, class_idx: &[usize]) -> Result<Real> {
    let logits = clf.forward(features)?;
    let mut correct = 0usize;
    for i in 0..features.rows() {
        if argmax(logits.row(i)) == class_idx[i] {
            correct += 1;
        }
    }
    Ok(correct as Real / features.rows() as Real)
}

/// Softmax cross-entropy training of a linear classifier until the
/// training accuracy plateaus at 100% or the epoch cap is reached.
fn train_linear_classifier(
    mut clf: ClassifierParams,
    features: &Tensor,
    labels: &[Label],
    cfg: &TrainConfig,
) -> Result<ClassifierParams> {
    let class_idx: Vec<usize> = labels
        .iter()
        .map(|&l| {
            clf.class_index(l)
                .ok_or_else(|| Error::Contract(format!("label {l} missing from classifier")))
        })
        .collect::<Result<_>>()?;
    let mut adam = Adam::new(cfg.classifier_lr, cfg.beta1, cfg.beta2);
    let mut prev_loss = Real::INFINITY;
    for _epoch in 0..cfg.classifier_epochs {
        let mut tape = Tape::new();
        let vars = clf.vars(&mut tape)?;
        let f = tape.leaf(features.clone())?;
        let loss = cls_consistency_loss(&mut tape, &vars, f, labels)?;
        let loss_val = tape.value(loss).item()?;
        let grads = tape.grad(loss, &vars.var_list())?;
        let grad_tensors: Vec<Tensor> = grads.iter().map(|&g| tape.value(g).clone()).collect();
        let grad_refs: Vec<&Tensor> = grad_tensors.iter().collect();
        adam.step(&mut clf.tensors_mut(), &grad_refs)?;
        // plateau: converged loss with perfect training accuracy
        if (prev_loss - loss_val).abs() < 1e-12
            && train_accuracy(&clf, features, &class_idx)? == 1.0
        {
            break;
        }
        prev_loss = loss_val;
    }
    Ok(clf)
}

/// Train the frozen "detector head": seen classes plus background.
pub fn pretrain_seen_classifier(bench: &Benchmark, cfg: &TrainConfig) -> Result<ClassifierParams> {
    cfg.validate()?;
    let mut ids = bench.seen_ids();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Contract(
            "seen classifier needs at least 2 foreground classes".into(),
        ));
    }
    let mut classes: Vec<Label> = ids.into_iter().map(Label::Class).collect();
    classes.push(Label::Background);

    let mut rows = Vec::with_capacity(bench.train.len() + bench.backgrounds.len());
    let mut labels = Vec::with_capacity(rows.capacity());
    for i in 0..bench.train.len() {
        rows.push(bench.train.features.row_tensor(i));
        labels.push(bench.train.labels[i]);
    }
    for i in 0..bench.backgrounds.len() {
        rows.push(bench.backgrounds.features.row_tensor(i));
        labels.push(Label::Background);
    }
    let features = Tensor::from_rows(&rows)?;
    let clf = ClassifierParams::zeros(bench.d_f(), classes)?;
    train_linear_classifier(clf, &features, &labels, cfg)
}

struct SemanticLookup {
    entries: Vec<(u32, Tensor)>,
}

impl SemanticLookup {
    fn from_bench(bench: &Benchmark) -> Self {
        let entries = bench
            .seen
            .iter()
            .chain(&bench.unseen)
            .map(|s| (s.id, s.semantic.clone()))
            .collect();
        SemanticLookup { entries }
    }

    fn get(&self, id: u32) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(c, _)| *c == id)
            .map(|(_, w)| w)
            .ok_or_else(|| Error::Contract(format!("unknown class id {id}")))
    }

    fn rows_for(&self, labels: &[Label]) -> Result<Tensor> {
        let rows: Vec<Tensor> = labels
            .iter()
            .map(|l| match l {
                Label::Class(id) => self.get(*id).cloned(),
                Label::Background => {
                    Err(Error::Contract("background has no semantic vector".into()))
                }
            })
            .collect::<Result<_>>()?;
        Tensor::from_rows(&rows)
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let data: Vec<Real> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(&[rows, cols], data).expect("shape")
}

fn gather_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let rows: Vec<Tensor> = idx.iter().map(|&i| t.row_tensor(i)).collect();
    Tensor::from_rows(&rows).expect("rows")
}

/// Alternating optimization of critic and generator on the seen split.
pub fn train_synthesizer(
    bench: &Benchmark,
    cfg: &TrainConfig,
    seen_classifier: &ClassifierParams,
) -> Result<(GeneratorParams, DiscriminatorParams, TrainingLog)> {
    cfg.validate()?;
    let model_cfg = ModelConfig {
        d_z: cfg.noise.dim,
        d_w: bench.d_w(),
        d_f: bench.d_f(),
        hidden: cfg.hidden,
    };
    let init = ModelParams::init(&model_cfg, &bench.seen_ids(), &bench.unseen_ids(), cfg.seed)?;
    let mut generator = init.generator;
    let mut discriminator = init.discriminator;
    let mut log = TrainingLog::default();
    if cfg.epochs == 0 {
        return Ok((generator, discriminator, log));
    }

    let semantics = SemanticLookup::from_bench(bench);
    let n_train = bench.train.len();
    let b = cfg.batch_size.min(n_train);
    // Independent streams so that enabling or disabling one loss term does
    // not shift the draws any other part of training sees; ablation
    // variants of the same seed become paired experiments.
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        r.set_stream(k);
        r
    };
    let mut rng_data = stream(1);
    let mut rng_noise = stream(2);
    let mut rng_interp = stream(3);
    let mut rng_triplet = stream(4);
    let mut rng_pool = stream(5);
    let mut adam_g = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut adam_d = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut order: Vec<usize> = (0..n_train).collect();
    let use_sd = cfg.weights.intra_sd != 0.0;
    let use_sp = cfg.weights.inter_sp != 0.0;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_data);
        let mut sums = [0.0; 6]; // critic, adv, cs, sd, sp, total
        let mut gap_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(b) {
            step += 1;
            let fail = |e: Error, what: &str| match e {
                Error::NonFinite { op } => Error::NonFiniteLoss {
                    context: format!("epoch {epoch}, step {step}, {what} (op `{op}`)"),
                },
                other => other,
            };

            // ---- critic updates ------------------------------------------
            for _ in 0..cfg.critic_steps {
                let idx: Vec<usize> =
                    (0..b).map(|_| rng_data.random_range(0..n_train)).collect();
                let f_real = gather_rows(&bench.train.features, &idx);
                let labels: Vec<Label> = idx.iter().map(|&i| bench.train.labels[i]).collect();
                let w_rows = semantics.rows_for(&labels)?;
                let z = normal_matrix(&mut rng_noise, idx.len(), cfg.noise.dim);
                let f_fake = generator
                    .forward(&z, &w_rows)
                    .map_err(|e| fail(e, "generator forward (critic step)"))?;
                let mut tape = Tape::new();
                let dv = discriminator.vars(&mut tape)?;
                let out = critic_loss(
                    &mut tape, &dv, &f_real, &f_fake, &w_rows, cfg.weights.gp, &mut rng_interp,
                )
                .map_err(|e| fail(e, "critic loss"))?;
                let grads = tape
                    .grad(out.loss, &dv.var_list())
                    .map_err(|e| fail(e, "critic backward"))?;
                let grad_tensors: Vec<Tensor> =
                    grads.iter().map(|&g| tape.value(g).clone()).collect();
                let grad_refs: Vec<&Tensor> = grad_tensors.iter().collect();
                adam_d.step(&mut discriminator.tensors_mut(), &grad_refs)?;
                sums[0] += tape.value(out.loss).item()?;
                gap_sum += out.wasserstein_gap;
            }

            // ---- generator update ----------------------------------------
            let labels: Vec<Label> = chunk.iter().map(|&i| bench.train.labels[i]).collect();
            let w_rows = semantics.rows_for(&labels)?;
            let z = normal_matrix(&mut rng_noise, chunk.len(), cfg.noise.dim);

            let mut tape = Tape::new();
            let gv = generator.vars(&mut tape)?;
            let dv = discriminator.vars(&mut tape)?; // frozen this step
            let cv = seen_classifier.vars(&mut tape)?; // always frozen
            let zv = tape.leaf(z)?;
            let wv = tape.leaf(w_rows.clone())?;
            let f_fake = gv.forward(&mut tape, zv, wv)?;

            let adv = generator_adv_loss(&mut tape, &dv, f_fake, wv)
                .map_err(|e| fail(e, "adversarial loss"))?;
            let cs = cls_consistency_loss(&mut tape, &cv, f_fake, &labels)
                .map_err(|e| fail(e, "classifier-consistency loss"))?;

            let sd = if use_sd {
                let mut zq = Vec::with_capacity(chunk.len());
                let mut zp = Vec::with_capacity(chunk.len());
                let mut zn: Vec<Vec<Tensor>> = vec![Vec::new(); cfg.noise.negatives];
                for _ in 0..chunk.len() {
                    let q = sample_query(&cfg.noise, &mut rng_triplet);
                    let p = sample_positive(&q, &cfg.noise, &mut rng_triplet);
                    let negs = sample_negatives(&q, &cfg.noise, &mut rng_triplet)?;
                    zq.push(q);
                    zp.push(p);
                    for (k, n) in negs.into_iter().enumerate() {
                        zn[k].push(n);
                    }
                }
                let zq_v = tape.leaf(Tensor::from_rows(&zq)?)?;
                let zp_v = tape.leaf(Tensor::from_rows(&zp)?)?;
                let fq = gv.forward(&mut tape, zq_v, wv)?;
                let fp = gv.forward(&mut tape, zp_v, wv)?;
                let mut fns: Vec<Var> = Vec::with_capacity(cfg.noise.negatives);
                for rows in &zn {
                    let zn_v = tape.leaf(Tensor::from_rows(rows)?)?;
                    fns.push(gv.forward(&mut tape, zn_v, wv)?);
                }
                Some(
                    intra_sd_loss(&mut tape, fq, fp, &fns, cfg.weights.temperature)
                        .map_err(|e| fail(e, "intra-class diverging loss"))?,
                )
            } else {
                None
            };

            let sp = if use_sp {
                let mut pool_rows = f_fake;
                let mut pool_labels = labels.clone();
                let mut pool_origins = vec![Origin::Synth; labels.len()];
                if !cfg.pool_synth_only {
                    let idx: Vec<usize> = (0..b)
                        .map(|_| rng_pool.random_range(0..bench.proposals.len()))
                        .collect();
                    let real = gather_rows(&bench.proposals.features, &idx);
                    let real_v = tape.leaf(real)?;
                    pool_rows = tape.concat_rows(pool_rows, real_v)?;
                    pool_labels.extend(idx.iter().map(|&i| bench.proposals.labels[i]));
                    pool_origins.extend(std::iter::repeat(Origin::RealProposal).take(idx.len()));

                    // a few background entries keep the pool honest without
                    // letting the away-from-background push dominate
                    let bgn = bench.backgrounds.len();
                    let bg_count = (b / 8).max(2);
                    let bidx: Vec<usize> =
                        (0..bg_count).map(|_| rng_pool.random_range(0..bgn)).collect();
                    let bg = gather_rows(&bench.backgrounds.features, &bidx);
                    let bg_v = tape.leaf(bg)?;
                    pool_rows = tape.concat_rows(pool_rows, bg_v)?;
                    pool_labels.extend(std::iter::repeat(Label::Background).take(bidx.len()));
                    pool_origins.extend(std::iter::repeat(Origin::Background).take(bidx.len()));
                }
                let self_rows: Vec<usize> = (0..labels.len()).collect();
                let out = inter_sp_loss_on(
                    &mut tape,
                    f_fake,
                    &labels,
                    pool_rows,
                    &pool_labels,
                    &pool_origins,
                    Some(&self_rows),
                    cfg.weights.temperature,
                    PositivePolicy::default(),
                    &mut rng_pool,
                )
                .map_err(|e| fail(e, "inter-class preserving loss"))?;
                Some(out.loss)
            } else {
                None
            };

            let parts = GeneratorObjectiveParts {
                adversarial: adv,
                cls_consistency: Some(cs),
                intra_sd: sd,
                inter_sp: sp,
            };
            let total = total_generator_objective(&mut tape, &parts, &cfg.weights)?;
            let gvars = gv.var_list();
            let grads = tape
                .grad(total, &gvars)
                .map_err(|e| fail(e, "generator backward"))?;
            let grad_tensors: Vec<Tensor> = grads.iter().map(|&g| tape.value(g).clone()).collect();
            let grad_refs: Vec<&Tensor> = grad_tensors.iter().collect();
            adam_g.step(&mut generator.tensors_mut(), &grad_refs)?;

            sums[1] += tape.value(adv).item()?;
            sums[2] += tape.value(cs).item()?;
            sums[3] += sd.map(|v| tape.value(v).item()).transpose()?.unwrap_or(0.0);
            sums[4] += sp.map(|v| tape.value(v).item()).transpose()?.unwrap_or(0.0);
            sums[5] += tape.value(total).item()?;
            batches += 1;
        }
        let nb = batches as Real;
        log.epochs.push(EpochStats {
            epoch,
            critic_loss: sums[0] / (nb * cfg.critic_steps as Real),
            adv: sums[1] / nb,
            l_cs: sums[2] / nb,
            l_sd: sums[3] / nb,
            l_sp: sums[4] / nb,
            total: sums[5] / nb,
            wasserstein_gap: gap_sum / (nb * cfg.critic_steps as Real),
        });
    }
    Ok((generator, discriminator, log))
}

/// `count_per_class` features per requested unseen class, each `G(w, z)`
/// with fresh standard-normal noise.
pub fn synthesize_unseen(
    generator: &GeneratorParams,
    semantics: &[(u32, Tensor)],
    classes: &[u32],
    count_per_class: usize,
    seed: u64,
) -> Result<FeatureBatch> {
    if count_per_class == 0 {
        return Err(Error::Contract("count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all_rows: Vec<Tensor> = Vec::with_capacity(classes.len() * count_per_class);
    let mut labels = Vec::with_capacity(all_rows.capacity());
    for &id in classes {
        let w = semantics
            .iter()
            .find(|(c, _)| *c == id)
            .map(|(_, w)| w)
            .ok_or_else(|| Error::Contract(format!("unknown class id {id}")))?;
        let z = normal_matrix(&mut rng, count_per_class, generator.d_z);
        let w_rows = Tensor::from_rows(&vec![w.clone(); count_per_class])?;
        let f = generator.forward(&z, &w_rows)?;
        for i in 0..count_per_class {
            all_rows.push(f.row_tensor(i));
            labels.push(Label::Class(id));
        }
    }
    FeatureBatch::new(Tensor::from_rows(&all_rows)?, labels)
}

/// Train the unseen classifier on synthesized features only.
pub fn train_unseen_classifier(
    synth: &FeatureBatch,
    expected_classes: &[u32],
    cfg: &TrainConfig,
) -> Result<ClassifierParams> {
    cfg.validate()?;
    let mut ids = expected_classes.to_vec();
    ids.sort_unstable();
    ids.dedup();
    for &id in &ids {
        if synth.rows_of(Label::Class(id)).is_empty() {
            return Err(Error::Contract(format!(
                "no synthesized features for class {id}"
            )));
        }
    }
    let classes: Vec<Label> = ids.into_iter().map(Label::Class).collect();
    let clf = ClassifierParams::zeros(synth.d_f(), classes)?;
    train_linear_classifier(clf, &synth.features, &synth.labels, cfg)
}

/// Concatenate seen (with background) and unseen logit spaces; seen
/// columns are copied bitwise, so seen scores never change.
pub fn merge_classifiers(
    seen: &ClassifierParams,
    unseen: &ClassifierParams,
) -> Result<ClassifierParams> {
    if seen.d_f() != unseen.d_f() {
        return Err(Error::Shape(format!(
            "feature dims differ: {} vs {}",
            seen.d_f(),
            unseen.d_f()
        )));
    }
    for c in &unseen.classes {
        if seen.classes.contains(c) {
            return Err(Error::Contract(format!("class {c} present in both classifiers")));
        }
    }
    let d_f = seen.d_f();
    let (ks, ku) = (seen.num_classes(), unseen.num_classes());
    let mut weight = Vec::with_capacity(d_f * (ks + ku));
    for i in 0..d_f {
        weight.extend_from_slice(&seen.weight.data()[i * ks..(i + 1) * ks]);
        weight.extend_from_slice(&unseen.weight.data()[i * ku..(i + 1) * ku]);
    }
    let mut bias = seen.bias.data().to_vec();
    bias.extend_from_slice(unseen.bias.data());
    let mut classes = seen.classes.clone();
    classes.extend_from_slice(&unseen.classes);
    Ok(ClassifierParams {
        weight: Tensor::from_vec(&[d_f, ks + ku], weight)?,
        bias: Tensor::vector(bias),
        classes,
    })
}

/// Restrict a classifier to a subset of its columns (order preserved).
fn restrict_columns(clf: &ClassifierParams, keep: &[Label]) -> Result<ClassifierParams> {
    let idx: Vec<usize> = keep
        .iter()
        .map(|&l| {
            clf.class_index(l)
                .ok_or_else(|| Error::Contract(format!("class {l} not in classifier")))
        })
        .collect::<Result<_>>()?;
    let d_f = clf.d_f();
    let k = clf.num_classes();
    let mut weight = Vec::with_capacity(d_f * idx.len());
    for i in 0..d_f {
        for &j in &idx {
            weight.push(clf.weight.data()[i * k + j]);
        }
    }
    Ok(ClassifierParams {
        weight: Tensor::from_vec(&[d_f, idx.len()], weight)?,
        bias: Tensor::vector(idx.iter().map(|&j| clf.bias.data()[j]).collect()),
        classes: keep.to_vec(),
    })
}

fn tally(
    clf: &ClassifierParams,
    batches: &[&FeatureBatch],
) -> Result<(Vec<ClassAccuracy>, Vec<(Label, Label, usize)>)> {
    use std::collections::BTreeMap;
    let mut correct: BTreeMap<Label, (usize, usize)> = BTreeMap::new();
    let mut confusion: BTreeMap<(Label, Label), usize> = BTreeMap::new();
    for batch in batches {
        if batch.is_empty() {
            continue;
        }
        let logits = clf.forward(&batch.features)?;
        for i in 0..batch.len() {
            let truth = batch.labels[i];
            let pred = clf.classes[argmax(logits.row(i))];
            let e = correct.entry(truth).or_insert((0, 0));
            e.1 += 1;
            if pred == truth {
                e.0 += 1;
            }
            *confusion.entry((truth, pred)).or_insert(0) += 1;
        }
    }
    let per_class = correct
        .into_iter()
        .map(|(label, (c, t))| ClassAccuracy { label, correct: c, total: t })
        .collect();
    let confusion = confusion
        .into_iter()
        .map(|((t, p), n)| (t, p, n))
        .collect();
    Ok((per_class, confusion))
}

/// Evaluate the merged classifier on held-out features.
///
/// ZSD mode restricts both the test features and the logit space to the
/// unseen classes plus background; GZSD uses everything. The report also
/// carries the unseen-only accuracy (`zsd_accuracy`) in both modes.
pub fn evaluate(merged: &ClassifierParams, bench: &Benchmark, mode: EvalMode) -> Result<EvalReport> {
    let seen_ids = bench.seen_ids();
    let unseen_ids = bench.unseen_ids();
    let mut zsd_classes: Vec<Label> = unseen_ids.iter().map(|&c| Label::Class(c)).collect();
    zsd_classes.push(Label::Background);
    let zsd_clf = restrict_columns(merged, &zsd_classes)?;
    let zsd_batches = [&bench.test_unseen, &bench.test_backgrounds];
    if zsd_batches.iter().all(|b| b.is_empty()) {
        return Err(Error::EmptyBatch);
    }
    let (zsd_per_class, zsd_confusion) = tally(&zsd_clf, &zsd_batches)?;
    let unseen_accs: Vec<Real> = zsd_per_class
        .iter()
        .filter(|c| matches!(c.label, Label::Class(id) if unseen_ids.contains(&id)))
        .map(|c| c.percent())
        .collect();
    let zsd_accuracy = mean_or_zero(&unseen_accs);

    match mode {
        EvalMode::Zsd => Ok(EvalReport {
            mode,
            per_class: zsd_per_class,
            seen_mean: 0.0,
            unseen_mean: zsd_accuracy,
            harmonic_mean: 0.0,
            zsd_accuracy,
            confusion: zsd_confusion,
        }),
        EvalMode::Gzsd => {
            let batches = [&bench.test_seen, &bench.test_unseen, &bench.test_backgrounds];
            if batches.iter().all(|b| b.is_empty()) {
                return Err(Error::EmptyBatch);
            }
            let (per_class, confusion) = tally(merged, &batches)?;
            let seen_accs: Vec<Real> = per_class
                .iter()
                .filter(|c| matches!(c.label, Label::Class(id) if seen_ids.contains(&id)))
                .map(|c| c.percent())
                .collect();
            let unseen_accs: Vec<Real> = per_class
                .iter()
                .filter(|c| matches!(c.label, Label::Class(id) if unseen_ids.contains(&id)))
                .map(|c| c.percent())
                .collect();
            let s = mean_or_zero(&seen_accs);
            let u = mean_or_zero(&unseen_accs);
            Ok(EvalReport {
                mode,
                per_class,
                seen_mean: s,
                unseen_mean: u,
                harmonic_mean: harmonic_mean(s, u),
                zsd_accuracy,
                confusion,
            })
        }
    }
}

fn mean_or_zero(xs: &[Real]) -> Real {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<Real>() / xs.len() as Real
    }
}

/// Everything `train` produces in one pass.
pub struct PipelineOutput {
    pub seen_classifier: ClassifierParams,
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub unseen_classifier: ClassifierParams,
    pub merged: ClassifierParams,
    pub synthesized: FeatureBatch,
    pub log: TrainingLog,
}

/// The full training procedure: pretrain, synthesize-train, synthesize,
/// train unseen head, merge.
pub fn run_pipeline(bench: &Benchmark, cfg: &TrainConfig) -> Result<PipelineOutput> {
    let seen_classifier = pretrain_seen_classifier(bench, cfg)?;
    let (generator, discriminator, log) = train_synthesizer(bench, cfg, &seen_classifier)?;
    let semantics: Vec<(u32, Tensor)> = bench
        .unseen
        .iter()
        .map(|s| (s.id, s.semantic.clone()))
        .collect();
    let synthesized = synthesize_unseen(
        &generator,
        &semantics,
        &bench.unseen_ids(),
        cfg.synth_per_class,
        cfg.seed.wrapping_add(2),
    )?;
    let unseen_classifier = train_unseen_classifier(&synthesized, &bench.unseen_ids(), cfg)?;
    let merged = merge_classifiers(&seen_classifier, &unseen_classifier)?;
    Ok(PipelineOutput {
        seen_classifier,
        generator,
        discriminator,
        unseen_classifier,
        merged,
        synthesized,
        log,
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AblationVariant {
    /// Adversarial + classifier-consistency only.
    Baseline,
    /// Baseline plus the intra-class diverging loss.
    WithIntraSd,
    /// Plus inter-class preserving over synthesized features only.
    WithIntraSdSynthPool,
    /// Plus inter-class preserving over the full hybrid pool.
    Full,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Baseline,
        AblationVariant::WithIntraSd,
        AblationVariant::WithIntraSdSynthPool,
        AblationVariant::Full,
    ];

    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        let mut out = cfg.clone();
        match self {
            AblationVariant::Baseline => {
                out.weights.intra_sd = 0.0;
                out.weights.inter_sp = 0.0;
            }
            AblationVariant::WithIntraSd => {
                out.weights.inter_sp = 0.0;
            }
            AblationVariant::WithIntraSdSynthPool => {
                out.pool_synth_only = true;
            }
            AblationVariant::Full => {}
        }
        out
    }
}

impl std::fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AblationVariant::Baseline => write!(f, "b"),
            AblationVariant::WithIntraSd => write!(f, "b+Sd"),
            AblationVariant::WithIntraSdSynthPool => write!(f, "b+Sd+Sps"),
            AblationVariant::Full => write!(f, "b+Sd+Sp"),
        }
    }
}

pub struct AblationRow {
    pub variant: AblationVariant,
    pub zsd: EvalReport,
    pub gzsd: EvalReport,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,zsd,gzsd_s,gzsd_u,gzsd_hm\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.variant, r.zsd.zsd_accuracy, r.gzsd.seen_mean, r.gzsd.unseen_mean, r.gzsd.harmonic_mean
        ));
    }
    out
}

/// Train every requested variant from the same seed and report ZSD and
/// GZSD metrics side by side. The seen classifier is shared: its training
/// does not depend on the variant and is deterministic per seed.
pub fn run_ablation(
    bench: &Benchmark,
    cfg: &TrainConfig,
    variants: &[AblationVariant],
) -> Result<Vec<AblationRow>> {
    let seen_classifier = pretrain_seen_classifier(bench, cfg)?;
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let vcfg = variant.apply(cfg);
        let (generator, _disc, _log) = train_synthesizer(bench, &vcfg, &seen_classifier)?;
        let semantics: Vec<(u32, Tensor)> = bench
            .unseen
            .iter()
            .map(|s| (s.id, s.semantic.clone()))
            .collect();
        let synthesized = synthesize_unseen(
            &generator,
            &semantics,
            &bench.unseen_ids(),
            vcfg.synth_per_class,
            vcfg.seed.wrapping_add(2),
        )?;
        let unseen_classifier = train_unseen_classifier(&synthesized, &bench.unseen_ids(), &vcfg)?;
        let merged = merge_classifiers(&seen_classifier, &unseen_classifier)?;
        rows.push(AblationRow {
            variant,
            zsd: evaluate(&merged, bench, EvalMode::Zsd)?,
            gzsd: evaluate(&merged, bench, EvalMode::Gzsd)?,
        });
    }
    Ok(rows)
}
