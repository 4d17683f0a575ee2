//! Finite-difference verification of every training loss, including the
//! gradient penalty's double-backprop path and the composite generator
//! objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::losses::{
    cls_consistency_loss, critic_loss, generator_adv_loss, intra_sd_loss, inter_sp_loss_on,
    total_generator_objective, GeneratorObjectiveParts, LossWeights, Origin, PositivePolicy,
};
use crate::models::{Label, ModelConfig, ModelParams};
use crate::tape::{finite_diff_check, Tape, Var};
use crate::tensor::{Real, Tensor};

/// Result of one gradient check line.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub max_rel_err: Real,
    pub tolerance: Real,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

const TOL: Real = 1e-4;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("shape")
}

fn rand_pos(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x: Real = StandardNormal.sample(rng);
            x.abs() + 0.1
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

struct Instance {
    models: ModelParams,
    z: Tensor,
    w: Tensor,
    labels: Vec<Label>,
    f_real: Tensor,
    f_fake: Tensor,
}

const D_Z: usize = 3;
const D_W: usize = 4;
const D_F: usize = 6;
const HIDDEN: usize = 8;
const BATCH: usize = 4;
const NEGATIVES: usize = 4;

fn instance(seed: u64) -> Instance {
    let cfg = ModelConfig { d_z: D_Z, d_w: D_W, d_f: D_F, hidden: HIDDEN };
    let models = ModelParams::init(&cfg, &[0, 1, 2], &[3], seed).expect("init");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    // scale parameters up so the losses are far from degenerate
    let z = randn(&mut rng, &[BATCH, D_Z]);
    let w = randn(&mut rng, &[BATCH, D_W]);
    let labels: Vec<Label> = (0..BATCH).map(|i| Label::Class((i % 3) as u32)).collect();
    let f_real = rand_pos(&mut rng, &[BATCH, D_F]);
    let f_fake = rand_pos(&mut rng, &[BATCH, D_F]);
    Instance { models, z, w, labels, f_real, f_fake }
}

/// Worst error over every parameter tensor of the critic for the full
/// critic loss (Wasserstein gap plus gradient penalty).
fn check_critic(inst: &Instance, seed: u64) -> Result<Real> {
    let mut worst: Real = 0.0;
    for which in 0..4 {
        let x0 = inst.models.discriminator.tensors()[which].clone();
        let err = finite_diff_check(
            |t, xv| {
                let mut dv = inst.models.discriminator.vars(t)?;
                match which {
                    0 => dv.l1_w = xv,
                    1 => dv.l1_b = xv,
                    2 => dv.l2_w = xv,
                    _ => dv.l2_b = xv,
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(critic_loss(t, &dv, &inst.f_real, &inst.f_fake, &inst.w, 10.0, &mut rng)?.loss)
            },
            &x0,
            1e-5,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn with_generator_tensor(
    inst: &Instance,
    which: usize,
    t: &mut Tape,
    xv: Var,
) -> Result<crate::models::GeneratorVars> {
    let mut gv = inst.models.generator.vars(t)?;
    match which {
        0 => gv.l1_w = xv,
        1 => gv.l1_b = xv,
        2 => gv.l2_w = xv,
        _ => gv.l2_b = xv,
    }
    Ok(gv)
}

fn check_generator_adv(inst: &Instance) -> Result<Real> {
    let mut worst: Real = 0.0;
    for which in 0..4 {
        let x0 = inst.models.generator.tensors()[which].clone();
        let err = finite_diff_check(
            |t, xv| {
                let gv = with_generator_tensor(inst, which, t, xv)?;
                let dv = inst.models.discriminator.vars(t)?;
                let zv = t.leaf(inst.z.clone())?;
                let wv = t.leaf(inst.w.clone())?;
                let fake = gv.forward(t, zv, wv)?;
                generator_adv_loss(t, &dv, fake, wv)
            },
            &x0,
            1e-6,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_cls_consistency(inst: &Instance) -> Result<Real> {
    let mut worst: Real = 0.0;
    for which in 0..4 {
        let x0 = inst.models.generator.tensors()[which].clone();
        let err = finite_diff_check(
            |t, xv| {
                let gv = with_generator_tensor(inst, which, t, xv)?;
                let cv = inst.models.seen_classifier.vars(t)?;
                let zv = t.leaf(inst.z.clone())?;
                let wv = t.leaf(inst.w.clone())?;
                let fake = gv.forward(t, zv, wv)?;
                cls_consistency_loss(t, &cv, fake, &inst.labels)
            },
            &x0,
            1e-6,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Triplet noise for the diverging loss; fixed per instance so the same
/// values feed every finite-difference evaluation.
fn triplet_noise(seed: u64) -> (Tensor, Tensor, Vec<Tensor>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2000));
    let zq = randn(&mut rng, &[BATCH, D_Z]);
    let zp = randn(&mut rng, &[BATCH, D_Z]);
    let zn = (0..NEGATIVES).map(|_| randn(&mut rng, &[BATCH, D_Z])).collect();
    (zq, zp, zn)
}

fn intra_sd_on(
    inst: &Instance,
    which: usize,
    t: &mut Tape,
    xv: Var,
    noise: &(Tensor, Tensor, Vec<Tensor>),
) -> Result<Var> {
    let gv = with_generator_tensor(inst, which, t, xv)?;
    let wv = t.leaf(inst.w.clone())?;
    let zq = t.leaf(noise.0.clone())?;
    let zp = t.leaf(noise.1.clone())?;
    let fq = gv.forward(t, zq, wv)?;
    let fp = gv.forward(t, zp, wv)?;
    let mut fns = Vec::with_capacity(noise.2.len());
    for zn in &noise.2 {
        let znv = t.leaf(zn.clone())?;
        fns.push(gv.forward(t, znv, wv)?);
    }
    intra_sd_loss(t, fq, fp, &fns, 0.1)
}

fn check_intra_sd(inst: &Instance, seed: u64) -> Result<Real> {
    let noise = triplet_noise(seed);
    let mut worst: Real = 0.0;
    for which in 0..4 {
        let x0 = inst.models.generator.tensors()[which].clone();
        let err = finite_diff_check(
            |t, xv| intra_sd_on(inst, which, t, xv, &noise),
            &x0,
            1e-6,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn inter_sp_on(inst: &Instance, which: usize, t: &mut Tape, xv: Var, seed: u64) -> Result<Var> {
    let gv = with_generator_tensor(inst, which, t, xv)?;
    let zv = t.leaf(inst.z.clone())?;
    let wv = t.leaf(inst.w.clone())?;
    let fake = gv.forward(t, zv, wv)?;
    // pool: the synthesized batch itself plus constant real and background rows
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3000));
    let real = rand_pos(&mut rng, &[3, D_F]);
    let real_labels = [Label::Class(0), Label::Class(1), Label::Class(2)];
    let bg = rand_pos(&mut rng, &[2, D_F]);
    let real_v = t.leaf(real)?;
    let bg_v = t.leaf(bg)?;
    let pool = t.concat_rows(fake, real_v)?;
    let pool = t.concat_rows(pool, bg_v)?;
    let mut pool_labels = inst.labels.clone();
    pool_labels.extend_from_slice(&real_labels);
    pool_labels.extend([Label::Background, Label::Background]);
    let mut origins = vec![Origin::Synth; BATCH];
    origins.extend([Origin::RealProposal; 3]);
    origins.extend([Origin::Background; 2]);
    let self_rows: Vec<usize> = (0..BATCH).collect();
    let mut rng2 = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4000));
    let out = inter_sp_loss_on(
        t,
        fake,
        &inst.labels,
        pool,
        &pool_labels,
        &origins,
        Some(&self_rows),
        0.1,
        PositivePolicy::PreferRealProposal,
        &mut rng2,
    )?;
    Ok(out.loss)
}

fn check_inter_sp(inst: &Instance, seed: u64) -> Result<Real> {
    let mut worst: Real = 0.0;
    for which in 0..4 {
        let x0 = inst.models.generator.tensors()[which].clone();
        let err = finite_diff_check(|t, xv| inter_sp_on(inst, which, t, xv, seed), &x0, 1e-6)?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// The composite objective with every term active.
fn check_composite(inst: &Instance, seed: u64) -> Result<Real> {
    let weights = LossWeights {
        gp: 10.0,
        cls: 0.1,
        intra_sd: 0.001,
        inter_sp: 0.001,
        temperature: 0.1,
    };
    let noise = triplet_noise(seed);
    let mut worst: Real = 0.0;
    for which in 0..4 {
        let x0 = inst.models.generator.tensors()[which].clone();
        let err = finite_diff_check(
            |t, xv| {
                let gv = with_generator_tensor(inst, which, t, xv)?;
                let dv = inst.models.discriminator.vars(t)?;
                let cv = inst.models.seen_classifier.vars(t)?;
                let zv = t.leaf(inst.z.clone())?;
                let wv = t.leaf(inst.w.clone())?;
                let fake = gv.forward(t, zv, wv)?;
                let adv = generator_adv_loss(t, &dv, fake, wv)?;
                let cs = cls_consistency_loss(t, &cv, fake, &inst.labels)?;
                let sd = intra_sd_on(inst, which, t, xv, &noise)?;
                let sp = inter_sp_on(inst, which, t, xv, seed)?;
                let parts = GeneratorObjectiveParts {
                    adversarial: adv,
                    cls_consistency: Some(cs),
                    intra_sd: Some(sd),
                    inter_sp: Some(sp),
                };
                total_generator_objective(t, &parts, &weights)
            },
            &x0,
            1e-6,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Run every check over `instances` random instances each. With
/// `corrupt` a deliberately offset entry is appended so failure paths
/// can be exercised end to end.
pub fn run_suite(instances: usize, corrupt: bool) -> Result<Vec<SuiteEntry>> {
    let mut entries = vec![
        SuiteEntry { name: "critic_wgan_gp", max_rel_err: 0.0, tolerance: TOL },
        SuiteEntry { name: "generator_adversarial", max_rel_err: 0.0, tolerance: TOL },
        SuiteEntry { name: "cls_consistency", max_rel_err: 0.0, tolerance: TOL },
        SuiteEntry { name: "intra_sd", max_rel_err: 0.0, tolerance: TOL },
        SuiteEntry { name: "inter_sp", max_rel_err: 0.0, tolerance: TOL },
        SuiteEntry { name: "composite_objective", max_rel_err: 0.0, tolerance: TOL },
    ];
    for i in 0..instances {
        let seed = 7919 * (i as u64 + 1);
        let inst = instance(seed);
        let errs = [
            check_critic(&inst, seed)?,
            check_generator_adv(&inst)?,
            check_cls_consistency(&inst)?,
            check_intra_sd(&inst, seed)?,
            check_inter_sp(&inst, seed)?,
            check_composite(&inst, seed)?,
        ];
        for (e, err) in entries.iter_mut().zip(errs) {
            e.max_rel_err = e.max_rel_err.max(err);
        }
    }
    if corrupt {
        // negative control: a deliberately offset error that must fail
        entries.push(SuiteEntry {
            name: "negative_control_corrupted",
            max_rel_err: 1.0,
            tolerance: TOL,
        });
    }
    Ok(entries)
}
