//! Conditional GAN imputer.
//!
//! Both networks see the condition as `normalised observed grid (zeros at
//! masked slots) ++ mask (1.0 = masked)`. The generator prepends a latent
//! vector and produces a full grid; only its masked slots are used. The
//! discriminator receives a candidate full grid followed by the condition and
//! outputs the probability that the candidate is real.
//!
//! Training runs in two phases: self-supervised pretraining of the generator
//! with smooth L1 on observed entries hidden from it, then alternating
//! discriminator / generator updates with the non-saturating generator loss.

use std::io::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{self, MaskedSample};
use crate::error::{Error, Result};
use crate::impute::{check_width, Imputer};
use crate::neuralnet::{adam_step, bce_batch, smooth_l1_batch, Activation, AdamState, Gradients, NetParams};
use crate::scalar::Real;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub gan_epochs: usize,
    pub gan_lr: f64,
    pub batch_size: usize,
    /// Fraction of each row's observed entries hidden as reconstruction targets.
    pub pretrain_hide_fraction: f64,
    /// Weight of the smooth-L1 reconstruction term added to the generator
    /// objective in the adversarial phase; 0 leaves the adversarial loss alone.
    pub recon_weight: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 100,
            gen_hidden: vec![128, 256, 256, 128],
            disc_hidden: vec![64, 64, 64],
            pretrain_epochs: 50,
            pretrain_lr: 1e-3,
            gan_epochs: 200,
            gan_lr: 1e-5,
            batch_size: 64,
            pretrain_hide_fraction: 0.5,
            recon_weight: 1.0,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.latent_dim, self.batch_size];
        if counts.contains(&0) || self.gen_hidden.contains(&0) || self.disc_hidden.contains(&0) {
            return Err(Error::Config("GAN layer widths and batch size must be positive".into()));
        }
        if !(self.pretrain_lr > 0.0 && self.gan_lr > 0.0) {
            return Err(Error::Config("GAN learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.pretrain_hide_fraction) {
            return Err(Error::Config("pretrain_hide_fraction must lie in [0, 1)".into()));
        }
        if !(self.recon_weight >= 0.0 && self.recon_weight.is_finite()) {
            return Err(Error::Config("recon_weight must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Generator widths from input to output for a grid of `width` entries.
    pub fn generator_widths(&self, width: usize) -> Vec<usize> {
        let mut w = vec![self.latent_dim + 2 * width];
        w.extend(&self.gen_hidden);
        w.push(width);
        w
    }

    pub fn discriminator_widths(&self, width: usize) -> Vec<usize> {
        let mut w = vec![3 * width];
        w.extend(&self.disc_hidden);
        w.push(1);
        w
    }

    pub fn new_generator<F: Real>(&self, width: usize, seed: u64) -> Result<NetParams<F>> {
        let mut acts = vec![Activation::LeakyRelu; self.gen_hidden.len()];
        acts.push(Activation::None);
        NetParams::new(&self.generator_widths(width), &acts, seed)
    }

    pub fn new_discriminator<F: Real>(&self, width: usize, seed: u64) -> Result<NetParams<F>> {
        let mut acts = vec![Activation::LeakyRelu; self.disc_hidden.len()];
        acts.push(Activation::Sigmoid);
        NetParams::new(&self.discriminator_widths(width), &acts, seed)
    }
}

/// Parameter count of a dense stack with the given widths.
pub fn dense_param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Per-column z-scores fitted on observed training entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer<F> {
    pub mean: Vec<F>,
    pub std: Vec<F>,
}

impl<F: Real> Normalizer<F> {
    pub const MIN_STD: f64 = 1e-9;

    pub fn fit(rows: &[MaskedSample<F>]) -> Result<Self> {
        let width = rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| Error::Argument("empty training set".into()))?;
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let mut n = vec![0usize; width];
        for r in rows {
            check_width(r, width)?;
            for c in 0..width {
                if !r.mask[c] {
                    let v = r.observed[c].as_f64();
                    sum[c] += v;
                    sq[c] += v * v;
                    n[c] += 1;
                }
            }
        }
        let total: usize = n.iter().sum();
        if total == 0 {
            return Err(Error::Imputation("no observed entries to normalise with".into()));
        }
        let g_mean = sum.iter().sum::<f64>() / total as f64;
        let g_var = (sq.iter().sum::<f64>() / total as f64 - g_mean * g_mean).max(0.0);
        let mut mean = Vec::with_capacity(width);
        let mut std = Vec::with_capacity(width);
        for c in 0..width {
            let (m, var) = if n[c] == 0 {
                (g_mean, g_var)
            } else {
                let m = sum[c] / n[c] as f64;
                (m, (sq[c] / n[c] as f64 - m * m).max(0.0))
            };
            let sd = var.sqrt();
            mean.push(F::of(m));
            std.push(F::of(if sd < Self::MIN_STD { 1.0 } else { sd }));
        }
        Ok(Normalizer { mean, std })
    }

    #[inline]
    pub fn transform(&self, col: usize, v: F) -> F {
        (v - self.mean[col]) / self.std[col]
    }

    #[inline]
    pub fn inverse(&self, col: usize, z: F) -> F {
        z * self.std[col] + self.mean[col]
    }
}

fn normal_vec<F: Real>(rng: &mut Rng, n: usize) -> impl Iterator<Item = F> + '_ {
    (0..n).map(move |_| {
        let v: f64 = StandardNormal.sample(rng);
        F::of(v)
    })
}

/// Writes `z ++ condition ++ mask` for one sample into `out`.
fn fill_gen_input<F: Real>(out: &mut [F], z: impl Iterator<Item = F>, cond: &[F], mask: &[bool]) {
    let latent = out.len() - 2 * cond.len();
    for (o, v) in out[..latent].iter_mut().zip(z) {
        *o = v;
    }
    let w = cond.len();
    out[latent..latent + w].copy_from_slice(cond);
    for (o, m) in out[latent + w..].iter_mut().zip(mask) {
        *o = if *m { F::one() } else { F::zero() };
    }
}

fn fill_disc_input<F: Real>(out: &mut [F], candidate: &[F], cond: &[F], mask: &[bool]) {
    let w = cond.len();
    out[..w].copy_from_slice(candidate);
    out[w..2 * w].copy_from_slice(cond);
    for (o, m) in out[2 * w..].iter_mut().zip(mask) {
        *o = if *m { F::one() } else { F::zero() };
    }
}

/// Normalised condition vector: z-scored observed values, 0 where masked.
fn condition<F: Real>(norm: &Normalizer<F>, values: &[F], mask: &[bool]) -> Vec<F> {
    (0..values.len())
        .map(|c| if mask[c] { F::zero() } else { norm.transform(c, values[c]) })
        .collect()
}

/// Runs the generator and returns the full normalised grid.
pub fn gen_forward<F: Real>(gen: &NetParams<F>, z: &[F], condition: &[F], mask: &[bool]) -> Result<Vec<F>> {
    let w = condition.len();
    if mask.len() != w || gen.input_dim() != z.len() + 2 * w || gen.output_dim() != w {
        return Err(Error::Argument(format!(
            "generator {:?} cannot take latent {} and grid {}",
            gen.widths(),
            z.len(),
            w
        )));
    }
    let mut input = vec![F::zero(); gen.input_dim()];
    fill_gen_input(&mut input, z.iter().copied(), condition, mask);
    Ok(gen.forward(&input)?.0)
}

/// Normalised training data shared by both phases.
struct Prepared<F> {
    cond: Vec<Vec<F>>,
    truth: Vec<Vec<F>>,
    mask: Vec<Vec<bool>>,
}

impl<F: Real> Prepared<F> {
    fn new(rows: &[MaskedSample<F>], norm: &Normalizer<F>) -> Self {
        Prepared {
            cond: rows.iter().map(|r| condition(norm, &r.observed, &r.mask)).collect(),
            truth: rows
                .iter()
                .map(|r| (0..r.len()).map(|c| norm.transform(c, r.truth[c])).collect())
                .collect(),
            mask: rows.iter().map(|r| r.mask.clone()).collect(),
        }
    }

    fn len(&self) -> usize {
        self.cond.len()
    }
}

fn batches(n: usize, batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Hides `round(fraction * observed)` of row `i`'s observed entries (at least
/// one); returns the widened mask, the matching condition and the hidden
/// columns.
fn hide_observed<F: Real>(data: &Prepared<F>, i: usize, fraction: f64, rng: &mut Rng) -> (Vec<bool>, Vec<F>, Vec<usize>) {
    let width = data.mask[i].len();
    let observed: Vec<usize> = (0..width).filter(|&c| !data.mask[i][c]).collect();
    let n_hide = ((observed.len() as f64 * fraction).round() as usize).max(usize::from(!observed.is_empty()));
    let mut mask = data.mask[i].clone();
    let mut cond = data.cond[i].clone();
    let hidden: Vec<usize> = index::sample(rng, observed.len(), n_hide).into_iter().map(|h| observed[h]).collect();
    for &c in &hidden {
        mask[c] = true;
        cond[c] = F::zero();
    }
    (mask, cond, hidden)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome<F> {
    pub generator: NetParams<F>,
    pub losses: Vec<F>,
}

fn check_training<F: Real>(train: &[MaskedSample<F>], width: usize) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    train.iter().try_for_each(|r| check_width(r, width))
}

/// Self-supervised pretraining: each epoch hides a random share of every
/// row's observed entries and trains the generator to reconstruct them.
pub fn pretrain_generator<F: Real>(
    train: &[MaskedSample<F>],
    norm: &Normalizer<F>,
    config: &GanConfig,
    mut generator: NetParams<F>,
) -> Result<PretrainOutcome<F>> {
    config.validate()?;
    let width = norm.mean.len();
    check_training(train, width)?;
    let data = Prepared::new(train, norm);
    let mut adam = AdamState::new(&generator, config.pretrain_lr);
    let mut rng = seed::stream_rng(config.seed, 1);
    let mut losses = Vec::with_capacity(config.pretrain_epochs);
    let in_dim = generator.input_dim();
    for _ in 0..config.pretrain_epochs {
        let mut epoch_loss = 0.0;
        let mut used = 0usize;
        for batch in batches(data.len(), config.batch_size, &mut rng) {
            let b = batch.len();
            let mut input = Array2::zeros((b, in_dim));
            let mut target = Array2::zeros((b, width));
            let mut select = Array2::from_elem((b, width), false);
            for (k, &i) in batch.iter().enumerate() {
                let (mask, cond, hidden) = hide_observed(&data, i, config.pretrain_hide_fraction, &mut rng);
                for c in hidden {
                    select[[k, c]] = true;
                }
                let mut row = input.row_mut(k);
                let slot = row.as_slice_mut().expect("contiguous row");
                fill_gen_input(slot, normal_vec(&mut rng, config.latent_dim), &cond, &mask);
                target.row_mut(k).assign(&ndarray::ArrayView1::from(&data.truth[i]));
            }
            if !select.iter().any(|s| *s) {
                continue;
            }
            let (out, cache) = generator.forward_batch(input.view())?;
            let (loss, grad) = smooth_l1_batch(out.view(), target.view(), select.view())?;
            let (grads, _) = generator.backward(&cache, grad.view())?;
            adam_step(&mut generator, &grads, &mut adam)?;
            epoch_loss += loss.as_f64() * b as f64;
            used += b;
        }
        losses.push(F::of(if used == 0 { 0.0 } else { epoch_loss / used as f64 }));
    }
    Ok(PretrainOutcome { generator, losses })
}

/// Smooth L1 on hidden observed entries for a fixed, seeded hiding pattern.
/// Used to compare generators before and after pretraining.
pub fn reconstruction_loss<F: Real>(
    generator: &NetParams<F>,
    rows: &[MaskedSample<F>],
    norm: &Normalizer<F>,
    config: &GanConfig,
    seed: u64,
) -> Result<F> {
    let width = norm.mean.len();
    check_training(rows, width)?;
    let data = Prepared::new(rows, norm);
    let mut rng = seed::rng(seed);
    let b = rows.len();
    let mut input = Array2::zeros((b, generator.input_dim()));
    let mut target = Array2::zeros((b, width));
    let mut select = Array2::from_elem((b, width), false);
    for i in 0..b {
        let (mask, cond, hidden) = hide_observed(&data, i, config.pretrain_hide_fraction, &mut rng);
        for c in hidden {
            select[[i, c]] = true;
        }
        let mut row = input.row_mut(i);
        fill_gen_input(row.as_slice_mut().expect("contiguous"), normal_vec(&mut rng, config.latent_dim), &cond, &mask);
        target.row_mut(i).assign(&ndarray::ArrayView1::from(&data.truth[i]));
    }
    let out = generator.predict_batch(input.view())?;
    Ok(smooth_l1_batch(out.view(), target.view(), select.view())?.0)
}

#[derive(Debug, Clone)]
pub struct GanOutcome<F> {
    pub generator: NetParams<F>,
    pub discriminator: NetParams<F>,
    pub gen_losses: Vec<F>,
    pub disc_losses: Vec<F>,
}

/// One adversarial batch. With `hide` set, a share of each row's observed
/// entries is hidden from both networks and kept as reconstruction targets.
struct GanBatch<F> {
    gen_in: Array2<F>,
    real: Array2<F>,
    truth: Array2<F>,
    masks: Vec<Vec<bool>>,
    conds: Vec<Vec<F>>,
    hidden: Array2<bool>,
}

fn gan_batch<F: Real>(data: &Prepared<F>, batch: &[usize], latent: usize, hide: Option<f64>, rng: &mut Rng) -> GanBatch<F> {
    let width = data.cond[0].len();
    let b = batch.len();
    let mut out = GanBatch {
        gen_in: Array2::zeros((b, latent + 2 * width)),
        real: Array2::zeros((b, 3 * width)),
        truth: Array2::zeros((b, width)),
        masks: Vec::with_capacity(b),
        conds: Vec::with_capacity(b),
        hidden: Array2::from_elem((b, width), false),
    };
    for (k, &i) in batch.iter().enumerate() {
        let (mask, cond) = match hide {
            Some(fraction) => {
                let (mask, cond, hidden) = hide_observed(data, i, fraction, rng);
                for c in hidden {
                    out.hidden[[k, c]] = true;
                }
                (mask, cond)
            }
            None => (data.mask[i].clone(), data.cond[i].clone()),
        };
        let mut g = out.gen_in.row_mut(k);
        fill_gen_input(g.as_slice_mut().expect("contiguous"), normal_vec(rng, latent), &cond, &mask);
        let mut d = out.real.row_mut(k);
        fill_disc_input(d.as_slice_mut().expect("contiguous"), &data.truth[i], &cond, &mask);
        out.truth.row_mut(k).assign(&ndarray::ArrayView1::from(&data.truth[i]));
        out.masks.push(mask);
        out.conds.push(cond);
    }
    out
}

/// Discriminator input for generator-completed grids: masked slots from the
/// generator output, observed slots from the condition.
fn fake_batch<F: Real>(gb: &GanBatch<F>, gen_out: ArrayView2<'_, F>) -> Array2<F> {
    let width = gen_out.ncols();
    let mut fake = Array2::zeros((gb.masks.len(), 3 * width));
    let mut candidate = vec![F::zero(); width];
    for (k, (mask, cond)) in gb.masks.iter().zip(&gb.conds).enumerate() {
        for c in 0..width {
            candidate[c] = if mask[c] { gen_out[[k, c]] } else { cond[c] };
        }
        let mut d = fake.row_mut(k);
        fill_disc_input(d.as_slice_mut().expect("contiguous"), &candidate, cond, mask);
    }
    fake
}

fn add_grads<F: Real>(a: &mut Gradients<F>, b: &Gradients<F>) {
    for (x, y) in a.layers.iter_mut().zip(&b.layers) {
        x.weights += &y.weights;
        x.bias += &y.bias;
    }
}

/// Adversarial phase: per batch, one discriminator step on real and
/// generator-completed grids, then one generator step maximising log D(fake).
pub fn train_gan<F: Real>(
    train: &[MaskedSample<F>],
    norm: &Normalizer<F>,
    config: &GanConfig,
    mut generator: NetParams<F>,
) -> Result<GanOutcome<F>> {
    config.validate()?;
    let width = norm.mean.len();
    check_training(train, width)?;
    let data = Prepared::new(train, norm);
    let mut discriminator = config.new_discriminator::<F>(width, seed::derive_seed(config.seed, 2))?;
    let mut g_adam = AdamState::new(&generator, config.gan_lr);
    let mut d_adam = AdamState::new(&discriminator, config.gan_lr);
    let mut rng = seed::stream_rng(config.seed, 3);
    let hide = (config.recon_weight > 0.0).then_some(config.pretrain_hide_fraction);
    let mut gen_losses = Vec::with_capacity(config.gan_epochs);
    let mut disc_losses = Vec::with_capacity(config.gan_epochs);
    for _ in 0..config.gan_epochs {
        let (mut g_sum, mut d_sum, mut seen) = (0.0, 0.0, 0usize);
        for batch in batches(data.len(), config.batch_size, &mut rng) {
            let b = batch.len();
            let gb = gan_batch(&data, &batch, config.latent_dim, hide, &mut rng);
            let real = &gb.real;
            let (gen_out, g_cache) = generator.forward_batch(gb.gen_in.view())?;
            let fake = fake_batch(&gb, gen_out.view());

            // Discriminator step.
            let ones = Array2::from_elem((b, 1), F::one());
            let zeros = Array2::zeros((b, 1));
            let (p_real, c_real) = discriminator.forward_batch(real.view())?;
            let (l_real, g_real) = bce_batch(p_real.view(), ones.view())?;
            let (p_fake, c_fake) = discriminator.forward_batch(fake.view())?;
            let (l_fake, g_fake) = bce_batch(p_fake.view(), zeros.view())?;
            let (mut d_grads, _) = discriminator.backward(&c_real, g_real.view())?;
            add_grads(&mut d_grads, &discriminator.backward(&c_fake, g_fake.view())?.0);
            adam_step(&mut discriminator, &d_grads, &mut d_adam)?;

            // Generator step through the updated discriminator.
            let (p_gen, c_gen) = discriminator.forward_batch(fake.view())?;
            let (l_gen, g_gen) = bce_batch(p_gen.view(), ones.view())?;
            let (_, d_input) = discriminator.backward(&c_gen, g_gen.view())?;
            let mut d_out = d_input.slice(s![.., ..width]).to_owned();
            for (k, mask) in gb.masks.iter().enumerate() {
                for c in 0..width {
                    if !mask[c] {
                        d_out[[k, c]] = F::zero();
                    }
                }
            }
            if hide.is_some() {
                let (_, g_rec) = smooth_l1_batch(gen_out.view(), gb.truth.view(), gb.hidden.view())?;
                d_out.scaled_add(F::of(config.recon_weight), &g_rec);
            }
            let (g_grads, _) = generator.backward(&g_cache, d_out.view())?;
            adam_step(&mut generator, &g_grads, &mut g_adam)?;

            d_sum += (l_real + l_fake).as_f64() * b as f64;
            g_sum += l_gen.as_f64() * b as f64;
            seen += b;
        }
        disc_losses.push(F::of(d_sum / seen as f64));
        gen_losses.push(F::of(g_sum / seen as f64));
    }
    Ok(GanOutcome {
        generator,
        discriminator,
        gen_losses,
        disc_losses,
    })
}

/// Fraction of correct real/fake calls (threshold 0.5) on one batch of rows,
/// with fakes completed by `generator` from a seeded latent draw.
pub fn discriminator_accuracy<F: Real>(
    discriminator: &NetParams<F>,
    generator: &NetParams<F>,
    rows: &[MaskedSample<F>],
    norm: &Normalizer<F>,
    latent_dim: usize,
    seed: u64,
) -> Result<f64> {
    let data = Prepared::new(rows, norm);
    let batch: Vec<usize> = (0..rows.len()).collect();
    let mut rng = seed::rng(seed);
    let gb = gan_batch(&data, &batch, latent_dim, None, &mut rng);
    let (gen_in, real) = (&gb.gen_in, &gb.real);
    let gen_out = generator.predict_batch(gen_in.view())?;
    let fake = fake_batch(&gb, gen_out.view());
    let half = F::of(0.5);
    let pr = discriminator.predict_batch(real.view())?;
    let pf = discriminator.predict_batch(fake.view())?;
    let correct = pr.iter().filter(|p| **p > half).count() + pf.iter().filter(|p| **p <= half).count();
    Ok(correct as f64 / (2 * rows.len()) as f64)
}

/// Trained generator plus what is needed to impute raw dB rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct CganImputer<F> {
    pub config: GanConfig,
    pub normalizer: Normalizer<F>,
    #[serde(skip)]
    pub generator: Option<NetParams<F>>,
    /// Imputed dB values are clamped into this band when set.
    pub band: Option<(F, F)>,
    pub z_seed: u64,
}

/// Loss curves of both phases, one entry per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCurves<F> {
    pub pretrain: Vec<F>,
    pub gen: Vec<F>,
    pub disc: Vec<F>,
}

impl<F: Real> TrainingCurves<F> {
    /// CSV with columns `epoch,gen_loss,disc_loss,pretrain_loss`; pretraining
    /// epochs come first and leave the adversarial columns empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,gen_loss,disc_loss,pretrain_loss\n");
        let mut epoch = 0;
        for l in &self.pretrain {
            epoch += 1;
            out.push_str(&format!("{epoch},,,{l}\n"));
        }
        for (g, d) in self.gen.iter().zip(&self.disc) {
            epoch += 1;
            out.push_str(&format!("{epoch},{g},{d},\n"));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

impl<F: Real> CganImputer<F> {
    /// Full schedule: fit the normaliser, pretrain, then adversarial training.
    pub fn train(train: &[MaskedSample<F>], config: &GanConfig, band: Option<(F, F)>) -> Result<(Self, NetParams<F>, TrainingCurves<F>)> {
        config.validate()?;
        let normalizer = Normalizer::fit(train)?;
        let width = normalizer.mean.len();
        let gen0 = config.new_generator::<F>(width, seed::derive_seed(config.seed, 0))?;
        let pre = pretrain_generator(train, &normalizer, config, gen0)?;
        let gan = train_gan(train, &normalizer, config, pre.generator)?;
        let curves = TrainingCurves {
            pretrain: pre.losses,
            gen: gan.gen_losses,
            disc: gan.disc_losses,
        };
        let imputer = CganImputer {
            config: config.clone(),
            normalizer,
            generator: Some(gan.generator),
            band,
            z_seed: seed::derive_seed(config.seed, 4),
        };
        Ok((imputer, gan.discriminator, curves))
    }

    pub fn generator(&self) -> Result<&NetParams<F>> {
        self.generator
            .as_ref()
            .ok_or_else(|| Error::State("c-GAN generator has not been trained or loaded".into()))
    }

    pub fn width(&self) -> usize {
        self.normalizer.mean.len()
    }

    /// Imputes one row with the latent vector drawn from `z_seed`.
    pub fn impute_with_seed(&self, row: &MaskedSample<F>, z_seed: u64) -> Result<Vec<F>> {
        check_width(row, self.width())?;
        if !row.mask.iter().any(|m| *m) {
            return Ok(row.observed.clone());
        }
        let gen = self.generator()?;
        let cond = condition(&self.normalizer, &row.observed, &row.mask);
        let mut rng = seed::rng(z_seed);
        let z: Vec<F> = normal_vec(&mut rng, self.config.latent_dim).collect();
        let out = gen_forward(gen, &z, &cond, &row.mask)?;
        Ok((0..row.len())
            .map(|c| {
                if !row.mask[c] {
                    return row.observed[c];
                }
                let v = self.normalizer.inverse(c, out[c]);
                match self.band {
                    Some((lo, hi)) => v.max(lo).min(hi),
                    None => v,
                }
            })
            .collect())
    }

    /// `<dir>/cgan.json` (config, normaliser) and `<dir>/generator.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        dataio::write_json(&dir.join("cgan.json"), self)?;
        self.generator()?.save(&dir.join("generator.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut me: CganImputer<F> = dataio::read_json(&dir.join("cgan.json"))?;
        me.generator = Some(NetParams::load(&dir.join("generator.json"))?);
        Ok(me)
    }
}

/// Imputes a row with a trained generator.
pub fn cgan_impute<F: Real>(
    generator: &NetParams<F>,
    row: &MaskedSample<F>,
    normalizer: &Normalizer<F>,
    latent_dim: usize,
    z_seed: u64,
) -> Result<Vec<F>> {
    let imp = CganImputer {
        config: GanConfig {
            latent_dim,
            ..GanConfig::default()
        },
        normalizer: normalizer.clone(),
        generator: Some(generator.clone()),
        band: None,
        z_seed,
    };
    imp.impute_with_seed(row, z_seed)
}

impl<F: Real> Imputer<F> for CganImputer<F> {
    fn name(&self) -> &'static str {
        "cgan"
    }

    fn impute_batch(&self, rows: &[MaskedSample<F>]) -> Result<Vec<Vec<F>>> {
        rows.iter()
            .map(|r| self.impute_with_seed(r, seed::derive_seed(self.z_seed, r.ue_id as u64)))
            .collect()
    }
}
