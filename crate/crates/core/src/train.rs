//! Flexible-factor training: one factor drawn per iteration, a batch of
//! patches at that factor, the weighted loss, one Adam step.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck, Adam, Fault, GradcheckReport, Selections, Tape, Tensor, Var};
use crate::cloud::Normalization;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::{
    chamfer, chamfer_on_tape, projection_loss, projection_on_tape, uniform_loss, uniform_on_tape, LossTerms,
    LossWeights, UniformConfig,
};
use crate::net::{forward_patch, Bound, NetConfig, ParamStore, Upsampler};
use crate::spatial::SpatialGrid;
use crate::synth::{Augmentation, SurfaceKind, SurfaceSpec, TrainingPair};
use crate::Point3;

pub const LOG_HEADER: &str = "iter,R,L_total,L_refine,L_coarse,L_pro,L_uni";

/// One training example: an input patch and its ground truth at `factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub factor: usize,
    pub sparse: Vec<Point3>,
    pub gt: Vec<Point3>,
    pub normals: Vec<Point3>,
}

fn nearest_to(points: &[Point3], anchor: &Point3, k: usize) -> Vec<usize> {
    SpatialGrid::new(points)
        .k_nearest(anchor, k, None)
        .into_iter()
        .map(|e| e.1)
        .collect()
}

/// Cuts a training patch around a random sparse point: its `n` nearest sparse
/// points and the `n R` nearest ground-truth points, normalized by the sparse
/// patch's unit-sphere transform, then augmented.
pub fn make_patch<R: Rng>(pair: &TrainingPair, factor: usize, n: usize, jitter: f64, rng: &mut R) -> Result<PatchSample> {
    let (dense, normals) = pair
        .dense_for(factor)
        .ok_or_else(|| Error::Config(format!("dataset has no ground truth for R = {factor}")))?;
    if pair.sparse.len() < n || dense.len() < n * factor {
        return Err(Error::Range(format!(
            "shape with {} sparse / {} dense points is too small for patch size {n} at R = {factor}",
            pair.sparse.len(),
            dense.len()
        )));
    }
    let anchor = pair.sparse[rng.random_range(0..pair.sparse.len())];
    let sparse: Vec<Point3> = nearest_to(&pair.sparse, &anchor, n).iter().map(|&i| pair.sparse[i]).collect();
    let gt_idx = nearest_to(dense, &anchor, n * factor);
    let norm = Normalization::fit(&sparse)?;
    let sparse = norm.apply_all(&sparse);
    let gt: Vec<Point3> = gt_idx.iter().map(|&i| norm.apply(&dense[i])).collect();
    let normals: Vec<Point3> = gt_idx.iter().map(|&i| normals[i]).collect();
    let aug = Augmentation::random(rng, jitter);
    Ok(PatchSample {
        factor,
        sparse: aug.apply_input(&sparse, rng),
        gt: aug.apply_points(&gt),
        normals: aug.apply_normals(&normals),
    })
}

/// What the loss sees: weights (zero disables a term), uniform settings and
/// whether the refinement stage runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub uniform: UniformConfig,
    pub use_refinement: bool,
}

impl Objective {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            weights: cfg.effective_weights(),
            uniform: cfg.uniform,
            use_refinement: cfg.use_refinement,
        }
    }
}

/// Total loss of one patch on `tape`, plus every term's value. Terms with
/// zero weight are evaluated off the tape for logging only.
pub fn patch_objective(
    tape: &mut Tape,
    params: &Bound,
    net: &NetConfig,
    sample: &PatchSample,
    obj: &Objective,
    sel: &mut Selections,
) -> Result<(Var, LossTerms)> {
    let fwd = forward_patch(tape, params, net, &sample.sparse, sample.factor, obj.use_refinement, sel)?;
    let w = &obj.weights;
    let l_refine = chamfer_on_tape(tape, fwd.refined, &sample.gt, sel)?;
    let mut terms = LossTerms {
        refine: tape.value(l_refine).item(),
        ..LossTerms::default()
    };
    let mut total = tape.scale(l_refine, w.alpha);

    if w.beta > 0.0 {
        let l = chamfer_on_tape(tape, fwd.coarse, &sample.gt, sel)?;
        terms.coarse = tape.value(l).item();
        let s = tape.scale(l, w.beta);
        total = tape.add(total, s)?;
    } else {
        terms.coarse = chamfer(&tape.value(fwd.coarse).to_points(), &sample.gt)?;
    }
    if w.gamma > 0.0 {
        let l = projection_on_tape(tape, fwd.refined, &sample.gt, Some(&sample.normals), sel)?;
        terms.pro = tape.value(l).item();
        let s = tape.scale(l, w.gamma);
        total = tape.add(total, s)?;
    } else {
        terms.pro = projection_loss(&tape.value(fwd.refined).to_points(), &sample.gt, &sample.normals)?;
    }
    if w.zeta > 0.0 {
        let l = uniform_on_tape(tape, fwd.refined, &obj.uniform, sel)?;
        terms.uni = tape.value(l).item();
        let s = tape.scale(l, w.zeta);
        total = tape.add(total, s)?;
    } else {
        terms.uni = uniform_loss(&tape.value(fwd.refined).to_points(), &obj.uniform)?;
    }
    Ok((total, terms))
}

/// Draws factors from the configured distribution.
#[derive(Debug, Clone)]
pub struct FactorSampler {
    factors: Vec<usize>,
    dist: WeightedIndex<f64>,
}

impl FactorSampler {
    pub fn new(factors: &[usize], probabilities: &[f64]) -> Result<Self> {
        if factors.len() != probabilities.len() {
            return Err(Error::Config("factor and probability lists differ in length".into()));
        }
        let dist = WeightedIndex::new(probabilities.iter().copied())
            .map_err(|e| Error::Config(format!("factor probabilities: {e}")))?;
        Ok(Self {
            factors: factors.to_vec(),
            dist,
        })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        self.factors[self.dist.sample(rng)]
    }
}

/// Number of iterations a config asks for on a dataset: `iterations` when
/// set, else `epochs` passes where one pass sees about every sparse point once.
pub fn iteration_count(cfg: &TrainConfig, data: &[TrainingPair]) -> usize {
    cfg.iterations.unwrap_or_else(|| {
        let points: usize = data.iter().map(|p| p.sparse.len()).sum();
        let per_epoch = (points / (cfg.patch_size * cfg.batch_size)).max(1);
        cfg.epochs * per_epoch
    })
}

/// One optimization step over a batch. Returns the batch-mean terms.
pub fn train_step<R: Rng>(
    params: &mut ParamStore,
    adam: &mut Adam,
    cfg: &TrainConfig,
    data: &[TrainingPair],
    factor: usize,
    rng: &mut R,
) -> Result<LossTerms> {
    let obj = Objective::from_config(cfg);
    let mut sum: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    let mut mean = LossTerms::default();
    let b = cfg.batch_size as f64;
    for _ in 0..cfg.batch_size {
        let pair = &data[rng.random_range(0..data.len())];
        let sample = make_patch(pair, factor, cfg.patch_size, cfg.jitter, rng)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let (loss, terms) = patch_objective(&mut tape, &bound, &cfg.net, &sample, &obj, &mut Selections::live())?;
        let grads = tape.backward(loss)?;
        for ((_, var), acc) in bound.iter().zip(sum.iter_mut()) {
            let g = grads.get(var).expect("every parameter has a gradient");
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v / b;
            }
        }
        mean.refine += terms.refine / b;
        mean.coarse += terms.coarse / b;
        mean.pro += terms.pro / b;
        mean.uni += terms.uni / b;
    }
    let mut tensors: Vec<&mut Tensor> = params.tensors_mut().map(|(_, t)| t).collect();
    let grads: Vec<&Tensor> = sum.iter().collect();
    adam.step(&mut tensors, &grads)?;
    Ok(mean)
}

/// Trains from a fresh initialization, writing CSV log lines to `log`.
pub fn train(cfg: &TrainConfig, data: &[TrainingPair], log: &mut dyn Write) -> Result<Upsampler> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training needs at least one shape".into()));
    }
    let mut params = ParamStore::init(cfg.net.clone(), cfg.seed)?;
    let sampler = FactorSampler::new(&cfg.factors, &cfg.probabilities)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(cfg.lr);
    writeln!(log, "{LOG_HEADER}")?;
    let iterations = iteration_count(cfg, data);
    let weights = cfg.effective_weights();
    for it in 0..iterations {
        let r = sampler.sample(&mut rng);
        let t = train_step(&mut params, &mut adam, cfg, data, r, &mut rng)?;
        if it % cfg.log_every == 0 || it + 1 == iterations {
            writeln!(
                log,
                "{it},{r},{},{},{},{},{}",
                t.total(&weights),
                t.refine,
                t.coarse,
                t.pro,
                t.uni
            )?;
        }
    }
    let mut model = Upsampler::new(params);
    model.use_refinement = cfg.use_refinement;
    Ok(model)
}

/// Small network used by the end-to-end gradient check.
pub fn gradcheck_net() -> NetConfig {
    NetConfig {
        feature_width: 8,
        edge_widths: vec![6, 6],
        graph_k: 4,
        query_width: 6,
        value_width: 6,
        hidden_width: 8,
        r_max: 6,
        neighbors: 8,
    }
}

/// Finite-difference check of the full training loss with respect to every
/// network parameter: a 16-point bump patch at `R = 4` with random
/// parameters (including the normally zero-initialized offset head).
pub fn model_gradcheck(seed: u64, obj: &Objective, fault: Option<Fault>) -> Result<GradcheckReport> {
    let net = gradcheck_net();
    let surface = SurfaceSpec::canonical(SurfaceKind::Bump {
        amplitude: 0.5,
        width: 0.5,
    })?;
    let (sparse, _) = surface.sample(16, seed)?;
    let (gt, normals) = surface.sample(64, seed.wrapping_add(1))?;
    let norm = Normalization::fit(&sparse)?;
    let sample = PatchSample {
        factor: 4,
        sparse: norm.apply_all(&sparse),
        gt: norm.apply_all(&gt),
        normals,
    };
    let mut params = ParamStore::init(net.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    for (name, t) in params.tensors_mut() {
        if name.ends_with(".bias") || name.starts_with("refine.offset.1") {
            for x in t.data_mut() {
                *x = rng.random_range(-0.3..0.3);
            }
        }
    }
    let theta: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();

    let mut sel = Selections::recording();
    {
        let mut tape = Tape::no_record();
        let bound = params.bind(&mut tape);
        patch_objective(&mut tape, &bound, &net, &sample, obj, &mut sel)?;
    }
    let mut sel = sel.into_replay();
    gradcheck(
        |tape, vars| {
            if let Some(f) = fault {
                tape.inject_fault(f);
            }
            sel.rewind();
            let bound = params.bind_vars(vars);
            Ok(patch_objective(tape, &bound, &net, &sample, obj, &mut sel)?.0)
        },
        &theta,
        1e-4,
    )
}
