//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Set `FLEXUP_ACCEPT=1,4,7` to run a subset.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use flexup_core::autodiff::{Selections, Tape};
use flexup_core::cloud::Normalization;
use flexup_core::config::TrainConfig;
use flexup_core::losses::{LossWeights, UniformConfig};
use flexup_core::metrics::{cd, hd, jsd, nuc, p2f};
use flexup_core::net::{forward_patch, NetConfig, ParamStore, Upsampler};
use flexup_core::oracle;
use flexup_core::pipeline::upsample_cloud;
use flexup_core::synth::{
    add_noise, random_surface, write_dataset, read_dataset, DatasetSpec, SurfaceKind, SurfaceSpec, TrainingPair,
};
use flexup_core::train::{model_gradcheck, train, Objective};
use flexup_core::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| loop {
            let p = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0 {
                break p;
            }
        })
        .collect()
}

/// A normalized patch of `n` points on a random surface.
fn surface_patch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    let name = ["plane", "sphere", "torus", "bump"][rng.random_range(0..4)];
    let s = random_surface(name, rng.random()).unwrap();
    let (pts, _) = s.sample(n, rng.random()).unwrap();
    Normalization::fit(&pts).unwrap().apply_all(&pts)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let store = ParamStore::init(NetConfig::default(), 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for _ in 0..100 {
        let patch = surface_patch(&mut rng, 64);
        let r = rng.random_range(1..=16);
        let mut tape = Tape::no_record();
        let bound = store.bind(&mut tape);
        let out = forward_patch(&mut tape, &bound, store.config(), &patch, r, true, &mut Selections::live())
            .map_err(|e| e.to_string())?;
        for row in tape.value(out.weights).data().chunks(store.config().neighbors) {
            if row.iter().any(|&w| w < 0.0) {
                return Err("negative weight".into());
            }
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            rows += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if worst < 1e-9 && secs < 10.0 {
        Ok(format!("{rows} rows, max |sum - 1| = {worst:.2e}, {secs:.2} s"))
    } else {
        Err(format!("max |sum - 1| = {worst:.2e}, {secs:.2} s"))
    }
}

fn criterion_2() -> Outcome {
    let cfg = NetConfig {
        neighbors: 8,
        ..NetConfig::default()
    };
    let store = ParamStore::init(cfg, 2).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    for _ in 0..50 {
        let patch = surface_patch(&mut rng, 32);
        let r = rng.random_range(1..=16);
        let mut tape = Tape::no_record();
        let bound = store.bind(&mut tape);
        let out = forward_patch(&mut tape, &bound, store.config(), &patch, r, true, &mut Selections::live())
            .map_err(|e| e.to_string())?;
        for (row, p) in tape.value(out.coarse).to_points().iter().enumerate() {
            let hull: Vec<Point3> = out.neighbors.row(row / r).iter().map(|&j| patch[j]).collect();
            if !oracle::in_convex_hull(p, &hull, 1e-9) {
                return Err(format!("coarse point {row} outside its neighbor hull"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} coarse points inside their 8-neighbor hulls"))
}

fn criterion_3() -> Outcome {
    let mut bytes = Vec::new();
    ParamStore::init(NetConfig::default(), 3)
        .and_then(|p| p.save(&mut bytes))
        .map_err(|e| e.to_string())?;
    let model = Upsampler::new(ParamStore::load(bytes.as_slice()).map_err(|e| e.to_string())?);
    let patch = surface_patch(&mut ChaCha8Rng::seed_from_u64(3), 64);
    let a = model.run(&patch, 4).map_err(|e| e.to_string())?.coarse;
    let b = model.run(&patch, 16).map_err(|e| e.to_string())?.coarse;
    for i in 0..64 {
        if a[i * 4..i * 4 + 4] != b[i * 16..i * 16 + 4] {
            return Err(format!("point {i}: R=4 replicas differ from the first 4 of R=16"));
        }
    }
    Ok("256 coarse points bit-identical".into())
}

fn criterion_4() -> Outcome {
    let base = Objective {
        weights: LossWeights::default(),
        uniform: UniformConfig { p: 0.05, max_seeds: 64 },
        use_refinement: true,
    };
    let w = base.weights;
    let variants = [
        ("complete", base),
        ("no-refine", Objective { use_refinement: false, ..base }),
        ("no-coarse-loss", Objective { weights: LossWeights { beta: 0.0, ..w }, ..base }),
        ("no-pro-loss", Objective { weights: LossWeights { gamma: 0.0, ..w }, ..base }),
        ("no-uni-loss", Objective { weights: LossWeights { zeta: 0.0, ..w }, ..base }),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, obj) in variants {
        let r = model_gradcheck(0, &obj, None).map_err(|e| e.to_string())?;
        ok &= r.max_rel_error < 1e-4;
        parts.push(format!("{name} {:.1e}", r.max_rel_error));
    }
    let summary = format!("max rel error: {}", parts.join(", "));
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = [0.0f64; 4];
    for _ in 0..200 {
        let na = rng.random_range(1..=512);
        let a = random_cloud(&mut rng, na);
        let nb = rng.random_range(1..=512);
        let b = random_cloud(&mut rng, nb);
        let e = [
            (cd(&a, &b).unwrap() - oracle::chamfer(&a, &b)).abs(),
            (hd(&a, &b).unwrap() - oracle::hausdorff(&a, &b)).abs(),
            (jsd(&a, &b, 32).unwrap() - oracle::jsd(&a, &b, 32)).abs(),
            (nuc(&a, 0.01, 50).unwrap() - oracle::nuc(&a, 0.01, 50)).abs(),
        ];
        for (w, v) in worst.iter_mut().zip(e) {
            *w = w.max(v);
        }
    }
    let summary = format!(
        "max deviation cd {:.1e}, hd {:.1e}, jsd {:.1e}, nuc {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    );
    if worst.iter().all(|&w| w <= 1e-12) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let na = rng.random_range(1..300);
        let a = random_cloud(&mut rng, na);
        let nb = rng.random_range(1..300);
        let b = random_cloud(&mut rng, nb);
        let j = jsd(&a, &b, 32).unwrap();
        if !(0.0..=2f64.ln() + 1e-12).contains(&j) {
            return Err(format!("jsd {j} outside [0, ln 2]"));
        }
        if (j - jsd(&b, &a, 32).unwrap()).abs() > 1e-12 {
            return Err("jsd not symmetric".into());
        }
        if (cd(&a, &b).unwrap() - cd(&b, &a).unwrap()).abs() > 1e-15 {
            return Err("cd not symmetric".into());
        }
        if hd(&a, &b).unwrap() != hd(&b, &a).unwrap() {
            return Err("hd not symmetric".into());
        }
    }
    let sphere = SurfaceSpec::canonical(SurfaceKind::Sphere { radius: 1.0 }).unwrap();
    let (pts, _) = sphere.sample(2000, 6).unwrap();
    let (mean, std) = p2f(&pts, &sphere).unwrap();
    if mean > 1e-9 || std > 1e-9 {
        return Err(format!("p2f on exact sphere samples = {mean:e}"));
    }
    Ok(format!("jsd in range, cd/hd symmetric, sphere p2f {mean:.1e}"))
}

/// Shared state for the learning criteria.
struct Desk {
    held_out: Vec<TrainingPair>,
    complete: Upsampler,
    no_refine: Upsampler,
    baseline: Upsampler,
    train_secs: f64,
}

fn desk_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.apply_text(include_str!("desk.cfg")).expect("valid desk config");
    cfg.validate().expect("valid desk config");
    cfg
}

fn desk() -> Desk {
    let root = tempfile::tempdir().unwrap();
    let train_spec = DatasetSpec {
        surfaces: vec!["bump".into(), "sphere".into(), "torus".into()],
        shapes_per_surface: 4,
        sparse_count: 512,
        factors: vec![2, 4, 8],
        seed: 0,
    };
    let held_spec = DatasetSpec {
        shapes_per_surface: 2,
        factors: (2..=8).collect(),
        seed: 1,
        ..train_spec.clone()
    };
    write_dataset(&root.path().join("train"), &train_spec).unwrap();
    write_dataset(&root.path().join("held"), &held_spec).unwrap();
    let data = read_dataset(&root.path().join("train")).unwrap();
    let held_out = read_dataset(&root.path().join("held")).unwrap();

    let cfg = desk_config();
    let start = Instant::now();
    let complete = train(&cfg, &data, &mut std::io::sink()).unwrap();
    let train_secs = start.elapsed().as_secs_f64();
    let no_refine_cfg = TrainConfig {
        use_refinement: false,
        ..cfg.clone()
    };
    let no_refine = train(&no_refine_cfg, &data, &mut std::io::sink()).unwrap();
    let mut params = ParamStore::init(cfg.net.clone(), cfg.seed).unwrap();
    params.zero_prefix("weights.2");
    Desk {
        held_out,
        complete,
        no_refine,
        baseline: Upsampler::new(params),
        train_secs,
    }
}

/// Mean held-out CD at factor `r`, clouds normalized by the ground truth.
fn held_out_cd(model: &Upsampler, held: &[TrainingPair], r: usize, noise: f64) -> Result<f64, String> {
    let mut total = 0.0;
    for (k, pair) in held.iter().enumerate() {
        let norm = Normalization::fit(&pair.sparse).map_err(|e| e.to_string())?;
        let noisy = add_noise(&norm.apply_all(&pair.sparse), noise, 100 + k as u64).map_err(|e| e.to_string())?;
        let input = norm.invert_all(&noisy);
        let out = upsample_cloud(model, &input, r, 64, None).map_err(|e| e.to_string())?;
        let (gt, _) = pair.dense_for(r).ok_or("missing ground truth")?;
        let g = Normalization::fit(gt).map_err(|e| e.to_string())?;
        let v = cd(&g.apply_all(&out.points), &g.apply_all(gt)).map_err(|e| e.to_string())?;
        if !v.is_finite() {
            return Err(format!("non-finite CD at R = {r}"));
        }
        total += v;
    }
    Ok(total / held.len() as f64)
}

fn criterion_7(d: &Desk) -> Outcome {
    let trained = held_out_cd(&d.complete, &d.held_out, 4, 0.0)?;
    let base = held_out_cd(&d.baseline, &d.held_out, 4, 0.0)?;
    let reduction = 1.0 - trained / base;
    let mut per_r = Vec::new();
    for r in 2..=8 {
        per_r.push(format!("{:.4}", held_out_cd(&d.complete, &d.held_out, r, 0.0)?));
    }
    let summary = format!(
        "held-out CD@4 {trained:.5} vs untrained {base:.5} ({:.1}% lower); CD for R=2..8: {}; training {:.0} s",
        100.0 * reduction,
        per_r.join(" "),
        d.train_secs
    );
    if reduction >= 0.30 && d.train_secs < 1800.0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_8(d: &Desk) -> Outcome {
    let full = held_out_cd(&d.complete, &d.held_out, 4, 0.0)?;
    let ablated = held_out_cd(&d.no_refine, &d.held_out, 4, 0.0)?;
    let coarse_only = Upsampler {
        use_refinement: false,
        ..d.complete.clone()
    };
    let coarse = held_out_cd(&coarse_only, &d.held_out, 4, 0.0)?;
    let summary = format!(
        "CD@4 complete {full:.5}, trained without refinement {ablated:.5}, complete model with offsets skipped {coarse:.5}"
    );
    if ablated >= full * 0.95 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_9(d: &Desk) -> Outcome {
    let levels = [0.0, 0.01, 0.025];
    let mut v = Vec::new();
    for &l in &levels {
        v.push(held_out_cd(&d.complete, &d.held_out, 4, l)?);
    }
    let summary = format!("CD@4 at noise 0 / 0.01 / 0.025: {:.5} / {:.5} / {:.5}", v[0], v[1], v[2]);
    if v[0] <= v[1] && v[1] <= v[2] {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn run(bin: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn pipeline_once(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let bin = env!("CARGO_BIN_EXE_flexup");
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    fs::write(dir.join("run.cfg"), "factors=2,4\nprobabilities=0.5,0.5\nr_max=4\nneighbors=8\nfeature_width=8\nedge_widths=8,8\ngraph_k=4\nquery_width=8\nvalue_width=8\nhidden_width=8\nbatch_size=2\npatch_size=32\niterations=15\n")
        .map_err(|e| e.to_string())?;
    run(bin, &["synth", "--out", &p("data"), "--seed", "7", "--shapes", "1", "--points", "128", "--factors", "2,4"])?;
    run(bin, &["train", "--data", &p("data"), "--config", &p("run.cfg"), "--seed", "7", "--out", &p("model.ckpt"), "--log", &p("train.csv")])?;
    let shape = fs::read_dir(dir.join("data/bump"))
        .map_err(|e| e.to_string())?
        .next()
        .ok_or("no shape written")?
        .map_err(|e| e.to_string())?
        .path();
    let shape_s = |f: &str| shape.join(f).to_string_lossy().into_owned();
    run(bin, &["upsample", "--checkpoint", &p("model.ckpt"), "--input", &shape_s("sparse.xyz"), "--factor", "4", "--patch-size", "32", "--out", &p("up.xyz")])?;
    run(bin, &["eval", "--pred", &p("up.xyz"), "--gt", &shape_s("dense_R4.xyz"), "--surface", &shape_s("surface.txt"), "--metrics", "cd,hd,jsd,p2f,nuc", "--out", &p("report.json")])?;
    ["model.ckpt", "train.csv", "up.xyz", "report.json"]
        .iter()
        .map(|f| fs::read(dir.join(f)).map(|b| (f.to_string(), b)).map_err(|e| e.to_string()))
        .collect()
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ra = pipeline_once(a.path())?;
    let rb = pipeline_once(b.path())?;
    for ((name, x), (_, y)) in ra.iter().zip(&rb) {
        if x != y {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok(format!(
        "byte-identical: {}",
        ra.iter().map(|(n, b)| format!("{n} ({} B)", b.len())).collect::<Vec<_>>().join(", ")
    ))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("FLEXUP_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let names = [
        "simplex invariant",
        "convex-hull invariant",
        "prefix flexibility",
        "gradient fidelity",
        "oracle equivalence",
        "metric sanity",
        "desk-scale learning signal",
        "ablation direction",
        "noise robustness trend",
        "determinism",
    ];
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let quick: [(usize, fn() -> Outcome); 6] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
    ];
    for (n, f) in quick {
        if want(n) {
            let r = f();
            report(n, names[n - 1], &r);
            results.push((n, r));
        }
    }
    if want(7) || want(8) || want(9) {
        let d = desk();
        let learning: [(usize, fn(&Desk) -> Outcome); 3] = [(7, criterion_7), (8, criterion_8), (9, criterion_9)];
        for (n, f) in learning {
            if want(n) {
                let r = f(&d);
                report(n, names[n - 1], &r);
                results.push((n, r));
            }
        }
    }
    if want(10) {
        let r = criterion_10();
        report(10, names[9], &r);
        results.push((10, r));
    }
    let failed: Vec<usize> = results.iter().filter(|r| r.1.is_err()).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

fn report(n: usize, name: &str, r: &Outcome) {
    match r {
        Ok(msg) => println!("PASS criterion {n:>2} ({name}): {msg}"),
        Err(msg) => println!("FAIL criterion {n:>2} ({name}): {msg}"),
    }
}
