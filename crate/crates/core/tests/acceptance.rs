//! Acceptance run: one pass/fail line per criterion.
//!
//! `cargo test --release -p threading-sim --test acceptance`

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use threading_sim::dlo_sim::*;
use threading_sim::harness::{run_campaign, Config, ControllerKind, ResultsTable};
use threading_sim::insertion_env::*;
use threading_sim::percept::{Label, Mask, Observation, PixelPos};
use threading_sim::policy::*;
use threading_sim::scene::{new_world, thread_material, WorldConfig};
use threading_sim::seeding::derive_seed;
use threading_sim::tactile::{indentation_force, SensorSpec};
use threading_sim::tail_finding::*;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// 1 ─ chain solver

fn xpbd_suite() -> Check {
    let nylon = MaterialSpec::new(8.3e9, 1150.0, 5e-4).map_err(|e| e.to_string())?;
    let glass = MaterialSpec::new(90e9, 2550.0, 1e-3).map_err(|e| e.to_string())?;
    let params = StepParams::default();

    let mut hang = new_chain(0.14, nylon, DEFAULT_SPACING, DEFAULT_DAMPING).map_err(|e| e.to_string())?;
    hang.pin(0);
    let anchor = hang.positions[0];
    for (i, p) in hang.positions.iter_mut().enumerate() {
        p.x += 0.002 * i as f64;
    }
    let out = settle(&mut hang, &[], &params, 1e-6, 20_000).map_err(|e| e.to_string())?;
    ensure!(out.converged, "hanging chain did not settle");
    let residual = hang.max_free_stretch_residual();
    ensure!(residual <= 1e-4, "hanging residual {residual}");
    ensure!(hang.positions[0] == anchor, "pinned particle moved");
    let lateral = hang.positions.iter().map(|p| p.x.hypot(p.y)).fold(0.0, f64::max);
    ensure!(lateral < DEFAULT_SPACING / 10.0, "hanging chain off vertical by {lateral}");

    let plane = CollisionPlane::new(Vector3::new(0.0, 0.0, -0.05), Vector3::z(), Vector3::x(), 0.6, 0.6)
        .map_err(|e| e.to_string())?;
    let mut c = new_chain(0.14, nylon, DEFAULT_SPACING, DEFAULT_DAMPING).map_err(|e| e.to_string())?;
    for p in &mut c.positions {
        *p = Vector3::new(-p.z, 0.0, 0.0);
    }
    c.pin(0);
    let mut worst: f64 = 0.0;
    for _ in 0..400 {
        step(&mut c, std::slice::from_ref(&plane), &params).map_err(|e| e.to_string())?;
        worst = c.positions.iter().map(|p| -plane.signed_distance(p)).fold(worst, f64::max);
    }
    ensure!(worst <= 1e-5, "plane penetration {worst}");
    let out = settle(&mut c, std::slice::from_ref(&plane), &params, 1e-6, 20_000).map_err(|e| e.to_string())?;
    ensure!(out.converged && c.max_free_stretch_residual() <= 1e-4, "resting chain residual {}", c.max_free_stretch_residual());

    let l = 0.02;
    let mut tail = new_clamped_tail(Vector3::zeros(), Vector3::x(), l, glass, DEFAULT_SPACING, DEFAULT_DAMPING)
        .map_err(|e| e.to_string())?;
    let (ghost, grip) = (tail.positions[0], tail.positions[1]);
    let out = settle(&mut tail, &[], &params, 1e-8, 20_000).map_err(|e| e.to_string())?;
    ensure!(out.converged, "cantilever did not settle");
    ensure!(tail.positions[0] == ghost && tail.positions[1] == grip, "clamp moved");
    let oracle = glass.weight_per_length(GRAVITY) * l.powi(4) / (8.0 * glass.bending_stiffness());
    let droop = -tail.tip().z;
    let rel = (droop - oracle).abs() / oracle;
    ensure!(rel <= 0.25, "droop {droop:.3e} vs oracle {oracle:.3e}");
    Ok(format!("residual {residual:.1e}, penetration {worst:.1e} m, droop {droop:.3e} m vs {oracle:.3e} m ({:.1}%)", 100.0 * rel))
}

// 2 ─ gradients

fn gradient_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shapes: Vec<(&str, Vec<usize>, Activation, Activation)> = vec![
        ("off-policy actor", vec![8, 64, 64, 2], Activation::Relu, Activation::Tanh),
        ("off-policy critic", vec![10, 64, 64, 1], Activation::Relu, Activation::Identity),
        ("on-policy actor", vec![8, 64, 64, 2], Activation::Tanh, Activation::Tanh),
        ("on-policy value", vec![8, 64, 64, 1], Activation::Tanh, Activation::Identity),
        ("tip model", vec![TIP_INPUTS, TIP_HIDDEN[0], TIP_HIDDEN[1], TIP_HIDDEN[2], 3], Activation::Tanh, Activation::Identity),
        ("raw-feature actor", vec![threading_sim::policy::features::RAW_FEATURE_DIM, 64, 64, 2], Activation::Relu, Activation::Tanh),
    ];
    let mut worst: f64 = 0.0;
    for (name, sizes, h, o) in shapes {
        let net = Mlp::new(&sizes, h, o, &mut rng).map_err(|e| e.to_string())?;
        let err = gradient_check(&net, 10, &mut rng).map_err(|e| e.to_string())?;
        ensure!(err < 1e-4, "{name}: relative error {err:.2e}");
        worst = worst.max(err);
    }
    Ok(format!("6 layer shapes × 10 probes, worst relative error {worst:.2e}"))
}

// 3 ─ tail-end finding

fn tail_finding() -> Check {
    let sensor = SensorSpec::default();
    let tol = 2.0 * sensor.mm_per_px() * 1e-3;
    let mut worst: f64 = 0.0;
    for (i, thread) in [1usize, 2, 3, 4, 1, 2, 3, 4].into_iter().enumerate() {
        let seed = 300 + i as u64;
        let mut world = new_world(&WorldConfig { thread, seed, ..WorldConfig::default() }).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = trace_to_tip(&mut world, &sensor, &mut rng).map_err(|e| e.to_string())?;
        let err = (first.l_thread - world.thread_length()).abs();
        ensure!(err <= tol, "thread {thread}: length error {err:.2e} m > {tol:.2e} m");
        worst = worst.max(err);
        let t = trace_to_offset(&mut world, &sensor, &first, DEFAULT_TAIL_TARGET, sample_tilt(&mut rng), &mut rng)
            .map_err(|e| e.to_string())?;
        ensure!(t.l_tail.to_bits() == (t.d1 - t.d2).to_bits(), "l_tail {} != d1 - d2 {}", t.l_tail, t.d1 - t.d2);
    }
    let data = collect_tip_dataset(500, thread_material(2).map_err(|e| e.to_string())?, &sensor, 17)
        .map_err(|e| e.to_string())?;
    let (_, held_out) = train_tip_model(&data, &TipTrainConfig { seed: 17, ..TipTrainConfig::default() })
        .map_err(|e| e.to_string())?;
    ensure!(held_out <= 5e-3, "tip model held-out error {:.2} mm", held_out * 1e3);
    Ok(format!(
        "worst length error {:.3} mm (bound {:.3} mm), tip model held-out error {:.2} mm on 500 samples",
        worst * 1e3,
        tol * 1e3,
        held_out * 1e3
    ))
}

// 4 ─ reward and termination

fn brute_reward(obs: &Observation) -> f64 {
    let c = obs.poke_com.expect("bump");
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &(r, col) in obs.eyelet_pixels.iter().rev() {
        let dr = r as f64 - c.row;
        let dc = col as f64 - c.col;
        let y = (dr * dr + dc * dc).sqrt() - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    let diag = ((obs.width * obs.width + obs.height * obs.height) as f64).sqrt();
    -sum / obs.eyelet_pixels.len() as f64 / diag
}

fn reward_oracle() -> Check {
    let sensor = SensorSpec::default();
    let spec = RewardSpec::for_sensor(&sensor);
    let (w, h) = (sensor.width_px, sensor.height_px);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let n = rng.gen_range(1..=EYELET_SAMPLES);
        let obs = Observation {
            poke_com: Some(PixelPos { row: rng.gen_range(0.0..h as f64), col: rng.gen_range(0.0..w as f64) }),
            eyelet_pixels: (0..n).map(|_| (rng.gen_range(0..h), rng.gen_range(0..w))).collect(),
            n,
            image_diag: spec.image_diag,
            width: w,
            height: h,
            eyelet: None,
            bump_count: 40,
            bump_in_hole: 0,
        };
        let r = compute_reward(&obs, Outcome::Running, &spec);
        ensure!((-1.0..=0.0).contains(&r), "step reward {r} outside [-1, 0]");
        worst = worst.max((r - brute_reward(&obs)).abs());
        ensure!(compute_reward(&obs, Outcome::Success, &spec) == 100.0, "success reward");
        ensure!(compute_reward(&obs, Outcome::FailTooFewPixels, &spec) == -100.0, "too-few-pixels reward");
        ensure!(compute_reward(&obs, Outcome::FailStepLimit, &spec) == -100.0, "step-limit reward");
    }
    ensure!(worst <= 1e-12, "reward differs from brute force by {worst:e}");

    // Hand-built masks: (bump pixels, of which inside the hole, hole present, steps, expected).
    let t = spec.pixel_threshold;
    ensure!(t == 31, "threshold {t} at 400x300");
    use Outcome::*;
    let cases: [(Option<usize>, usize, bool, usize, Outcome); 20] = [
        (None, 0, true, 1, FailTooFewPixels),
        (None, 0, false, 0, FailTooFewPixels),
        (Some(0), 0, true, 1, FailTooFewPixels),
        (Some(t - 1), 0, true, 1, FailTooFewPixels),
        (Some(t - 1), t - 1, true, 1, FailTooFewPixels),
        (Some(t - 1), 0, true, 6, FailTooFewPixels),
        (Some(t), 0, true, 1, Running),
        (Some(t), t, true, 1, Success),
        (Some(t), 15, true, 1, Running),
        (Some(t), 16, true, 1, Success),
        (Some(40), 20, true, 1, Running),
        (Some(40), 21, true, 1, Success),
        (Some(40), 19, true, 3, Running),
        (Some(40), 20, true, 6, FailStepLimit),
        (Some(40), 21, true, 6, Success),
        (Some(40), 0, true, 5, Running),
        (Some(40), 0, true, 6, FailStepLimit),
        (Some(40), 0, false, 1, Running),
        (Some(40), 0, false, 6, FailStepLimit),
        (Some(100), 50, true, 5, Running),
    ];
    for (i, &(bump_n, inside, has_hole, steps, want)) in cases.iter().enumerate() {
        let bump_px: Vec<(usize, usize)> = (0..bump_n.unwrap_or(0)).map(|k| (100 + k / 20, 100 + k % 20)).collect();
        let mut hole_px: Vec<(usize, usize)> = bump_px[..inside].to_vec();
        hole_px.extend((0..60).map(|k| (20 + k / 20, 300 + k % 20)));
        let bump = bump_n.map(|_| Mask::from_pixels(w, h, Label::Bump, &bump_px)).transpose().map_err(|e| e.to_string())?;
        let hole = Mask::from_pixels(w, h, Label::Hole, &hole_px).map_err(|e| e.to_string())?;
        let got = classify_outcome(bump.as_ref(), has_hole.then_some(&hole), steps, &spec);
        ensure!(got == want, "case {i}: {got:?}, expected {want:?}");
    }
    Ok(format!("2000 random observations within {worst:.1e} of brute force; 20/20 mask cases"))
}

// 5 to 7 ─ learning

struct Trained {
    params: PolicyParams,
    curve: Vec<CurvePoint>,
    secs: f64,
}

fn train_policy() -> Result<Trained, String> {
    let t = Instant::now();
    let mut task = InsertionTask::new(EnvConfig::default()).map_err(|e| e.to_string())?;
    let rep = train_offpolicy(&mut task, &OffPolicyConfig { total_steps: 100_000, seed: 1, ..OffPolicyConfig::default() })
        .map_err(|e| e.to_string())?;
    if let Some(msg) = rep.aborted {
        return Err(format!("training aborted: {msg}"));
    }
    Ok(Trained { params: rep.params, curve: rep.curve, secs: t.elapsed().as_secs_f64() })
}

fn campaign(needles: Vec<usize>, threads: Vec<usize>, controller: &ControllerKind) -> Result<ResultsTable, String> {
    let mut cfg = Config::default();
    cfg.seed = 2024;
    cfg.campaign.needles = needles;
    cfg.campaign.threads = threads;
    cfg.campaign.episodes = 100;
    run_campaign(&cfg, controller).map(|o| o.table).map_err(|e| e.to_string())
}

fn learning(trained: &Trained) -> Check {
    let (first, last) = curve_ends(&trained.curve, 0.1).ok_or("learning curve too short")?;
    let table = campaign(vec![2], vec![2], &ControllerKind::Policy(trained.params.clone()))?;
    let rate = table.aggregate_rate().ok_or("no episodes")?;
    ensure!(rate >= 0.6, "needle #2 / thread #2 success {:.0}% < 60%", 100.0 * rate);
    ensure!(last > first, "mean reward fell from {first:.1} to {last:.1}");
    Ok(format!(
        "needle #2 / thread #2 success {:.0}% over 100 episodes after 1e5 steps ({:.0} s); reward {first:.1} -> {last:.1}",
        100.0 * rate,
        trained.secs
    ))
}

fn baseline_ordering(trained: &Trained) -> Check {
    let policy = campaign(vec![2, 3], vec![1, 2, 3, 4], &ControllerKind::Policy(trained.params.clone()))?;
    let vs = campaign(vec![2, 3], vec![1, 2, 3, 4], &ControllerKind::Vs)?;
    let p = policy.aggregate_rate().ok_or("no episodes")?;
    let v = vs.aggregate_rate().ok_or("no episodes")?;
    let n3t2 = (policy.cell(3, 2, 60.0).and_then(|c| c.success_rate), vs.cell(3, 2, 60.0).and_then(|c| c.success_rate));
    ensure!(p - v >= 0.10, "policy {:.1}% vs baseline {:.1}%", 100.0 * p, 100.0 * v);
    Ok(format!(
        "policy {:.1}% vs baseline {:.1}% over 7 cells × 100 episodes; needle #3 / thread #2: {:.0}% vs {:.0}%",
        100.0 * p,
        100.0 * v,
        100.0 * n3t2.0.unwrap_or(f64::NAN),
        100.0 * n3t2.1.unwrap_or(f64::NAN)
    ))
}

fn size_trend(trained: &Trained) -> Check {
    let table = campaign(vec![1, 2, 3], vec![2], &ControllerKind::Policy(trained.params.clone()))?;
    let r = |n| table.cell(n, 2, 60.0).and_then(|c| c.success_rate).ok_or(format!("needle {n} missing"));
    let (r1, r2, r3) = (r(1)?, r(2)?, r(3)?);
    let inversions: Vec<f64> = [(r3, r2), (r2, r1)].iter().filter(|(hi, lo)| hi < lo).map(|(hi, lo)| lo - hi).collect();
    let ok = inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 0.05 + 1e-12);
    let steps = table.aggregate_mean_steps().ok_or("no successes")?;
    ensure!(
        ok,
        "needle #1/#2/#3 = {:.0}/{:.0}/{:.0}% (more than one inversion, or one over 5 points); mean steps to success {steps:.2}",
        100.0 * r1,
        100.0 * r2,
        100.0 * r3
    );
    ensure!(steps <= 5.0, "mean steps {steps}");
    Ok(format!(
        "thread #2: needle #1 {:.0}%, #2 {:.0}%, #3 {:.0}%; mean steps to success {steps:.2}",
        100.0 * r1,
        100.0 * r2,
        100.0 * r3
    ))
}

// 8 ─ stiffness limitation

fn limitation() -> Check {
    let sensor = SensorSpec::default();
    let material = thread_material(2).map_err(|e| e.to_string())?;
    let force = indentation_force(POKE_DEPTH, material.thickness, sensor.gel_young_modulus);
    // buckling load falls with length; half the reset tail is a conservative bound
    let feasible = force / buckling_load(&material, 0.5 * RESET_TAIL);
    let scale = 0.5 * feasible;
    let mut env = Env::new(EnvConfig { stiffness_scale: scale, ..EnvConfig::default() }).map_err(|e| e.to_string())?;
    let mut fails = 0;
    for i in 0..100u64 {
        let mut obs = env.reset(derive_seed(8, &[i])).map_err(|e| e.to_string())?;
        loop {
            let (a, _) = vs_baseline(&obs, sensor.mm_per_px());
            let r = env.step(a).map_err(|e| e.to_string())?;
            if r.done {
                fails += usize::from(r.outcome.outcome == Outcome::FailTooFewPixels);
                break;
            }
            obs = r.obs;
        }
    }
    ensure!(fails == 100, "{fails}/100 episodes ended FailTooFewPixels");
    Ok(format!("stiffness × {scale:.2e} (feasibility bound {feasible:.2e}): 100/100 FailTooFewPixels"))
}

// 9 ─ CLI determinism

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_threading"))
        .args(["--seed", "9", "--out", dir.to_str().unwrap()])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

fn determinism() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tip = root.path().join("tip");
    cli(&tip, &["train-tip"])?;
    let model = tip.join("tip_model.json");
    let model = model.to_str().unwrap();
    let runs: Vec<Vec<&str>> = vec![
        vec!["trace", "--episodes", "2"],
        vec!["collect-tip-data", "--samples", "40"],
        vec!["train-tip"],
        vec!["train-policy", "--algorithm", "offpolicy", "--steps", "1500"],
        vec!["train-policy", "--algorithm", "onpolicy", "--steps", "1500"],
        vec!["eval", "--episodes", "2", "--grid"],
        vec!["pipeline", "--tip-model", model, "--episodes", "2"],
        vec!["render"],
    ];
    let mut files = 0;
    for (i, args) in runs.iter().enumerate() {
        let a = root.path().join(format!("{i}a"));
        let b = root.path().join(format!("{i}b"));
        cli(&a, args)?;
        cli(&b, args)?;
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        ensure!(!fa.is_empty(), "{args:?} wrote no CSV");
        ensure!(fa == fb, "{args:?}: CSV outputs differ");
        files += fa.len();
    }
    Ok(format!("{} subcommand runs repeated, {files} CSV files byte-identical", runs.len()))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = t.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            println!("[PASS] {id}. {name}: {detail} [{secs:.1} s]");
            true
        }
        Err(detail) => {
            println!("[FAIL] {id}. {name}: {detail} [{secs:.1} s]");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= run(1, "chain solver correctness", xpbd_suite);
    ok &= run(2, "gradient checks", gradient_checks);
    ok &= run(3, "tail-end finding", tail_finding);
    ok &= run(4, "reward and termination oracle", reward_oracle);
    match train_policy() {
        Ok(trained) => {
            ok &= run(5, "learning at desk scale", || learning(&trained));
            ok &= run(6, "baseline ordering", || baseline_ordering(&trained));
            ok &= run(7, "size trend", || size_trend(&trained));
        }
        Err(e) => {
            for (id, name) in [(5, "learning at desk scale"), (6, "baseline ordering"), (7, "size trend")] {
                println!("[FAIL] {id}. {name}: {e}");
            }
            ok = false;
        }
    }
    ok &= run(8, "stiffness limitation", limitation);
    ok &= run(9, "CLI determinism", determinism);
    if !ok {
        std::process::exit(1);
    }
}
