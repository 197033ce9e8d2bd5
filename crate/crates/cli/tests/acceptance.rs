//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use quatro::cote::{build_measurements, cote_axis, estimate_translation, truncated_objective};
use quatro::geometry::rot_z;
use quatro::harness::{generate_scene, run_sweep, SceneSpec, SweepSpec, SweepVariable};
use quatro::metrics::{rotation_error, success, translation_error, SuccessCriteria};
use quatro::pipeline::{register_with_correspondences, RansacConfig};
use quatro::pruning::{build_tims_chain, mcis_heuristic, CompatGraph};
use quatro::rotation::{estimate_rotation_gnc, gnc_weight, residual, solve_yaw_weighted};
use quatro::{GncConfig, PipelineConfig, RotationMode, Solver, TimSet};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

fn weight_update_oracle() -> Outcome {
    let start = Instant::now();
    let cbar = 0.15;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases: Vec<(f64, f64)> = (0..1000)
        .map(|_| (rng.random_range(0.0..=10.0), 10f64.powf(rng.random_range(-3.0..=3.0))))
        .collect();
    let n = 1_000_000;
    let worst = cases
        .par_iter()
        .map(|&(r, mu)| {
            let f = |w: f64| w * r + mu * (1.0 - w) * cbar * cbar / (mu + w);
            let (mut best_w, mut best_f) = (0.0, f(0.0));
            for i in 1..n {
                let w = i as f64 / (n - 1) as f64;
                let v = f(w);
                if v < best_f {
                    best_f = v;
                    best_w = w;
                }
            }
            let w = gnc_weight(r, mu, cbar);
            // a flat objective makes the arg-min ill-posed; compare values there
            if (f(w) - best_f).abs() < 1e-15 {
                0.0
            } else {
                (w - best_w).abs()
            }
        })
        .reduce(|| 0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && within(elapsed, 30.0),
        format!("max |w - w_grid| = {worst:.2e} over 1000 triples, {:.1?}", elapsed),
    )
}

fn yaw_grid_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sets: Vec<(TimSet, Vec<f64>)> = (0..200)
        .map(|_| {
            let k = rng.random_range(1..=50);
            let alphas = (0..k).map(|_| random_vec(&mut rng, 10.0)).collect();
            let yaw = rng.random_range(-PI..PI);
            let betas = (0..k)
                .map(|i| {
                    let a: Vector3<f64> = random_vec(&mut rng, 10.0);
                    // half consistent with one yaw, half arbitrary
                    if i % 2 == 0 {
                        rot_z(yaw) * a + random_vec(&mut rng, 0.5)
                    } else {
                        a
                    }
                })
                .collect::<Vec<_>>();
            let w = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            (TimSet::new(alphas, betas), w)
        })
        .collect();
    let steps = (2.0 * PI / 1e-4).ceil() as usize;
    let worst = sets
        .par_iter()
        .map(|(tims, w)| {
            let cost = |t: f64| {
                let r = rot_z(t);
                tims.iter()
                    .zip(w)
                    .map(|((a, b), wk)| wk * residual(a, b, &r, RotationMode::QuasiSo3))
                    .sum::<f64>()
            };
            let grid = (0..steps)
                .map(|i| -PI + i as f64 * 1e-4)
                .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
                .expect("non-empty grid");
            let yaw = solve_yaw_weighted(tims, w).expect("planar extent");
            ((yaw - grid + PI).rem_euclid(2.0 * PI) - PI).abs()
        })
        .reduce(|| 0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        worst <= 2e-4 && within(elapsed, 60.0),
        format!("max |yaw - yaw_grid| = {worst:.2e} rad over 200 sets, {:.1?}", elapsed),
    )
}

fn cote_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cbar = 0.15;
    let instances: Vec<(Vec<f64>, Vec<f64>)> = (0..200)
        .map(|_| {
            let n = rng.random_range(1..=20);
            let centre = rng.random_range(-2.0..2.0);
            let values = (0..n)
                .map(|i| {
                    if i % 3 == 0 {
                        rng.random_range(-5.0..5.0)
                    } else {
                        centre + rng.random_range(-0.1..0.1)
                    }
                })
                .collect();
            let sigmas = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            (values, sigmas)
        })
        .collect();
    let worst = instances
        .par_iter()
        .map(|(values, sigmas)| {
            let est = cote_axis(values, sigmas, cbar).expect("non-empty").estimate;
            let ours = truncated_objective(est, values, sigmas, cbar);
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
            let steps = ((hi - lo) / 1e-5).ceil() as usize;
            let grid = (0..=steps)
                .map(|i| truncated_objective(lo + i as f64 * 1e-5, values, sigmas, cbar))
                .fold(f64::INFINITY, f64::min);
            ours - grid
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && within(elapsed, 60.0),
        format!(
            "max objective excess over grid = {worst:.2e} over 200 instances, {:.1?}",
            elapsed
        ),
    )
}

fn degeneracy_dichotomy() -> Outcome {
    let start = Instant::now();
    let quasi = PipelineConfig::default();
    let full = PipelineConfig {
        solver: Solver::FullGnc,
        ..PipelineConfig::default()
    };
    let trials: Vec<(bool, bool)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let spec = SceneSpec {
                seed,
                inlier_floor: Some(1 + seed as usize % 2),
                noise_sigma: 0.01,
                ..SceneSpec::default()
            };
            let scene = generate_scene(&spec).expect("valid scene");
            let gt = &scene.ground_truth;
            let recovered = match register_with_correspondences(&scene.src, &scene.tgt, &scene.corr, &quasi) {
                Ok(r) => {
                    rotation_error(&r.transform.rotation, &gt.rotation) < 1.0
                        && translation_error(&r.transform.translation, &gt.translation).sqrt() < 0.2
                }
                Err(_) => false,
            };
            let degenerate = matches!(
                register_with_correspondences(&scene.src, &scene.tgt, &scene.corr, &full),
                Err(e) if e.is_degenerate_rotation()
            );
            (recovered, degenerate)
        })
        .collect();
    let recovered = trials.iter().filter(|t| t.0).count();
    let degenerate = trials.iter().filter(|t| t.1).count();
    let elapsed = start.elapsed();
    outcome(
        recovered >= 90 && degenerate == 100 && within(elapsed, 120.0),
        format!(
            "quasi recovered {recovered}/100, full_so3 degenerate {degenerate}/100, {:.1?}",
            elapsed
        ),
    )
}

fn outlier_robustness() -> Outcome {
    let start = Instant::now();
    let trials: Vec<(bool, bool)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let spec = SceneSpec {
                seed,
                n_correspondences: 500,
                outlier_ratio: 0.75,
                noise_sigma: 0.05,
                ..SceneSpec::default()
            };
            let scene = generate_scene(&spec).expect("valid scene");
            let gt = &scene.ground_truth;
            let ok = |solver: Solver| {
                let config = PipelineConfig {
                    solver,
                    ransac: RansacConfig {
                        iterations: 1000,
                        seed,
                        ..RansacConfig::default()
                    },
                    ..PipelineConfig::default()
                };
                register_with_correspondences(&scene.src, &scene.tgt, &scene.corr, &config).is_ok_and(|r| {
                    success(
                        translation_error(&r.transform.translation, &gt.translation).sqrt(),
                        rotation_error(&r.transform.rotation, &gt.rotation),
                    )
                })
            };
            (ok(Solver::Quatro), ok(Solver::Ransac))
        })
        .collect();
    let quatro = trials.iter().filter(|t| t.0).count();
    let ransac = trials.iter().filter(|t| t.1).count();
    let elapsed = start.elapsed();
    outcome(
        quatro >= 95 && ransac < quatro && within(elapsed, 300.0),
        format!("quatro {quatro}/100, ransac-1k {ransac}/100, {:.1?}", elapsed),
    )
}

/// Exact maximum clique by Bron-Kerbosch with pivoting.
fn max_clique_size(g: &CompatGraph) -> usize {
    fn expand(g: &CompatGraph, r: usize, p: Vec<usize>, x: Vec<usize>, best: &mut usize) {
        if p.is_empty() && x.is_empty() {
            *best = (*best).max(r);
            return;
        }
        if r + p.len() <= *best {
            return;
        }
        let pivot = p
            .iter()
            .chain(&x)
            .copied()
            .max_by_key(|&u| p.iter().filter(|&&v| g.has_edge(u, v)).count())
            .expect("non-empty");
        let (mut p, mut x) = (p, x);
        for v in p.clone() {
            if g.has_edge(pivot, v) {
                continue;
            }
            let np = p.iter().copied().filter(|&u| g.has_edge(u, v)).collect();
            let nx = x.iter().copied().filter(|&u| g.has_edge(u, v)).collect();
            expand(g, r + 1, np, nx, best);
            p.retain(|&u| u != v);
            x.push(v);
        }
    }
    let mut best = 0;
    expand(g, 0, (0..g.len()).collect(), Vec::new(), &mut best);
    best
}

fn mcis_quality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut invalid = 0;
    let mut worst_ratio: f64 = 1.0;
    for i in 0..100 {
        let n = rng.random_range(1..=25);
        let p = [0.3, 0.5, 0.7][i % 3];
        let mut g = CompatGraph::new(n);
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.random_bool(p) {
                    g.add_edge(a, b);
                }
            }
        }
        let clique = mcis_heuristic(&g);
        if clique.is_empty() || !g.is_maximal_clique(&clique) {
            invalid += 1;
        }
        worst_ratio = worst_ratio.min(clique.len() as f64 / max_clique_size(&g) as f64);
    }
    let elapsed = start.elapsed();
    outcome(
        invalid == 0 && worst_ratio >= 0.8 && within(elapsed, 120.0),
        format!(
            "{invalid} invalid cliques, worst size ratio {worst_ratio:.3} over 100 graphs, {:.1?}",
            elapsed
        ),
    )
}

fn yaw_sweep_flatness() -> Outcome {
    let sweep = SweepSpec {
        variable: SweepVariable::YawMagnitude,
        values: vec![0.0, 45.0, 90.0, 135.0, 180.0],
        trials_per_value: 50,
        solvers: vec![Solver::Quatro],
        use_ins: false,
        criteria: SuccessCriteria::default(),
    };
    let base = SceneSpec {
        outlier_ratio: 0.6,
        ..SceneSpec::default()
    };
    let report = run_sweep(&sweep, &base, &PipelineConfig::default()).expect("sweep runs");
    let r_avg: Vec<f64> = sweep
        .values
        .iter()
        .map(|&v| report.summary_for(v, Solver::Quatro).expect("summary row").r_avg)
        .collect();
    let flat = r_avg.iter().all(|&r| r <= 2.0 * r_avg[0]);
    let listing: Vec<String> = r_avg.iter().map(|r| format!("{r:.4}")).collect();
    outcome(
        flat,
        format!("r_avg per yaw [0,45,90,135,180] = [{}] deg", listing.join(", ")),
    )
}

fn ins_mode() -> Outcome {
    let base = SceneSpec {
        roll_deg: 3.0,
        pitch_deg: 4.0,
        ..SceneSpec::default()
    };
    let run = |use_ins: bool| {
        let sweep = SweepSpec {
            variable: SweepVariable::OutlierRatio,
            values: vec![base.outlier_ratio],
            trials_per_value: 50,
            solvers: vec![Solver::Quatro],
            use_ins,
            criteria: SuccessCriteria::default(),
        };
        let report = run_sweep(&sweep, &base, &PipelineConfig::default()).expect("sweep runs");
        report.summary[0].r_avg
    };
    let (with, without) = (run(true), run(false));
    outcome(
        with <= without,
        format!("r_avg with INS {with:.4} deg, without {without:.4} deg"),
    )
}

fn optimization_speed() -> Outcome {
    let spec = SceneSpec {
        n_points: 3000,
        n_correspondences: 1000,
        outlier_ratio: 0.0,
        overlap: 1.0,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec).expect("valid scene");
    let tims = build_tims_chain(&scene.src, &scene.tgt, &scene.corr).expect("enough pairs");
    let cfg = GncConfig::default();
    let mut times: Vec<f64> = (0..31)
        .map(|_| {
            let t = Instant::now();
            let rot = estimate_rotation_gnc(&tims, &cfg, RotationMode::QuasiSo3).expect("rotation");
            let meas = build_measurements(&scene.src, &scene.tgt, &scene.corr, &rot.rotation).expect("measurements");
            let est = estimate_translation(&meas, cfg.cbar).expect("translation");
            std::hint::black_box(est);
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    outcome(
        median <= 50.0,
        format!("median {median:.2} ms on {} pairs", scene.corr.len()),
    )
}

fn metric_identities() -> Outcome {
    let e = rotation_error(&rot_z(10f64.to_radians()), &Matrix3::identity());
    outcome(
        (e - 10.0).abs() <= 1e-9 && success(2.0, 10.0),
        format!("rotation_error = {e:.12} deg, success(2, 10) = {}", success(2.0, 10.0)),
    )
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_quatro"))
        .args(args)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn read_all(dir: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names
        .iter()
        .map(|n| std::fs::read(dir.join(n)).expect("output file"))
        .collect()
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = tmp.path();
    let scene_spec = dir.join("scene.toml");
    std::fs::write(
        &scene_spec,
        "seed = 11\nn_points = 800\nn_correspondences = 200\noutlier_ratio = 0.6\n",
    )
    .unwrap();
    let sweep_spec = dir.join("sweep.toml");
    std::fs::write(
        &sweep_spec,
        "[sweep]\nvariable = \"outlier_ratio\"\nvalues = [0.3, 0.7]\ntrials_per_value = 4\nsolvers = [\"quatro\", \"ransac\"]\n\
         [scene]\nn_points = 800\nn_correspondences = 200\n",
    )
    .unwrap();

    let mut mismatches = Vec::new();
    let scene_files = [
        "src.ply",
        "tgt.ply",
        "correspondences.txt",
        "labels.txt",
        "ground_truth.json",
    ];
    let (a, b) = (dir.join("scene_a"), dir.join("scene_b"));
    for out in [&a, &b] {
        let code = run_cli(&[
            "gen-scene",
            "--spec",
            scene_spec.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .0;
        if code != 0 {
            mismatches.push(format!("gen-scene exit {code}"));
        }
    }
    if read_all(&a, &scene_files) != read_all(&b, &scene_files) {
        mismatches.push("gen-scene".into());
    }

    let src = a.join("src.ply");
    let tgt = a.join("tgt.ply");
    let corr = a.join("correspondences.txt");
    let (src, tgt, corr) = (src.to_str().unwrap(), tgt.to_str().unwrap(), corr.to_str().unwrap());
    let variants: [&[&str]; 4] = [
        &["register", src, tgt, "--corr", corr],
        &[
            "register", src, tgt, "--corr", corr, "--solver", "ransac", "--seed", "5",
        ],
        &["register", src, tgt, "--corr", corr, "--solver", "gnc", "--refine"],
        &["register", src, tgt],
    ];
    for args in variants {
        let (c1, o1) = run_cli(args);
        let (c2, o2) = run_cli(args);
        if c1 != c2 || o1 != o2 || o1.is_empty() {
            mismatches.push(format!("{} (exit {c1}/{c2})", args[4..].join(" ")));
        }
    }

    let (sa, sb) = (dir.join("sweep_a"), dir.join("sweep_b"));
    for out in [&sa, &sb] {
        let code = run_cli(&[
            "sweep",
            "--spec",
            sweep_spec.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .0;
        if code != 0 {
            mismatches.push(format!("sweep exit {code}"));
        }
    }
    let sweep_files = ["results.csv", "summary.json"];
    if read_all(&sa, &sweep_files) != read_all(&sb, &sweep_files) {
        mismatches.push("sweep".into());
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "gen-scene, 4 register variants and sweep byte-identical across runs".to_string()
        } else {
            format!("differences: {}", mismatches.join("; "))
        },
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("weight-update oracle", weight_update_oracle),
        ("yaw-step oracle", yaw_grid_oracle),
        ("COTE oracle", cote_oracle),
        ("degeneracy dichotomy", degeneracy_dichotomy),
        ("outlier robustness", outlier_robustness),
        ("MCIS-heuristic quality", mcis_quality),
        ("yaw-sweep flatness", yaw_sweep_flatness),
        ("INS mode", ins_mode),
        ("optimization speed", optimization_speed),
        ("metric identities", metric_identities),
        ("pipeline determinism", cli_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = format!("AC{}", i + 1);
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let o = check();
        println!("{id:<5} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
