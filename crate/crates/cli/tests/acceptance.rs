//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use pottsseg::exact::{enumerate, transfer_matrix_chain};
use pottsseg::lbp::{Coupling, LbpOptions};
use pottsseg::ml::log_marginal_likelihood;
use pottsseg::observation::{init_params, likelihood_table, LikelihoodTable};
use pottsseg::posterior::solve_posterior_fixed_point;
use pottsseg::prior::{
    free_energy_curve, solve_alpha_for_u, solve_prior_fixed_point, transition_point, AlphaMethod,
    MessageInit,
};
use pottsseg::{synthetic, Boundary, ColorImage, Grid, LabelField, LabelSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const TRANSITION_TOL: f64 = 0.005;
const TRANSITION_SECONDS: f64 = 5.0;
const ONSET_TOL: f64 = 0.001;
const KINK_FACTOR: f64 = 10.0;
const ALPHA_TOL: f64 = 0.02;
const TREE_TOL: f64 = 1e-9;
const TREE_CASES: u64 = 100;
const ANCHOR_F_TOL: f64 = 1e-12;
const ANCHOR_SLOPE_TOL: f64 = 1e-6;
const ANCHOR_LOGLIK_TOL: f64 = 1e-10;
const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_EXCLUSION: f64 = 0.05;
const ACCURACY_MIN: f64 = 0.99;
const MEAN_TOL: f64 = 0.02;
const U_TOL: f64 = 0.05;
const MAX_OUTER: usize = 200;
const CME_SECONDS: f64 = 60.0;
const EQUIVALENCE_TOL: f64 = 0.02;
const RESIDUAL_MAX: f64 = 1e-3;

const TABLE: [(usize, f64, f64); 12] = [
    (5, 0.0155, 3.2218),
    (5, 0.0382, 2.8367),
    (5, 0.0631, 2.6397),
    (5, 0.2775, 2.1932),
    (5, 0.1440, 2.3559),
    (5, 0.1496, 2.3444),
    (8, 0.0278, 3.2480),
    (8, 0.0510, 3.0055),
    (8, 0.1166, 2.7186),
    (8, 0.3371, 2.5050),
    (8, 0.1767, 2.6050),
    (8, 0.1949, 2.5826),
];

type Outcome = Result<String, String>;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pottsseg")
}

fn invoke(args: &[&str]) -> Result<(String, Duration), String> {
    let t = Instant::now();
    let out = Command::new(bin())
        .args(args)
        .output()
        .map_err(|e| format!("could not start the binary: {e}"))?;
    let elapsed = t.elapsed();
    if !out.status.success() {
        return Err(format!(
            "{} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok((String::from_utf8_lossy(&out.stdout).into_owned(), elapsed))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn write_ppm(path: &Path, image: &ColorImage) {
    let mut bytes = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    bytes.extend(image.to_rgb8());
    fs::write(path, bytes).unwrap();
}

/// Pixel bytes of a PPM written by the tool.
fn ppm_pixels(path: &Path) -> Vec<u8> {
    let bytes = fs::read(path).unwrap();
    let mut newlines = 0;
    let start = bytes
        .iter()
        .position(|&b| {
            newlines += usize::from(b == b'\n');
            newlines == 3
        })
        .unwrap();
    bytes[start + 1..].to_vec()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    (header, rows)
}

fn transition_json(q: &str) -> Result<(Value, Duration), String> {
    let (out, t) = invoke(&["transition", "--labels", q])?;
    Ok((serde_json::from_str(&out).map_err(|e| e.to_string())?, t))
}

fn criterion_1() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (q, expected) in [("5", 2.1972), ("8", 2.5871)] {
        let (v, t) = transition_json(q)?;
        let k = v["K_C"].as_f64().unwrap_or(f64::NAN);
        let good = (k - expected).abs() <= TRANSITION_TOL
            && v["kind"] == "first_order"
            && t.as_secs_f64() < TRANSITION_SECONDS;
        ok &= good;
        parts.push(format!("q={q} K_C={k:.4} ({:.3}s)", t.as_secs_f64()));
    }
    check(ok, parts.join(", "))
}

fn criterion_2() -> Outcome {
    let (v, _) = transition_json("2")?;
    let onset = v["onset"].as_f64().unwrap_or(f64::NAN);
    let none = v["kind"] == "none_detected" && v["K_C"].is_null();

    // Secant slopes of f on each side of the onset against the local
    // second-difference level.
    let h = 0.002;
    let ks: Vec<f64> = (0..=2000).map(|i| i as f64 * h).collect();
    let rows = free_energy_curve(2, &ks).map_err(|e| e.to_string())?;
    let f: Vec<f64> = rows.iter().map(|r| r.f).collect();
    let i = ks.partition_point(|&k| k < onset) - 1;
    let left = (f[i] - f[i - 1]) / h;
    let right = (f[i + 2] - f[i + 1]) / h;
    let mut curv: Vec<f64> = (1..ks.len() - 1)
        .filter(|&j| (ks[j] - onset).abs() > 2.0 * h && (ks[j] - onset).abs() < 0.1)
        .map(|j| (f[j + 1] - 2.0 * f[j] + f[j - 1]).abs() / h)
        .collect();
    curv.sort_by(f64::total_cmp);
    let noise = curv[curv.len() / 2];
    let gap = (right - left).abs();
    check(
        none && (onset - 4f64.ln()).abs() <= ONSET_TOL && gap < KINK_FACTOR * noise,
        format!(
            "kind={} onset={onset:.5} slope gap {gap:.2e} vs noise {noise:.2e}",
            v["kind"]
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for method in [AlphaMethod::PaperMultiplicative, AlphaMethod::Bisection] {
        for (q, u, alpha) in TABLE {
            let s = solve_alpha_for_u(q, u, method, 1e-10).map_err(|e| e.to_string())?;
            worst = worst.max((s.coupling - alpha).abs());
        }
    }
    check(
        worst <= ALPHA_TOL,
        format!("12 pairs, both methods, worst |dα| = {worst:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let opts = LbpOptions {
        tol: 1e-13,
        ..LbpOptions::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..TREE_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = rng.random_range(2..=4);
        let n = rng.random_range(2..=if q == 4 { 10 } else { 12 });
        let chain = seed % 2 == 0;
        let grid = if chain {
            Grid::chain(n).unwrap()
        } else {
            Grid::from_edges(n, (1..n).map(|i| (rng.random_range(0..i), i)).collect()).unwrap()
        };
        let c = Coupling::new(rng.random_range(0.0..4.0)).unwrap();
        let values = (0..n * q).map(|_| rng.random_range(-5.0..2.0)).collect();
        let table = LikelihoodTable::from_values(q, values).unwrap();
        let oracle = |f: Option<&LikelihoodTable>| {
            if chain {
                transfer_matrix_chain(n, q, c, f).unwrap()
            } else {
                enumerate(&grid, q, c, f).unwrap()
            }
        };
        let prior = solve_prior_fixed_point(&grid, q, c, &MessageInit::Uniform, &opts).unwrap();
        let post =
            solve_posterior_fixed_point(&grid, c, &table, &MessageInit::Uniform, &opts).unwrap();
        for (b, ex) in [
            (&prior.beliefs, oracle(None)),
            (&post.beliefs, oracle(Some(&table))),
        ] {
            let d = b
                .node
                .iter()
                .zip(&ex.node)
                .chain(b.edge.iter().zip(&ex.edge))
                .map(|(x, y)| (x - y).abs())
                .fold((b.log_partition - ex.log_partition).abs(), f64::max);
            worst = worst.max(d);
        }
    }
    check(
        worst < TREE_TOL,
        format!("{TREE_CASES} chains and trees, worst deviation {worst:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut f_err: f64 = 0.0;
    let mut slope_err: f64 = 0.0;
    let strict = LbpOptions {
        tol: 1e-14,
        ..LbpOptions::default()
    };
    let periodic = Grid::lattice(8, 8, Boundary::Periodic).unwrap();
    for q in [2, 3, 5, 8] {
        let lnq = (q as f64).ln();
        f_err = f_err.max((free_energy_curve(q, &[0.0]).unwrap()[0].f + lnq).abs());
        let f = |k: f64| {
            solve_prior_fixed_point(
                &periodic,
                q,
                Coupling::new(k).unwrap(),
                &MessageInit::Uniform,
                &strict,
            )
            .unwrap()
            .free_energy
        };
        f_err = f_err.max((f(0.0) + lnq).abs());
        let h = 1e-4;
        let slope = (-3.0 * f(0.0) + 4.0 * f(h) - f(2.0 * h)) / (2.0 * h);
        slope_err = slope_err.max((slope + 1.0 / q as f64).abs());
    }
    let (img, _) = synthetic::two_region(16, 12, 0.1, 3).unwrap();
    let (params, _) = init_params(&img, LabelSet::new(3).unwrap(), 0).unwrap();
    let g = Grid::lattice(16, 12, Boundary::Free).unwrap();
    let ll = log_marginal_likelihood(&g, &img, Coupling::ZERO, &params, &LbpOptions::default())
        .map_err(|e| e.to_string())?;
    let fact = likelihood_table(&img, &params)
        .unwrap()
        .factorized_log_likelihood()
        / g.num_nodes() as f64;
    let ll_err = (ll.value - fact).abs();
    check(
        f_err <= ANCHOR_F_TOL && slope_err <= ANCHOR_SLOPE_TOL && ll_err <= ANCHOR_LOGLIK_TOL,
        format!("f(0) {f_err:.1e}, df/dK(0) {slope_err:.1e}, loglik(0) {ll_err:.1e}"),
    )
}

fn criterion_6() -> Outcome {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for q in [2, 3, 5, 8] {
        let k_c = transition_point(q, (0.0, 6.0), 1e-9).unwrap().k_c;
        for i in 0..=200 {
            let k = i as f64 * 0.02;
            if k_c.is_some_and(|kc| (k - kc).abs() <= GRADIENT_EXCLUSION) {
                continue;
            }
            let rows = free_energy_curve(q, &[(k - h).max(0.0), k, k + h]).unwrap();
            let fd = (rows[2].f - rows[0].f) / (rows[2].coupling - rows[0].coupling);
            worst = worst.max((fd - rows[1].dfdk).abs());
            points += 1;
        }
    }
    check(
        worst < GRADIENT_TOL,
        format!("{points} couplings, q in 2,3,5,8, worst {worst:.2e}"),
    )
}

struct Runs {
    dir: PathBuf,
    input7: PathBuf,
    input9: PathBuf,
}

impl Runs {
    fn out(&self, run: usize, name: &str) -> PathBuf {
        self.dir.join(format!("run{run}_{name}"))
    }

    fn segment(&self, run: usize) -> Result<Duration, String> {
        invoke(&[
            "segment",
            "--input",
            self.input7.to_str().unwrap(),
            "--labels",
            "2",
            "--seed",
            "7",
            "--out",
            self.out(run, "seg.ppm").to_str().unwrap(),
            "--report",
            self.out(run, "seg.json").to_str().unwrap(),
            "--csv",
            self.out(run, "trace.csv").to_str().unwrap(),
        ])
        .map(|(_, t)| t)
    }

    fn sweep(
        &self,
        run: usize,
        tag: &str,
        input: &Path,
        extra: &[&str],
    ) -> Result<Duration, String> {
        let mut args = vec![
            "ml-sweep",
            "--input",
            input.to_str().unwrap(),
            "--seed",
            "7",
        ];
        args.extend_from_slice(extra);
        let out = self.out(run, &format!("{tag}.ppm"));
        let report = self.out(run, &format!("{tag}.json"));
        let csv = self.out(run, &format!("{tag}.csv"));
        args.extend([
            "--out",
            out.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
            "--csv",
            csv.to_str().unwrap(),
        ]);
        invoke(&args).map(|(_, t)| t)
    }
}

fn criterion_7(r: &Runs, truth: &LabelField) -> Outcome {
    let t = r.segment(0)?;
    let report = json(&r.out(0, "seg.json"));
    let pixels = ppm_pixels(&r.out(0, "seg.ppm"));
    let found: Vec<usize> = pixels.chunks(3).map(|p| usize::from(p[0] > 127)).collect();
    let same = found
        .iter()
        .zip(truth.as_slice())
        .filter(|(a, b)| a == b)
        .count() as f64
        / found.len() as f64;
    let accuracy = same.max(1.0 - same);
    let mut means: Vec<f64> = report["theta"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|g| {
            g["mean"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_f64().unwrap())
                .collect::<Vec<_>>()
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let mean_err = means[..3]
        .iter()
        .map(|m| (m - 0.2).abs())
        .chain(means[3..].iter().map(|m| (m - 0.8).abs()))
        .fold(0.0, f64::max);
    let u_true = truth.disagreement(&Grid::lattice(64, 64, Boundary::Free).unwrap());
    let u_hat = report["u_hat"].as_f64().unwrap();
    let iterations = report["iterations"].as_u64().unwrap() as usize;
    let converged = report["converged"] == true;
    check(
        accuracy >= ACCURACY_MIN
            && mean_err <= MEAN_TOL
            && (u_hat - u_true).abs() <= U_TOL
            && converged
            && iterations <= MAX_OUTER
            && t.as_secs_f64() < CME_SECONDS,
        format!(
            "accuracy {:.2}%, mean error {mean_err:.4}, u_hat {u_hat:.4} vs {u_true:.4}, {iterations} iterations, {:.2}s",
            100.0 * accuracy,
            t.as_secs_f64()
        ),
    )
}

fn criterion_8(r: &Runs) -> Outcome {
    let t = r.sweep(0, "ml_sep", &r.input7, &["--labels", "2"])?;
    let ml = json(&r.out(0, "ml_sep.json"));
    let cme = json(&r.out(0, "seg.json"));
    let k_hat = ml["k_hat"].as_f64().unwrap();
    let alpha = cme["alpha_hat"].as_f64().unwrap();
    let residual = ml["residual"].as_f64().unwrap();
    check(
        (k_hat - alpha).abs() <= EQUIVALENCE_TOL && residual.abs() < RESIDUAL_MAX,
        format!(
            "K_hat {k_hat:.5} vs alpha(u_hat) {alpha:.5}, residual {residual:.1e}, kink_detected={}, {:.1}s",
            ml["kink_detected"],
            t.as_secs_f64()
        ),
    )
}

fn criterion_9(r: &Runs) -> Outcome {
    let t = r.sweep(
        0,
        "ml_noise",
        &r.input9,
        &["--labels", "5", "--boundary", "periodic"],
    )?;
    let ml = json(&r.out(0, "ml_noise.json"));
    let kink = ml["kink_detected"] == true;
    let k_c = ml["K_C"].as_f64().unwrap_or(f64::NAN);
    let left = ml["left_slope"].as_f64().unwrap_or(f64::NAN);
    let right = ml["right_slope"].as_f64().unwrap_or(f64::NAN);
    let noise = ml["slope_noise"].as_f64().unwrap_or(f64::NAN);
    let gap = (right - left).abs();

    let (_, rows) = csv_rows(&r.out(0, "ml_noise.csv"));
    let kl: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect();
    let i = kl.partition_point(|&(k, _)| k < k_c);
    let (a, b) = (kl[i - 1], kl[i]);
    let jump = (b.1 - a.1).abs();
    let allowed = 2.0 * left.abs().max(right.abs()) * (b.0 - a.0);
    check(
        kink && (k_c - 2.1972).abs() <= TRANSITION_TOL && gap > KINK_FACTOR * noise && jump <= allowed,
        format!(
            "kink_detected={kink} at K_C {k_c:.4}, slope gap {gap:.3} vs noise {noise:.1e}, loglik step {jump:.1e} across K_C (slope bound {allowed:.1e}), K_hat {:.3}, {:.1}s",
            ml["k_hat"].as_f64().unwrap_or(f64::NAN),
            t.as_secs_f64()
        ),
    )
}

fn criterion_10(r: &Runs) -> Outcome {
    r.segment(1)?;
    r.sweep(1, "ml_sep", &r.input7, &["--labels", "2"])?;
    r.sweep(
        1,
        "ml_noise",
        &r.input9,
        &["--labels", "5", "--boundary", "periodic"],
    )?;
    let names = [
        "seg.ppm",
        "seg.json",
        "trace.csv",
        "ml_sep.ppm",
        "ml_sep.json",
        "ml_sep.csv",
        "ml_noise.ppm",
        "ml_noise.json",
        "ml_noise.csv",
    ];
    let differing: Vec<&str> = names
        .iter()
        .filter(|n| fs::read(r.out(0, n)).ok() != fs::read(r.out(1, n)).ok())
        .copied()
        .collect();
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} output files byte-identical across two runs",
                names.len()
            )
        } else {
            format!("differing outputs: {}", differing.join(", "))
        },
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let (img7, truth7) = synthetic::two_region(64, 64, 0.05, 7).unwrap();
    let (img9, _) = synthetic::iid_mixture(16, 16, 5, 0.2, 0.3, 1).unwrap();
    let runs = Runs {
        dir: dir.path().to_path_buf(),
        input7: dir.path().join("two_region.ppm"),
        input9: dir.path().join("mixture.ppm"),
    };
    write_ppm(&runs.input7, &img7);
    write_ppm(&runs.input9, &img9);

    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "transition points", criterion_1()),
        (2, "Ising control", criterion_2()),
        (3, "alpha(u) table values", criterion_3()),
        (4, "exactness on trees", criterion_4()),
        (5, "analytic anchors", criterion_5()),
        (6, "Bethe gradient identity", criterion_6()),
        (7, "CME recovery", criterion_7(&runs, &truth7)),
        (8, "method equivalence", criterion_8(&runs)),
        (9, "kink regime", criterion_9(&runs)),
        (10, "determinism", criterion_10(&runs)),
    ];
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
