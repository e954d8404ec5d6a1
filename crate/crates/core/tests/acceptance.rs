//! Acceptance suite: one test and one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture` to see
//! the lines. Criteria run one at a time so each is timed against its own
//! budget.

use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use miso_ma::channel::sample_channels;
use miso_ma::harness::{run_experiment, slopes_of, ExperimentConfig, ExperimentResult};
use miso_ma::initpoint::{achievability_schedule, exponent_check, mrt_svd_init, PowerSplit, Scheme};
use miso_ma::rate::{mulp_rates, noma_rates, rs_rates, AllocationPolicy};
use miso_ma::strategy::{stream_layout, StrategySpec};
use miso_ma::wmmse::{ao_solve, rate_wmmse_gap, Objective, SolveOptions};
use miso_ma::{linalg, StrategyConfig};
use miso_ma::harness::selftest::random_precoders;
use miso_ma::initpoint::zfbf_precoders;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn run(id: u32, budget_s: u64, f: impl FnOnce() -> (bool, String)) {
    let _serial = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let (pass, detail) = f();
    let elapsed = t.elapsed();
    let budget = Duration::from_secs(budget_s);
    let pass = pass && elapsed <= budget;
    println!(
        "AC{id} {} [{:.1}s / {budget_s}s] {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(pass, "criterion {id} failed: {detail}");
}

fn spec(s: &str) -> StrategySpec {
    s.parse().unwrap()
}

fn mean_at(result: &ExperimentResult, label: &str, snr: f64, mmf: bool) -> f64 {
    let row = result
        .summary
        .iter()
        .find(|r| r.strategy == label && r.snr_db == snr)
        .unwrap_or_else(|| panic!("no summary row for {label} at {snr}"));
    if mmf {
        row.mmf_mean
    } else {
        row.sum_mean
    }
}

fn golden_tables() -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_miso-ma"))
        .args(["dof", "--emit-golden-tables"])
        .output()
        .expect("run the CLI");
    let text = String::from_utf8(out.stdout).unwrap();
    let expected = "\
# sum multiplexing gain, K=6, alpha=1
M,NOMA-G1,NOMA-G3,MULP,RS1
1,1,1,1,1
2,1,2,2,2
3,1,3,3,3
4,1,3,4,4
5,1,3,5,5
6,1,3,6,6
# max-min multiplexing gain, K=6, alpha=1
M,NOMA-G1,NOMA-G3,MULP,RS1
1,1/6,0,0,1/6
2,1/6,0,0,1/5
3,1/6,0,0,1/4
4,1/6,0,0,1/3
5,1/6,1/2,0,1/2
6,1/6,1/2,1,1
";
    let ok = out.status.success() && text == expected;
    (ok, if ok { "tables match exactly".into() } else { format!("got:\n{text}") })
}

fn rate_wmmse_identity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let k = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let cs = sample_channels(k, m, &vec![1.0; k], rng.random()).unwrap();
        let config = match i % 4 {
            0 if k > 1 => {
                let gs: Vec<usize> = (1..k).filter(|g| k % g == 0).collect();
                StrategyConfig::noma(k, gs[rng.random_range(0..gs.len())]).unwrap()
            }
            1 | 0 => StrategyConfig::mulp(k).unwrap(),
            2 => StrategyConfig::rs1(k).unwrap(),
            _ => StrategyConfig::oma(k).unwrap(),
        };
        let layout = stream_layout(&config);
        let power = 10f64.powf(rng.random_range(-1.0..5.0));
        let ps = random_precoders(&mut rng, k, m, config.common_stream_present(), power).unwrap();
        for link in layout.links() {
            worst = worst.max(rate_wmmse_gap(&cs, &ps, &layout, link).unwrap().abs());
        }
    }
    (worst < 1e-8, format!("max |xi - (1 - R)| = {worst:.2e} over 1000 instances"))
}

fn ao_monotonicity() -> (bool, String) {
    let k = 6;
    let power = 100.0;
    let mut worst_drop = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for run in 0..100u64 {
        let m = 3 + (run % 4) as usize;
        let config = match (run / 4) % 3 {
            0 => StrategyConfig::noma(k, 3).unwrap(),
            1 => StrategyConfig::mulp(k).unwrap(),
            _ => StrategyConfig::rs1(k).unwrap(),
        };
        let objective = if run % 2 == 0 { Objective::Sum } else { Objective::MaxMin };
        let cs = sample_channels(k, m, &vec![1.0; k], 7000 + run).unwrap();
        let config = config.ordered_by(&cs, false).unwrap();
        let init = mrt_svd_init(&cs, &config, power, PowerSplit::Uniform).unwrap();
        let opts = SolveOptions {
            seed: run,
            ..SolveOptions::default()
        };
        let sol = ao_solve(&cs, &config, objective, &init, &opts).unwrap();
        let obj = sol.trace.objectives();
        for w in obj.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        worst_kkt = worst_kkt.max(sol.trace.final_kkt_residual());
    }
    (
        worst_drop <= 1e-9 && worst_kkt < 1e-4,
        format!("largest objective drop {worst_drop:.2e}, largest terminal KKT residual {worst_kkt:.2e} over 100 runs"),
    )
}

fn slopes_perfect() -> (bool, String) {
    let grid = vec![25.0, 30.0, 35.0, 40.0];
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, strategies, tol) in [
        (3, vec!["mulp", "rs1", "noma:3", "noma:1", "oma"], 0.3),
        (6, vec!["mulp", "rs1"], 0.5),
    ] {
        let mut cfg = ExperimentConfig::new(6, m, strategies.into_iter().map(spec).collect(), grid.clone());
        cfg.seed = 1;
        let result = run_experiment(&cfg).unwrap();
        for r in slopes_of(&result).unwrap() {
            let pass = r.abs_diff <= tol;
            ok &= pass;
            parts.push(format!(
                "M={m} {} {:.2} vs {}{}",
                r.strategy,
                r.fitted,
                r.predicted,
                if pass { "" } else { " (out)" }
            ));
        }
    }
    (ok, parts.join(", "))
}

fn mmf_ordering() -> (bool, String) {
    let mut cfg = ExperimentConfig::new(6, 4, ["rs1", "noma:1", "mulp", "noma:3"].map(spec).to_vec(), vec![35.0]);
    cfg.objective = Objective::MaxMin;
    cfg.seed = 2;
    let result = run_experiment(&cfg).unwrap();
    let v = |l| mean_at(&result, l, 35.0, true);
    let (rs, g1, mulp, g3) = (v("RS1"), v("NOMA-G1"), v("MULP"), v("NOMA-G3"));
    let ok = rs > g1 + 0.2 && g1 > mulp && g3 < rs;
    (ok, format!("MMF at 35 dB: RS1 {rs:.3}, NOMA-G1 {g1:.3}, MULP {mulp:.3}, NOMA-G3 {g3:.3}"))
}

fn imperfect_csit() -> (bool, String) {
    let mut cfg = ExperimentConfig::new(
        6,
        6,
        ["rs1", "mulp", "noma:3", "noma:1", "oma"].map(spec).to_vec(),
        vec![30.0, 50.0, 60.0, 70.0],
    );
    cfg.alpha = Some(0.5);
    cfg.n_saa_samples = 200;
    cfg.seed = 3;
    let result = run_experiment(&cfg).unwrap();
    let v = |l| mean_at(&result, l, 30.0, false);
    let (rs, mulp, g3, g1, oma) = (v("RS1"), v("MULP"), v("NOMA-G3"), v("NOMA-G1"), v("OMA"));
    let order = rs > mulp && mulp > g3 && g3 > g1 && (g1 - oma).abs() < 0.5;
    let mut slope_cfg = result.clone();
    slope_cfg.summary.retain(|r| r.snr_db >= 50.0);
    slope_cfg.config.snr_grid_db.retain(|&s| s >= 50.0);
    // Ergodic sum multiplexing gains at alpha = 1/2, M = K = 6.
    let expected = [("RS1", 3.5), ("MULP", 3.0), ("NOMA-G3", 1.5), ("NOMA-G1", 1.0), ("OMA", 1.0)];
    let slopes = slopes_of(&slope_cfg).unwrap();
    let mut ok = order;
    let mut parts = vec![format!(
        "sum at 30 dB: RS1 {rs:.2} > MULP {mulp:.2} > NOMA-G3 {g3:.2} > NOMA-G1 {g1:.2} ~ OMA {oma:.2}"
    )];
    for (label, d) in expected {
        let s = slopes.iter().find(|s| s.strategy == label).unwrap();
        let pass = (s.fitted - d).abs() <= 0.4;
        ok &= pass;
        parts.push(format!("{label} slope(50-70 dB) {:.2} vs {d}{}", s.fitted, if pass { "" } else { " (out)" }));
    }
    (ok, parts.join(", "))
}

fn exponent_checks() -> (bool, String) {
    let grid = [30.0, 40.0, 50.0];
    let cases = [
        ("NOMA G=1 P^(k/g)", Scheme::NomaMmf, 2, 3, 1, 1.0),
        ("NOMA K=4 G=2 a=0.5", Scheme::NomaMmf, 3, 4, 2, 0.5),
        ("RS sum split a=0.5", Scheme::RsSum, 4, 4, 1, 0.5),
        ("RS max-min beta*", Scheme::RsMmf, 4, 6, 1, 1.0),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, scheme, m, k, g, alpha) in cases {
        let plan = achievability_schedule(scheme, m, k, g, alpha).unwrap();
        let checks = exponent_check(&plan, m, alpha, &grid, 40, 17).unwrap();
        let worst = checks.iter().map(|c| (c.fitted - c.claimed).abs()).fold(0.0, f64::max);
        let pass = worst <= 0.05;
        ok &= pass;
        let claims: Vec<String> = checks.iter().map(|c| format!("{:.2}/{:.2}", c.fitted, c.claimed)).collect();
        parts.push(format!("{name}: max |d| {worst:.3} [{}]{}", claims.join(" "), if pass { "" } else { " (out)" }));
    }
    (ok, parts.join("; "))
}

fn property_suites() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut zf_worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(2..=6);
        let k = rng.random_range(2..=m);
        let cs = sample_channels(k, m, &vec![1.0; k], rng.random()).unwrap();
        let serve: Vec<usize> = (0..k).collect();
        let nulls: Vec<Vec<usize>> = serve.iter().map(|&u| serve.iter().copied().filter(|&q| q != u).collect()).collect();
        for (u, p) in zfbf_precoders(&cs, &serve, &nulls).unwrap().iter().enumerate() {
            for &q in &nulls[u] {
                zf_worst = zf_worst.max(linalg::inner(&cs.estimates()[q], p).norm() / p.norm());
            }
        }
    }
    let (mut mac_worst, mut adaptive_worst) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..10_000 {
        let m = rng.random_range(1..=4);
        let power = 10f64.powf(rng.random_range(-1.0..4.0));
        let cs = sample_channels(2, m, &[1.0, 1.0], rng.random()).unwrap();
        let ps = random_precoders(&mut rng, 2, m, false, power).unwrap();
        let h = cs.true_channels();
        let p = ps.private();
        for (weak, strong) in [(0usize, 1usize), (1, 0)] {
            let config = StrategyConfig::noma(2, 1).unwrap().with_decoding_orders(vec![vec![weak, strong]]).unwrap();
            let r = noma_rates(&cs, &ps, &config).unwrap();
            let g = |hh: &linalg::CVec, pp: &linalg::CVec| linalg::inner(hh, pp).norm_sqr();
            let mac = (1.0 + g(&h[strong], &p[0]) + g(&h[strong], &p[1])).log2();
            mac_worst = mac_worst.max(r.sum_rate - mac);
            let best = h.iter().map(|v| v.norm_squared()).fold(0.0, f64::max);
            adaptive_worst = adaptive_worst.max(r.sum_rate - (1.0 + best * power).log2());
        }
    }
    let mut rs_same = true;
    for _ in 0..1000 {
        let k = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let cs = sample_channels(k, m, &vec![1.0; k], rng.random()).unwrap();
        let ps = random_precoders(&mut rng, k, m, false, 100.0).unwrap();
        let rs = rs_rates(&cs, &ps.with_common(linalg::zeros(m)).unwrap(), &AllocationPolicy::Equal).unwrap();
        let mulp = mulp_rates(&cs, &ps).unwrap();
        rs_same &= rs.private_rates.iter().zip(&mulp.private_rates).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let mut remark_ok = true;
    for _ in 0..1000 {
        let m = rng.random_range(1..=4);
        let cs = sample_channels(2, m, &[1.0, 1.0], rng.random()).unwrap();
        let ps = random_precoders(&mut rng, 2, m, false, 100.0).unwrap();
        // User 0 decodes both streams.
        let config = StrategyConfig::noma(2, 1).unwrap().with_decoding_orders(vec![vec![1, 0]]).unwrap();
        let noma = noma_rates(&cs, &ps, &config).unwrap();
        let mulp = mulp_rates(&cs, &ps).unwrap();
        remark_ok &= noma.per_user_rates[0] >= mulp.per_user_rates[0] && noma.per_user_rates[1] <= mulp.per_user_rates[1];
    }
    let ok = zf_worst < 1e-9 && mac_worst <= 1e-12 && adaptive_worst <= 1e-12 && rs_same && remark_ok;
    (
        ok,
        format!(
            "ZF residual {zf_worst:.1e}, MAC excess {mac_worst:.1e}, adaptive-order excess {adaptive_worst:.1e}, RS zero-common bitwise {rs_same}, NOMA per-user order {remark_ok}"
        ),
    )
}

#[test]
fn ac1_golden_tables() {
    run(1, 1, golden_tables);
}

#[test]
fn ac2_rate_wmmse_identity() {
    run(2, 10, rate_wmmse_identity);
}

#[test]
fn ac3_ao_monotonicity_and_kkt() {
    run(3, 300, ao_monotonicity);
}

#[test]
fn ac4_perfect_csit_slopes() {
    run(4, 900, slopes_perfect);
}

#[test]
fn ac5_max_min_ordering() {
    run(5, 900, mmf_ordering);
}

#[test]
fn ac6_imperfect_csit() {
    run(6, 2700, imperfect_csit);
}

#[test]
fn ac7_achievability_exponents() {
    run(7, 60, exponent_checks);
}

#[test]
fn ac8_property_suites() {
    run(8, 30, property_suites);
}
