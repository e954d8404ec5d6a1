use miso_ma::channel::{sample_channels, ChannelSet};
use miso_ma::dof::{closed_form_dof, parse_rational, Metric};
use miso_ma::harness::selftest::random_precoders;
use miso_ma::initpoint::{mrt_svd_init, zfbf_precoders, PowerSplit};
use miso_ma::rate::{evaluate, mulp_rates, noma_rates, rs_rates, waterfill_common, AllocationPolicy};
use miso_ma::strategy::{decoding_order, stream_layout, StrategyKind};
use miso_ma::wmmse::{ao_solve, rate_wmmse_gap, Objective, SolveOptions};
use miso_ma::{linalg, StrategyConfig};
use num_rational::Ratio;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config_for(kind: u8, k: usize) -> StrategyConfig {
    match kind % 4 {
        0 => {
            let g = (1..k).rev().find(|g| k % g == 0).unwrap_or(1);
            if k > 1 {
                StrategyConfig::noma(k, g).unwrap()
            } else {
                StrategyConfig::mulp(k).unwrap()
            }
        }
        1 => StrategyConfig::mulp(k).unwrap(),
        2 => StrategyConfig::rs1(k).unwrap(),
        _ => StrategyConfig::oma(k).unwrap(),
    }
}

fn gain(h: &linalg::CVec, p: &linalg::CVec) -> f64 {
    linalg::inner(h, p).norm_sqr()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mmse_matches_rate(k in 1usize..=6, m in 1usize..=6, kind in 0u8..4, log_p in -1.0f64..5.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs = sample_channels(k, m, &vec![1.0; k], seed).unwrap();
        let config = config_for(kind, k);
        let layout = stream_layout(&config);
        let ps = random_precoders(&mut rng, k, m, config.common_stream_present(), 10f64.powf(log_p)).unwrap();
        for link in layout.links() {
            prop_assert!(rate_wmmse_gap(&cs, &ps, &layout, link).unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn zero_common_rs_is_mulp(k in 1usize..=6, m in 1usize..=6, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs = sample_channels(k, m, &vec![1.0; k], seed).unwrap();
        let ps = random_precoders(&mut rng, k, m, false, 100.0).unwrap();
        let rs = rs_rates(&cs, &ps.with_common(linalg::zeros(m)).unwrap(), &AllocationPolicy::Equal).unwrap();
        let mulp = mulp_rates(&cs, &ps).unwrap();
        for (a, b) in rs.private_rates.iter().zip(&mulp.private_rates) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zf_nulls_the_listed_users(m in 2usize..=6, k_off in 0usize..5, seed: u64) {
        let k = 2 + k_off % (m - 1);
        let cs = sample_channels(k, m, &vec![1.0; k], seed).unwrap();
        let serve: Vec<usize> = (0..k).collect();
        let nulls: Vec<Vec<usize>> = serve.iter().map(|&u| serve.iter().copied().filter(|&q| q != u).collect()).collect();
        for (u, p) in zfbf_precoders(&cs, &serve, &nulls).unwrap().iter().enumerate() {
            for &q in &nulls[u] {
                prop_assert!(linalg::inner(&cs.estimates()[q], p).norm() / p.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn two_user_noma_within_mac_and_single_user_bounds(m in 1usize..=4, log_p in -1.0f64..4.0, strong in 0usize..2, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let power = 10f64.powf(log_p);
        let cs = sample_channels(2, m, &[1.0, 1.0], seed).unwrap();
        let ps = random_precoders(&mut rng, 2, m, false, power).unwrap();
        let config = StrategyConfig::noma(2, 1).unwrap().with_decoding_orders(vec![vec![1 - strong, strong]]).unwrap();
        let r = noma_rates(&cs, &ps, &config).unwrap();
        let h = cs.true_channels();
        let p = ps.private();
        let mac = (1.0 + gain(&h[strong], &p[0]) + gain(&h[strong], &p[1])).log2();
        prop_assert!(r.sum_rate <= mac + 1e-12);
        let best = h.iter().map(|v| v.norm_squared()).fold(0.0, f64::max);
        prop_assert!(r.sum_rate <= (1.0 + best * power).log2() + 1e-12);
    }

    #[test]
    fn sic_helps_the_decoder_and_hurts_the_other(m in 1usize..=4, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs = sample_channels(2, m, &[1.0, 1.0], seed).unwrap();
        let ps = random_precoders(&mut rng, 2, m, false, 100.0).unwrap();
        let config = StrategyConfig::noma(2, 1).unwrap().with_decoding_orders(vec![vec![1, 0]]).unwrap();
        let noma = noma_rates(&cs, &ps, &config).unwrap();
        let mulp = mulp_rates(&cs, &ps).unwrap();
        prop_assert!(noma.per_user_rates[0] >= mulp.per_user_rates[0]);
        prop_assert!(noma.per_user_rates[1] <= mulp.per_user_rates[1]);
    }

    #[test]
    fn waterfill_spends_the_common_rate(private in prop::collection::vec(0.0f64..10.0, 1..7), common in 0.0f64..20.0) {
        let (shares, level) = waterfill_common(&private, common);
        let spent: f64 = shares.iter().sum();
        prop_assert!((spent - common).abs() <= 1e-9 * (1.0 + common));
        for (r, c) in private.iter().zip(&shares) {
            prop_assert!(*c >= 0.0);
            prop_assert!(r + c >= level - 1e-9);
        }
    }

    #[test]
    fn rate_report_is_consistent(k in 1usize..=6, m in 1usize..=6, kind in 0u8..3, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs = sample_channels(k, m, &vec![1.0; k], seed).unwrap();
        let config = config_for(kind, k).ordered_by(&cs, false).unwrap();
        let ps = random_precoders(&mut rng, k, m, config.common_stream_present(), 1000.0).unwrap();
        let r = evaluate(&cs, &ps, &config, &AllocationPolicy::MmfEqualizing).unwrap();
        let total: f64 = r.per_user_rates.iter().sum();
        prop_assert!((total - r.sum_rate).abs() <= 1e-9 * (1.0 + total));
        let min = r.per_user_rates.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!((min - r.mmf_rate).abs() <= 1e-9 * (1.0 + min));
        prop_assert!(r.per_user_rates.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn decoding_order_is_weakest_first(k_idx in 0usize..4, m in 1usize..=6, seed: u64) {
        let (k, g) = [(2, 1), (4, 2), (6, 3), (6, 2)][k_idx];
        let cs = sample_channels(k, m, &vec![1.0; k], seed).unwrap();
        let config = StrategyConfig::noma(k, g).unwrap();
        for seq in decoding_order(&cs, config.grouping().unwrap(), false) {
            for w in seq.windows(2) {
                prop_assert!(cs.true_channels()[w[0]].norm_squared() <= cs.true_channels()[w[1]].norm_squared());
            }
        }
    }

    #[test]
    fn mrt_init_respects_the_budget(k in 1usize..=6, m in 1usize..=6, kind in 0u8..3, log_p in -1.0f64..6.0, seed: u64) {
        let cs = sample_channels(k, m, &vec![1.0; k], seed).unwrap();
        let config = config_for(kind, k).ordered_by(&cs, false).unwrap();
        let power = 10f64.powf(log_p);
        let ps = mrt_svd_init(&cs, &config, power, PowerSplit::Uniform).unwrap();
        prop_assert!(ps.total_power() <= power * (1.0 + 1e-9));
    }

    #[test]
    fn rs_dof_dominates(m in 1usize..=8, k in 1usize..=8, num in 0i64..=8) {
        let alpha = Ratio::new(num, 8);
        for metric in [Metric::Sum, Metric::Mmf] {
            let rs = closed_form_dof(StrategyKind::Rs1, m, k, 1, alpha, metric).unwrap();
            let mulp = closed_form_dof(StrategyKind::Mulp, m, k, 1, alpha, metric).unwrap();
            prop_assert!(rs >= mulp);
            for g in (1..=k).filter(|g| k % g == 0) {
                if let Ok(noma) = closed_form_dof(StrategyKind::Noma, m, k, g, alpha, metric) {
                    prop_assert!(rs >= noma);
                }
            }
        }
    }

    #[test]
    fn sum_dof_grows_with_antennas(m in 1usize..=7, k in 1usize..=8, num in 0i64..=8) {
        let alpha = Ratio::new(num, 8);
        for kind in [StrategyKind::Mulp, StrategyKind::Rs1, StrategyKind::Oma] {
            let a = closed_form_dof(kind, m, k, 1, alpha, Metric::Sum).unwrap();
            let b = closed_form_dof(kind, m + 1, k, 1, alpha, Metric::Sum).unwrap();
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn rationals_round_trip(num in -50i64..50, den in 1i64..50) {
        let x = Ratio::new(num, den);
        prop_assert_eq!(parse_rational(&x.to_string()).unwrap(), x);
    }

    #[test]
    fn channel_csv_round_trip(k in 1usize..=6, m in 1usize..=6, seed: u64) {
        let cs = sample_channels(k, m, &vec![0.5; k], seed).unwrap();
        let mut buf = Vec::new();
        cs.write_csv(&mut buf).unwrap();
        let back = ChannelSet::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.num_users(), k);
        for (a, b) in back.true_channels().iter().zip(cs.true_channels()) {
            prop_assert!((a - b).norm() <= 1e-12 * (1.0 + b.norm()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ao_never_decreases(m in 2usize..=4, kind in 0u8..3, maxmin: bool, seed in 0u64..1000) {
        let k = 4;
        let cs = sample_channels(k, m, &vec![1.0; k], seed).unwrap();
        let config = config_for(kind, k).ordered_by(&cs, false).unwrap();
        let init = mrt_svd_init(&cs, &config, 100.0, PowerSplit::Uniform).unwrap();
        let objective = if maxmin { Objective::MaxMin } else { Objective::Sum };
        let opts = SolveOptions { seed, max_iterations: 40, ..SolveOptions::default() };
        let sol = ao_solve(&cs, &config, objective, &init, &opts).unwrap();
        for w in sol.trace.objectives().windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9);
        }
    }
}
