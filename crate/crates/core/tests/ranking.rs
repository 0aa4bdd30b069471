use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlpipe_core::ranking::{
    filter_idk, fit_bradley_terry, outcome_breakdown, win_rate, FitOptions, Outcome, PreferenceLog, RankingError,
    TiePolicy, Verdict,
};

fn repeat(a: &str, b: &str, v: Verdict, n: usize) -> Vec<Outcome> {
    (0..n).map(|_| Outcome::new(a, b, v)).collect()
}

/// Minorize-maximize fixed point for Bradley-Terry strengths, ties as half
/// a win each. Returns Elo ratings centred on 1000.
fn mm_reference(log: &PreferenceLog) -> BTreeMap<String, f64> {
    let models = log.models();
    let idx: BTreeMap<&str, usize> = models.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let k = models.len();
    let mut wins = vec![0.0; k];
    let mut games = vec![vec![0.0; k]; k];
    for o in &log.outcomes {
        let (a, b) = (idx[o.model_a.as_str()], idx[o.model_b.as_str()]);
        match o.verdict {
            Verdict::AWins => wins[a] += 1.0,
            Verdict::BWins => wins[b] += 1.0,
            Verdict::TieGood | Verdict::TieBad => {
                wins[a] += 0.5;
                wins[b] += 0.5;
            }
            Verdict::Idk => continue,
        }
        games[a][b] += 1.0;
        games[b][a] += 1.0;
    }
    let mut p = vec![1.0; k];
    for _ in 0..200_000 {
        let next: Vec<f64> = (0..k)
            .map(|i| {
                let denom: f64 = (0..k).filter(|&j| j != i).map(|j| games[i][j] / (p[i] + p[j])).sum();
                wins[i] / denom
            })
            .collect();
        let gm = next.iter().map(|v| v.ln()).sum::<f64>() / k as f64;
        let next: Vec<f64> = next.iter().map(|v| v / gm.exp()).collect();
        let delta = next.iter().zip(&p).map(|(a, b)| (a.ln() - b.ln()).abs()).fold(0.0, f64::max);
        p = next;
        if delta < 1e-13 {
            break;
        }
    }
    models
        .iter()
        .zip(&p)
        .map(|(m, v)| (m.clone(), 1000.0 + v.ln() * 400.0 / std::f64::consts::LN_10))
        .collect()
}

fn random_log(rng: &mut ChaCha8Rng, strengths: &[f64], matches: usize, tie_prob: f64) -> PreferenceLog {
    let names: Vec<String> = (0..strengths.len()).map(|i| format!("m{i}")).collect();
    let mut out = Vec::with_capacity(matches);
    for _ in 0..matches {
        let a = rng.random_range(0..strengths.len());
        let mut b = rng.random_range(0..strengths.len() - 1);
        if b >= a {
            b += 1;
        }
        let verdict = if rng.random_bool(tie_prob) {
            if rng.random_bool(0.5) { Verdict::TieGood } else { Verdict::TieBad }
        } else {
            let p = 1.0 / (1.0 + (strengths[b] - strengths[a]).exp());
            if rng.random_bool(p) { Verdict::AWins } else { Verdict::BWins }
        };
        out.push(Outcome::new(names[a].clone(), names[b].clone(), verdict));
    }
    PreferenceLog::new(out)
}

#[test]
fn closed_form_cases() {
    let even = PreferenceLog::new([repeat("a", "b", Verdict::AWins, 50), repeat("a", "b", Verdict::BWins, 50)].concat());
    let t = fit_bradley_terry(&even, &FitOptions::default()).unwrap();
    assert!((t.rating("a").unwrap() - t.rating("b").unwrap()).abs() < 0.01);

    let lopsided = PreferenceLog::new([repeat("a", "b", Verdict::AWins, 75), repeat("a", "b", Verdict::BWins, 25)].concat());
    let t = fit_bradley_terry(&lopsided, &FitOptions::default()).unwrap();
    let delta = t.rating("a").unwrap() - t.rating("b").unwrap();
    assert!((delta - 400.0 * 3f64.log10()).abs() < 1e-6, "{delta}");
    assert!((t.rating("a").unwrap() + t.rating("b").unwrap() - 2000.0).abs() < 1e-9);
}

#[test]
fn agrees_with_mm_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..20 {
        let k = rng.random_range(2..=6);
        let strengths: Vec<f64> = (0..k).map(|_| rng.random_range(-1.5..1.5)).collect();
        let log = random_log(&mut rng, &strengths, 400, 0.3);
        let fit = match fit_bradley_terry(&log, &FitOptions::default()) {
            Ok(f) => f,
            Err(RankingError::Unbounded(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        for (model, want) in mm_reference(&log) {
            assert!((fit.rating(&model).unwrap() - want).abs() < 1e-6, "{model}");
        }
        assert!(fit.log_likelihood >= fit.initial_log_likelihood);
    }
}

#[test]
fn relabeling_moves_ratings_with_names() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let log = random_log(&mut rng, &[0.0, 0.4, 0.9, -0.3], 2000, 0.2);
    let renamed = PreferenceLog::new(
        log.outcomes
            .iter()
            .map(|o| Outcome::new(format!("z{}", o.model_a), format!("z{}", o.model_b), o.verdict))
            .collect(),
    );
    let seat_swapped = PreferenceLog::new(log.outcomes.iter().map(Outcome::swapped).collect());
    let a = fit_bradley_terry(&log, &FitOptions::default()).unwrap();
    let b = fit_bradley_terry(&renamed, &FitOptions::default()).unwrap();
    let c = fit_bradley_terry(&seat_swapped, &FitOptions::default()).unwrap();
    for m in log.models() {
        let r = a.rating(&m).unwrap();
        assert!((r - b.rating(&format!("z{m}")).unwrap()).abs() < 1e-9);
        assert!((r - c.rating(&m).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn two_ties_equal_a_split_pair() {
    let base = [repeat("a", "b", Verdict::AWins, 30), repeat("a", "b", Verdict::BWins, 10)].concat();
    let with_ties = PreferenceLog::new([base.clone(), repeat("a", "b", Verdict::TieGood, 2), repeat("a", "b", Verdict::TieBad, 2)].concat());
    let with_split = PreferenceLog::new([base.clone(), repeat("a", "b", Verdict::AWins, 2), repeat("a", "b", Verdict::BWins, 2)].concat());
    let opts = FitOptions::default();
    let x = fit_bradley_terry(&with_ties, &opts).unwrap();
    let y = fit_bradley_terry(&with_split, &opts).unwrap();
    assert!((x.rating("a").unwrap() - y.rating("a").unwrap()).abs() < 1e-9);

    let ignore = FitOptions { tie_policy: TiePolicy::Ignore, ..opts };
    let z = fit_bradley_terry(&with_ties, &ignore).unwrap();
    let plain = fit_bradley_terry(&PreferenceLog::new(base), &opts).unwrap();
    assert!((z.rating("a").unwrap() - plain.rating("a").unwrap()).abs() < 1e-9);
}

#[test]
fn planted_order_is_recovered() {
    let strengths = [-0.8, -0.4, 0.0, 0.4, 0.8];
    let mut recovered = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let log = random_log(&mut rng, &strengths, 10_000, 0.25);
        let fit = fit_bradley_terry(&log, &FitOptions::default()).unwrap();
        let order: Vec<&str> = fit.ratings.iter().map(|r| r.model.as_str()).collect();
        if order == ["m4", "m3", "m2", "m1", "m0"] {
            recovered += 1;
        }
    }
    assert!(recovered >= 99, "{recovered}");
}

#[test]
fn published_breakdown_fixture() {
    let log = PreferenceLog::new(
        [
            repeat("rival", "ours", Verdict::TieGood, 455),
            repeat("rival", "ours", Verdict::TieBad, 141),
            repeat("rival", "ours", Verdict::AWins, 261),
            repeat("ours", "rival", Verdict::AWins, 143),
            repeat("ours", "rival", Verdict::Idk, 30),
        ]
        .concat(),
    );
    let idk_share = 30.0 / log.len() as f64;
    assert!((idk_share - 0.029).abs() < 0.0005);
    let clean = filter_idk(&log);
    let b = outcome_breakdown(&clean, "rival", "ours").unwrap();
    assert_eq!((b.tie_good, b.tie_bad, b.a_wins, b.b_wins), (0.455, 0.141, 0.261, 0.143));
    let rate = win_rate(&log, "rival", "ours").unwrap();
    assert!((rate * 100.0 - 65.0).abs() < 0.5, "{rate}");
}
