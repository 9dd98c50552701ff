use astro_float::{BigFloat, Consts, RoundingMode};
use commitbart::corpus::{language_distribution, sample_language, LanguageStats, LANGUAGES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

const PRETRAIN_COUNTS: [u64; 7] = [1_917_109, 660_587, 935_151, 986_669, 1_148_074, 1_029_676, 762_760];
const P: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

fn to_f64(x: &BigFloat) -> f64 {
    format!("{x}").parse().expect("decimal rendering")
}

/// `n_i^α / Σ n_j^α` in 256-bit arithmetic. The total cancels, so shares
/// need not be formed first.
fn oracle(counts: &[u64], alpha: f64) -> Vec<f64> {
    let mut cc = Consts::new().unwrap();
    let a = BigFloat::from_f64(alpha, P);
    let powered: Vec<BigFloat> = counts
        .iter()
        .map(|&n| BigFloat::from_u64(n, P).pow(&a, P, RM, &mut cc))
        .collect();
    let mut z = BigFloat::from_u64(0, P);
    for v in &powered {
        z = z.add(v, P, RM);
    }
    powered.iter().map(|v| to_f64(&v.div(&z, P, RM))).collect()
}

fn stats(counts: &[u64]) -> LanguageStats {
    LanguageStats::new(LANGUAGES.iter().map(|l| l.to_string()).zip(counts.iter().copied()).collect())
}

#[test]
fn counts_sum_to_reported_total() {
    assert_eq!(PRETRAIN_COUNTS.iter().sum::<u64>(), 7_440_026);
}

#[test]
fn matches_extended_precision() {
    let q = language_distribution(&stats(&PRETRAIN_COUNTS)).unwrap();
    let expected = oracle(&PRETRAIN_COUNTS, 0.7);
    for (lang, e) in LANGUAGES.iter().zip(&expected) {
        let got = q[*lang];
        assert!((got - e).abs() < 1e-12, "{lang}: {got} vs {e}");
    }
}

#[test]
fn flattening_keeps_order_and_shrinks_ratio() {
    let q = language_distribution(&stats(&PRETRAIN_COUNTS)).unwrap();
    let total: u64 = PRETRAIN_COUNTS.iter().sum();
    let p: Vec<f64> = PRETRAIN_COUNTS.iter().map(|&n| n as f64 / total as f64).collect();
    let qs: Vec<f64> = LANGUAGES.iter().map(|l| q[*l]).collect();
    for i in 0..7 {
        for j in 0..7 {
            assert_eq!(p[i] > p[j], qs[i] > qs[j]);
        }
    }
    let ratio = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(1.0, f64::min);
    assert!(ratio(&qs) < ratio(&p));
}

#[test]
fn alpha_one_is_identity() {
    let q = language_distribution(&stats(&PRETRAIN_COUNTS).with_alpha(1.0)).unwrap();
    let total: u64 = PRETRAIN_COUNTS.iter().sum();
    for (lang, &n) in LANGUAGES.iter().zip(&PRETRAIN_COUNTS) {
        assert_eq!(q[*lang], n as f64 / total as f64);
    }
}

#[test]
fn equal_counts_are_uniform() {
    let q = language_distribution(&stats(&[5; 7])).unwrap();
    for v in q.values() {
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }
}

#[test]
fn draws_follow_the_distribution() {
    let q = language_distribution(&stats(&PRETRAIN_COUNTS)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 10_000;
    let mut hits: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..n {
        *hits.entry(sample_language(&q, &mut rng)).or_default() += 1;
    }
    for (lang, &qi) in &q {
        let sigma = (n as f64 * qi * (1.0 - qi)).sqrt();
        let got = hits.get(lang).copied().unwrap_or(0) as f64;
        assert!((got - n as f64 * qi).abs() <= 3.0 * sigma, "{lang}: {got}");
    }
}
