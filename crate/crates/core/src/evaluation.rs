//! AUC-ROC, Welch's t-test and feature-wise group differences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

/// Mann–Whitney AUC: probability a positive outscores a negative, ties 0.5.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score at row {i} is NaN")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("auc_roc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (negatives strictly below) + 0.5 * (negatives tied) over positives.
    let mut credit = 0.0f64;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let (mut pos_tied, mut neg_tied) = (0usize, 0usize);
        for &k in &order[i..j] {
            if labels[k] == 1 {
                pos_tied += 1;
            } else {
                neg_tied += 1;
            }
        }
        credit += pos_tied as f64 * (neg_below as f64 + 0.5 * neg_tied as f64);
        neg_below += neg_tied;
        i = j;
    }
    Ok(credit / (n_pos as f64 * n_neg as f64))
}

/// AUC of uncertainty scores for separating OOD rows (positive) from ID rows.
pub fn ood_auc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::InvalidConfig(
            "ood_auc needs non-empty ID and OOD score sets".into(),
        ));
    }
    let scores: Vec<f64> = id_scores.iter().chain(ood_scores).copied().collect();
    let labels: Vec<u8> = std::iter::repeat_n(0u8, id_scores.len())
        .chain(std::iter::repeat_n(1u8, ood_scores.len()))
        .collect();
    auc_roc(&scores, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    /// Both samples had zero variance; t and p are set by convention.
    pub degenerate: bool,
}

fn sample_mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "welch test needs >= 2 samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = sample_mean_var(a);
    let (mb, vb) = sample_mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if !(se2 > 0.0) {
        return Ok(WelchResult {
            t_statistic: 0.0,
            degrees_of_freedom: na + nb - 2.0,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(WelchResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: student_t_two_sided_p(t, df),
        degenerate: false,
    })
}

/// P(|T| > |t|) for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, 0.5 * df, 0.5).clamp(0.0, 1.0)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for I_x(a, b) by modified Lentz iteration.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

/// Fraction of columns whose ID/OOD means differ at Welch p < `alpha`.
/// Missing cells are ignored; columns with fewer than two observations on
/// either side, or zero variance on both, count as not significant.
pub fn significant_feature_fraction(
    x_id: &FeatureMatrix,
    x_ood: &FeatureMatrix,
    alpha: f64,
) -> Result<f64> {
    if !x_id.same_schema(x_ood) {
        return Err(Error::Schema(
            "ID and OOD feature matrices have different columns".into(),
        ));
    }
    let d = x_id.n_cols();
    if d == 0 {
        return Ok(0.0);
    }
    let significant = (0..d)
        .into_par_iter()
        .filter(|&j| {
            let a: Vec<f64> = x_id
                .values
                .column(j)
                .iter()
                .copied()
                .filter(|v| !v.is_nan())
                .collect();
            let b: Vec<f64> = x_ood
                .values
                .column(j)
                .iter()
                .copied()
                .filter(|v| !v.is_nan())
                .collect();
            match welch_t_test(&a, &b) {
                Ok(r) => !r.degenerate && r.p_value < alpha,
                Err(_) => false,
            }
        })
        .count();
    Ok(significant as f64 / d as f64)
}

/// Mean and sample standard deviation (absent for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    // identical values (deterministic models) report exactly that value ± 0;
    // summing and dividing could be off by an ulp
    if values.len() >= 2 && values.iter().all(|v| *v == values[0]) {
        return (values[0], Some(0.0));
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn identical_values_have_exactly_zero_std() {
        let v = [0.835_123_456_789; 5];
        assert_eq!(mean_std(&v), (v[0], Some(0.0)));
        assert_eq!(mean_std(&[0.1]), (0.1, None));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, Some(1.0)));
    }

    pub(crate) fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    credit += 1.0;
                } else if si == sj {
                    credit += 0.5;
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.8, 0.9, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(
            auc_roc(&[0.5, 0.95, 0.1, 0.9], &[1, 1, 0, 0]).unwrap(),
            0.75
        );
        assert!(matches!(
            auc_roc(&[0.1, 0.2], &[1, 1]),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn ood_auc_examples() {
        assert_eq!(ood_auc(&[0.1, 0.2], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(ood_auc(&[0.1, 0.5, 0.5], &[0.5, 0.1, 0.5]).unwrap(), 0.5);
        assert_eq!(ood_auc(&[0.1, 0.9], &[0.5, 0.95]).unwrap(), 0.75);
        assert!(ood_auc(&[], &[0.1]).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(
            raw in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, l)| u8::from(*l)).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), brute_force_auc(&scores, &labels));
        }

        #[test]
        fn auc_is_rank_invariant_and_complementary(
            raw in prop::collection::vec((-1e3f64..1e3, any::<bool>()), 2..100)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, l)| u8::from(*l)).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let base = auc_roc(&scores, &labels).unwrap();
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s + 2.0 * s).collect();
            prop_assert!((auc_roc(&cubed, &labels).unwrap() - base).abs() < 1e-12);
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() == scores.len() {
                let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
                prop_assert!((auc_roc(&neg, &labels).unwrap() + base - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn welch_hand_computed_case() {
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((r.t_statistic + 1.224_744_871_391_589).abs() < 1e-9);
        assert!((r.degrees_of_freedom - 4.0).abs() < 1e-9);
        assert!((r.p_value - 0.2879).abs() < 1e-3, "p={}", r.p_value);
    }

    #[test]
    fn welch_identical_samples() {
        let a = [1.0, 5.0, 2.0, 8.0];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!(r.t_statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn welch_zero_variance_convention() {
        let r = welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!((r.t_statistic, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn welch_antisymmetric() {
        let mut rng = RngStream::new(4, "welch", 0);
        for _ in 0..100 {
            let a: Vec<f64> = (0..2 + rng.below(20)).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..2 + rng.below(20))
                .map(|_| 0.5 + 2.0 * rng.normal())
                .collect();
            let ab = welch_t_test(&a, &b).unwrap();
            let ba = welch_t_test(&b, &a).unwrap();
            assert_eq!(ab.t_statistic, -ba.t_statistic);
            assert_eq!(ab.p_value, ba.p_value);
        }
    }

    #[test]
    fn incomplete_beta_known_values() {
        // I_x(1,1) = x ; I_x(a,1) = x^a ; I_0.5(a,a) = 0.5
        assert!((regularized_incomplete_beta(0.3, 1.0, 1.0) - 0.3).abs() < 1e-13);
        assert!((regularized_incomplete_beta(0.7, 3.0, 1.0) - 0.343).abs() < 1e-13);
        assert!((regularized_incomplete_beta(0.5, 4.5, 4.5) - 0.5).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn significant_fraction_cases() {
        let mut rng = RngStream::new(8, "sig", 0);
        let id = DMatrix::from_fn(200, 20, |_, _| rng.normal());
        let names: Vec<String> = (0..20).map(|j| format!("c{j}")).collect();
        let rows: Vec<String> = (0..200).map(|i| format!("r{i}")).collect();
        let x_id = FeatureMatrix::new(id.clone(), names.clone(), rows.clone()).unwrap();
        assert_eq!(
            significant_feature_fraction(&x_id, &x_id, 0.01).unwrap(),
            0.0
        );
        let shifted = FeatureMatrix::new(id.add_scalar(100.0), names.clone(), rows).unwrap();
        assert_eq!(
            significant_feature_fraction(&x_id, &shifted, 0.01).unwrap(),
            1.0
        );
        let other = FeatureMatrix::new(
            DMatrix::zeros(3, 2),
            vec!["a".into(), "b".into()],
            vec!["x".into(); 3],
        )
        .unwrap();
        assert!(significant_feature_fraction(&x_id, &other, 0.01).is_err());
    }

    #[test]
    fn resampled_rows_rarely_significant() {
        // null simulation: OOD is a row-resample of ID
        let mut rng = RngStream::new(12, "null", 0);
        let mut total = 0.0;
        let reps = 20;
        for _ in 0..reps {
            let id = DMatrix::from_fn(300, 50, |_, _| rng.normal());
            let pick: Vec<usize> = (0..150).map(|_| rng.below(300)).collect();
            let names: Vec<String> = (0..50).map(|j| format!("c{j}")).collect();
            let x_id =
                FeatureMatrix::new(id.clone(), names.clone(), vec![String::new(); 300]).unwrap();
            let x_ood = x_id.select_rows(&pick);
            total += significant_feature_fraction(&x_id, &x_ood, 0.01).unwrap();
        }
        assert!(total / reps as f64 <= 0.05);
    }
}
