/// Two-sample log-rank chi-square `(O_A - E_A)^2 / V` with the hypergeometric
/// variance over distinct event times; 0 when `V = 0`.
pub fn logrank_statistic(a: &[(f64, bool)], b: &[(f64, bool)]) -> f64 {
    let mut all: Vec<(f64, bool, bool)> = a
        .iter()
        .map(|&(t, e)| (t, e, true))
        .chain(b.iter().map(|&(t, e)| (t, e, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));

    let (mut n_a, mut n) = (a.len() as f64, all.len() as f64);
    let (mut o_minus_e, mut v) = (0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        let (mut d, mut d_a, mut left_a, mut left) = (0.0, 0.0, 0.0, 0.0);
        while i < all.len() && all[i].0 == t {
            let (_, event, in_a) = all[i];
            if event {
                d += 1.0;
                if in_a {
                    d_a += 1.0;
                }
            }
            if in_a {
                left_a += 1.0;
            }
            left += 1.0;
            i += 1;
        }
        if d > 0.0 {
            o_minus_e += d_a - d * n_a / n;
            if n > 1.0 {
                v += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
            }
        }
        n_a -= left_a;
        n -= left;
    }
    if v > 0.0 {
        o_minus_e * o_minus_e / v
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn events(ts: &[f64]) -> Vec<(f64, bool)> {
        ts.iter().map(|&t| (t, true)).collect()
    }

    #[test]
    fn separated_groups() {
        let chi2 = logrank_statistic(&events(&[1.0, 2.0]), &events(&[3.0, 4.0]));
        // O_A = 2, E_A = 5/6, V = 17/36
        let expect = (2.0f64 - 5.0 / 6.0).powi(2) / (17.0 / 36.0);
        assert!((chi2 - expect).abs() < 1e-12);
        assert!((chi2 - 2.882).abs() < 1e-3);
        assert!((chi2 - logrank_statistic(&events(&[3.0, 4.0]), &events(&[1.0, 2.0]))).abs() < 1e-12);
    }

    #[test]
    fn identical_groups() {
        let g = [(1.0, true), (3.0, false), (4.0, true)];
        assert!(logrank_statistic(&g, &g).abs() < 1e-15);
    }

    #[test]
    fn censored_before_any_event() {
        let a = events(&[5.0, 6.0]);
        let b = [(1.0, false), (2.0, false)];
        assert_eq!(logrank_statistic(&a, &b), 0.0);
    }
}
