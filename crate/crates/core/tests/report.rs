use cloze_core::report::{
    compare_variants, export_plot_data, histogram, kde, silverman_bandwidth, summarize, DifficultyDistribution,
    Variant, HISTOGRAM_BINS, SUMMARY_FILE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Welford's running mean and variance.
fn streaming(xs: &[f64]) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for &x in xs {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    (mean, (m2 / n).sqrt())
}

/// Type-7 quantile from a sorted copy.
fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn sample(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0 + rng.random::<f64>()).collect()
}

#[test]
fn summary_matches_streaming_and_quantile_oracles() {
    for (n, seed) in [(1, 1), (2, 2), (7, 3), (200, 4), (1001, 5)] {
        let xs = sample(n, seed);
        let s = summarize(&xs).unwrap();
        let (mean, sd) = streaming(&xs);
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.sd - sd).abs() < 1e-12);
        assert_eq!(s.median, quantile(&xs, 0.5));
        assert_eq!(s.q1, quantile(&xs, 0.25));
        assert_eq!(s.q3, quantile(&xs, 0.75));
        assert_eq!(s.min, quantile(&xs, 0.0));
        assert_eq!(s.max, quantile(&xs, 1.0));
    }
}

#[test]
fn kde_integrates_to_one() {
    for xs in [sample(200, 7), vec![0.5; 10], vec![-1.0, 3.0]] {
        let k = kde(&xs).unwrap();
        let mass: f64 = k
            .xs
            .windows(2)
            .zip(k.density.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
            .sum();
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
        let step = k.xs[1] - k.xs[0];
        assert!(step <= k.bandwidth / 4.0 + 1e-12);
    }
}

#[test]
fn bandwidth_follows_silverman() {
    let xs = sample(500, 8);
    let s = summarize(&xs).unwrap();
    let iqr = quantile(&xs, 0.75) - quantile(&xs, 0.25);
    let (_, sd) = streaming(&xs);
    let want = 0.9 * sd.min(iqr / 1.34) * 500f64.powf(-0.2);
    assert!((silverman_bandwidth(&s) - want).abs() < 1e-12);
}

#[test]
fn histogram_counts_every_value() {
    let xs = sample(333, 9);
    let h = histogram(&xs, HISTOGRAM_BINS);
    assert_eq!(h.len(), HISTOGRAM_BINS);
    assert_eq!(h.iter().map(|(_, c)| c).sum::<usize>(), 333);
    assert!(h.windows(2).all(|w| w[0].0 < w[1].0));
}

#[test]
fn export_writes_series_and_summary() {
    let dists = vec![
        DifficultyDistribution::new(Variant::Original, "original", false, sample(50, 1)).unwrap(),
        DifficultyDistribution::new(Variant::Hard, "three-factor", true, sample(50, 2).iter().map(|x| x + 1.0).collect())
            .unwrap(),
        DifficultyDistribution::new(Variant::Easy, "confidence-ranking", false, sample(50, 3).iter().map(|x| x - 1.0).collect())
            .unwrap(),
    ];
    let report = compare_variants(dists).unwrap();
    assert_eq!(report.shifts.len(), 6);
    let up = report.shift("original", "hard-three-factor-gap").unwrap();
    assert!(up.mean_shift > 0.0);
    let down = report.shift("original", "easy-confidence-ranking").unwrap();
    assert!(down.mean_shift < 0.0);

    let dir = tempfile::tempdir().unwrap();
    let files = export_plot_data(&report, dir.path()).unwrap();
    assert_eq!(files.len(), 4);
    assert!(files.last().unwrap().ends_with(SUMMARY_FILE));

    let dat = std::fs::read_to_string(dir.path().join("hard-three-factor-gap.dat")).unwrap();
    let blocks: Vec<&str> = dat.split("\n\n\n").collect();
    assert_eq!(blocks.len(), 2);
    let hist_rows = blocks[1].lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(hist_rows, HISTOGRAM_BINS);

    let summary = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    let records: Vec<serde_json::Value> = summary.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    for field in ["variant", "strategy", "gap_control", "mean", "sd", "q1", "median", "q3", "min", "max", "n", "bandwidth"] {
        assert!(records[0].get(field).is_some(), "missing {field}");
    }

    let again = tempfile::tempdir().unwrap();
    export_plot_data(&report, again.path()).unwrap();
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(again.path().join(name)).unwrap());
    }
}

/// Mostly tied values with a few outliers: the IQR is only fitting noise.
#[test]
fn near_ties_fall_back_to_sd_bandwidth() {
    let mut xs: Vec<f64> = (0..190).map(|i| -2.5 + i as f64 * 1e-10).collect();
    xs.extend((0..10).map(|i| i as f64 * 0.3));
    let s = summarize(&xs).unwrap();
    let (_, sd) = streaming(&xs);
    let want = 0.9 * sd * 200f64.powf(-0.2);
    assert!((silverman_bandwidth(&s) - want).abs() < 1e-12);
    let k = kde(&xs).unwrap();
    assert!(k.xs.len() <= 4096);
}
