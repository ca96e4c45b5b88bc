use proptest::prelude::*;
use qtune_core::workload::{generate, key_name, sweep_read_proportion};
use qtune_core::{KeyDistribution, OpKind, WorkloadSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn sessions_are_independent_of_thread_count(seed in any::<u64>(), tc in 1usize..8) {
        let base = WorkloadSpec { thread_count: tc, ops_per_thread_per_window: 50, seed, ..Default::default() };
        let more = WorkloadSpec { thread_count: tc + 3, ..base.clone() };
        let a = generate(&base).unwrap();
        let b = generate(&more).unwrap();
        for s in 0..tc {
            let pa: Vec<_> = a.iter().filter(|o| o.session == s).collect();
            let pb: Vec<_> = b.iter().filter(|o| o.session == s).collect();
            prop_assert_eq!(pa, pb);
        }
    }
}

/// Each stream's read fraction lies within 3 standard errors of the target with
/// probability 0.9973, so over 200 streams about 0.5 misses are expected.
#[test]
fn read_fraction_converges() {
    let mut misses = Vec::new();
    for i in 0..200u64 {
        let rw = (i % 21) as f64 / 20.0;
        let spec = WorkloadSpec {
            read_proportion: rw,
            thread_count: 4,
            ops_per_thread_per_window: 1000,
            seed: i,
            ..Default::default()
        };
        let ops = generate(&spec).unwrap();
        let n = ops.len() as f64;
        let frac = ops.iter().filter(|o| o.kind == OpKind::Read).count() as f64 / n;
        if (frac - rw).abs() > 3.0 * (rw * (1.0 - rw) / n).sqrt() {
            misses.push((rw, i, frac));
        }
    }
    assert!(misses.len() <= 3, "{misses:?}");
}

#[test]
fn zipfian_popularity_falls_with_rank() {
    let spec = WorkloadSpec {
        key_count: 20,
        key_distribution: KeyDistribution::Zipfian { theta: 0.99 },
        thread_count: 10,
        ops_per_thread_per_window: 20_000,
        ..Default::default()
    };
    let ops = generate(&spec).unwrap();
    let counts: Vec<usize> = (0..20).map(|r| ops.iter().filter(|o| o.key == key_name(r)).count()).collect();
    // Ranks far enough apart that sampling noise cannot reorder them.
    for w in counts.windows(2).take(5) {
        assert!(w[0] > w[1], "{counts:?}");
    }
    assert!(counts[0] > 3 * counts[19], "{counts:?}");
}

#[test]
fn uniform_covers_all_keys() {
    let spec = WorkloadSpec {
        key_count: 30,
        key_distribution: KeyDistribution::Uniform,
        ops_per_thread_per_window: 3000,
        ..Default::default()
    };
    let ops = generate(&spec).unwrap();
    assert!((0..30).all(|r| ops.iter().any(|o| o.key == key_name(r))));
}

#[test]
fn sweep_specs() {
    let base = WorkloadSpec::default();
    let values: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let specs = sweep_read_proportion(&base, &values).unwrap();
    assert_eq!(specs.len(), 10);
    assert!(specs.iter().zip(&values).all(|(s, &v)| s.read_proportion == v && s.key_count == base.key_count));
    assert!(sweep_read_proportion(&base, &[]).unwrap().is_empty());
    assert!(sweep_read_proportion(&base, &[1.5]).is_err());
}
