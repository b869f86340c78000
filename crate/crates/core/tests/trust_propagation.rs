mod support;

use agentmesh_core::rng::{indexed_stream, stream, unit_f64};
use agentmesh_core::trust::*;
use support::*;

fn params(orientation: Orientation, base: Vec<f64>) -> PropagationParams {
    PropagationParams {
        alpha: DEFAULT_ALPHA,
        base,
        orientation,
        tol: 1e-10,
        max_iters: None,
        initial: None,
    }
}

#[test]
fn power_iteration_matches_linear_solve() {
    let mut rng = stream(11, "test/trust-oracle");
    for trial in 0..40 {
        let n = random_size(&mut rng, 2, 120);
        let p = unit_f64(&mut rng) * 0.2;
        let g = random_graph(&mut rng, n, p);
        let base: Vec<f64> = (0..n).map(|_| unit_f64(&mut rng)).collect();
        for orientation in [Orientation::Literal, Orientation::Transpose] {
            let got = propagate_trust(&g, &params(orientation, base.clone())).unwrap();
            let want = trust_fixed_point(&g, DEFAULT_ALPHA, &base, orientation);
            let err = max_abs_diff(&got.values, &want);
            assert!(err <= 1e-9, "trial {trial} {orientation:?}: error {err}");
            assert!(got.residual < 1e-9);
        }
    }
}

#[test]
fn literal_values_stay_within_base_range() {
    let mut rng = stream(12, "test/trust-bounds");
    for _ in 0..200 {
        let n = random_size(&mut rng, 1, 30);
        let g = random_graph(&mut rng, n, 0.3);
        let base: Vec<f64> = (0..n).map(|_| unit_f64(&mut rng)).collect();
        let lo = base.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = base.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let t = propagate_trust(&g, &params(Orientation::Literal, base)).unwrap();
        assert!(t.values.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }
}

#[test]
fn steps_contract_by_alpha() {
    let mut rng = stream(13, "test/trust-contraction");
    for _ in 0..100 {
        let n = random_size(&mut rng, 2, 40);
        let g = random_graph(&mut rng, n, 0.25);
        let base: Vec<f64> = (0..n).map(|_| unit_f64(&mut rng)).collect();
        for orientation in [Orientation::Literal, Orientation::Transpose] {
            let t = propagate_trust(&g, &params(orientation, base.clone())).unwrap();
            let scale = contraction_norm(orientation, &t.values);
            let slack = 4.0 * n as f64 * f64::EPSILON * scale;
            for w in t.steps.windows(2) {
                assert!(
                    w[1] <= (DEFAULT_ALPHA + 1e-12) * w[0] + slack,
                    "{} > α·{}",
                    w[1],
                    w[0]
                );
            }
        }
    }
}

#[test]
fn different_starting_points_agree() {
    let mut rng = stream(14, "test/trust-unique");
    let g = random_graph(&mut rng, 25, 0.2);
    let mut p = PropagationParams::transpose_scoring(25);
    p.initial = Some(vec![0.0; 25]);
    let a = propagate_trust(&g, &p).unwrap();
    p.initial = Some(vec![1.0; 25]);
    let b = propagate_trust(&g, &p).unwrap();
    assert!(max_abs_diff(&a.values, &b.values) <= 10.0 * p.tol);
}

#[test]
fn local_scores_on_fixed_graphs() {
    // Star: hub 0 trusts 1..=3.
    let mut star = TrustGraph::new(4);
    for (j, w) in [(1, 0.2), (2, 0.4), (3, 0.6)] {
        star.add_edge(0, j, w).unwrap();
    }
    let lit = local_trust_score(&star, 0, Direction::FormulaLiteral)
        .unwrap()
        .unwrap();
    assert!((lit - 0.4).abs() < 1e-15);
    assert_eq!(
        local_trust_score(&star, 0, Direction::Incoming).unwrap(),
        None
    );
    assert_eq!(
        local_trust_score(&star, 2, Direction::Incoming).unwrap(),
        Some(0.4)
    );

    // Chain 0 -> 1 -> 2 with a back edge 2 -> 0.
    let mut cycle = TrustGraph::new(3);
    cycle.add_edge(0, 1, 0.8).unwrap();
    cycle.add_edge(1, 2, 0.5).unwrap();
    cycle.add_edge(2, 0, 0.1).unwrap();
    cycle.add_edge(0, 2, 0.3).unwrap();
    assert_eq!(
        local_trust_score(&cycle, 1, Direction::FormulaLiteral).unwrap(),
        Some(0.5)
    );
    let into2 = local_trust_score(&cycle, 2, Direction::Incoming)
        .unwrap()
        .unwrap();
    assert!((into2 - 0.4).abs() < 1e-15);
    let out0 = local_trust_score(&cycle, 0, Direction::FormulaLiteral)
        .unwrap()
        .unwrap();
    assert!((out0 - 0.55).abs() < 1e-15);

    // Isolated node 3 next to a pair.
    let mut pair = TrustGraph::new(4);
    pair.add_edge(0, 1, 1.0).unwrap();
    pair.add_edge(1, 0, 0.0).unwrap();
    assert_eq!(
        local_trust_score(&pair, 0, Direction::Incoming).unwrap(),
        Some(0.0)
    );
    for d in [Direction::FormulaLiteral, Direction::Incoming] {
        assert_eq!(local_trust_score(&pair, 3, d).unwrap(), None);
    }
}

fn sybil_graph(
    honest: usize,
    sybils: usize,
    seed: u64,
    weight: impl Fn(usize, usize) -> f64,
) -> TrustGraph {
    let mut rng = indexed_stream(seed, "test/sybil-honest", 0);
    let n = honest + sybils;
    let mut g = TrustGraph::new(n);
    for i in 0..honest {
        g.set_edge(i, (i + 1) % honest, 0.5 + unit_f64(&mut rng) / 2.0)
            .unwrap();
        for j in 0..honest {
            if i != j && unit_f64(&mut rng) < 0.1 {
                g.set_edge(i, j, unit_f64(&mut rng)).unwrap();
            }
        }
    }
    for a in honest..n {
        for b in honest..n {
            if a != b {
                g.set_edge(a, b, weight(a, b)).unwrap();
            }
        }
    }
    g
}

fn sybil_mass(values: &[f64], honest: usize) -> f64 {
    values[honest..].iter().sum()
}

#[test]
fn sybil_mass_ignores_internal_weights() {
    let (h, s) = (30, 6);
    let p = PropagationParams::transpose_scoring(h + s);
    let mut masses = Vec::new();
    let mut rng = stream(15, "test/sybil-weights");
    let random: Vec<f64> = (0..(h + s) * (h + s))
        .map(|_| 0.05 + unit_f64(&mut rng) * 0.9)
        .collect();
    for g in [
        sybil_graph(h, s, 1, |_, _| 0.1),
        sybil_graph(h, s, 1, |_, _| 0.9),
        sybil_graph(h, s, 1, |a, b| random[a * (h + s) + b]),
    ] {
        let t = propagate_trust(&g, &p).unwrap();
        let exact = trust_fixed_point(&g, p.alpha, &p.base, Orientation::Transpose);
        assert!(max_abs_diff(&t.values, &exact) < 1e-9);
        masses.push(sybil_mass(&exact, h));
    }
    for m in &masses {
        assert!((m - masses[0]).abs() <= 1e-9, "{masses:?}");
        assert!((m - 0.5 * s as f64).abs() <= 1e-9);
    }

    let mut leaked = sybil_graph(h, s, 1, |_, _| 0.5);
    leaked.set_edge(0, h, 1.0).unwrap();
    let exact = trust_fixed_point(&leaked, p.alpha, &p.base, Orientation::Transpose);
    assert!(sybil_mass(&exact, h) > masses[0] + 1e-9);
}

#[test]
fn fused_tiers_are_monotone() {
    let thresholds = TierThresholds::default();
    let mut prev = VerificationTier::Quarantine;
    for k in 0..=1000 {
        let tier = verification_tier(k as f64 / 1000.0, &thresholds);
        assert!(tier <= prev);
        prev = tier;
    }
}
