use pluc_demo::ops::{effect_map, learn, sigma_curve};

#[test]
fn sigma_curve_spans_the_unit_interval() {
    for beta in [0.0, 0.5, 4.0] {
        let c = sigma_curve(beta, 21).unwrap();
        assert_eq!(c.len(), 21);
        assert!(c[0].abs() < 1e-12 && (c[20] - 1.0).abs() < 1e-12);
        assert!(c.windows(2).all(|w| w[0] <= w[1]));
    }
    assert!((sigma_curve(0.0, 3).unwrap()[1] - 0.5).abs() < 1e-15);
    assert!(sigma_curve(1.0, 1).is_err());
}

#[test]
fn effect_map_matches_the_linear_scenario() {
    let r = 4;
    let m = effect_map("linear", r).unwrap();
    assert_eq!(m.len(), 2 * r * r);
    // cells (0.125, 0.125) and (0.875, 0.875) sit on either side of x1 + x2 = 1
    assert!(m[0] > 0.0 && m[r * r - 1] < 0.0);
    // Δν₀ = 0.75·expit(4(x₂ − ½)) is constant along a row
    let row0 = &m[r * r..r * r + r];
    assert!(row0.iter().all(|v| (v - row0[0]).abs() < 1e-15));
    let expected = 0.75 / (1.0 + (-4.0f64 * (0.125 - 0.5)).exp());
    assert!((row0[0] - expected).abs() < 1e-12);
    assert!(effect_map("realistic", 4).is_err());
}

#[test]
fn learning_is_seeded_and_respects_a_tight_budget() {
    let a = learn("linear", 0.0, 0.25, 0.1, 300, 8, 3, 5).unwrap();
    let b = learn("linear", 0.0, 0.25, 0.1, 300, 8, 3, 5).unwrap();
    assert_eq!(a.probabilities, b.probabilities);
    assert_eq!(a.probabilities.len(), 25);
    assert!(a.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    // a heavy penalty pushes treatment, and so the constraint, down
    let strict = learn("linear", 10.0, 0.25, 0.1, 300, 8, 3, 5).unwrap();
    assert!(strict.constraint < a.constraint);
}
