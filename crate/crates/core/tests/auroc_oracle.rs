use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shiftgrad::eval::{auroc, auroc_brute_force};

/// 200 random fixtures up to 100x100, half of them on a coarse grid so that
/// ties are frequent; the rank formula must agree with pair enumeration.
#[test]
fn rank_auroc_equals_pairwise_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..200 {
        let np = rng.gen_range(1..=100);
        let nn = rng.gen_range(1..=100);
        let coarse = i % 2 == 0;
        let mut draw = |shift: f64| -> f64 {
            if coarse {
                (rng.gen_range(0..12) as f64 + shift).floor()
            } else {
                rng.gen_range(-3.0..3.0) + shift
            }
        };
        let pos: Vec<f64> = (0..np).map(|_| draw(0.7)).collect();
        let neg: Vec<f64> = (0..nn).map(|_| draw(0.0)).collect();
        let r = auroc(&pos, &neg).unwrap();
        assert_eq!(r.auroc, auroc_brute_force(&pos, &neg), "fixture {i}");
        assert!((r.auroc - r.curve_area()).abs() < 1e-12);
    }
}
