use proptest::prelude::*;
use r3d_autodiff::kernels::{dot, rotate_pairs};
use r3d_core::posenc::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tokens(rng: &mut ChaCha8Rng, len: usize, width: usize) -> Vec<f64> {
    (0..len * width).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_coords(rng: &mut ChaCha8Rng, len: usize) -> Vec<[usize; 3]> {
    (0..len).map(|_| [rng.gen_range(0..6), rng.gen_range(0..8), rng.gen_range(0..4)]).collect()
}

fn adapted(bank: &FrequencyBank, rng: &mut ChaCha8Rng) -> AdaptiveFrequencies {
    let mut ctrl = ControllerParams::zeros(4, bank);
    for w in ctrl.w_scale.iter_mut().chain(ctrl.w_shift.iter_mut()) {
        *w = rng.gen_range(-0.1..0.1);
    }
    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    modulate(bank, &ctrl, &c).unwrap()
}

#[test]
fn relative_shift_dichotomy() {
    let (heads, d) = (2, 12);
    let width = heads * d;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shift = [5, 7, 3];
    for trial in 0..50 {
        let len = rng.gen_range(2..12);
        let q = random_tokens(&mut rng, len, width);
        let k = random_tokens(&mut rng, len, width);
        let coords = random_coords(&mut rng, len);
        let fixed = AdaptiveFrequencies::from_bank(&fixed_bank(d, heads, DEFAULT_ROPE_BASE, Stage::Encoder).unwrap());
        let bank = init_bank(d, heads, DEFAULT_ROPE_BASE, trial, Stage::Encoder, BankInit::DirectionPerPair).unwrap();
        let learn = AdaptiveFrequencies::from_bank(&bank);
        let adapt = adapted(&bank, &mut rng);
        for f in [&fixed, &learn, &adapt] {
            let dev = relative_shift_deviation(&q, &k, heads, &coords, &ScorePositions::Rotary(f), shift).unwrap();
            assert!(dev < 1e-8, "rotary deviation {dev}");
            let none = relative_shift_deviation(&q, &k, heads, &coords, &ScorePositions::Rotary(f), [0, 0, 0]).unwrap();
            assert_eq!(none, 0.0);
        }
        for kind in [ApeKind::Ape1d, ApeKind::Ape3d] {
            let pos = ScorePositions::Ape { kind, grid: [16, 16, 8] };
            let dev = relative_shift_deviation(&q, &k, heads, &coords, &pos, shift).unwrap();
            assert!(dev > 1e-3, "{kind:?} deviation only {dev}");
        }
    }
}

#[test]
fn global_shift_keeps_phase_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bank = init_bank(8, 2, 100.0, 4, Stage::Decoder, BankInit::DirectionPerPair).unwrap();
    let f = adapted(&bank, &mut rng);
    let coords: Vec<[f64; 3]> = (0..6).map(|_| [rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)]).collect();
    let moved: Vec<[f64; 3]> = coords.iter().map(|c| [c[0] + 3.0, c[1] - 1.0, c[2] + 7.0]).collect();
    let (a, b) = (phases(&f, &coords), phases(&f, &moved));
    let w = a.width;
    for m in 0..6 {
        for n in 0..6 {
            for j in 0..w {
                let da = a.theta[m * w + j] - a.theta[n * w + j];
                let db = b.theta[m * w + j] - b.theta[n * w + j];
                assert!((da - db).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn residual_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bank = init_bank(6, 3, DEFAULT_ROPE_BASE, 1, Stage::Encoder, BankInit::DirectionPerPair).unwrap();
    let mut ctrl = ControllerParams::zeros(5, &bank);
    for w in ctrl
        .w_scale
        .iter_mut()
        .chain(ctrl.b_scale.iter_mut())
        .chain(ctrl.w_shift.iter_mut())
        .chain(ctrl.b_shift.iter_mut())
    {
        *w = rng.gen_range(-0.5..0.5);
    }
    let c: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (ds, db) = ctrl.offsets(&c).unwrap();
    let f = modulate(&bank, &ctrl, &c).unwrap();
    for i in 0..bank.omega.len() {
        let delta = f.omega[i] - bank.omega[i];
        assert!((delta - (bank.omega[i] * ds[i] + db[i])).abs() < 1e-12);
    }
}

#[test]
fn zero_controller_is_bitwise_identity() {
    let bank = init_bank(16, 2, DEFAULT_ROPE_BASE, 9, Stage::Encoder, BankInit::DirectionPerHead).unwrap();
    let ctrl = ControllerParams::zeros(8, &bank);
    let f = modulate(&bank, &ctrl, &[1.0, -3.0, 0.5, 2.0, 9.0, -1.0, 0.0, 4.0]).unwrap();
    assert_eq!(f.omega, bank.omega);
}

#[test]
fn distinct_contexts_give_distinct_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bank = init_bank(8, 2, DEFAULT_ROPE_BASE, 2, Stage::Encoder, BankInit::DirectionPerPair).unwrap();
    let mut ctrl = ControllerParams::zeros(6, &bank);
    ctrl.w_scale.iter_mut().for_each(|w| *w = rng.gen_range(-0.1..0.1));
    let a = modulate(&bank, &ctrl, &[1.0, 0.0, 0.0, 0.5, 0.5, 0.5]).unwrap();
    let b = modulate(&bank, &ctrl, &[0.0, 1.0, 0.0, 0.5, 0.5, 0.5]).unwrap();
    assert_ne!(a.omega, b.omega);
}

/// Pairwise oracle: var = (1 / 2n²) Σ_i Σ_j (x_i − x_j)².
#[test]
fn context_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (rows, cols) = (rng.gen_range(2..20), rng.gen_range(1..9));
        let x = random_tokens(&mut rng, rows, cols);
        let c = context_vector(&x, cols).unwrap();
        for j in 0..cols {
            let col: Vec<f64> = (0..rows).map(|r| x[r * cols + j]).collect();
            let n = rows as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().flat_map(|a| col.iter().map(move |b| (a - b).powi(2))).sum::<f64>() / (2.0 * n * n);
            assert!((c[j] - mean).abs() < 1e-12);
            assert!((c[cols + j] - var.sqrt()).abs() < 1e-12);
        }
    }
}

/// Content-free oracle: rotate a unit vector with all pairs equal to
/// `(1, 0)/sqrt(P)` at two coordinates and take the inner product.
fn brute_force_probe(f: &AdaptiveFrequencies, head: usize, offset: [i64; 3]) -> f64 {
    let p = f.pairs;
    let e: Vec<f64> = (0..p).flat_map(|_| [1.0 / (p as f64).sqrt(), 0.0]).collect();
    let [ot, ok, ou] = f.head(head);
    let anchor = [3.0, -2.0, 1.0];
    let theta = |c: [f64; 3]| -> Vec<f64> { (0..p).map(|i| c[0] * ot[i] + c[1] * ok[i] + c[2] * ou[i]).collect() };
    let other = [anchor[0] + offset[0] as f64, anchor[1] + offset[1] as f64, anchor[2] + offset[2] as f64];
    let (mut a, mut b) = (vec![0.0; 2 * p], vec![0.0; 2 * p]);
    rotate_pairs(&e, &theta(anchor), &mut a);
    rotate_pairs(&e, &theta(other), &mut b);
    dot(&a, &b)
}

#[test]
fn probe_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bank = init_bank(16, 4, DEFAULT_ROPE_BASE, 7, Stage::Encoder, BankInit::DirectionPerPair).unwrap();
    let grid = ProbeGrid::square_tk(10);
    for f in [AdaptiveFrequencies::from_bank(&bank), adapted(&bank, &mut rng)] {
        for head in 0..4 {
            let map = phase_probe(&f, head, &grid).unwrap();
            assert_eq!(map.cells.len(), 441);
            assert_eq!(map.get([0, 0, 0]), Some(1.0));
            for &(o, g) in &map.cells {
                assert!((g - brute_force_probe(&f, head, o)).abs() < 1e-8);
                let neg = map.get([-o[0], -o[1], -o[2]]).unwrap();
                assert!((g - neg).abs() < 1e-12);
                assert!((-1.0..=1.0).contains(&g));
            }
        }
    }
}

#[test]
fn fixed_probe_is_seed_free() {
    let a = fixed_bank(12, 2, DEFAULT_ROPE_BASE, Stage::Encoder).unwrap();
    let b = fixed_bank(12, 2, DEFAULT_ROPE_BASE, Stage::Encoder).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ape_is_deterministic_and_extends() {
    let coords = [[0, 0, 0], [7, 3, 1], [40, 2, 0]];
    for kind in [ApeKind::Ape1d, ApeKind::Ape3d] {
        let a = ape_embeddings(kind, &coords, [64, 4, 2], 24);
        assert_eq!(a, ape_embeddings(kind, &coords, [64, 4, 2], 24));
        assert!(a.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn bank_csv() {
    let b = fixed_bank(6, 1, DEFAULT_ROPE_BASE, Stage::Encoder).unwrap();
    let mut buf = Vec::new();
    b.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "axis,head,pair,value");
    assert_eq!(lines.len(), 1 + 3 * 3);
    assert_eq!(lines[1], "T,0,0,1");
}

proptest! {
    #[test]
    fn rotary_is_an_isometry(seed in 0u64..10_000, len in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (heads, d) = (2, 8);
        let bank = init_bank(d, heads, DEFAULT_ROPE_BASE, seed, Stage::Encoder, BankInit::DirectionPerPair).unwrap();
        let f = adapted(&bank, &mut rng);
        let coords: Vec<[f64; 3]> = (0..len).map(|_| [rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0)]).collect();
        let x = random_tokens(&mut rng, len, heads * d);
        let y = apply_rotary(&x, &phases(&f, &coords)).unwrap();
        for m in 0..len {
            for h in 0..heads {
                let s = m * heads * d + h * d;
                let nx = dot(&x[s..s + d], &x[s..s + d]).sqrt();
                let ny = dot(&y[s..s + d], &y[s..s + d]).sqrt();
                prop_assert!((nx - ny).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_phase_is_identity(len in 1usize..6) {
        let x: Vec<f64> = (0..len * 4).map(|i| i as f64 * 0.3 - 1.0).collect();
        let table = PhaseTable { tokens: len, width: 2, theta: vec![0.0; len * 2] };
        prop_assert_eq!(apply_rotary(&x, &table).unwrap(), x);
    }
}
