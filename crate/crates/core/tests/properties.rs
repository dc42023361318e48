use ndarray::{Array2, Array3};
use proptest::prelude::*;

use geomimu::geometry::{axis_rotation, Mat3, Vec3};
use geomimu::objectives::LatentSequence;
use geomimu::placement::surface_frame;
use geomimu::sampler::{rotate_imu_signal, sample_visibility_mask_in};
use geomimu::seed::rng_from_seed;
use geomimu::tokenizer::{deinterleave_tokens, interleave_tokens, perplexity, quantize, Codebooks};

fn nonzero_vec() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("nonzero", |(x, y, z)| x * x + y * y + z * z > 1e-4)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #[test]
    fn interleave_round_trips(steps in 0usize..40, books in 1usize..6, seed in any::<u64>()) {
        let idx = Array2::from_shape_fn((steps, books), |(l, j)| (seed as usize ^ (l * 31 + j * 7)) % 4096);
        let tokens = interleave_tokens(&idx);
        prop_assert_eq!(tokens.len(), steps * books);
        prop_assert_eq!(deinterleave_tokens(&tokens, books).unwrap(), idx);
    }

    #[test]
    fn perplexity_is_between_one_and_used_codes(hist in prop::collection::vec(0u64..50, 1..64)) {
        prop_assume!(hist.iter().any(|&c| c > 0));
        let used = hist.iter().filter(|&&c| c > 0).count() as f64;
        let p = perplexity(&hist);
        prop_assert!(p >= 1.0 - 1e-9 && p <= used + 1e-9, "{p} vs {used}");
    }

    #[test]
    fn quantized_chunks_are_codes(values in prop::collection::vec(-3.0..3.0f64, 24), codes in prop::collection::vec(-3.0..3.0f64, 2 * 5 * 3)) {
        let books = Codebooks::from_codes(Array3::from_shape_vec((2, 5, 3), codes).unwrap(), 0.99).unwrap();
        let latent = LatentSequence::new(Array2::from_shape_vec((4, 6), values).unwrap()).unwrap();
        let (idx, q) = quantize(&latent, &books).unwrap();
        for l in 0..4 {
            for j in 0..2 {
                for c in 0..3 {
                    prop_assert_eq!(q.values()[[l, j * 3 + c]], books.codes[[j, idx[[l, j]], c]]);
                }
            }
        }
    }

    #[test]
    fn surface_frames_are_right_handed(n in nonzero_vec(), axis in nonzero_vec()) {
        let f = surface_frame(&n.normalize(), &axis).unwrap();
        let m = f.rotation;
        prop_assert!((m.transpose() * m - Mat3::identity()).amax() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        prop_assert!((m.column(2) - n.normalize()).amax() < 1e-12);
    }

    #[test]
    fn rotations_compose(a in -3.2..3.2f64, b in -3.2..3.2f64, row in prop::array::uniform6(-5.0..5.0f64)) {
        let ra = axis_rotation(Vec3::new(1.0, 2.0, 0.5), a);
        let rb = axis_rotation(Vec3::new(-0.3, 0.1, 1.0), b);
        let once = rotate_imu_signal(&[row], &(rb * ra)).unwrap();
        let twice = rotate_imu_signal(&rotate_imu_signal(&[row], &ra).unwrap(), &rb).unwrap();
        for c in 0..6 {
            prop_assert!((once[0][c] - twice[0][c]).abs() < 1e-12);
        }
    }

    #[test]
    fn masks_respect_bounds(segments in 1usize..30, lo in 1usize..6, extra in 0usize..5, seed in any::<u64>()) {
        let hi = lo + extra;
        let mut rng = rng_from_seed(seed);
        let m = sample_visibility_mask_in(segments, lo, hi, &mut rng);
        prop_assert!(m.len() >= lo.min(segments) && m.len() <= hi.min(segments));
        prop_assert!(m.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(m.iter().all(|&s| s < segments));
    }
}
