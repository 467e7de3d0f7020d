use echosyn_core::codec::*;
use echosyn_core::echotoy::{generate_samples, EchoToyConfig};
use echosyn_core::rng;
use echosyn_nn::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frame(r: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_vec(&[1, h, w], (0..h * w).map(|_| r.random::<f32>()).collect()).unwrap()
}

#[test]
fn zero_latent_decodes_to_zero() {
    let f = HaarCodec.decode_frame(&Tensor::zeros(&[4, 3, 2])).unwrap();
    assert_eq!(f.shape(), &[1, 24, 16]);
    assert!(f.data().iter().all(|v| *v == 0.0));
}

#[test]
fn decode_encode_is_a_projection() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let f = random_frame(&mut r, 32, 32);
        let z = HaarCodec.encode_frame(&f).unwrap();
        let once = HaarCodec.decode_frame(&z).unwrap();
        let z2 = HaarCodec.encode_frame(&once).unwrap();
        assert!(z2.max_abs_diff(&z).unwrap() < 1e-5);
        let twice = HaarCodec.decode_frame(&z2).unwrap();
        assert!(twice.max_abs_diff(&once).unwrap() < 1e-5);
    }
}

/// Block mean, repeated over the block.
fn nearest_neighbour(f: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = (f.shape()[1], f.shape()[2]);
    let mut out = vec![0f32; h * w];
    for by in 0..h / BLOCK {
        for bx in 0..w / BLOCK {
            let mut s = 0.0;
            for y in 0..BLOCK {
                for x in 0..BLOCK {
                    s += f.data()[(by * BLOCK + y) * w + bx * BLOCK + x];
                }
            }
            for y in 0..BLOCK {
                for x in 0..BLOCK {
                    out[(by * BLOCK + y) * w + bx * BLOCK + x] = s / 64.0;
                }
            }
        }
    }
    Tensor::from_vec(&[1, h, w], out).unwrap()
}

#[test]
fn beats_block_average_on_toy_frames() {
    let cfg = EchoToyConfig::default();
    let s = generate_samples(&cfg, 100, [1.0, 0.0, 0.0]).unwrap();
    let (mut haar, mut nn) = (0.0, 0.0);
    for (i, x) in s.iter().enumerate() {
        let f = x.video.slice_rows(i % x.video.shape()[0], 1).unwrap().reshape(&[1, 32, 32]).unwrap();
        let rec = HaarCodec.decode_frame(&HaarCodec.encode_frame(&f).unwrap()).unwrap();
        haar += rec.sub(&f).unwrap().sum_sq_f64();
        nn += nearest_neighbour(&f).sub(&f).unwrap().sum_sq_f64();
    }
    assert!(haar < nn, "haar {haar} vs block mean {nn}");
}

#[test]
fn video_lift_matches_frames() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let frames: Vec<Tensor<f32>> = (0..5).map(|_| random_frame(&mut r, 16, 24).reshape(&[1, 1, 16, 24]).unwrap()).collect();
    let v = Tensor::stack_rows(&frames).unwrap();
    let z = HaarCodec.encode_video(&v).unwrap();
    assert_eq!(z.shape(), &[5, 4, 2, 3]);
    for (i, f) in frames.iter().enumerate() {
        let zi = HaarCodec.encode_frame(&f.clone().reshape(&[1, 16, 24]).unwrap()).unwrap();
        assert_eq!(z.row(i), zi.data());
    }
    assert_eq!(HaarCodec.decode_video(&z).unwrap().shape(), &[5, 1, 16, 24]);
}

#[test]
fn pad_fourteen_to_sixteen() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let z = rng::gaussian(&[4, 14, 14], &mut r);
    let (p, rec) = pad_replicate(&z, 16, 16).unwrap();
    assert_eq!(p.shape(), &[4, 16, 16]);
    assert_eq!((rec.top, rec.left), (1, 1));
    assert_eq!(crop(&p, rec).unwrap(), z);
    let (same, _) = pad_replicate(&z, 14, 14).unwrap();
    assert_eq!(same, z);
}

proptest! {
    #[test]
    fn crop_undoes_pad(h in 1usize..9, w in 1usize..9, dh in 0usize..5, dw in 0usize..5, seed in 0u64..1000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let z = rng::gaussian(&[4, h, w], &mut r);
        let (p, rec) = pad_replicate(&z, h + dh, w + dw).unwrap();
        prop_assert_eq!(p.shape(), &[4, h + dh, w + dw]);
        prop_assert_eq!(crop(&p, rec).unwrap(), z);
    }
}
