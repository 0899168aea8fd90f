//! Library kernels against the oracle's direct loops, and box overlap against pixel counting.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slidenet::localize::iou;
use slidenet::tensor::{conv2d, linear, maxpool, Padding};
use slidenet::{BBox, Tensor};
use slidenet_oracle::{naive_conv2d, naive_linear, naive_max_pool, pixel_overlap, Map};

fn values(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1f32..1.0, n)
}

fn max_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

/// Channels, outputs, kernel, input extent, stride, padding.
type ConvCase = (usize, usize, usize, usize, usize, usize, (usize, usize), [usize; 4]);

fn conv_case() -> impl Strategy<Value = ConvCase> {
    (1usize..5, 1usize..5, 1usize..6, 1usize..6, 0usize..8, 0usize..8, (1usize..4, 1usize..4), [0usize..3, 0usize..3, 0usize..3, 0usize..3])
        .prop_map(|(c, o, kh, kw, eh, ew, s, p)| (c, o, kh, kw, kh + eh, kw + ew, s, p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_matches_direct_loops(
        (c, o, kh, kw, h, w, stride, pad) in conv_case(),
        seed in any::<u64>(),
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut next = move || r.gen_range(-1f32..1.0);
        let x = Tensor::from_fn(&[c, h, w], |_| next());
        let f = Tensor::from_fn(&[o, c, kh, kw], |_| next());
        let b: Vec<f32> = (0..o).map(|_| next()).collect();
        let padding = Padding { top: pad[0], bottom: pad[1], left: pad[2], right: pad[3] };
        let y = conv2d(&x, &f, &b, stride, padding).unwrap();
        let f64s = |v: &[f32]| v.iter().map(|&q| q as f64).collect::<Vec<_>>();
        let naive = naive_conv2d(&Map::from_tensor(&x), &f64s(f.data()), o, (kh, kw), &f64s(&b), stride, (pad[0], pad[1], pad[2], pad[3]));
        prop_assert_eq!(y.shape(), &[o, naive.h, naive.w][..]);
        prop_assert!(max_diff(y.data(), &naive.data) < 1e-5);
    }

    #[test]
    fn maxpool_matches_direct_loops(c in 1usize..4, h in 1usize..12, w in 1usize..12, size in (1usize..4, 1usize..4), stride in (1usize..4, 1usize..4), data in values(4 * 12 * 12)) {
        prop_assume!(size.0 <= h && size.1 <= w);
        let x = Tensor::new(vec![c, h, w], data[..c * h * w].to_vec()).unwrap();
        let p = maxpool(&x, size, stride, (0, 0)).unwrap();
        let naive = naive_max_pool(&Map::from_tensor(&x), size, stride);
        prop_assert_eq!(p.output.shape(), &[c, naive.h, naive.w][..]);
        prop_assert!(max_diff(p.output.data(), &naive.data) == 0.0);
    }

    #[test]
    fn linear_matches_direct_loops(n_in in 1usize..40, n_out in 1usize..20, data in values(40 * 21 + 40)) {
        let x = Tensor::new(vec![n_in], data[..n_in].to_vec()).unwrap();
        let w = Tensor::new(vec![n_out, n_in], data[40..40 + n_out * n_in].to_vec()).unwrap();
        let b = data[40 + 40 * 20..40 + 40 * 20 + n_out].to_vec();
        let y = linear(&x, &w, &b).unwrap();
        let f64s = |v: &[f32]| v.iter().map(|&q| q as f64).collect::<Vec<_>>();
        let naive = naive_linear(&f64s(x.data()), &f64s(w.data()), &f64s(&b));
        prop_assert!(max_diff(y.data(), &naive) < 1e-5);
    }

    #[test]
    fn iou_matches_pixel_counting(a in (0f32..30.0, 0f32..30.0, 1f32..20.0, 1f32..20.0), b in (0f32..30.0, 0f32..30.0, 1f32..20.0, 1f32..20.0)) {
        let ba = BBox::new(a.0, a.1, a.0 + a.2, a.1 + a.3);
        let bb = BBox::new(b.0, b.1, b.0 + b.2, b.1 + b.3);
        let resolution = 16;
        let counted = pixel_overlap(&ba, &bb, resolution);
        prop_assert!((iou(&ba, &bb) as f64 - counted.iou).abs() <= 2.0 / resolution as f64);
        prop_assert!((iou(&ba, &bb) - iou(&bb, &ba)).abs() == 0.0);
    }
}
