use proptest::prelude::*;

use specreg::img::{BinaryMask, Image2D};
use specreg::similarity::{dct2, idct2, joint_histogram, mutual_information};
use specreg::transform::{
    bspline_weights, random_deformation, warp_image, ControlGrid, HomogeneousTransform2D,
};

fn image_strategy(max_side: usize) -> impl Strategy<Value = Image2D> {
    (2usize..max_side, 2usize..max_side)
        .prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..1.0, w * h)
                .prop_map(move |v| Image2D::new(w, h, v).unwrap())
        })
}

fn mask_strategy(max_side: usize) -> impl Strategy<Value = BinaryMask> {
    (2usize..max_side, 2usize..max_side)
        .prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::bool::ANY, w * h)
                .prop_map(move |v| BinaryMask::new(w, h, v).unwrap())
        })
}

proptest! {
    #[test]
    fn bspline_weights_partition_of_unity(u in 0.0f64..1.0) {
        let w = bspline_weights(u).unwrap();
        let sum: f64 = w.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn similarity_transform_inverse_roundtrip(
        tx in -50.0f64..50.0,
        ty in -50.0f64..50.0,
        theta in -3.0f64..3.0,
        s in 0.2f64..5.0,
        px in -100.0f64..100.0,
        py in -100.0f64..100.0,
    ) {
        let t = HomogeneousTransform2D::similarity(theta, s, tx, ty);
        let inv = t.inverse().unwrap();
        let (qx, qy) = t.apply(px, py).unwrap();
        let (bx, by) = inv.apply(qx, qy).unwrap();
        prop_assert!((bx - px).abs() < 1e-8 && (by - py).abs() < 1e-8);
    }

    #[test]
    fn histogram_conserves_mass_and_mi_nonnegative(
        pair in image_strategy(12).prop_flat_map(|a| {
            let n = a.width() * a.height();
            let (w, h) = (a.width(), a.height());
            (Just(a), proptest::collection::vec(0.0f64..1.0, n)
                .prop_map(move |v| Image2D::new(w, h, v).unwrap()))
        }),
        bins in 2usize..16,
    ) {
        let (a, b) = pair;
        let n = a.width() * a.height();
        let region = BinaryMask::filled(a.width(), a.height(), true);
        let as_warp = |img: &Image2D| specreg::transform::WarpResult {
            image: img.clone(),
            valid: BinaryMask::filled(img.width(), img.height(), true),
        };
        let hist = joint_histogram(&a, &as_warp(&b), &region, bins).unwrap();
        prop_assert_eq!(hist.total(), n as f64);
        let mi = mutual_information(&a, &as_warp(&b), &region, bins).unwrap();
        prop_assert!(mi >= -1e-12);
        let mi_swapped = mutual_information(&b, &as_warp(&a), &region, bins).unwrap();
        prop_assert!((mi - mi_swapped).abs() < 1e-12);
    }

    #[test]
    fn dct_round_trip_and_parseval(img in image_strategy(16)) {
        let spec = dct2(&img);
        let e_img: f64 = img.data().iter().map(|v| v * v).sum();
        let e_spec: f64 = spec.coefficients().iter().map(|c| c * c).sum();
        prop_assert!((e_img - e_spec).abs() <= 1e-9 * e_img.max(1.0));
        let back = idct2(&spec);
        for (a, b) in img.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_warp_reproduces_image(img in image_strategy(16)) {
        let out = warp_image(&img, &HomogeneousTransform2D::identity(), None).unwrap();
        for (a, b) in img.data().iter().zip(out.image.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(out.valid.count(), img.width() * img.height());
    }

    #[test]
    fn dice_symmetric_and_bounded(
        masks in mask_strategy(10).prop_flat_map(|a| {
            let n = a.width() * a.height();
            let (w, h) = (a.width(), a.height());
            (Just(a), proptest::collection::vec(proptest::bool::ANY, n)
                .prop_map(move |v| BinaryMask::new(w, h, v).unwrap()))
        }),
    ) {
        let (p, s) = masks;
        if let Ok(d) = specreg::evaluate::dice(&p, &s) {
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, specreg::evaluate::dice(&s, &p).unwrap());
            let ro = specreg::evaluate::relative_overlap(&p, &s).unwrap();
            prop_assert!((d - 2.0 * ro / (1.0 + ro)).abs() < 1e-12);
        }
    }

    #[test]
    fn random_deformation_is_deterministic_and_bounded(
        seed in 0u64..1000,
        max_disp in 0.0f64..6.0,
    ) {
        let a = random_deformation(seed, (48, 48), 16.0, max_disp).unwrap();
        let b = random_deformation(seed, (48, 48), 16.0, max_disp).unwrap();
        prop_assert_eq!(a.disp(), b.disp());
        prop_assert!(a.disp().iter().flatten().all(|d| d.abs() <= max_disp));
    }

    #[test]
    fn refine_preserves_represented_field(
        seed in 0u64..200,
        max_disp in 0.0f64..5.0,
    ) {
        let grid = random_deformation(seed, (40, 40), 16.0, max_disp).unwrap();
        let fine = grid.refine();
        for y in (0..40).step_by(7) {
            for x in (0..40).step_by(7) {
                let a = grid.displacement(x as f64, y as f64).unwrap();
                let b = fine.displacement(x as f64, y as f64).unwrap();
                prop_assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rescale_scales_displacements_linearly(
        seed in 0u64..200,
        factor in 0.25f64..4.0,
    ) {
        let grid = random_deformation(seed, (40, 40), 16.0, 4.0).unwrap();
        let scaled = grid.rescale(factor);
        for (a, b) in grid.disp().iter().zip(scaled.disp()) {
            prop_assert!((a[0] * factor - b[0]).abs() < 1e-12);
            prop_assert!((a[1] * factor - b[1]).abs() < 1e-12);
        }
    }
}

#[allow(dead_code)]
fn control_grid_is_exported(_g: ControlGrid) {}
