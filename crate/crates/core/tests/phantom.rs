mod common;

use deepgf::image::{Mask, Task};
use deepgf::phantom::{head_mask, make_dataset, make_phantom, sobel_magnitude, PhantomSpec};

fn edges(img: &deepgf::image::Image2D) -> Mask {
    let s = common::sobel_direct(img);
    Mask::from_fn(img.width(), img.height(), |x, y| s.get(x, y) > 0.05)
}

#[test]
fn modalities_share_edges() {
    let spec = PhantomSpec {
        seed: 7,
        size: 64,
        n_shapes: 5,
        ..PhantomSpec::default()
    };
    let (a, b, _) = make_phantom(&spec).unwrap();
    let iou = edges(&a).intersection_over_union(&edges(&b));
    assert!(iou > 0.8, "edge IoU {iou}");
}

#[test]
fn library_sobel_matches_direct() {
    let img = common::random_image(19, 13, 3);
    assert!(sobel_magnitude(&img).max_abs_diff(&common::sobel_direct(&img)) < 1e-14);
}

#[test]
fn head_mask_tracks_shape_support() {
    let (a, _, support) = make_phantom(&PhantomSpec::default().with_seed(7)).unwrap();
    let m = head_mask(&a, 0.25).unwrap();
    let (got, want) = (m.area() as f64, support.area() as f64);
    assert!((got - want).abs() <= 0.05 * want, "mask {got} vs support {want}");
}

#[test]
fn sr_input_is_top_left_sample() {
    let pairs = make_dataset(&PhantomSpec::default().with_seed(5), Task::SuperResolution, None, 3).unwrap();
    for p in &pairs {
        assert_eq!(p.input.dims(), (16, 16));
        assert_eq!(p.guide.dims(), (64, 64));
        for j in 0..16 {
            for i in 0..16 {
                assert_eq!(p.input.get(i, j), p.ground_truth.get(4 * i, 4 * j));
            }
        }
    }
}
