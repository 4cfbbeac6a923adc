//! Property tests across the public API: transforms, normal estimation and
//! file round trips.

use dirreg::io::{self, PlyFormat};
use dirreg::normals::normals_knn_pca;
use dirreg::transforms::{control_grid, interpolate, TpsParams};
use dirreg::{NormalMode, OrientedPointSet, Transform, TransformFamily, Vec3};
use nalgebra::{Matrix3, Rotation3};
use proptest::prelude::*;

fn arb_point() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn arb_unit() -> impl Strategy<Value = Vec3> {
    arb_point().prop_filter_map("zero vector", |v| (v.norm() > 1e-3).then(|| v.normalize()))
}

fn cloud(points: Vec<Vec3>, normals: Vec<Vec3>) -> OrientedPointSet {
    OrientedPointSet::new(3, points).unwrap().with_normals(normals).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotations_preserve_distances_and_normal_norms(
        pts in prop::collection::vec(arb_point(), 2..20),
        axis in arb_unit(),
        angle in -6.3f64..6.3,
    ) {
        let normals = vec![Vec3::new(0.0, 0.0, 1.0); pts.len()];
        let shape = cloud(pts.clone(), normals);
        let r = Transform::rotation3d_axis_angle(axis, angle).unwrap();
        let moved = r.apply(&shape, &NormalMode::Jacobian).unwrap();
        for i in 0..pts.len() {
            for j in 0..i {
                let before = (pts[i] - pts[j]).norm();
                let after = (moved.points()[i] - moved.points()[j]).norm();
                prop_assert!((before - after).abs() < 1e-12);
            }
            prop_assert!((moved.normals().unwrap()[i].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tps_without_weights_is_affine(
        a in prop::collection::vec(-2.0f64..2.0, 9),
        t in arb_point(),
        x in arb_point(),
    ) {
        let affine = Matrix3::from_row_slice(&a);
        let grid = control_grid(&dirreg::geometry::BoundingBox::new(3, Vec3::zeros(), Vec3::repeat(1.0)).unwrap(), &[2, 2, 2]).unwrap();
        let n = grid.len();
        let tps = TpsParams::new(3, affine, t, grid, vec![Vec3::zeros(); n]).unwrap();
        let expected = affine * x + t;
        prop_assert!((tps.apply_point(&x) - expected).norm() < 1e-12);
    }

    #[test]
    fn rotation_tps_maps_normals_like_the_rotation(axis in arb_unit(), angle in -3.1f64..3.1, u in arb_unit(), x in arb_point()) {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let grid = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)];
        let tps = Transform::Tps(TpsParams::new(3, *rot.matrix(), Vec3::zeros(), grid, vec![Vec3::zeros(); 4]).unwrap());
        let shape = cloud(vec![x], vec![u]);
        let mapped = tps.apply_to_normals(&shape, &NormalMode::Jacobian).unwrap();
        prop_assert!((mapped[0] - rot * u).norm() < 1e-12);
    }

    #[test]
    fn interpolation_endpoints_are_exact(
        w in prop::collection::vec(arb_point(), 8),
        x in arb_point(),
        alpha in 0.0f64..1.0,
    ) {
        let grid = control_grid(&dirreg::geometry::BoundingBox::new(3, Vec3::zeros(), Vec3::repeat(1.0)).unwrap(), &[2, 2, 2]).unwrap();
        let id = Transform::identity(TransformFamily::Tps, 3, Some(grid.clone())).unwrap();
        let warp = Transform::Tps(TpsParams::new(3, Matrix3::identity(), Vec3::zeros(), grid, w.iter().map(|v| v * 0.1).collect()).unwrap());
        let at = |a: f64| interpolate(&[id.clone(), warp.clone()], &[1.0 - a, a]).unwrap().apply_point(&x);
        prop_assert!((at(0.0) - x).norm() < 1e-12);
        prop_assert!((at(1.0) - warp.apply_point(&x)).norm() < 1e-12);
        // linear in α, hence continuous
        let mid = x + (warp.apply_point(&x) - x) * alpha;
        prop_assert!((at(alpha) - mid).norm() < 1e-12);
    }

    #[test]
    fn knn_normals_are_unit_and_rotate_with_the_cloud(
        dirs in prop::collection::vec(arb_unit(), 30..60),
        axis in arb_unit(),
        angle in -3.1f64..3.1,
    ) {
        let pts: Vec<Vec3> = dirs.iter().map(|d| d * 2.0 + Vec3::new(0.3, -0.2, 0.5)).collect();
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let n0 = normals_knn_pca(&pts, 8).unwrap();
        let turned: Vec<Vec3> = pts.iter().map(|p| rot * p).collect();
        let n1 = normals_knn_pca(&turned, 8).unwrap();
        for (a, b) in n0.iter().zip(&n1) {
            prop_assert!((a.norm() - 1.0).abs() < 1e-9);
            prop_assert!((b.norm() - 1.0).abs() < 1e-9);
            prop_assert!((rot * a).dot(b) > 1.0 - 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn files_round_trip(pts in prop::collection::vec(arb_point(), 1..30), normals in prop::collection::vec(arb_unit(), 30)) {
        let dir = tempfile::tempdir().unwrap();
        let shape = cloud(pts.clone(), normals[..pts.len()].to_vec());
        let bin = dir.path().join("s.ply");
        io::write_ply(&bin, &shape, PlyFormat::BinaryLittleEndian).unwrap();
        let back = io::read_ply(&bin).unwrap();
        prop_assert_eq!(back.points(), shape.points());
        prop_assert_eq!(back.normals(), shape.normals());

        // ascii formats are fixed points after one pass
        for name in ["a.ply", "a.csv"] {
            let p = dir.path().join(name);
            io::write_shape(&p, &shape).unwrap();
            let once = io::read_shape(&p, None).unwrap();
            io::write_shape(&p, &once).unwrap();
            let twice = io::read_shape(&p, None).unwrap();
            prop_assert_eq!(once.points(), twice.points());
            prop_assert_eq!(once.normals(), twice.normals());
            for (a, b) in once.points().iter().zip(shape.points()) {
                prop_assert!((a - b).norm() < 1e-8);
            }
        }
    }
}
