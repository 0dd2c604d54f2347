use super::labels::LabelImage;
use super::spec::SceneSpec;
use crate::field::{Camera, RgbImage};

/// Exact ground-truth view of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct GtView {
    pub image: RgbImage,
    pub semantic: LabelImage,
    pub instance: LabelImage,
    /// Hit distance along each ray; `f64::INFINITY` for background.
    pub depth: Vec<f64>,
}

/// Nearest-hit albedo (unshaded), ids, and depth; background is black/0.
pub fn gt_render(scene: &SceneSpec, camera: &Camera) -> GtView {
    let n = camera.n_pixels();
    let mut pixels = vec![[0.0; 3]; n];
    let mut semantic = vec![0; n];
    let mut instance = vec![0; n];
    let mut depth = vec![f64::INFINITY; n];
    for (i, ray) in camera.generate_rays().iter().enumerate() {
        if let Some((t, idx)) = scene.trace(ray) {
            let p = &scene.primitives[idx];
            pixels[i] = p.albedo;
            semantic[i] = p.semantic_id;
            instance[i] = p.instance_id;
            depth[i] = t;
        }
    }
    let (w, h) = (camera.width, camera.height);
    GtView {
        image: RgbImage { width: w, height: h, pixels },
        semantic: LabelImage { width: w, height: h, ids: semantic },
        instance: LabelImage { width: w, height: h, ids: instance },
        depth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::geom;
    use crate::scene::spec::{Primitive, Shape};

    fn one_sphere(radius: f64) -> SceneSpec {
        SceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Sphere { radius },
                center: [0.0; 3],
                albedo: [0.2, 0.4, 0.6],
                semantic_id: 1,
                instance_id: 1,
            }],
            seed: 0,
        }
    }

    #[test]
    fn looking_away_sees_nothing() {
        let cam = Camera::look_at(8, 8, 0.6, [0.0, -4.0, 0.0], [0.0, -8.0, 0.0], 0.1, 6.0).unwrap();
        let v = gt_render(&one_sphere(1.0), &cam);
        assert!(v.semantic.ids.iter().all(|&l| l == 0));
        assert!(v.image.pixels.iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn centered_sphere_projects_to_disk() {
        let (res, fov, dist, r) = (41usize, 0.8f64, 4.0f64, 1.0f64);
        let cam = Camera::look_at(res, res, fov, [0.0, -dist, 0.0], [0.0; 3], 0.1, 6.0).unwrap();
        let v = gt_render(&one_sphere(r), &cam);
        // a ray hits iff its angle to the axis is below asin(r / d)
        let limit = (r / dist).asin();
        let f = cam.focal();
        for row in 0..res {
            for col in 0..res {
                let x = (col as f64 + 0.5 - res as f64 / 2.0) / f;
                let y = (row as f64 + 0.5 - res as f64 / 2.0) / f;
                let angle = (x * x + y * y).sqrt().atan();
                if (angle - limit).abs() < 1e-6 {
                    continue;
                }
                assert_eq!(v.semantic.get(col, row) == 1, angle < limit, "pixel ({col},{row})");
            }
        }
        // center label, disk centered
        assert_eq!(v.semantic.get(20, 20), 1);
        assert_eq!(v.image.pixel(20, 20), [0.2, 0.4, 0.6]);
        assert!((v.depth[20 * res + 20] - (dist - r)).abs() < 1e-3);
    }

    #[test]
    fn label_is_minimal_t_primitive() {
        let mut s = one_sphere(0.5);
        s.primitives.push(Primitive {
            shape: Shape::Sphere { radius: 0.5 },
            center: [0.0, -1.5, 0.0],
            albedo: [0.9, 0.1, 0.1],
            semantic_id: 2,
            instance_id: 2,
        });
        let cam = Camera::look_at(5, 5, 0.5, [0.0, -4.0, 0.0], [0.0; 3], 0.1, 6.0).unwrap();
        let v = gt_render(&s, &cam);
        assert_eq!(v.semantic.get(2, 2), 2);
        let ray = cam.ray(2, 2);
        assert!((v.depth[12] - geom::norm(geom::sub(ray.origin, [0.0, -2.0, 0.0]))).abs() < 1e-9);
    }

    #[test]
    fn equal_labels_have_equal_colors() {
        let s = crate::scene::generate_scene(6, 3).unwrap();
        let cam = Camera::look_at(24, 24, 0.9, [0.0, -4.0, 1.0], s.centroid(), 0.1, 6.0).unwrap();
        let v = gt_render(&s, &cam);
        for (i, &a) in v.instance.ids.iter().enumerate() {
            for (j, &b) in v.instance.ids.iter().enumerate().skip(i + 1) {
                if a == b {
                    assert_eq!(v.image.pixels[i], v.image.pixels[j]);
                }
            }
        }
    }
}
