use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::geom::{self, Vec3};
use crate::field::Ray;
use crate::rng;

/// Total placement attempts allowed across a whole scene.
pub const PLACEMENT_RETRIES: usize = 1000;
/// Centers are drawn inside a ball of this radius around the origin.
pub const PLACEMENT_RADIUS: f64 = 1.2;
const MIN_ALBEDO_DISTANCE: f64 = 0.2;
const GAP: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    /// Axis-aligned box given by its half extents.
    Cuboid { half: Vec3 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub center: Vec3,
    pub albedo: [f64; 3],
    pub semantic_id: u32,
    pub instance_id: u32,
}

impl Primitive {
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => radius,
            Shape::Cuboid { half } => geom::norm(half),
        }
    }

    /// Smallest `t` in `[ray.near, ray.far]` where the ray enters the
    /// primitive.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        let oc = geom::sub(ray.origin, self.center);
        match self.shape {
            Shape::Sphere { radius } => {
                let b = geom::dot(oc, ray.dir);
                let c = geom::dot(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|&t| t >= ray.near && t <= ray.far)
            }
            Shape::Cuboid { half } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    let inv = 1.0 / ray.dir[a];
                    let (mut lo, mut hi) = ((-half[a] - oc[a]) * inv, (half[a] - oc[a]) * inv);
                    if lo > hi {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    t0 = t0.max(lo);
                    t1 = t1.min(hi);
                }
                if t0 > t1 {
                    return None;
                }
                [t0, t1].into_iter().find(|&t| t >= ray.near && t <= ray.far)
            }
        }
    }
}

/// A procedural scene: non-overlapping primitives with distinct albedos.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn n_semantic(&self) -> u32 {
        self.primitives.iter().map(|p| p.semantic_id).max().unwrap_or(0)
    }

    pub fn n_instances(&self) -> u32 {
        self.primitives.iter().map(|p| p.instance_id).max().unwrap_or(0)
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.primitives.len().max(1) as f64;
        let s = self.primitives.iter().fold([0.0; 3], |acc, p| geom::add(acc, p.center));
        geom::scale(s, 1.0 / n)
    }

    /// Nearest hit as `(t, primitive index)`.
    pub fn trace(&self, ray: &Ray) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(ray).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// One primitive per line:
    /// `kind cx cy cz ex ey ez r g b semantic_id instance_id`.
    pub fn to_text(&self) -> String {
        let mut s = format!("# seed {}\n", self.seed);
        for p in &self.primitives {
            let (kind, e) = match p.shape {
                Shape::Sphere { radius } => ("sphere", [radius; 3]),
                Shape::Cuboid { half } => ("box", half),
            };
            let c = p.center;
            let a = p.albedo;
            let _ = writeln!(
                s,
                "{kind} {} {} {} {} {} {} {} {} {} {} {}",
                c[0], c[1], c[2], e[0], e[1], e[2], a[0], a[1], a[2], p.semantic_id, p.instance_id
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, d: &str| Error::Format {
            what: "scene file",
            detail: format!("line {}: {d}", line + 1),
        };
        let mut seed = 0;
        let mut primitives = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("seed") {
                    seed = v.trim().parse().map_err(|_| bad(i, "bad seed"))?;
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 12 {
                return Err(bad(i, "expected 12 fields"));
            }
            let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(i, "bad number"));
            let id = |j: usize| f[j].parse::<u32>().map_err(|_| bad(i, "bad id"));
            let center = [num(1)?, num(2)?, num(3)?];
            let ext = [num(4)?, num(5)?, num(6)?];
            let shape = match f[0] {
                "sphere" => Shape::Sphere { radius: ext[0] },
                "box" => Shape::Cuboid { half: ext },
                other => return Err(bad(i, &format!("unknown primitive kind `{other}`"))),
            };
            primitives.push(Primitive {
                shape,
                center,
                albedo: [num(7)?, num(8)?, num(9)?],
                semantic_id: id(10)?,
                instance_id: id(11)?,
            });
        }
        Ok(Self { primitives, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// One semantic class per object.
pub fn generate_scene(n_objects: usize, seed: u64) -> Result<SceneSpec> {
    generate_scene_with_classes(n_objects, n_objects, seed)
}

/// Objects cycle through `n_classes` semantic ids; instance ids are unique.
pub fn generate_scene_with_classes(n_objects: usize, n_classes: usize, seed: u64) -> Result<SceneSpec> {
    if !(1..=16).contains(&n_objects) {
        return Err(Error::invalid(format!("n_objects must be in 1..=16, got {n_objects}")));
    }
    if n_classes == 0 || n_classes > n_objects {
        return Err(Error::invalid("n_classes must be in 1..=n_objects"));
    }
    let mut rng = rng::stream(seed, 0x5CE7E);
    let max_size = (0.9 / (n_objects as f64).cbrt()).clamp(0.2, 0.5);
    let mut primitives: Vec<Primitive> = Vec::with_capacity(n_objects);
    let mut attempts = 0;

    while primitives.len() < n_objects {
        attempts += 1;
        if attempts > PLACEMENT_RETRIES {
            return Err(Error::Placement {
                retries: PLACEMENT_RETRIES,
            });
        }
        let size = rng.gen_range(0.6 * max_size..=max_size);
        let shape = if rng.gen_bool(0.5) {
            Shape::Sphere { radius: size }
        } else {
            let mut half = [0.0; 3];
            for h in &mut half {
                *h = size * rng.gen_range(0.6..=1.0);
            }
            Shape::Cuboid { half }
        };
        let center = loop {
            let c = [
                rng.gen_range(-PLACEMENT_RADIUS..PLACEMENT_RADIUS),
                rng.gen_range(-PLACEMENT_RADIUS..PLACEMENT_RADIUS),
                rng.gen_range(-PLACEMENT_RADIUS..PLACEMENT_RADIUS),
            ];
            if geom::norm(c) <= PLACEMENT_RADIUS {
                break c;
            }
        };
        let albedo = [
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
        ];
        let i = primitives.len();
        let cand = Primitive {
            shape,
            center,
            albedo,
            semantic_id: (i % n_classes) as u32 + 1,
            instance_id: i as u32 + 1,
        };
        let clear = primitives.iter().all(|p| {
            geom::norm(geom::sub(p.center, cand.center)) >= p.bounding_radius() + cand.bounding_radius() + GAP
                && geom::norm(geom::sub(p.albedo, cand.albedo)) >= MIN_ALBEDO_DISTANCE
        });
        if clear {
            primitives.push(cand);
        }
    }
    Ok(SceneSpec { primitives, seed })
}
