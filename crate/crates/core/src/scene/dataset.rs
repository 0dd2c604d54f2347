use std::path::Path;

use rand::Rng;

use super::gt::{gt_render, GtView};
use super::labels::LabelImage;
use super::spec::SceneSpec;
use crate::error::{Error, Result};
use crate::field::{geom, Camera, RgbImage};
use crate::rng;
use crate::tensor::{read_jtns, write_jtns, Stored, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub width: usize,
    pub height: usize,
    pub fov_y: f64,
    pub orbit_radius: f64,
    pub near: f64,
    pub far: f64,
    /// Camera elevation range above the xy-plane, radians.
    pub elevation: (f64, f64),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            fov_y: 0.8,
            orbit_radius: 4.0,
            near: 0.1,
            far: 6.0,
            elevation: (0.15, 0.9),
        }
    }
}

/// Posed ground-truth views.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    pub cameras: Vec<Camera>,
    pub views: Vec<GtView>,
}

impl ViewSet {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: ViewSet,
    pub test: ViewSet,
}

/// Point on the orbit sphere at the given azimuth/elevation.
pub fn orbit_position(radius: f64, azimuth: f64, elevation: f64) -> [f64; 3] {
    [
        radius * elevation.cos() * azimuth.cos(),
        radius * elevation.cos() * azimuth.sin(),
        radius * elevation.sin(),
    ]
}

/// Angle between two camera viewing directions, radians.
pub fn pose_angle(a: &Camera, b: &Camera) -> f64 {
    geom::dot(a.forward(), b.forward()).clamp(-1.0, 1.0).acos()
}

/// Cameras at random orbit positions looking at the scene centroid; train and
/// test poses never coincide.
pub fn make_dataset(scene: &SceneSpec, config: &DatasetConfig, n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid("view counts must be at least 1"));
    }
    let (lo, hi) = config.elevation;
    if !(lo <= hi) {
        return Err(Error::invalid("elevation range is inverted"));
    }
    let mut r = rng::stream(seed, 0xDA7A);
    let mut positions: Vec<[f64; 3]> = Vec::with_capacity(n_train + n_test);
    while positions.len() < n_train + n_test {
        let az = r.gen_range(0.0..std::f64::consts::TAU);
        let el = if lo == hi { lo } else { r.gen_range(lo..hi) };
        let p = orbit_position(config.orbit_radius, az, el);
        if positions.iter().all(|q| geom::norm(geom::sub(*q, p)) > 1e-6) {
            positions.push(p);
        }
    }
    let target = scene.centroid();
    let cameras = positions
        .iter()
        .map(|&p| Camera::look_at(config.width, config.height, config.fov_y, p, target, config.near, config.far))
        .collect::<Result<Vec<_>>>()?;
    let render = |cams: &[Camera]| ViewSet {
        cameras: cams.to_vec(),
        views: cams.iter().map(|c| gt_render(scene, c)).collect(),
    };
    Ok(Dataset {
        config: config.clone(),
        train: render(&cameras[..n_train]),
        test: render(&cameras[n_train..]),
    })
}

fn poses_text(cams: &[Camera]) -> String {
    cams.iter()
        .map(|c| {
            let p = c.pose_row_major();
            p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ") + "\n"
        })
        .collect()
}

fn parse_poses(text: &str) -> Result<Vec<[f64; 12]>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format {
                    what: "pose file",
                    detail: format!("pose {}: bad number", i + 1),
                })?;
            vals.try_into().map_err(|_| Error::Format {
                what: "pose file",
                detail: format!("pose {}: expected 12 values", i + 1),
            })
        })
        .collect()
}

fn save_split(dir: &Path, name: &str, set: &ViewSet) -> Result<()> {
    let write = |file: String, s: Stored| -> Result<()> {
        let path = dir.join(file);
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_jtns(std::io::BufWriter::new(f), &s)
    };
    let (h, w) = (set.cameras[0].height, set.cameras[0].width);
    let n = set.len();
    let rgb: Vec<f64> = set.views.iter().flat_map(|v| v.image.to_tensor().into_data()).collect();
    write(format!("{name}_rgb.jtns"), Stored::F64(Tensor::new(vec![n, h, w, 3], rgb)?))?;
    for (kind, get) in [
        ("semantic", (|v: &GtView| &v.semantic) as fn(&GtView) -> &LabelImage),
        ("instance", |v: &GtView| &v.instance),
    ] {
        let ids = set.views.iter().flat_map(|v| get(v).ids.iter().map(|&i| i as i64)).collect();
        write(format!("{name}_{kind}.jtns"), Stored::I64 { shape: vec![n, h, w], data: ids })?;
    }
    let depth: Vec<f64> = set
        .views
        .iter()
        .flat_map(|v| v.depth.iter().map(|&d| if d.is_finite() { d } else { -1.0 }))
        .collect();
    write(format!("{name}_depth.jtns"), Stored::F64(Tensor::new(vec![n, h, w], depth)?))?;
    let poses = dir.join(format!("{name}_poses.txt"));
    std::fs::write(&poses, poses_text(&set.cameras)).map_err(|e| Error::io(&poses, e))
}

fn load_split(dir: &Path, name: &str, config: &DatasetConfig) -> Result<ViewSet> {
    let read = |file: String| -> Result<Stored> {
        let path = dir.join(file);
        let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        read_jtns(std::io::BufReader::new(f))
    };
    let poses_path = dir.join(format!("{name}_poses.txt"));
    let text = std::fs::read_to_string(&poses_path).map_err(|e| Error::io(&poses_path, e))?;
    let template = Camera::look_at(config.width, config.height, config.fov_y, [0.0, -1.0, 0.0], [0.0; 3], config.near, config.far)?;
    let cameras = parse_poses(&text)?
        .iter()
        .map(|p| template.with_pose(p))
        .collect::<Result<Vec<_>>>()?;
    let n = cameras.len();
    let (w, h) = (config.width, config.height);
    let per = w * h;
    let rgb = read(format!("{name}_rgb.jtns"))?.into_f64()?;
    let depth = read(format!("{name}_depth.jtns"))?.into_f64()?;
    let (_, sem) = read(format!("{name}_semantic.jtns"))?.into_i64()?;
    let (_, inst) = read(format!("{name}_instance.jtns"))?.into_i64()?;
    if rgb.numel() != n * per * 3 || sem.len() != n * per || inst.len() != n * per || depth.numel() != n * per {
        return Err(Error::Format {
            what: "dataset",
            detail: format!("{name} split does not match {n} poses at {w}x{h}"),
        });
    }
    let labels = |v: &[i64]| LabelImage::new(w, h, v.iter().map(|&x| x as u32).collect());
    let mut views = Vec::with_capacity(n);
    for i in 0..n {
        let px = rgb.data()[i * per * 3..(i + 1) * per * 3]
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        views.push(GtView {
            image: RgbImage::new(w, h, px)?,
            semantic: labels(&sem[i * per..(i + 1) * per])?,
            instance: labels(&inst[i * per..(i + 1) * per])?,
            depth: depth.data()[i * per..(i + 1) * per]
                .iter()
                .map(|&d| if d < 0.0 { f64::INFINITY } else { d })
                .collect(),
        });
    }
    Ok(ViewSet { cameras, views })
}

impl Dataset {
    /// Writes `{train,test}_{rgb,semantic,instance,depth}.jtns` and
    /// `{train,test}_poses.txt` (12 row-major floats per camera).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let c = &self.config;
        let meta = format!(
            "width = {}\nheight = {}\nfov_y = {}\norbit_radius = {}\nnear = {}\nfar = {}\nelevation_lo = {}\nelevation_hi = {}\n",
            c.width, c.height, c.fov_y, c.orbit_radius, c.near, c.far, c.elevation.0, c.elevation.1
        );
        let mp = dir.join("dataset.cfg");
        std::fs::write(&mp, meta).map_err(|e| Error::io(&mp, e))?;
        save_split(dir, "train", &self.train)?;
        save_split(dir, "test", &self.test)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mp = dir.join("dataset.cfg");
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let mut c = DatasetConfig::default();
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            let num: f64 = v.trim().parse().map_err(|_| Error::Format {
                what: "dataset.cfg",
                detail: format!("bad value for {}", k.trim()),
            })?;
            match k.trim() {
                "width" => c.width = num as usize,
                "height" => c.height = num as usize,
                "fov_y" => c.fov_y = num,
                "orbit_radius" => c.orbit_radius = num,
                "near" => c.near = num,
                "far" => c.far = num,
                "elevation_lo" => c.elevation.0 = num,
                "elevation_hi" => c.elevation.1 = num,
                _ => {}
            }
        }
        Ok(Self {
            train: load_split(dir, "train", &c)?,
            test: load_split(dir, "test", &c)?,
            config: c,
        })
    }
}
