//! Ray-cast scene simulator producing labelled distance images with exact ranges.
//!
//! Scenes are built from a ground plane and analytic primitives: yawed boxes,
//! vertical cylinders and spheres. Every grid ray is intersected in closed
//! form; the nearest hit within range becomes the cell value.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DistanceImage, SensorGeometry, IGNORE_ID, NUM_CLASSES};
use crate::nets::ClassCatalog as C;
use crate::par;

/// Hits closer than this to the ray origin are ignored.
const T_MIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Box centred at `center` with half extents `half`, rotated by `yaw` about +z.
    Box {
        center: [f64; 3],
        half: [f64; 3],
        yaw: f64,
    },
    /// Vertical cylinder standing on `base` (x, y, bottom z).
    Cylinder {
        base: [f64; 3],
        radius: f64,
        height: f64,
    },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub class: u8,
}

/// Ground classes by lateral distance |y| from the street axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundLayout {
    pub road_half_width: f64,
    pub sidewalk_width: f64,
}

impl Default for GroundLayout {
    fn default() -> Self {
        Self {
            road_half_width: 4.0,
            sidewalk_width: 2.5,
        }
    }
}

impl GroundLayout {
    pub fn class_at(&self, y: f64) -> u8 {
        let a = y.abs();
        if a <= self.road_half_width {
            C::ROAD
        } else if a <= self.road_half_width + self.sidewalk_width {
            C::SIDEWALK
        } else {
            C::TERRAIN
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    /// Height of the ground plane; `None` for a scene without ground.
    pub ground_z: Option<f64>,
    pub ground: GroundLayout,
    pub primitives: Vec<Primitive>,
    /// Sensor position; rays are cast from here.
    pub sensor: [f64; 3],
    /// Sensor heading about +z.
    pub sensor_yaw: f64,
    /// Probability that a hit is reported as missing.
    pub dropout: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::empty(None)
    }
}

impl SceneSpec {
    pub fn empty(ground_z: Option<f64>) -> Self {
        Self {
            seed: 0,
            ground_z,
            ground: GroundLayout::default(),
            primitives: Vec::new(),
            sensor: [0.0; 3],
            sensor_yaw: 0.0,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.sensor) || !self.sensor_yaw.is_finite() {
            return Err(Error::DegeneratePrimitive("sensor pose is not finite".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::BadConfig(format!("dropout {} outside [0, 1]", self.dropout)));
        }
        if self.ground_z.is_some_and(|z| !z.is_finite()) {
            return Err(Error::DegeneratePrimitive("ground height is not finite".into()));
        }
        for (k, p) in self.primitives.iter().enumerate() {
            if p.class as usize >= NUM_CLASSES {
                return Err(Error::BadClassId(p.class));
            }
            let ok = match &p.shape {
                Shape::Box { center, half, yaw } => {
                    finite(center) && finite(half) && yaw.is_finite() && half.iter().all(|&h| h > 0.0)
                }
                Shape::Cylinder { base, radius, height } => {
                    finite(base) && radius.is_finite() && height.is_finite() && *radius > 0.0 && *height > 0.0
                }
                Shape::Sphere { center, radius } => finite(center) && radius.is_finite() && *radius > 0.0,
            };
            if !ok {
                return Err(Error::DegeneratePrimitive(format!("primitive {k}: {:?}", p.shape)));
            }
        }
        Ok(())
    }

    /// A street scene: a road along +x lined with sidewalks, closed by
    /// building rows on both sides and at both ends, populated with cars,
    /// people, poles, signs, trees and the occasional truck or bike.
    pub fn random_street(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ground = GroundLayout {
            road_half_width: rng.random_range(3.0..5.0),
            sidewalk_width: rng.random_range(2.0..3.5),
        };
        let gz = -1.73;
        let mut prims = Vec::new();
        let curb = ground.road_half_width + ground.sidewalk_width;
        let end_near = rng.random_range(35.0..50.0);
        let end_far = rng.random_range(35.0..50.0);

        let boxp = |cx: f64, cy: f64, z0: f64, hx: f64, hy: f64, hz: f64, yaw: f64, class: u8| Primitive {
            shape: Shape::Box {
                center: [cx, cy, z0 + hz],
                half: [hx, hy, hz],
                yaw,
            },
            class,
        };

        // Building rows along both sides.
        for side in [-1.0, 1.0] {
            let mut x = -end_far - 5.0;
            while x < end_near + 5.0 {
                let len = rng.random_range(8.0..20.0);
                let setback = rng.random_range(0.5..4.0);
                let depth = rng.random_range(8.0..15.0);
                let height = rng.random_range(6.0..20.0);
                let cy = side * (curb + setback + depth / 2.0);
                prims.push(boxp(x + len / 2.0, cy, gz, len / 2.0, depth / 2.0, height / 2.0, 0.0, C::BUILDING));
                x += len + rng.random_range(0.0..1.5);
            }
        }
        // Buildings closing the street at both ends.
        for (sign, dist) in [(1.0, end_near), (-1.0, end_far)] {
            let depth = 10.0;
            let height = rng.random_range(8.0..20.0);
            prims.push(boxp(
                sign * (dist + depth / 2.0),
                0.0,
                gz,
                depth / 2.0,
                curb + 20.0,
                height / 2.0,
                0.0,
                C::BUILDING,
            ));
        }
        // Parked and moving vehicles.
        for _ in 0..rng.random_range(2..7) {
            let x: f64 = rng.random_range(-30.0..30.0);
            if x.abs() < 5.0 {
                continue;
            }
            let lane = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            let y = lane * rng.random_range(1.2..(ground.road_half_width - 1.0).max(1.3));
            let yaw = rng.random_range(-0.15..0.15);
            if rng.random_bool(0.2) {
                prims.push(boxp(x, y, gz, 5.0, 1.25, 1.6, yaw, C::TRUCK_BUS));
            } else {
                prims.push(boxp(x, y, gz, 2.1, 0.9, 0.75, yaw, C::CAR));
            }
        }
        // Bikes with riders.
        if rng.random_bool(0.4) {
            let x: f64 = rng.random_range(-25.0..25.0);
            let y = rng.random_range(-ground.road_half_width + 0.6..ground.road_half_width - 0.6);
            if x.abs() > 4.0 {
                prims.push(boxp(x, y, gz, 0.9, 0.3, 0.5, 0.0, C::TWO_WHEELER));
                prims.push(Primitive {
                    shape: Shape::Cylinder {
                        base: [x, y, gz + 1.0],
                        radius: 0.3,
                        height: 0.8,
                    },
                    class: C::RIDER,
                });
            }
        }
        // Pedestrians on the sidewalks.
        for _ in 0..rng.random_range(1..5) {
            let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            let x: f64 = rng.random_range(-30.0..30.0);
            let y = side * (ground.road_half_width + rng.random_range(0.5..ground.sidewalk_width));
            prims.push(Primitive {
                shape: Shape::Cylinder {
                    base: [x, y, gz],
                    radius: rng.random_range(0.25..0.35),
                    height: rng.random_range(1.5..1.9),
                },
                class: C::PERSON,
            });
        }
        // Poles, some with signs, and trees along the curb.
        for _ in 0..rng.random_range(2..6) {
            let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            let x = rng.random_range(-35.0..35.0);
            let y = side * (ground.road_half_width + 0.4);
            if rng.random_bool(0.5) {
                let height = rng.random_range(3.0..6.0);
                prims.push(Primitive {
                    shape: Shape::Cylinder {
                        base: [x, y, gz],
                        radius: 0.12,
                        height,
                    },
                    class: C::POLE,
                });
                if rng.random_bool(0.5) {
                    prims.push(boxp(x, y, gz + height, 0.05, 0.4, 0.4, 0.0, C::TRAFFIC_SIGN));
                }
            } else {
                let trunk = rng.random_range(1.5..3.0);
                prims.push(Primitive {
                    shape: Shape::Cylinder {
                        base: [x, y, gz],
                        radius: 0.2,
                        height: trunk,
                    },
                    class: C::VEGETATION,
                });
                let r = rng.random_range(1.0..2.0);
                prims.push(Primitive {
                    shape: Shape::Sphere {
                        center: [x, y, gz + trunk + r * 0.8],
                        radius: r,
                    },
                    class: C::VEGETATION,
                });
            }
        }

        Self {
            seed,
            ground_z: Some(gz),
            ground,
            primitives: prims,
            sensor: [0.0; 3],
            sensor_yaw: rng.random_range(-0.3..0.3),
            dropout: 0.01,
        }
    }
}

/// Parametric distance along the unit ray `o + t·d` to the first surface
/// crossing beyond [`T_MIN`], if any.
pub fn intersect(shape: &Shape, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
    match shape {
        Shape::Sphere { center, radius } => {
            let oc = sub(o, *center);
            let b = dot(oc, d);
            let c = dot(oc, oc) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            [-b - s, -b + s].into_iter().find(|&t| t > T_MIN)
        }
        Shape::Cylinder { base, radius, height } => {
            let (z0, z1) = (base[2], base[2] + height);
            let mut best: Option<f64> = None;
            let mut keep = |t: f64| {
                if t > T_MIN && best.is_none_or(|b| t < b) {
                    best = Some(t);
                }
            };
            let (ox, oy) = (o[0] - base[0], o[1] - base[1]);
            let a = d[0] * d[0] + d[1] * d[1];
            if a > 0.0 {
                let b = ox * d[0] + oy * d[1];
                let c = ox * ox + oy * oy - radius * radius;
                let disc = b * b - a * c;
                if disc >= 0.0 {
                    let s = disc.sqrt();
                    for t in [(-b - s) / a, (-b + s) / a] {
                        let z = o[2] + t * d[2];
                        if z >= z0 && z <= z1 {
                            keep(t);
                        }
                    }
                }
            }
            if d[2] != 0.0 {
                for zc in [z0, z1] {
                    let t = (zc - o[2]) / d[2];
                    let (x, y) = (ox + t * d[0], oy + t * d[1]);
                    if x * x + y * y <= radius * radius {
                        keep(t);
                    }
                }
            }
            best
        }
        Shape::Box { center, half, yaw } => {
            // Into the box frame: translate, then rotate by −yaw.
            let (s, c) = yaw.sin_cos();
            let rel = sub(o, *center);
            let lo = [c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]];
            let ld = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            for k in 0..3 {
                if ld[k] == 0.0 {
                    if lo[k].abs() > half[k] {
                        return None;
                    }
                    continue;
                }
                let t1 = (-half[k] - lo[k]) / ld[k];
                let t2 = (half[k] - lo[k]) / ld[k];
                t_near = t_near.max(t1.min(t2));
                t_far = t_far.min(t1.max(t2));
            }
            if t_near > t_far {
                return None;
            }
            [t_near, t_far].into_iter().find(|&t| t > T_MIN)
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// World-frame direction of the beam for a cell.
pub fn world_ray(spec: &SceneSpec, geometry: &SensorGeometry, row: usize, col: usize) -> [f64; 3] {
    let [x, y, z] = geometry.ray(row, col);
    let (s, c) = spec.sensor_yaw.sin_cos();
    [c * x - s * y, s * x + c * y, z]
}

/// Nearest hit along one ray: distance and class.
pub fn cast(spec: &SceneSpec, o: [f64; 3], d: [f64; 3]) -> Option<(f64, u8)> {
    let mut best: Option<(f64, u8)> = None;
    if let Some(gz) = spec.ground_z {
        if d[2] < 0.0 {
            let t = (gz - o[2]) / d[2];
            if t > T_MIN {
                best = Some((t, spec.ground.class_at(o[1] + t * d[1])));
            }
        }
    }
    for p in &spec.primitives {
        if let Some(t) = intersect(&p.shape, o, d) {
            if best.is_none_or(|(b, _)| t < b) {
                best = Some((t, p.class));
            }
        }
    }
    best
}

/// Renders a labelled distance image. Rays that hit nothing are missing and
/// labelled sky; hits beyond range are missing and unlabelled; dropped hits
/// are missing but keep the class of the surface they hit.
pub fn simulate_scene(spec: &SceneSpec, geometry: &Arc<SensorGeometry>) -> Result<DistanceImage> {
    spec.validate()?;
    let (rows, cols) = (geometry.rows(), geometry.cols());
    let max = geometry.max_range();
    let cells = par::map_range(rows, |i| {
        (0..cols)
            .map(|j| cast(spec, spec.sensor, world_ray(spec, geometry, i, j)))
            .collect::<Vec<_>>()
    });
    // Dropout draws happen in a fixed cell order so results do not depend on threading.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_d209);
    let n = rows * cols;
    let mut ranges = vec![f64::NAN; n];
    let mut valid = vec![false; n];
    let mut labels = vec![C::SKY; n];
    for (k, hit) in cells.into_iter().flatten().enumerate() {
        let dropped = spec.dropout > 0.0 && rng.random_bool(spec.dropout);
        match hit {
            None => {}
            Some((t, _)) if t > max => labels[k] = IGNORE_ID,
            Some((t, class)) => {
                labels[k] = class;
                if !dropped {
                    ranges[k] = t;
                    valid[k] = true;
                }
            }
        }
    }
    DistanceImage::from_parts(geometry.clone(), ranges, valid, Some(labels))
}

/// The default scan grid: 32 layers spaced 1° apart from −25° to +6°,
/// 128 columns, 80 m range.
pub fn default_geometry() -> SensorGeometry {
    let elevations = (0..32).map(|i| (-25.0 + i as f64).to_radians()).collect();
    SensorGeometry::new(elevations, 128, 80.0).expect("static table is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::back_project;
    use std::f64::consts::FRAC_PI_2;

    /// Signed distance to a primitive surface, written independently of the
    /// ray intersection code.
    fn sdf(shape: &Shape, p: [f64; 3]) -> f64 {
        match shape {
            Shape::Sphere { center, radius } => dot(sub(p, *center), sub(p, *center)).sqrt() - radius,
            Shape::Cylinder { base, radius, height } => {
                let r = ((p[0] - base[0]).powi(2) + (p[1] - base[1]).powi(2)).sqrt() - radius;
                let zc = base[2] + height / 2.0;
                let z = (p[2] - zc).abs() - height / 2.0;
                let outside = (r.max(0.0).powi(2) + z.max(0.0).powi(2)).sqrt();
                outside + r.max(z).min(0.0)
            }
            Shape::Box { center, half, yaw } => {
                let rel = sub(p, *center);
                let (s, c) = (-yaw).sin_cos();
                let local = [c * rel[0] - s * rel[1], s * rel[0] + c * rel[1], rel[2]];
                let q: Vec<f64> = (0..3).map(|k| local[k].abs() - half[k]).collect();
                let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
        }
    }

    #[test]
    fn vertical_ray_onto_ground() {
        let g = Arc::new(SensorGeometry::new(vec![-FRAC_PI_2, 0.0], 4, 100.0).unwrap());
        let img = simulate_scene(&SceneSpec::empty(Some(-2.0)), &g).unwrap();
        for j in 0..4 {
            assert!((img.range(0, j).unwrap() - 2.0).abs() < 1e-12);
            assert_eq!(img.range(1, j), None);
            assert_eq!(img.labels().unwrap()[4 + j], C::SKY);
        }
    }

    #[test]
    fn box_face_on_forward_ray() {
        let g = Arc::new(SensorGeometry::new(vec![-0.1, 0.0], 16, 100.0).unwrap());
        let mut spec = SceneSpec::empty(None);
        spec.primitives.push(Primitive {
            shape: Shape::Box {
                center: [11.0, 0.0, 0.0],
                half: [1.0, 2.0, 2.0],
                yaw: 0.0,
            },
            class: C::BUILDING,
        });
        let img = simulate_scene(&spec, &g).unwrap();
        assert_eq!(img.range(1, 8), Some(10.0));
        assert_eq!(img.labels().unwrap()[16 + 8], C::BUILDING);
    }

    #[test]
    fn degenerate_primitives_rejected() {
        let g = Arc::new(default_geometry());
        let mut spec = SceneSpec::empty(None);
        spec.primitives.push(Primitive {
            shape: Shape::Sphere {
                center: [1.0, 0.0, 0.0],
                radius: 0.0,
            },
            class: C::CAR,
        });
        assert!(matches!(simulate_scene(&spec, &g), Err(Error::DegeneratePrimitive(_))));
    }

    #[test]
    fn hits_lie_on_surfaces() {
        let g = Arc::new(default_geometry());
        for seed in 0..3 {
            let mut spec = SceneSpec::random_street(seed);
            spec.dropout = 0.0;
            let img = simulate_scene(&spec, &g).unwrap();
            assert!(img.valid_count() > img.ranges().len() / 2);
            let (s, c) = spec.sensor_yaw.sin_cos();
            for p in back_project(&img).points {
                let w = [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
                let mut best = spec.ground_z.map_or(f64::INFINITY, |gz| (w[2] - gz).abs());
                for prim in &spec.primitives {
                    best = best.min(sdf(&prim.shape, w).abs());
                }
                assert!(best < 1e-6, "seed {seed}: point {w:?} is {best} from every surface");
            }
        }
    }

    #[test]
    fn reintersection_reproduces_ranges() {
        let g = Arc::new(default_geometry());
        let spec = SceneSpec::random_street(9);
        let img = simulate_scene(&spec, &g).unwrap();
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                if let Some(r) = img.range(i, j) {
                    let (t, _) = cast(&spec, spec.sensor, world_ray(&spec, &g, i, j)).unwrap();
                    assert!((t - r).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let g = Arc::new(default_geometry());
        let a = simulate_scene(&SceneSpec::random_street(4), &g).unwrap();
        let b = simulate_scene(&SceneSpec::random_street(4), &g).unwrap();
        assert_eq!(a.valid(), b.valid());
        assert_eq!(a.labels(), b.labels());
        assert!(a.ranges().iter().zip(b.ranges()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
