//! Procedural shape corpus: voxel ground-truth solids, orthographic
//! multi-view renders, and a self-contained on-disk dataset.
//!
//! Five primitive families keep the corpus varied while staying cheap:
//! unions of overlapping boxes, axis-aligned cylinders, L-brackets,
//! sphere clusters (the one family allowed to be disconnected), and
//! table-like solids (slab on four legs). Everything is deterministic
//! under the seed: the same seed rebuilds a byte-identical corpus.

use crate::error::{Error, Result};
use crate::io::{read_ppm, write_ppm, write_vox_binary, VoxelGrid};
use crate::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    BoxUnion,
    Cylinder,
    LBracket,
    SphereCluster,
    TableLike,
}

pub const ALL_FAMILIES: [ShapeFamily; 5] = [
    ShapeFamily::BoxUnion,
    ShapeFamily::Cylinder,
    ShapeFamily::LBracket,
    ShapeFamily::SphereCluster,
    ShapeFamily::TableLike,
];

impl ShapeFamily {
    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::BoxUnion => "box-union",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::LBracket => "l-bracket",
            ShapeFamily::SphereCluster => "sphere-cluster",
            ShapeFamily::TableLike => "table-like",
        }
    }
}

/// A fully-determined shape: family plus its parameter vector (relative
/// [0,1] units) and the pose seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub family: ShapeFamily,
    pub params: Vec<f64>,
    pub pose_seed: u64,
}

impl ShapeSpec {
    /// Axis-aligned box given center and half-extents, both relative.
    pub fn single_box(center: [f64; 3], half: [f64; 3]) -> Self {
        ShapeSpec {
            family: ShapeFamily::BoxUnion,
            params: vec![
                1.0, center[0], center[1], center[2], half[0], half[1], half[2],
            ],
            pose_seed: 0,
        }
    }

    /// Box spanning the entire grid.
    pub fn full_box() -> Self {
        ShapeSpec::single_box([0.5, 0.5, 0.5], [1.0, 1.0, 1.0])
    }

    /// Sample a random shape of the given family.
    pub fn sample(family: ShapeFamily, rng: &mut ChaCha8Rng) -> Self {
        let pose_seed = rng.gen::<u64>();
        let mut params = Vec::new();
        match family {
            ShapeFamily::BoxUnion => {
                let n = rng.gen_range(2..=3usize);
                params.push(n as f64);
                // first box around the center; later boxes centered inside
                // the first so the union stays connected
                let c0 = [
                    rng.gen_range(0.4..0.6),
                    rng.gen_range(0.4..0.6),
                    rng.gen_range(0.4..0.6),
                ];
                let h0 = [
                    rng.gen_range(0.15..0.3),
                    rng.gen_range(0.15..0.3),
                    rng.gen_range(0.15..0.3),
                ];
                params.extend_from_slice(&[c0[0], c0[1], c0[2], h0[0], h0[1], h0[2]]);
                for _ in 1..n {
                    let c = [
                        c0[0] + rng.gen_range(-0.8..0.8) * h0[0],
                        c0[1] + rng.gen_range(-0.8..0.8) * h0[1],
                        c0[2] + rng.gen_range(-0.8..0.8) * h0[2],
                    ];
                    params.extend_from_slice(&[
                        c[0],
                        c[1],
                        c[2],
                        rng.gen_range(0.1..0.25),
                        rng.gen_range(0.1..0.25),
                        rng.gen_range(0.1..0.25),
                    ]);
                }
            }
            ShapeFamily::Cylinder => {
                params.push(rng.gen_range(0..3u8) as f64); // axis
                params.push(rng.gen_range(0.4..0.6)); // cx
                params.push(rng.gen_range(0.4..0.6)); // cy
                params.push(rng.gen_range(0.4..0.6)); // cz
                params.push(rng.gen_range(0.15..0.3)); // radius
                params.push(rng.gen_range(0.5..0.85)); // length
            }
            ShapeFamily::LBracket => {
                params.push(rng.gen_range(0.5..0.8)); // vertical arm length
                params.push(rng.gen_range(0.5..0.8)); // horizontal arm length
                params.push(rng.gen_range(0.14..0.28)); // thickness
            }
            ShapeFamily::SphereCluster => {
                let n = rng.gen_range(2..=4usize);
                params.push(n as f64);
                for _ in 0..n {
                    params.push(rng.gen_range(0.25..0.75));
                    params.push(rng.gen_range(0.25..0.75));
                    params.push(rng.gen_range(0.25..0.75));
                    params.push(rng.gen_range(0.1..0.2));
                }
            }
            ShapeFamily::TableLike => {
                params.push(rng.gen_range(0.3..0.42)); // top half extent
                params.push(rng.gen_range(0.04..0.08)); // top half thickness
                params.push(rng.gen_range(0.55..0.7)); // top center height
                params.push(rng.gen_range(0.04..0.09)); // leg half thickness
            }
        }
        ShapeSpec { family, params, pose_seed }
    }

    /// Stable content hash of the spec.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.family.name().as_bytes());
        h.update(self.pose_seed.to_le_bytes());
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex_string(&h.finalize()[..16])
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

fn axis_range(center: f64, half: f64, d: usize) -> (usize, usize) {
    let lo = ((center - half) * d as f64).round().max(0.0) as usize;
    let hi = (((center + half) * d as f64).round() as usize).min(d);
    (lo, hi)
}

fn fill_box(grid: &mut VoxelGrid, center: [f64; 3], half: [f64; 3]) {
    let d = grid.d;
    let (x0, x1) = axis_range(center[0], half[0], d);
    let (y0, y1) = axis_range(center[1], half[1], d);
    let (z0, z1) = axis_range(center[2], half[2], d);
    for x in x0..x1 {
        for y in y0..y1 {
            for z in z0..z1 {
                grid.set(x, y, z, true);
            }
        }
    }
}

/// Deterministic boolean solid for a spec on a D^3 grid.
pub fn generate_shape(spec: &ShapeSpec, d: usize) -> Result<VoxelGrid> {
    if d == 0 {
        return Err(Error::config("generate_shape", "grid size must be >= 1"));
    }
    let mut grid = VoxelGrid::empty(d);
    let p = &spec.params;
    let bad = |msg: &str| Error::config("generate_shape", format!("{}: {msg}", spec.family.name()));
    match spec.family {
        ShapeFamily::BoxUnion => {
            if p.is_empty() {
                return Err(bad("missing box count"));
            }
            let n = p[0] as usize;
            if p.len() != 1 + 6 * n {
                return Err(bad("parameter vector length"));
            }
            for i in 0..n {
                let b = &p[1 + 6 * i..1 + 6 * (i + 1)];
                fill_box(&mut grid, [b[0], b[1], b[2]], [b[3], b[4], b[5]]);
            }
        }
        ShapeFamily::Cylinder => {
            if p.len() != 6 {
                return Err(bad("parameter vector length"));
            }
            let axis = p[0] as usize;
            if axis > 2 {
                return Err(bad("axis out of range"));
            }
            let c = [p[1], p[2], p[3]];
            let r = p[4] * d as f64;
            let half_len = p[5] / 2.0 * d as f64;
            let (a1, a2) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            for x in 0..d {
                for y in 0..d {
                    for z in 0..d {
                        let v = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                        let along = (v[axis] - c[axis] * d as f64).abs();
                        let d1 = v[a1] - c[a1] * d as f64;
                        let d2 = v[a2] - c[a2] * d as f64;
                        if along <= half_len && d1 * d1 + d2 * d2 <= r * r {
                            grid.set(x, y, z, true);
                        }
                    }
                }
            }
        }
        ShapeFamily::LBracket => {
            if p.len() != 3 {
                return Err(bad("parameter vector length"));
            }
            let (va, ha, t) = (p[0], p[1], p[2]);
            // vertical arm along z from the bottom corner, horizontal along x
            fill_box(
                &mut grid,
                [0.25 + t / 2.0, 0.5, 0.2 + va / 2.0],
                [t / 2.0, t, va / 2.0],
            );
            fill_box(
                &mut grid,
                [0.25 + ha / 2.0, 0.5, 0.2 + t / 2.0],
                [ha / 2.0, t, t / 2.0],
            );
        }
        ShapeFamily::SphereCluster => {
            if p.is_empty() {
                return Err(bad("missing sphere count"));
            }
            let n = p[0] as usize;
            if p.len() != 1 + 4 * n {
                return Err(bad("parameter vector length"));
            }
            for i in 0..n {
                let s = &p[1 + 4 * i..1 + 4 * (i + 1)];
                let c = [s[0] * d as f64, s[1] * d as f64, s[2] * d as f64];
                let r = s[3] * d as f64;
                for x in 0..d {
                    for y in 0..d {
                        for z in 0..d {
                            let dx = x as f64 + 0.5 - c[0];
                            let dy = y as f64 + 0.5 - c[1];
                            let dz = z as f64 + 0.5 - c[2];
                            if dx * dx + dy * dy + dz * dz <= r * r {
                                grid.set(x, y, z, true);
                            }
                        }
                    }
                }
            }
        }
        ShapeFamily::TableLike => {
            if p.len() != 4 {
                return Err(bad("parameter vector length"));
            }
            let (ext, tt, tz, leg) = (p[0], p[1], p[2], p[3]);
            fill_box(&mut grid, [0.5, 0.5, tz], [ext, ext, tt]);
            let leg_top = tz - tt;
            let leg_bottom = 0.12;
            let leg_c = (leg_bottom + leg_top) / 2.0;
            let leg_h = (leg_top - leg_bottom) / 2.0;
            for &sx in &[-1.0f64, 1.0] {
                for &sy in &[-1.0f64, 1.0] {
                    let cx = 0.5 + sx * (ext - leg);
                    let cy = 0.5 + sy * (ext - leg);
                    fill_box(&mut grid, [cx, cy, leg_c], [leg, leg, leg_h]);
                }
            }
        }
    }
    if grid.count() == 0 {
        return Err(bad("parameters produce an empty solid"));
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// orthographic renderer
// ---------------------------------------------------------------------------

const BASE_COLOR: [f64; 3] = [0.9, 0.82, 0.72];
const LIGHT_DIR: [f64; 3] = [0.48666426, -0.81110711, 0.32444284]; // normalized (3,-5,2)

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 {
        [0.0, 0.0, 1.0]
    } else {
        [v[0] / n, v[1] / n, v[2] / n]
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Frame half-width of the orthographic camera: the grid's space diagonal
/// fits for any view direction.
pub fn camera_half_width(d: usize) -> f64 {
    d as f64 * 3.0f64.sqrt() / 2.0
}

/// Render one orthographic view along `dir` (unit vector, pointing from
/// the camera into the scene). Flat shading from an occupancy-gradient
/// normal proxy plus a depth cue; background is white. Output `[3, H, W]`
/// in [0,1].
pub fn render_view_dir(grid: &VoxelGrid, dir: [f64; 3], h: usize, w: usize) -> Tensor<f64> {
    let d = grid.d;
    let dir = normalize(dir);
    let world_up = if dir[2].abs() > 0.95 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let right = normalize(cross(dir, world_up));
    let up = cross(right, dir);
    let half = camera_half_width(d);
    let center = [d as f64 / 2.0, d as f64 / 2.0, d as f64 / 2.0];
    let t_max = 4.0 * half;
    let step = 0.25;

    let occupied = |x: isize, y: isize, z: isize| -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < d
            && (y as usize) < d
            && (z as usize) < d
            && grid.get(x as usize, y as usize, z as usize)
    };

    let plane = h * w;
    let mut img = vec![1.0f64; 3 * plane];
    for row in 0..h {
        for col in 0..w {
            let u = (col as f64 + 0.5) / w as f64 * 2.0 - 1.0;
            let v = 1.0 - (row as f64 + 0.5) / h as f64 * 2.0;
            let origin = [
                center[0] + right[0] * u * half + up[0] * v * half - dir[0] * 2.0 * half,
                center[1] + right[1] * u * half + up[1] * v * half - dir[1] * 2.0 * half,
                center[2] + right[2] * u * half + up[2] * v * half - dir[2] * 2.0 * half,
            ];
            let mut t = 0.0;
            let mut hit: Option<(isize, isize, isize, f64)> = None;
            while t <= t_max {
                let p = [
                    origin[0] + dir[0] * t,
                    origin[1] + dir[1] * t,
                    origin[2] + dir[2] * t,
                ];
                let (ix, iy, iz) = (p[0].floor() as isize, p[1].floor() as isize, p[2].floor() as isize);
                if occupied(ix, iy, iz) {
                    hit = Some((ix, iy, iz, t));
                    break;
                }
                t += step;
            }
            if let Some((ix, iy, iz, t)) = hit {
                // occupancy gradient normal proxy
                let gx = occupied(ix + 1, iy, iz) as i8
                    - occupied(ix - 1, iy, iz) as i8;
                let gy = occupied(ix, iy + 1, iz) as i8
                    - occupied(ix, iy - 1, iz) as i8;
                let gz = occupied(ix, iy, iz + 1) as i8
                    - occupied(ix, iy, iz - 1) as i8;
                let n = if gx == 0 && gy == 0 && gz == 0 {
                    [-dir[0], -dir[1], -dir[2]]
                } else {
                    normalize([-(gx as f64), -(gy as f64), -(gz as f64)])
                };
                let lambert = dot(n, LIGHT_DIR).max(0.0);
                let depth = 1.0 - (t / t_max).clamp(0.0, 1.0);
                let shade = 0.3 + 0.45 * lambert + 0.25 * depth;
                for c in 0..3 {
                    img[c * plane + row * w + col] = (BASE_COLOR[c] * shade).clamp(0.0, 1.0);
                }
            }
        }
    }
    Tensor::from_vec(vec![3, h, w], img).expect("sized buffer")
}


/// Uniformly random unit vector from the RNG.
fn random_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Render V views along seeded pseudo-random directions.
pub fn render_views(
    grid: &VoxelGrid,
    v: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Vec<Tensor<f64>>> {
    if v == 0 {
        return Err(Error::config("render_views", "need at least one view"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..v)
        .map(|_| render_view_dir(grid, random_direction(&mut rng), h, w))
        .collect())
}

// ---------------------------------------------------------------------------
// dataset on disk
// ---------------------------------------------------------------------------

pub const MANIFEST_NAME: &str = "manifest.tsv";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExampleEntry {
    pub id: String,
    pub split: Split,
    pub spec_hash: String,
    pub vox_path: PathBuf,
    pub view_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub d: usize,
    pub height: usize,
    pub width: usize,
    pub views: usize,
    pub examples: Vec<ExampleEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ExampleEntry> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn load_grid(&self, entry: &ExampleEntry) -> Result<VoxelGrid> {
        crate::io::read_vox_binary(&self.root.join(&entry.vox_path))
    }

    pub fn load_views<T: Scalar>(&self, entry: &ExampleEntry) -> Result<Vec<Tensor<T>>> {
        entry
            .view_paths
            .iter()
            .map(|p| {
                let path = self.root.join(p);
                let mut f = fs::File::open(&path)
                    .map_err(|e| Error::Path(path.display().to_string(), e))?;
                read_ppm(&mut f)
            })
            .collect()
    }
}

/// Generate and write a complete corpus; returns the parsed manifest.
#[allow(clippy::too_many_arguments)]
pub fn build_dataset(
    out: &Path,
    n_train: usize,
    n_test: usize,
    views: usize,
    seed: u64,
    height: usize,
    width: usize,
    d: usize,
) -> Result<DatasetManifest> {
    if n_train == 0 || n_test == 0 || views == 0 {
        return Err(Error::config("build_dataset", "counts must be >= 1"));
    }
    fs::create_dir_all(out.join("images"))
        .map_err(|e| Error::Path(out.join("images").display().to_string(), e))?;
    fs::create_dir_all(out.join("voxels"))
        .map_err(|e| Error::Path(out.join("voxels").display().to_string(), e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    lines.push(format!("version\t{MANIFEST_VERSION}"));
    lines.push(format!("d\t{d}"));
    lines.push(format!("height\t{height}"));
    lines.push(format!("width\t{width}"));
    lines.push(format!("views\t{views}"));

    let total = n_train + n_test;
    for i in 0..total {
        let split = if i < n_train { Split::Train } else { Split::Test };
        let family = ALL_FAMILIES[i % ALL_FAMILIES.len()];
        // retry degenerate draws deterministically
        let (spec, grid) = loop {
            let spec = ShapeSpec::sample(family, &mut rng);
            match generate_shape(&spec, d) {
                Ok(g) => break (spec, g),
                Err(_) => continue,
            }
        };
        let id = format!("ex{i:04}");
        let vox_rel = PathBuf::from(format!("voxels/{id}.vox"));
        let mut f = fs::File::create(out.join(&vox_rel))
            .map_err(|e| Error::Path(out.join(&vox_rel).display().to_string(), e))?;
        write_vox_binary(&mut f, &grid)?;

        let render_seed = rng.gen::<u64>();
        let images = render_views(&grid, views, height, width, render_seed)?;
        let mut view_rels = Vec::with_capacity(views);
        for (vi, img) in images.iter().enumerate() {
            let rel = PathBuf::from(format!("images/{id}_v{vi}.ppm"));
            let mut f = fs::File::create(out.join(&rel))
                .map_err(|e| Error::Path(out.join(&rel).display().to_string(), e))?;
            write_ppm(&mut f, img)?;
            view_rels.push(rel);
        }
        let views_field = view_rels
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join(",");
        lines.push(format!(
            "example\t{}\t{id}\t{}\t{}\t{views_field}",
            split.name(),
            spec.digest(),
            vox_rel.to_string_lossy(),
        ));
    }
    let manifest_path = out.join(MANIFEST_NAME);
    fs::write(&manifest_path, lines.join("\n") + "\n")
        .map_err(|e| Error::Path(manifest_path.display().to_string(), e))?;
    load_manifest(out)
}

/// Parse and validate a manifest: all referenced files must exist.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_NAME);
    let text =
        fs::read_to_string(&path).map_err(|e| Error::Path(path.display().to_string(), e))?;
    let mut d = None;
    let mut height = None;
    let mut width = None;
    let mut views = None;
    let mut examples = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| Error::format("manifest", format!("line {}: {msg}", ln + 1));
        match fields[0] {
            "version" => {
                let v: u32 = fields.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad version"))?;
                if v != MANIFEST_VERSION {
                    return Err(bad(&format!("unsupported version {v}")));
                }
            }
            "d" => d = Some(fields.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad d"))?),
            "height" => height = Some(fields.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad height"))?),
            "width" => width = Some(fields.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad width"))?),
            "views" => views = Some(fields.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad views"))?),
            "example" => {
                if fields.len() != 6 {
                    return Err(bad("example record needs 6 fields"));
                }
                let split = match fields[1] {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    s => return Err(bad(&format!("unknown split {s}"))),
                };
                examples.push(ExampleEntry {
                    id: fields[2].to_string(),
                    split,
                    spec_hash: fields[3].to_string(),
                    vox_path: PathBuf::from(fields[4]),
                    view_paths: fields[5].split(',').map(PathBuf::from).collect(),
                });
            }
            key => return Err(bad(&format!("unknown key {key}"))),
        }
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        d: d.ok_or_else(|| Error::format("manifest", "missing d"))?,
        height: height.ok_or_else(|| Error::format("manifest", "missing height"))?,
        width: width.ok_or_else(|| Error::format("manifest", "missing width"))?,
        views: views.ok_or_else(|| Error::format("manifest", "missing views"))?,
        examples,
    };
    for e in &manifest.examples {
        let vp = manifest.root.join(&e.vox_path);
        if !vp.is_file() {
            return Err(Error::format("manifest", format!("missing file {}", vp.display())));
        }
        for v in &e.view_paths {
            let ip = manifest.root.join(v);
            if !ip.is_file() {
                return Err(Error::format("manifest", format!("missing file {}", ip.display())));
            }
        }
    }
    Ok(manifest)
}

/// Content digest of a corpus: manifest plus every referenced file.
pub fn corpus_digest(manifest: &DatasetManifest) -> Result<String> {
    let mut h = Sha256::new();
    let mut feed = |p: &Path| -> Result<()> {
        let mut f = fs::File::open(p).map_err(|e| Error::Path(p.display().to_string(), e))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        h.update(&buf);
        Ok(())
    };
    feed(&manifest.root.join(MANIFEST_NAME))?;
    for e in &manifest.examples {
        feed(&manifest.root.join(&e.vox_path))?;
        for v in &e.view_paths {
            feed(&manifest.root.join(v))?;
        }
    }
    Ok(hex_string(&h.finalize()))
}
