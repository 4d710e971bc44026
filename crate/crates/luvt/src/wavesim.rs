//! 2-D scalar acoustic FDTD simulation producing LUVT-like image sequences.
//!
//! A Ricker-wavelet point source on the top edge drives a second-order
//! leapfrog update on a rectangular grid with zero-pressure (Dirichlet)
//! outer boundaries. An optional circular void defect is modeled by
//! clamping pressure to zero inside the circle.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{save_manifest, ImageSequence, Label, ManifestRecord};

#[derive(Clone, Copy, Debug)]
pub struct SimConfig {
    /// Physical extent in mm, (height, width).
    pub region_mm: (f64, f64),
    /// Grid cells, (h, w).
    pub grid: (usize, usize),
    pub wave_speed_mm_per_us: f64,
    pub source_center_frequency_mhz: f64,
    /// Fractional (row, col) of the source; row is near the top edge.
    pub source_position: (f64, f64),
    pub dt_us: f64,
    pub n_steps: usize,
    pub frame_stride: usize,
    pub n_frames: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    /// Desk-scale configuration: square 20 mm specimen on a 64x64 grid,
    /// aluminum longitudinal speed, 2 MHz source.
    fn default() -> Self {
        SimConfig {
            region_mm: (20.0, 20.0),
            grid: (64, 64),
            wave_speed_mm_per_us: 6.3,
            source_center_frequency_mhz: 2.0,
            source_position: (0.02, 0.5),
            dt_us: 0.03,
            n_steps: 130,
            frame_stride: 12,
            n_frames: 10,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn dx(&self) -> f64 {
        self.region_mm.1 / self.grid.1 as f64
    }

    pub fn dy(&self) -> f64 {
        self.region_mm.0 / self.grid.0 as f64
    }

    /// CFL number c*dt/dx; must stay <= 1/sqrt(2) for stability.
    pub fn cfl(&self) -> f64 {
        self.wave_speed_mm_per_us * self.dt_us / self.dx()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.grid;
        if h < 8 || w < 8 {
            return Err(Error::config(format!("grid {h}x{w} too small")));
        }
        if self.dt_us <= 0.0 || self.wave_speed_mm_per_us <= 0.0 {
            return Err(Error::config("dt and wave speed must be positive"));
        }
        let cfl = self.cfl();
        if cfl > std::f64::consts::FRAC_1_SQRT_2 {
            return Err(Error::config(format!(
                "CFL violation: c*dt/dx = {cfl:.4} > 1/sqrt(2); reduce dt or refine dx"
            )));
        }
        if self.n_steps < self.n_frames * self.frame_stride {
            return Err(Error::config(format!(
                "n_steps {} < n_frames*frame_stride {}",
                self.n_steps,
                self.n_frames * self.frame_stride
            )));
        }
        if self.n_frames == 0 || self.frame_stride == 0 {
            return Err(Error::config("n_frames and frame_stride must be positive"));
        }
        // Grid aspect must match the physical aspect within one cell.
        let expected_h = w as f64 * self.region_mm.0 / self.region_mm.1;
        if (h as f64 - expected_h).abs() > 1.0 {
            return Err(Error::config(format!(
                "grid aspect {h}x{w} does not match region {:?} (expected h ~ {expected_h:.1})",
                self.region_mm
            )));
        }
        Ok(())
    }

    /// Source cell (row, col), kept off the Dirichlet border.
    pub fn source_cell(&self) -> (usize, usize) {
        let (h, w) = self.grid;
        let row = ((self.source_position.0 * (h - 1) as f64).round() as usize).clamp(1, h - 2);
        let col = ((self.source_position.1 * (w - 1) as f64).round() as usize).clamp(1, w - 2);
        (row, col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefectSpec {
    /// Center (y, x) in mm within the region.
    pub center_mm: (f64, f64),
    pub diameter_mm: f64,
}

impl DefectSpec {
    pub fn new(center_mm: (f64, f64), diameter_mm: f64) -> Self {
        DefectSpec { center_mm, diameter_mm }
    }

    pub fn validate(&self, config: &SimConfig) -> Result<()> {
        if self.diameter_mm <= 0.0 {
            return Err(Error::config("defect diameter must be positive"));
        }
        let r = self.diameter_mm / 2.0;
        let (y, x) = self.center_mm;
        let (rh, rw) = config.region_mm;
        if y - r < 0.0 || y + r > rh || x - r < 0.0 || x + r > rw {
            return Err(Error::config(format!(
                "defect at ({y}, {x}) mm with radius {r} mm extends outside region {:?}",
                config.region_mm
            )));
        }
        Ok(())
    }

    pub fn center_px(&self, config: &SimConfig) -> (f64, f64) {
        (self.center_mm.0 / config.dy(), self.center_mm.1 / config.dx())
    }

    pub fn radius_px(&self, config: &SimConfig) -> f64 {
        self.diameter_mm / 2.0 / config.dx()
    }
}

/// Leapfrog state: current and previous pressure grids.
#[derive(Clone, Debug)]
pub struct WaveField {
    pub pressure: Vec<f64>,
    pub previous: Vec<f64>,
    pub step: usize,
}

impl WaveField {
    pub fn zeros(config: &SimConfig) -> Self {
        let n = config.grid.0 * config.grid.1;
        WaveField { pressure: vec![0.0; n], previous: vec![0.0; n], step: 0 }
    }
}

/// Cells inside the defect circle, precomputed once per run.
fn defect_cells(config: &SimConfig, defect: &DefectSpec) -> Vec<usize> {
    let (h, w) = config.grid;
    let (cy, cx) = (defect.center_mm.0 / config.dy(), defect.center_mm.1 / config.dx());
    let r = defect.radius_px(config);
    let mut cells = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let dy = i as f64 + 0.5 - cy;
            let dx = j as f64 + 0.5 - cx;
            if dy * dy + dx * dx <= r * r {
                cells.push(i * w + j);
            }
        }
    }
    cells
}

/// One leapfrog step of the scalar wave equation. Outer boundary rows and
/// columns stay at zero pressure; defect cells are clamped to zero.
pub fn step_fdtd(
    field: &WaveField,
    config: &SimConfig,
    defect: Option<&DefectSpec>,
) -> Result<WaveField> {
    config.validate()?;
    let (h, w) = config.grid;
    if field.pressure.len() != h * w || field.previous.len() != h * w {
        return Err(Error::config("field grids do not match config grid"));
    }
    let cells = defect.map(|d| defect_cells(config, d));
    let mut next = WaveField {
        pressure: vec![0.0; h * w],
        previous: field.pressure.clone(),
        step: field.step + 1,
    };
    step_fdtd_inplace(field, config, cells.as_deref(), &mut next.pressure)?;
    Ok(next)
}

fn step_fdtd_inplace(
    field: &WaveField,
    config: &SimConfig,
    defect_cells: Option<&[usize]>,
    next: &mut [f64],
) -> Result<()> {
    let (h, w) = config.grid;
    let rx2 = (config.wave_speed_mm_per_us * config.dt_us / config.dx()).powi(2);
    let ry2 = (config.wave_speed_mm_per_us * config.dt_us / config.dy()).powi(2);
    let p = &field.pressure;
    let q = &field.previous;
    for i in 1..h - 1 {
        let row = i * w;
        for j in 1..w - 1 {
            let c = row + j;
            let lap_x = p[c - 1] + p[c + 1] - 2.0 * p[c];
            let lap_y = p[c - w] + p[c + w] - 2.0 * p[c];
            next[c] = 2.0 * p[c] - q[c] + rx2 * lap_x + ry2 * lap_y;
        }
    }
    if let Some(cells) = defect_cells {
        for &c in cells {
            next[c] = 0.0;
        }
    }
    let step = field.step + 1;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInstability {
            step,
            what: "non-finite pressure value".into(),
        });
    }
    Ok(())
}

/// Radius, in grid cells, of the Gaussian disc over which the source pulse is
/// injected. First arrivals are measured from the disc edge.
pub const SOURCE_MOLLIFIER_RADIUS_CELLS: usize = 3;

/// Ricker wavelet with center frequency `f` (MHz), delayed so the pulse
/// ramps in smoothly from t = 0.
pub fn ricker(t_us: f64, f_mhz: f64) -> f64 {
    let t0 = 1.5 / f_mhz;
    let a = (std::f64::consts::PI * f_mhz * (t_us - t0)).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Raw (unnormalized) field snapshots from a full simulation run.
pub fn run_fields(
    config: &SimConfig,
    defect: Option<&DefectSpec>,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    if let Some(d) = defect {
        d.validate(config)?;
    }
    let (h, w) = config.grid;
    let cells = defect.map(|d| defect_cells(config, d));
    let (sr, sc) = config.source_cell();
    // Mollified source: spread the injection over a small Gaussian disc so the
    // emission peak at the source cell stays on the same scale as the radiated
    // wavefront. A single-cell injection produces a near-singular local value
    // that dominates the per-sequence min-max normalization and crushes the
    // rendered wave contrast.
    let sigma = 1.3f64;
    let radius = SOURCE_MOLLIFIER_RADIUS_CELLS as i64;
    let mut src_cells: Vec<(usize, f64)> = Vec::new();
    let mut weight_sum = 0.0;
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            if dr * dr + dc * dc > radius * radius {
                continue;
            }
            let r = sr as i64 + dr;
            let c = sc as i64 + dc;
            if r < 1 || r > h as i64 - 2 || c < 1 || c > w as i64 - 2 {
                continue;
            }
            let wgt = (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp();
            src_cells.push((r as usize * w + c as usize, wgt));
            weight_sum += wgt;
        }
    }
    for (_, wgt) in &mut src_cells {
        *wgt /= weight_sum;
    }

    let mut field = WaveField::zeros(config);
    let mut next = vec![0.0; h * w];
    let mut snapshots = Vec::with_capacity(config.n_frames);
    for step in 1..=config.n_steps {
        step_fdtd_inplace(&field, config, cells.as_deref(), &mut next)?;
        let amp = ricker(step as f64 * config.dt_us, config.source_center_frequency_mhz);
        for &(idx, wgt) in &src_cells {
            next[idx] += amp * wgt;
        }
        std::mem::swap(&mut field.previous, &mut field.pressure);
        std::mem::swap(&mut field.pressure, &mut next);
        field.step = step;
        // Keep the last n_frames strided snapshots: when n_steps exceeds
        // n_frames·frame_stride the early steps act as a warm-up and the
        // emitted window shows the developed field.
        let first_kept = config.n_steps - (config.n_frames - 1) * config.frame_stride;
        if step % config.frame_stride == 0 && step + config.frame_stride > first_kept {
            snapshots.push(field.pressure.clone());
        }
    }
    Ok(snapshots)
}

/// Simulates one sequence and normalizes all frames to [0,1] with a single
/// affine map (per-sequence min-max).
pub fn run_simulation(config: &SimConfig, defect: Option<&DefectSpec>) -> Result<ImageSequence> {
    let snapshots = run_fields(config, defect)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in &snapshots {
        for &v in s {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(hi > lo) {
        return Err(Error::config(
            "degenerate sequence: all-constant field, cannot min-max normalize",
        ));
    }
    let scale = 1.0 / (hi - lo);
    let frames = snapshots
        .iter()
        .map(|s| s.iter().map(|&v| (((v - lo) * scale).clamp(0.0, 1.0)) as f32).collect())
        .collect();
    let seq = ImageSequence {
        id: String::new(),
        h: config.grid.0,
        w: config.grid.1,
        frames,
        label: if defect.is_some() { Label::Defective } else { Label::DefectFree },
        defect_center_px: defect.map(|d| d.center_px(config)),
        defect_radius_px: defect.map(|d| d.radius_px(config)),
        seed: config.seed,
    };
    Ok(seq)
}

/// Random-placement helpers shared by `synth_dataset` and the harness.
fn random_source_position(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (0.02, rng.gen_range(0.1..0.9))
}

fn random_defect(config: &SimConfig, rng: &mut ChaCha8Rng) -> DefectSpec {
    let diameter = 2.0;
    let r = diameter / 2.0;
    let (rh, rw) = config.region_mm;
    // Keep the defect below the source edge and clear of the walls so the
    // wavefront reaches it inside the simulated window.
    let y = rng.gen_range(rh * 0.3..rh * 0.8 - r).max(r);
    let x = rng.gen_range(r + rw * 0.1..rw * 0.9 - r);
    DefectSpec::new((y, x), diameter)
}

/// Synthesizes a dataset: sequence raster files plus a JSON manifest.
/// Fully deterministic given `seed`.
pub fn synth_dataset(
    n_defect_free: usize,
    n_defective: usize,
    base: &SimConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestRecord>> {
    if n_defect_free + n_defective == 0 {
        return Err(Error::usage("dataset must contain at least one sequence"));
    }
    base.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut records = Vec::new();
    for idx in 0..n_defect_free + n_defective {
        let defective = idx >= n_defect_free;
        let seq_seed = seed
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(idx as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seq_seed);
        let mut config = *base;
        config.seed = seq_seed;
        config.source_position = random_source_position(&mut rng);
        let defect = defective.then(|| random_defect(&config, &mut rng));

        let id = if defective {
            format!("def_{:04}", idx - n_defect_free)
        } else {
            format!("df_{idx:04}")
        };
        let mut seq = run_simulation(&config, defect.as_ref())?;
        seq.id = id.clone();
        seq.validate()?;
        let file = format!("{id}.luvt");
        seq.save(&out_dir.join(&file))?;
        records.push(ManifestRecord {
            id,
            file,
            label: seq.label,
            defect_center_px: seq.defect_center_px,
            defect_radius_px: seq.defect_radius_px,
            defect_center_mm: defect.map(|d| d.center_mm),
            defect_diameter_mm: defect.map(|d| d.diameter_mm),
            seed: seq_seed,
        });
    }
    save_manifest(&out_dir.join("manifest.json"), &records)?;
    Ok(records)
}
