//! Progressive convex GAN: stagewise closed-form linear generators against
//! quadratic discriminators at doubling resolutions.
//!
//! Images are rows of a `DataMatrix`; pixel `(y, x, c)` of an `h × w × ch`
//! image sits in column `(y·w + x)·ch + c`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::duality::{dual_gap_quadratic, FeasibilityReport};
use crate::error::{Error, Result};
use crate::numerics::{check_finite, same_cols, svd, sym_eig, DataMatrix};
use crate::rng::{gaussian_matrix, random_orthogonal, stream};
use crate::solvers::{closed_form_linear_weights_rotated, retained_rank};

/// Slack allowed on every stage's feasibility certificate.
pub const STAGE_FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Resolution {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Resolution { height, width, channels }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    fn check(&self, images: &DataMatrix) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::invalid("resolution must be positive"));
        }
        if images.ncols() != self.pixels() {
            return Err(Error::dims("image columns vs resolution", self.pixels(), images.ncols()));
        }
        Ok(())
    }
}

fn log2_factor(factor: usize) -> Result<u32> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::invalid(format!("resampling factor must be a power of two, got {factor}")));
    }
    Ok(factor.trailing_zeros())
}

fn pool2(images: &DataMatrix, res: Resolution) -> Result<(DataMatrix, Resolution)> {
    if !res.height.is_multiple_of(2) || !res.width.is_multiple_of(2) {
        return Err(Error::invalid(format!("{}×{} is not divisible by 2", res.height, res.width)));
    }
    let out = Resolution::new(res.height / 2, res.width / 2, res.channels);
    let mut m = DMatrix::zeros(images.nrows(), out.pixels());
    for n in 0..images.nrows() {
        for y in 0..out.height {
            for x in 0..out.width {
                for c in 0..res.channels {
                    let s = images[(n, res.index(2 * y, 2 * x, c))]
                        + images[(n, res.index(2 * y, 2 * x + 1, c))]
                        + images[(n, res.index(2 * y + 1, 2 * x, c))]
                        + images[(n, res.index(2 * y + 1, 2 * x + 1, c))];
                    m[(n, out.index(y, x, c))] = 0.25 * s;
                }
            }
        }
    }
    Ok((m, out))
}

/// 2×2 average pooling applied `log2(factor)` times.
pub fn downsample(images: &DataMatrix, res: Resolution, factor: usize) -> Result<(DataMatrix, Resolution)> {
    res.check(images)?;
    let times = log2_factor(factor)?;
    if !res.height.is_multiple_of(factor) || !res.width.is_multiple_of(factor) {
        return Err(Error::invalid(format!(
            "factor {factor} does not divide {}×{}",
            res.height, res.width
        )));
    }
    let mut cur = (images.clone(), res);
    for _ in 0..times {
        cur = pool2(&cur.0, cur.1)?;
    }
    Ok(cur)
}

/// Nearest-neighbor replication by `factor` in both spatial directions.
pub fn upsample(images: &DataMatrix, res: Resolution, factor: usize) -> Result<(DataMatrix, Resolution)> {
    res.check(images)?;
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be positive"));
    }
    let out = Resolution::new(res.height * factor, res.width * factor, res.channels);
    let mut m = DMatrix::zeros(images.nrows(), out.pixels());
    for n in 0..images.nrows() {
        for y in 0..out.height {
            for x in 0..out.width {
                for c in 0..res.channels {
                    m[(n, out.index(y, x, c))] = images[(n, res.index(y / factor, x / factor, c))];
                }
            }
        }
    }
    Ok((m, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StageOrientation {
    /// Seeded random rotation of the retained directions.
    #[default]
    Random,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub resolution: Resolution,
    pub beta_d: f64,
    #[serde(default)]
    pub orientation: StageOrientation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stages: Vec<StageConfig>,
    pub latent_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    fn validate(&self, data_res: Resolution) -> Result<()> {
        let first = self
            .stages
            .first()
            .ok_or_else(|| Error::invalid("pipeline needs at least one stage"))?;
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent dimension must be positive"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.beta_d > 0.0) {
                return Err(Error::invalid(format!("stage {i}: beta_d must be positive")));
            }
            if s.resolution.channels != first.resolution.channels {
                return Err(Error::invalid(format!("stage {i}: channel count changes")));
            }
            if i > 0 {
                let p = self.stages[i - 1].resolution;
                if s.resolution.height != 2 * p.height || s.resolution.width != 2 * p.width {
                    return Err(Error::invalid(format!("stage {i}: resolution must double the previous stage")));
                }
            }
        }
        if self.stages.last().map(|s| s.resolution) != Some(data_res) {
            return Err(Error::invalid("final stage resolution must match the data"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: usize,
    pub beta_d: f64,
    pub gap: f64,
    pub frobenius: f64,
    pub spectral_distance: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub weights: Vec<DataMatrix>,
    pub reports: Vec<FeasibilityReport>,
    /// Per-pixel data mean at full resolution.
    pub mean: DVector<f64>,
    /// Centered generated samples per stage.
    pub outputs: Vec<DataMatrix>,
    /// Centered data per stage.
    pub stage_data: Vec<DataMatrix>,
    pub resolutions: Vec<Resolution>,
    pub metrics: Vec<StageMetrics>,
}

impl TrainedPipeline {
    /// Final-stage samples with the data mean added back.
    pub fn final_images(&self) -> DataMatrix {
        let mut g = self.outputs.last().expect("at least one stage").clone();
        for mut row in g.row_iter_mut() {
            row += self.mean.transpose();
        }
        g
    }
}

/// Closed-form stage weights with a quadratic-discriminator certificate.
/// `rotation` is an optional orthogonal factor on the retained directions.
pub fn train_stage(z: &DataMatrix, x: &DataMatrix, beta_d: f64, rotation: Option<&DataMatrix>) -> Result<(DataMatrix, FeasibilityReport)> {
    let w = closed_form_linear_weights_rotated(z, x, beta_d, rotation)?;
    let g = z * &w;
    let gap = dual_gap_quadratic(x, &g)?;
    let report = FeasibilityReport {
        gap_value: gap.gap_value,
        beta_d,
        feasible: gap.gap_value <= beta_d + STAGE_FEASIBILITY_TOL,
        margin: beta_d - gap.gap_value,
        witness: gap.witness,
        bias: None,
    };
    if !report.feasible {
        return Err(Error::Infeasible(format!(
            "stage gap {:.3e} exceeds beta_d {beta_d:.3e}",
            report.gap_value
        )));
    }
    Ok((w, report))
}

fn column_means(a: &DataMatrix) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.mean()))
}

fn center(a: &DataMatrix, mean: &DVector<f64>) -> DataMatrix {
    let mut out = a.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}

/// Runs every stage in order. Data are centered by the full-resolution mean
/// before training. The first latent is a column-centered Gaussian draw, so
/// every stage output has zero column means and adding the mean back
/// restores the data means exactly. Later latents are the upsampled
/// previous outputs.
pub fn run_pipeline(cfg: &PipelineConfig, data: &DataMatrix, data_res: Resolution) -> Result<TrainedPipeline> {
    check_finite(data, "image data")?;
    data_res.check(data)?;
    cfg.validate(data_res)?;
    let mean = column_means(data);
    let centered = center(data, &mean);
    let n = data.nrows();

    let stage_err = |stage: usize| {
        move |e: Error| Error::Stage {
            stage,
            source: Box::new(e),
        }
    };

    let mut out = TrainedPipeline {
        weights: Vec::new(),
        reports: Vec::new(),
        mean,
        outputs: Vec::new(),
        stage_data: Vec::new(),
        resolutions: Vec::new(),
        metrics: Vec::new(),
    };
    for (i, st) in cfg.stages.iter().enumerate() {
        let res = st.resolution;
        let (x, _) = downsample(&centered, data_res, data_res.height / res.height).map_err(stage_err(i))?;
        let z = if i == 0 {
            let raw = gaussian_matrix(n, cfg.latent_dim, cfg.seed);
            center(&raw, &column_means(&raw))
        } else {
            upsample(&out.outputs[i - 1], out.resolutions[i - 1], 2).map_err(stage_err(i))?.0
        };
        let k = retained_rank(&svd(&x).map_err(stage_err(i))?.singular_values, st.beta_d);
        let rotation = match st.orientation {
            StageOrientation::Random if k > 1 => Some(random_orthogonal(k, cfg.seed.wrapping_add(1 + i as u64))),
            _ => None,
        };
        let (w, report) = train_stage(&z, &x, st.beta_d, rotation.as_ref()).map_err(stage_err(i))?;
        let g = &z * &w;
        out.metrics.push(StageMetrics {
            stage: i,
            beta_d: st.beta_d,
            gap: report.gap_value,
            frobenius: g.norm(),
            spectral_distance: covariance_spectral_distance(&g, &x).map_err(stage_err(i))?,
        });
        out.weights.push(w);
        out.reports.push(report);
        out.outputs.push(g);
        out.stage_data.push(x);
        out.resolutions.push(res);
    }
    Ok(out)
}

/// Pipeline config that keeps `keep` directions at every stage of a
/// `stages`-stage doubling schedule ending at `res`. Each stage's `β_d`
/// sits 1% of the way from `σ_{keep+1}²` towards `σ_keep²` of that stage's
/// centered data.
pub fn beta_schedule(
    data: &DataMatrix,
    res: Resolution,
    stages: usize,
    keep: usize,
    latent_dim: usize,
    seed: u64,
) -> Result<PipelineConfig> {
    res.check(data)?;
    if stages == 0 || keep == 0 {
        return Err(Error::invalid("stages and keep must be positive"));
    }
    let factor = 1usize << (stages - 1);
    let centered = center(data, &column_means(data));
    let mut out = Vec::with_capacity(stages);
    for i in 0..stages {
        let f = factor >> i;
        let (x, r) = downsample(&centered, res, f)?;
        let sigma = svd(&x)?.singular_values;
        if keep >= sigma.len() {
            return Err(Error::invalid(format!("stage {i} has only {} directions", sigma.len())));
        }
        let (hi, lo) = (sigma[keep - 1].powi(2), sigma[keep].powi(2));
        out.push(StageConfig {
            resolution: r,
            beta_d: lo + 0.01 * (hi - lo),
            orientation: StageOrientation::Random,
        });
    }
    Ok(PipelineConfig {
        stages: out,
        latent_dim,
        seed,
    })
}

/// Per-channel quantile mapping of `generated` onto the empirical
/// distribution of `reference`. Tied values share their average rank.
pub fn histogram_match(generated: &DataMatrix, reference: &DataMatrix, channels: usize) -> Result<DataMatrix> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::invalid("histogram matching needs nonempty inputs"));
    }
    if channels == 0 || !generated.ncols().is_multiple_of(channels) || !reference.ncols().is_multiple_of(channels) {
        return Err(Error::invalid("column count is not a multiple of the channel count"));
    }
    let mut out = generated.clone();
    for c in 0..channels {
        let mut refv: Vec<f64> = (0..reference.ncols())
            .filter(|j| j % channels == c)
            .flat_map(|j| reference.column(j).iter().copied().collect::<Vec<_>>())
            .collect();
        refv.sort_by(f64::total_cmp);
        let mut cells: Vec<(f64, usize, usize)> = (0..generated.ncols())
            .filter(|j| j % channels == c)
            .flat_map(|j| (0..generated.nrows()).map(move |i| (i, j)))
            .map(|(i, j)| (generated[(i, j)], i, j))
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = cells.len();
        let m = refv.len();
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && cells[end].0 == cells[start].0 {
                end += 1;
            }
            let rank = 0.5 * ((start + end - 1) as f64);
            let q = if n > 1 { rank / (n - 1) as f64 } else { 0.5 };
            let pos = q * (m - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(m - 1);
            let t = pos - lo as f64;
            let value = refv[lo] + t * (refv[hi] - refv[lo]);
            for &(_, i, j) in &cells[start..end] {
                out[(i, j)] = value;
            }
            start = end;
        }
    }
    Ok(out)
}

/// `‖AᵀA/n_A − BᵀB/n_B‖₂ + ‖mean(A) − mean(B)‖₂`.
pub fn covariance_spectral_distance(a: &DataMatrix, b: &DataMatrix) -> Result<f64> {
    same_cols(a, b, "covariance distance columns")?;
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::invalid("covariance distance needs nonempty inputs"));
    }
    let diff = a.tr_mul(a) / a.nrows() as f64 - b.tr_mul(b) / b.nrows() as f64;
    let diff = (&diff + diff.transpose()) * 0.5;
    let spec = sym_eig(&diff)?.eigenvalues.amax();
    Ok(spec + (column_means(a) - column_means(b)).norm())
}

/// Eigenvalues of `GᵀG`, sorted descending.
pub fn covariance_spectrum(g: &DataMatrix) -> Result<DVector<f64>> {
    Ok(sym_eig(&g.tr_mul(g))?.eigenvalues)
}

/// Synthetic images made of one or two Gaussian blobs each, values in `[0, 1]`.
pub fn synthetic_blobs(count: usize, res: Resolution, seed: u64) -> DataMatrix {
    let mut m = DMatrix::zeros(count, res.pixels());
    for n in 0..count {
        let mut rng = stream(seed, n as u64);
        let blobs = 1 + (rng.random::<f64>() < 0.5) as usize;
        for _ in 0..blobs {
            let cy = rng.random::<f64>() * res.height as f64;
            let cx = rng.random::<f64>() * res.width as f64;
            let width = 0.6 + 0.2 * res.height as f64 * rng.random::<f64>();
            let amp = 0.5 + 0.5 * rng.random::<f64>();
            let tint: Vec<f64> = (0..res.channels).map(|_| 0.7 + 0.3 * rng.random::<f64>()).collect();
            for y in 0..res.height {
                for x in 0..res.width {
                    let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                    let v = amp * (-d2 / (2.0 * width * width)).exp();
                    for (c, t) in tint.iter().enumerate() {
                        m[(n, res.index(y, x, c))] += v * t;
                    }
                }
            }
        }
        for j in 0..res.pixels() {
            let noise: f64 = rng.sample(StandardNormal);
            let v: f64 = m[(n, j)] + 0.01 * noise;
            m[(n, j)] = v.clamp(0.0, 1.0);
        }
    }
    m
}

/// Writes one image as binary PGM (one channel) or PPM (three channels),
/// clipping values to `[0, 1]`.
pub fn write_image(path: &Path, pixels: &[f64], res: Resolution) -> Result<()> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::{ExtendedColorType, ImageEncoder};
    if pixels.len() != res.pixels() {
        return Err(Error::dims("image pixels", res.pixels(), pixels.len()));
    }
    let (subtype, color) = match res.channels {
        1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
        3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        c => return Err(Error::invalid(format!("cannot export {c}-channel images"))),
    };
    let bytes: Vec<u8> = pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(subtype)
        .write_image(&bytes, res.width as u32, res.height as u32, color)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Reads a PGM or PPM image into `[0, 1]` values.
pub fn read_image(path: &Path) -> Result<(Vec<f64>, Resolution)> {
    let img = image::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().channel_count() == 1 {
        let buf = img.to_luma8();
        Ok((buf.as_raw().iter().map(|&b| b as f64 / 255.0).collect(), Resolution::new(h, w, 1)))
    } else {
        let buf = img.to_rgb8();
        Ok((buf.as_raw().iter().map(|&b| b as f64 / 255.0).collect(), Resolution::new(h, w, 3)))
    }
}

/// Loads every image named in a JSON list of paths (relative paths resolve
/// against the manifest's directory). All images must share one resolution.
pub fn load_manifest(path: &Path) -> Result<(DataMatrix, Resolution)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let files: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    if files.is_empty() {
        return Err(Error::invalid("manifest lists no images"));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::with_capacity(files.len());
    let mut res = None;
    for f in &files {
        let (px, r) = read_image(&base.join(f))?;
        if *res.get_or_insert(r) != r {
            return Err(Error::invalid(format!("{f}: resolution differs from the first image")));
        }
        rows.push(px);
    }
    let res = res.expect("nonempty");
    Ok((
        DMatrix::from_row_iterator(rows.len(), res.pixels(), rows.into_iter().flatten()),
        res,
    ))
}
