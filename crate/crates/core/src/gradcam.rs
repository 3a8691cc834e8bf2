//! GradCAM saliency over the last convolutional block.
//!
//! `alpha_k` is the spatial mean of the target logit's gradient with respect
//! to activation channel `k`; the map is `ReLU(sum_k alpha_k * A_k)`,
//! max-normalized, then bilinearly upsampled to the input size.

use std::path::Path;

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::model::{SimpleCnn, TrainedModel};

/// A network GradCAM can inspect.
pub trait CamModel {
    /// Evaluation-mode forward of a `[1, C, H, W]` input. Returns the single
    /// logit and the activation tensor to explain.
    fn cam_forward(&self, g: &mut Graph<f32>, input: Tensor<f32>) -> Result<(Var, Var)>;

    /// Fixed input `(height, width)`, if the model has one.
    fn input_size(&self) -> Option<(usize, usize)> {
        None
    }
}

impl CamModel for SimpleCnn {
    fn cam_forward(&self, g: &mut Graph<f32>, input: Tensor<f32>) -> Result<(Var, Var)> {
        let f = self.forward_eval(g, input)?;
        Ok((f.logits, f.features))
    }
}

impl CamModel for TrainedModel {
    fn cam_forward(&self, g: &mut Graph<f32>, input: Tensor<f32>) -> Result<(Var, Var)> {
        self.model.cam_forward(g, input)
    }

    fn input_size(&self) -> Option<(usize, usize)> {
        Some(self.input_size)
    }
}

/// Which class the map explains. Bear saliency differentiates the negated logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamTarget {
    Bull,
    Bear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCamMap {
    /// `ReLU(sum_k alpha_k * A_k)` before normalization, row-major `Hf x Wf`.
    pub raw_map: Vec<f64>,
    pub map_height: usize,
    pub map_width: usize,
    /// Channel weights `alpha_k`.
    pub weights: Vec<f64>,
    /// Normalized map at input resolution, row-major `H x W`, max 1 unless all zero.
    pub upsampled: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub logit: f64,
}

impl GradCamMap {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.upsampled[row * self.width + col]
    }

    /// Mean map value over the rightmost and leftmost quarters of the columns.
    pub fn right_left_attention(&self) -> (f64, f64) {
        let q = (self.width / 4).max(1);
        let band = |cols: std::ops::Range<usize>| {
            let mut sum = 0.0;
            for r in 0..self.height {
                for c in cols.clone() {
                    sum += self.value(r, c);
                }
            }
            sum / (self.height * cols.len()) as f64
        };
        (band(self.width - q..self.width), band(0..q))
    }
}

pub fn gradcam_map<M: CamModel + ?Sized>(model: &M, image: &Image, target: CamTarget) -> Result<GradCamMap> {
    let (h, w) = (image.height(), image.width());
    if let Some(expected) = model.input_size() {
        if expected != (h, w) {
            return Err(Error::shape(format!(
                "image is {h}x{w}, model expects {}x{}",
                expected.0, expected.1
            )));
        }
    }
    let input = Tensor::new(vec![1, CHANNELS, h, w], image.to_planar())?;
    let mut g = Graph::new();
    let (logit, features) = model.cam_forward(&mut g, input)?;
    if g.value(logit).len() != 1 {
        return Err(Error::shape("GradCAM needs a single logit"));
    }
    let [fb, k, hf, wf] = g.value(features).dims4("GradCAM activations")?;
    if fb != 1 {
        return Err(Error::shape("GradCAM explains one image at a time"));
    }
    let logit_value = f64::from(g.value(logit).data()[0]);
    g.retain_grad(features);
    let seed = match target {
        CamTarget::Bull => 1.0,
        CamTarget::Bear => -1.0,
    };
    g.backward_with(logit, vec![seed])?;
    let plane = hf * wf;
    let grad = g
        .grad(features)
        .map(<[f32]>::to_vec)
        .unwrap_or_else(|| vec![0.0; k * plane]);
    let acts = g.value(features).data();

    let weights: Vec<f64> = grad
        .chunks(plane)
        .map(|c| c.iter().map(|&v| f64::from(v)).sum::<f64>() / plane as f64)
        .collect();
    let mut raw_map = vec![0.0; plane];
    for (alpha, a) in weights.iter().zip(acts.chunks(plane)) {
        for (m, &v) in raw_map.iter_mut().zip(a) {
            *m += alpha * f64::from(v);
        }
    }
    for m in &mut raw_map {
        *m = m.max(0.0);
    }
    let normalized = normalize_by_max(raw_map.clone());
    // Interpolation between grid points can miss the peak, so rescale again.
    let upsampled = normalize_by_max(bilinear_resize(&normalized, hf, wf, h, w));
    Ok(GradCamMap {
        raw_map,
        map_height: hf,
        map_width: wf,
        weights,
        upsampled,
        height: h,
        width: w,
        logit: logit_value,
    })
}

fn normalize_by_max(mut v: Vec<f64>) -> Vec<f64> {
    let max = v.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for x in &mut v {
            *x = (*x / max).clamp(0.0, 1.0);
        }
    }
    v
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn bilinear_resize(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let axis = |i: usize, s: usize, d: usize| {
        let pos = ((i as f64 + 0.5) * s as f64 / d as f64 - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(s - 1);
        let i1 = (i0 + 1).min(s - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut out = Vec::with_capacity(dh * dw);
    for r in 0..dh {
        let (r0, r1, fr) = axis(r, sh, dh);
        for c in 0..dw {
            let (c0, c1, fc) = axis(c, sw, dw);
            let top = src[r0 * sw + c0] * (1.0 - fc) + src[r0 * sw + c1] * fc;
            let bottom = src[r1 * sw + c0] * (1.0 - fc) + src[r1 * sw + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Blue (0) to red (1) linear ramp.
pub fn colormap(v: f64) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0) as f32;
    [v, 0.0, 1.0 - v]
}

pub fn heatmap_image(map: &GradCamMap) -> Image {
    let mut out = Image::filled(map.height, map.width, [0.0; 3]);
    for r in 0..map.height {
        for c in 0..map.width {
            out.set_pixel(r, c, colormap(map.value(r, c)));
        }
    }
    out
}

/// `(1 - alpha) * image + alpha * colormap(map)`, clamped to `[0, 1]`.
pub fn overlay(image: &Image, map: &GradCamMap, alpha: f64) -> Result<Image> {
    if (image.height(), image.width()) != (map.height, map.width) {
        return Err(Error::shape(format!(
            "image is {}x{}, map is {}x{}",
            image.height(),
            image.width(),
            map.height,
            map.width
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("overlay alpha {alpha} not in [0, 1]")));
    }
    let a = alpha as f32;
    let mut out = image.clone();
    for r in 0..map.height {
        for c in 0..map.width {
            let px = image.pixel(r, c);
            let heat = colormap(map.value(r, c));
            let mut blended = [0.0; 3];
            for ch in 0..3 {
                blended[ch] = ((1.0 - a) * px[ch] + a * heat[ch]).clamp(0.0, 1.0);
            }
            out.set_pixel(r, c, blended);
        }
    }
    Ok(out)
}

pub const OVERLAY_ALPHA: f64 = 0.4;

/// Chart, heatmap and overlay side by side.
pub fn triptych(image: &Image, map: &GradCamMap) -> Result<Image> {
    let over = overlay(image, map, OVERLAY_ALPHA)?;
    Ok(Image::hstack(&[image, &heatmap_image(map), &over]))
}

pub fn triptych_file_name(sample_id: &str, label: u8, pred: u8) -> String {
    format!("{sample_id}_{label}_{pred}.png")
}

/// Writes the triptych PNG into `dir` and returns its path.
pub fn write_triptych(
    dir: &Path,
    sample_id: &str,
    label: u8,
    pred: u8,
    image: &Image,
    map: &GradCamMap,
) -> Result<std::path::PathBuf> {
    let path = dir.join(triptych_file_name(sample_id, label, pred));
    triptych(image, map)?.write_png(&path)?;
    Ok(path)
}
