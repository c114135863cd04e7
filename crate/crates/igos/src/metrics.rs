//! Causal faithfulness metrics: deletion and insertion curves with
//! trapezoidal AUC, and the pointing game.
//!
//! Curves rank heatmap cells at their native resolution and progressively
//! replace the corresponding image pixels with baseline pixels (deletion) or
//! reveal them from the baseline (insertion), recording the post-softmax
//! class probability at every step.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::heatmap::Heatmap;
use crate::imageops::ImageTensor;
use crate::scorer::{probability, Scorer};

/// Class probability as a function of the masked/revealed pixel fraction.
#[derive(Debug, Clone)]
pub struct EvalCurve {
    /// Strictly ascending, starting at 0 and ending at 1.
    pub fractions: Vec<f64>,
    /// Post-softmax probability of the target class at each step.
    pub probabilities: Vec<f64>,
    /// Trapezoidal integral of probability over the fraction axis.
    pub auc: f64,
}

impl EvalCurve {
    /// Headerless CSV rows `fraction,probability`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (f, p) in self.fractions.iter().zip(&self.probabilities) {
            let _ = writeln!(out, "{f},{p}");
        }
        out
    }

    /// Minimal standalone SVG line plot.
    pub fn to_svg(&self, title: &str) -> String {
        const W: f64 = 480.0;
        const H: f64 = 360.0;
        const L: f64 = 50.0;
        const R: f64 = 20.0;
        const T: f64 = 40.0;
        const B: f64 = 40.0;
        let px = |f: f64| L + f * (W - L - R);
        let py = |p: f64| H - B - p * (H - T - B);
        let mut points = String::new();
        for (f, p) in self.fractions.iter().zip(&self.probabilities) {
            let _ = write!(points, "{:.3},{:.3} ", px(*f), py(*p));
        }
        format!(
            concat!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
                "viewBox=\"0 0 {w} {h}\">\n",
                "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
                "<text x=\"{tx}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" ",
                "font-size=\"14\">{title} (AUC {auc:.4})</text>\n",
                "<line x1=\"{l}\" y1=\"{y0}\" x2=\"{xr}\" y2=\"{y0}\" stroke=\"black\"/>\n",
                "<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{y0}\" stroke=\"black\"/>\n",
                "<text x=\"{tx}\" y=\"{lbl}\" text-anchor=\"middle\" font-family=\"sans-serif\" ",
                "font-size=\"11\">fraction of pixels</text>\n",
                "<text x=\"14\" y=\"{my}\" text-anchor=\"middle\" font-family=\"sans-serif\" ",
                "font-size=\"11\" transform=\"rotate(-90 14 {my})\">class probability</text>\n",
                "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" ",
                "points=\"{points}\"/>\n",
                "</svg>\n"
            ),
            w = W,
            h = H,
            l = L,
            t = T,
            xr = W - R,
            y0 = H - B,
            tx = (L + W - R) / 2.0,
            lbl = H - 12.0,
            my = (T + H - B) / 2.0,
            title = title,
            auc = self.auc,
            points = points.trim_end(),
        )
    }
}

/// Trapezoidal integral of `probabilities` over `fractions`.
pub fn trapezoid_auc(fractions: &[f64], probabilities: &[f64]) -> f64 {
    assert_eq!(fractions.len(), probabilities.len());
    let mut auc = 0.0;
    for i in 1..fractions.len() {
        auc += (fractions[i] - fractions[i - 1]) * (probabilities[i] + probabilities[i - 1]) / 2.0;
    }
    auc
}

/// Cell indices sorted by importance descending, raster-order tie-break.
pub fn rank_cells(heatmap: &Heatmap) -> Vec<usize> {
    let mut order: Vec<usize> = (0..heatmap.cells()).collect();
    order.sort_by(|a, b| {
        heatmap.data()[*b]
            .partial_cmp(&heatmap.data()[*a])
            .expect("heatmap values are finite")
            .then(a.cmp(b))
    });
    order
}

/// For each heatmap cell, the flat pixel indices it owns. Pixels go to the
/// cell whose center is nearest, which reduces to exact blocks whenever the
/// image dimensions are divisible by the heatmap dimensions.
fn cell_pixels(
    image_h: usize,
    image_w: usize,
    map_h: usize,
    map_w: usize,
) -> Result<Vec<Vec<usize>>> {
    if map_h > image_h || map_w > image_w {
        return Err(Error::Shape(format!(
            "heatmap {map_h}x{map_w} exceeds image {image_h}x{image_w}"
        )));
    }
    let assign = |p: usize, cells: usize, pixels: usize| -> usize {
        let pos = (p as f64 + 0.5) * cells as f64 / pixels as f64 - 0.5;
        (pos.round().max(0.0) as usize).min(cells - 1)
    };
    let mut owned = vec![Vec::new(); map_h * map_w];
    for y in 0..image_h {
        let cy = assign(y, map_h, image_h);
        for x in 0..image_w {
            let cx = assign(x, map_w, image_w);
            owned[cy * map_w + cx].push(y * image_w + x);
        }
    }
    debug_assert!(owned.iter().all(|v| !v.is_empty()));
    Ok(owned)
}

/// Compose an image whose `top_cells` highest-ranked cells take pixels from
/// `top_source` and whose remaining cells take pixels from `rest_source`.
/// Deletion steps use (baseline, image); insertion steps use (image,
/// baseline). Replacement is an exact pixel copy.
pub fn masked_image(
    top_source: &ImageTensor,
    rest_source: &ImageTensor,
    heatmap: &Heatmap,
    top_cells: usize,
) -> Result<ImageTensor> {
    if top_source.shape() != rest_source.shape() {
        return Err(Error::Shape(format!(
            "sources {:?} and {:?} differ",
            top_source.shape(),
            rest_source.shape()
        )));
    }
    let (h, w, ch) = rest_source.shape();
    let partition = cell_pixels(h, w, heatmap.height(), heatmap.width())?;
    let order = rank_cells(heatmap);
    let mut out = rest_source.clone();
    for &cell in order.iter().take(top_cells.min(order.len())) {
        for &p in &partition[cell] {
            for c in 0..ch {
                out.data_mut()[p * ch + c] = top_source.data()[p * ch + c];
            }
        }
    }
    Ok(out)
}

fn curve(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    heatmap: &Heatmap,
    class_index: usize,
    num_steps: usize,
    deletion: bool,
) -> Result<EvalCurve> {
    if image.shape() != baseline.shape() {
        return Err(Error::Shape(format!(
            "image {:?} and baseline {:?} differ",
            image.shape(),
            baseline.shape()
        )));
    }
    if num_steps == 0 {
        return Err(Error::Parameter("num_steps must be positive".into()));
    }
    let cells = heatmap.cells();
    let steps = num_steps.min(cells);
    let (h, w, ch) = image.shape();
    let partition = cell_pixels(h, w, heatmap.height(), heatmap.width())?;
    let order = rank_cells(heatmap);
    let total_pixels = (h * w) as f64;

    // Step 0 is the untouched start image; step k replaces the top
    // ceil(k·cells/steps) ranked cells, so the final step covers everything.
    let (top_src, rest_src) = if deletion {
        (baseline, image)
    } else {
        (image, baseline)
    };
    let mut working = rest_src.clone();
    let mut fractions = Vec::with_capacity(steps + 1);
    let mut probabilities = Vec::with_capacity(steps + 1);
    fractions.push(0.0);
    probabilities.push(probability(scorer, &working, class_index)?);

    let mut replaced_cells = 0usize;
    let mut replaced_pixels = 0usize;
    for k in 1..=steps {
        let target = (k * cells).div_ceil(steps);
        while replaced_cells < target {
            let cell = order[replaced_cells];
            for &p in &partition[cell] {
                for c in 0..ch {
                    working.data_mut()[p * ch + c] = top_src.data()[p * ch + c];
                }
            }
            replaced_pixels += partition[cell].len();
            replaced_cells += 1;
        }
        fractions.push(replaced_pixels as f64 / total_pixels);
        probabilities.push(probability(scorer, &working, class_index)?);
    }
    let auc = trapezoid_auc(&fractions, &probabilities);
    Ok(EvalCurve {
        fractions,
        probabilities,
        auc,
    })
}

/// Progressively replace the most salient cells with baseline pixels; lower
/// AUC means the heatmap found pixels the classifier depends on.
pub fn deletion_curve(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    heatmap: &Heatmap,
    class_index: usize,
    num_steps: usize,
) -> Result<EvalCurve> {
    curve(scorer, image, baseline, heatmap, class_index, num_steps, true)
}

/// Progressively reveal the most salient cells starting from the baseline;
/// higher AUC means the revealed pixels alone support the class.
pub fn insertion_curve(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    heatmap: &Heatmap,
    class_index: usize,
    num_steps: usize,
) -> Result<EvalCurve> {
    curve(scorer, image, baseline, heatmap, class_index, num_steps, false)
}

/// Default step count: one cell per step up to 100 steps.
pub fn default_num_steps(cells: usize) -> usize {
    cells.min(100)
}

/// Inclusive-exclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::Parameter(format!(
                "degenerate bbox [{x_min},{y_min})x[{x_max},{y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }
}

/// True when the most salient pixel (raster-order tie-break) lies inside the
/// box. The heatmap must be at image resolution.
pub fn pointing_hit(heatmap: &Heatmap, bbox: &BBox) -> Result<bool> {
    if bbox.x_max > heatmap.width() || bbox.y_max > heatmap.height() {
        return Err(Error::Parameter(format!(
            "bbox exceeds heatmap bounds {}x{}",
            heatmap.height(),
            heatmap.width()
        )));
    }
    let (y, x) = heatmap.argmax();
    Ok(bbox.contains(x, y))
}

/// Mean over categories of the per-category hit rate.
pub fn pointing_accuracy(groups: &[(String, Vec<bool>)]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Parameter("no categories to average".into()));
    }
    let mut total = 0.0;
    for (name, hits) in groups {
        if hits.is_empty() {
            return Err(Error::Parameter(format!("category {name} is empty")));
        }
        total += hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64;
    }
    Ok(total / groups.len() as f64)
}

/// One pointing-game annotation row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub image_path: String,
    pub class_index: usize,
    pub bbox: BBox,
}

/// Parse an annotation CSV of rows `image_path,class,x_min,y_min,x_max,y_max`.
pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let display = path.display().to_string();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut annotations = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(FormatError::MalformedLine {
                what: format!("annotation in {display}"),
                line: line_no,
                detail: format!("expected 6 fields, found {}", fields.len()),
            }
            .into());
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| {
                FormatError::MalformedLine {
                    what: format!("annotation in {display}"),
                    line: line_no,
                    detail: format!("{what} `{s}` is not a nonnegative integer"),
                }
                .into()
            })
        };
        let class_index = parse(fields[1], "class")?;
        let x_min = parse(fields[2], "x_min")?;
        let y_min = parse(fields[3], "y_min")?;
        let x_max = parse(fields[4], "x_max")?;
        let y_max = parse(fields[5], "y_max")?;
        let bbox = BBox::new(x_min, y_min, x_max, y_max).map_err(|e| {
            Error::from(FormatError::MalformedLine {
                what: format!("annotation in {display}"),
                line: line_no,
                detail: e.to_string(),
            })
        })?;
        annotations.push(Annotation {
            image_path: fields[0].to_string(),
            class_index,
            bbox,
        });
    }
    if annotations.is_empty() {
        return Err(FormatError::Other(format!("{display}: no annotation rows")).into());
    }
    Ok(annotations)
}
