use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::CoclusterOrdering;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Pixels per matrix cell in the rendered image.
const CELL_PX: usize = 4;

/// Rows and columns reordered by `ordering` (identity when `None`), with every
/// value clipped to `[0, saturation]`.
pub fn permute_clip(matrix: &Tensor<f64>, ordering: Option<&CoclusterOrdering>, saturation: f64) -> Result<Tensor<f64>> {
    if !(saturation > 0.0) {
        return Err(Error::config("heatmap saturation must be positive"));
    }
    let (p, v) = matrix.dims2();
    let (rows, cols): (Vec<usize>, Vec<usize>) = match ordering {
        Some(o) => {
            if o.row_perm.len() != p || o.col_perm.len() != v {
                return Err(Error::shape("ordering does not match matrix shape"));
            }
            (o.row_perm.clone(), o.col_perm.clone())
        }
        None => ((0..p).collect(), (0..v).collect()),
    };
    let data = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
        .map(|(i, j)| matrix.get2(i, j).clamp(0.0, saturation))
        .collect();
    Tensor::new(vec![p, v], data)
}

/// CSV with a header of column labels and one labelled line per row.
pub fn heatmap_csv(display: &Tensor<f64>, row_labels: &[String], col_labels: &[String]) -> String {
    let (p, v) = display.dims2();
    let mut out = String::from("phone");
    for c in col_labels.iter().take(v) {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for i in 0..p {
        out.push_str(&row_labels[i]);
        for x in display.row(i) {
            let _ = write!(out, ",{x:.6}");
        }
        out.push('\n');
    }
    out
}

/// Binary PPM, white at zero through dark red at `saturation`.
pub fn heatmap_ppm(display: &Tensor<f64>, saturation: f64) -> Vec<u8> {
    let (p, v) = display.dims2();
    let (w, h) = (v * CELL_PX, p * CELL_PX);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let t = display.get2(y / CELL_PX, x / CELL_PX) / saturation;
            let fade = (255.0 * (1.0 - t)).round() as u8;
            out.extend_from_slice(&[(255.0 - 100.0 * t).round() as u8, fade, fade]);
        }
    }
    out
}

/// Writes `<stem>.csv` and `<stem>.ppm`, returning both paths.
pub fn emit_heatmap(
    matrix: &Tensor<f64>,
    row_labels: &[String],
    col_labels: &[String],
    ordering: Option<&CoclusterOrdering>,
    saturation: f64,
    stem: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let (p, v) = matrix.dims2();
    if row_labels.len() != p || col_labels.len() != v {
        return Err(Error::shape("heatmap labels do not match matrix shape"));
    }
    let display = permute_clip(matrix, ordering, saturation)?;
    let pick = |labels: &[String], perm: Option<&Vec<usize>>| -> Vec<String> {
        match perm {
            Some(perm) => perm.iter().map(|&i| labels[i].clone()).collect(),
            None => labels.to_vec(),
        }
    };
    let rows = pick(row_labels, ordering.map(|o| &o.row_perm));
    let cols = pick(col_labels, ordering.map(|o| &o.col_perm));

    let csv = stem.with_extension("csv");
    let ppm = stem.with_extension("ppm");
    std::fs::write(&csv, heatmap_csv(&display, &rows, &cols)).map_err(|e| Error::io(&csv, e))?;
    std::fs::write(&ppm, heatmap_ppm(&display, saturation)).map_err(|e| Error::io(&ppm, e))?;
    Ok((csv, ppm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn values_saturate() {
        let m = Tensor::from_rows(&[vec![0.9, 0.2], vec![0.5, 0.0]]).unwrap();
        let d = permute_clip(&m, None, 0.5).unwrap();
        assert_eq!(d.data(), &[0.5, 0.2, 0.5, 0.0]);
        assert!(permute_clip(&m, None, 0.0).is_err());
    }

    #[test]
    fn identity_ordering_writes_clipped_input() {
        let dir = tempfile::tempdir().unwrap();
        let m = Tensor::from_rows(&[vec![0.9, 0.25], vec![0.125, 0.0]]).unwrap();
        let (csv, ppm) = emit_heatmap(&m, &labels(2), &labels(2), None, 0.5, &dir.path().join("h")).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text, "phone,0,1\n0,0.500000,0.250000\n1,0.125000,0.000000\n");
        let img = std::fs::read(&ppm).unwrap();
        assert!(img.starts_with(b"P6\n8 8\n255\n"));
        let again = emit_heatmap(&m, &labels(2), &labels(2), None, 0.5, &dir.path().join("h2")).unwrap();
        assert_eq!(std::fs::read(again.0).unwrap(), text.as_bytes());
        assert_eq!(std::fs::read(again.1).unwrap(), img);
    }

    #[test]
    fn ordering_permutes_labels() {
        let m = Tensor::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let o = CoclusterOrdering {
            row_perm: vec![1, 0],
            col_perm: vec![1, 0],
            k: 2,
            row_clusters: vec![Some(1), Some(0)],
            col_clusters: vec![Some(1), Some(0)],
        };
        let d = permute_clip(&m, Some(&o), 0.5).unwrap();
        assert_eq!(d.data(), &[0.4, 0.3, 0.2, 0.1]);
        assert_eq!(
            heatmap_csv(&d, &["1".into(), "0".into()], &["1".into(), "0".into()]).lines().next(),
            Some("phone,1,0")
        );
    }
}
