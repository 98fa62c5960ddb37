//! Tissue-stratified ACC statistics, region masks, heatmap export, and
//! method comparison tables.

use crate::error::{FodError, Result};
use crate::sh::AccMap;
use crate::volume::TissueFractions;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Minimum tissue fractions a voxel must meet to enter a region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRule {
    pub name: String,
    pub min_wm: f64,
    pub min_cgm: f64,
    pub min_sgm: f64,
}

impl RegionRule {
    pub fn new(name: impl Into<String>, min_wm: f64, min_cgm: f64, min_sgm: f64) -> Result<Self> {
        for t in [min_wm, min_cgm, min_sgm] {
            if !(0.0..=1.0).contains(&t) {
                return Err(FodError::InvalidArgument(format!(
                    "region threshold {t} must lie in [0,1]"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            min_wm,
            min_cgm,
            min_sgm,
        })
    }
}

/// The three evaluation regions: ≥70% WM; ≥30% WM and ≥30% CGM;
/// ≥30% WM and ≥30% SGM. No other region is included.
pub fn standard_rules() -> Vec<RegionRule> {
    vec![
        RegionRule::new("WM", 0.7, 0.0, 0.0).expect("valid"),
        RegionRule::new("WM_CGM", 0.3, 0.3, 0.0).expect("valid"),
        RegionRule::new("WM_SGM", 0.3, 0.0, 0.3).expect("valid"),
    ]
}

/// Per-voxel region membership.
pub fn region_mask(fractions: &TissueFractions, rule: &RegionRule) -> Vec<bool> {
    (0..fractions.n_voxels())
        .map(|i| {
            fractions.wm[i] as f64 >= rule.min_wm
                && fractions.cgm[i] as f64 >= rule.min_cgm
                && fractions.sgm[i] as f64 >= rule.min_sgm
        })
        .collect()
}

/// Summary statistics of defined ACC values in a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
    pub n_voxels: usize,
    pub n_undefined: usize,
}

/// Linear-interpolation (type-7) quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Statistics of raw values (quartiles via type-7 linear interpolation).
pub fn stats_from_values(values: &[f64], n_undefined: usize) -> Result<AccStats> {
    if values.is_empty() {
        return if n_undefined > 0 {
            Err(FodError::AllUndefined(n_undefined))
        } else {
            Err(FodError::EmptyMask)
        };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite ACC values"));
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(AccStats {
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        mean,
        std: var.sqrt(),
        lower_quartile: quantile_sorted(&sorted, 0.25),
        upper_quartile: quantile_sorted(&sorted, 0.75),
        n_voxels: values.len(),
        n_undefined,
    })
}

/// Statistics over defined ACC values inside `mask`. Undefined voxels are
/// excluded and counted separately; an empty selection distinguishes
/// "no voxels" from "all undefined".
pub fn acc_stats(map: &AccMap, mask: &[bool]) -> Result<AccStats> {
    if mask.len() != map.n_voxels() {
        return Err(FodError::InvalidArgument(
            "mask length does not match the ACC map".into(),
        ));
    }
    let (values, undefined) = map.select(mask);
    stats_from_values(&values, undefined)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Axis> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(FodError::InvalidArgument(format!(
                "axis '{other}' must be x, y, or z"
            ))),
        }
    }
}

/// Extract one slice as (width, height, values); NaN marks undefined.
/// Orientation: z slices are (x → columns, y → rows); y slices (x, z);
/// x slices (y, z).
fn slice_values(map: &AccMap, axis: Axis, index: usize) -> Result<(usize, usize, Vec<f32>)> {
    let [nx, ny, nz] = map.dims;
    let (w, h) = match axis {
        Axis::Z => (nx, ny),
        Axis::Y => (nx, nz),
        Axis::X => (ny, nz),
    };
    let bound = match axis {
        Axis::X => nx,
        Axis::Y => ny,
        Axis::Z => nz,
    };
    if index >= bound {
        return Err(FodError::InvalidArgument(format!(
            "slice index {index} out of range for axis dimension {bound}"
        )));
    }
    let mut values = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let (x, y, z) = match axis {
                Axis::Z => (col, row, index),
                Axis::Y => (col, index, row),
                Axis::X => (index, col, row),
            };
            let i = x + nx * (y + ny * z);
            values.push(if map.defined[i] {
                map.values[i]
            } else {
                f32::NAN
            });
        }
    }
    Ok((w, h, values))
}

fn write_pgm(path: &Path, w: usize, h: usize, pixels: &[u8]) -> Result<()> {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Paths produced by [`export_heatmap_slice`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapPaths {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub csv: PathBuf,
}

/// Export one slice as an 8-bit PGM heatmap (linear map [−1,1] → [0,255],
/// undefined → 0), a sidecar definedness mask PGM, and a CSV of raw values
/// (`nan` for undefined).
pub fn export_heatmap_slice(
    map: &AccMap,
    axis: Axis,
    index: usize,
    path: &Path,
) -> Result<HeatmapPaths> {
    let (w, h, values) = slice_values(map, axis, index)?;
    let base = path.with_extension("");
    let paths = HeatmapPaths {
        image: base.with_extension("pgm"),
        mask: PathBuf::from(format!("{}_mask.pgm", base.display())),
        csv: base.with_extension("csv"),
    };

    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| {
            if v.is_nan() {
                0
            } else {
                (((v as f64 + 1.0) / 2.0 * 255.0).round()).clamp(0.0, 255.0) as u8
            }
        })
        .collect();
    write_pgm(&paths.image, w, h, &pixels)?;

    let mask_px: Vec<u8> = values.iter().map(|v| if v.is_nan() { 0 } else { 255 }).collect();
    write_pgm(&paths.mask, w, h, &mask_px)?;

    let mut csv = String::new();
    for row in 0..h {
        let mut first = true;
        for col in 0..w {
            if !first {
                csv.push(',');
            }
            first = false;
            let v = values[row * w + col];
            if v.is_nan() {
                csv.push_str("nan");
            } else {
                let _ = write!(csv, "{v}");
            }
        }
        csv.push('\n');
    }
    std::fs::write(&paths.csv, csv)?;
    Ok(paths)
}

/// Parse a heatmap CSV back into values (NaN for `nan` cells).
pub fn read_slice_csv(path: &Path) -> Result<Vec<Vec<f32>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        let mut row = Vec::new();
        for cell in line.split(',') {
            if cell == "nan" {
                row.push(f32::NAN);
            } else {
                row.push(cell.parse::<f32>().map_err(|e| {
                    FodError::Format(format!("bad CSV cell '{cell}': {e}"))
                })?);
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// One (method, region) → stats row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub region: String,
    pub stats: AccStats,
}

/// Stats table over methods × regions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MethodReport {
    pub rows: Vec<ReportRow>,
}

impl MethodReport {
    /// CSV with the Min/Max/Mean/STD/LQ/UQ column schema.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("Method,Region,Min,Max,Mean,STD,LQ,UQ,N,Undefined\n");
        for r in &self.rows {
            let st = &r.stats;
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.method,
                r.region,
                st.min,
                st.max,
                st.mean,
                st.std,
                st.lower_quartile,
                st.upper_quartile,
                st.n_voxels,
                st.n_undefined
            );
        }
        s
    }

    /// Aligned text table for standard output.
    pub fn to_table(&self) -> String {
        let header = [
            "Method", "Region", "Min", "Max", "Mean", "STD", "LQ", "UQ", "N", "Undef",
        ];
        let mut cells: Vec<[String; 10]> = Vec::new();
        for r in &self.rows {
            let st = &r.stats;
            cells.push([
                r.method.clone(),
                r.region.clone(),
                format!("{:.2}", st.min),
                format!("{:.2}", st.max),
                format!("{:.2}", st.mean),
                format!("{:.2}", st.std),
                format!("{:.2}", st.lower_quartile),
                format!("{:.2}", st.upper_quartile),
                st.n_voxels.to_string(),
                st.n_undefined.to_string(),
            ]);
        }
        let mut widths = [0usize; 10];
        for (i, h) in header.iter().enumerate() {
            widths[i] = h.len();
        }
        for row in &cells {
            for (i, c) in row.iter().enumerate() {
                widths[i] = widths[i].max(c.len());
            }
        }
        let mut s = String::new();
        for (i, head) in header.iter().enumerate() {
            let _ = write!(s, "{:<w$}  ", head, w = widths[i]);
        }
        s.push('\n');
        for row in &cells {
            for (i, c) in row.iter().enumerate() {
                let _ = write!(s, "{:<w$}  ", c, w = widths[i]);
            }
            s.push('\n');
        }
        s
    }
}

/// Build a report with one row per (method, region). All maps must share
/// geometry with the fraction volumes. Regions with no voxels or only
/// undefined ACC values are reported with a zeroed stats row and the
/// undefined count, rather than failing the whole report.
pub fn compare_methods(
    maps: &[(String, &AccMap)],
    fractions: &TissueFractions,
    rules: &[RegionRule],
) -> Result<MethodReport> {
    let mut report = MethodReport::default();
    for (name, map) in maps {
        if map.dims != fractions.dims {
            return Err(FodError::InvalidArgument(format!(
                "ACC map '{name}' dims {:?} do not match fractions {:?}",
                map.dims, fractions.dims
            )));
        }
        for rule in rules {
            let mask = region_mask(fractions, rule);
            let stats = match acc_stats(map, &mask) {
                Ok(st) => st,
                Err(FodError::AllUndefined(n)) => AccStats {
                    min: f64::NAN,
                    max: f64::NAN,
                    mean: f64::NAN,
                    std: f64::NAN,
                    lower_quartile: f64::NAN,
                    upper_quartile: f64::NAN,
                    n_voxels: 0,
                    n_undefined: n,
                },
                Err(e) => return Err(e),
            };
            report.rows.push(ReportRow {
                method: name.clone(),
                region: rule.name.clone(),
                stats,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::acc_volume;
    use tempfile::TempDir;

    fn map_from(dims: [usize; 3], values: Vec<f32>) -> AccMap {
        let n = dims[0] * dims[1] * dims[2];
        assert_eq!(values.len(), n);
        AccMap {
            dims,
            defined: values.iter().map(|v| !v.is_nan()).collect(),
            in_mask: vec![true; n],
            values,
        }
    }

    #[test]
    fn region_rules_match_spec_thresholds() {
        let mut fr = TissueFractions::zeros([3, 1, 1]);
        // voxel 0: wm=0.8, cgm=0.1 → WM only
        fr.wm[0] = 0.8;
        fr.cgm[0] = 0.1;
        // voxel 1: wm=0.35, cgm=0.35 → WM_CGM only
        fr.wm[1] = 0.35;
        fr.cgm[1] = 0.35;
        // voxel 2: wm=0.4, sgm=0.3 → WM_SGM only
        fr.wm[2] = 0.4;
        fr.sgm[2] = 0.3;
        let rules = standard_rules();
        let wm = region_mask(&fr, &rules[0]);
        let wm_cgm = region_mask(&fr, &rules[1]);
        let wm_sgm = region_mask(&fr, &rules[2]);
        assert_eq!(wm, vec![true, false, false]);
        assert_eq!(wm_cgm, vec![false, true, false]);
        assert_eq!(wm_sgm, vec![false, false, true]);
    }

    #[test]
    fn region_masks_match_brute_force_on_phantom() {
        let (_, fr) = crate::phantom::gen_phantom([20, 20, 20], 2).unwrap();
        for rule in standard_rules() {
            let mask = region_mask(&fr, &rule);
            let brute: usize = (0..fr.n_voxels())
                .filter(|&i| {
                    fr.wm[i] as f64 >= rule.min_wm
                        && fr.cgm[i] as f64 >= rule.min_cgm
                        && fr.sgm[i] as f64 >= rule.min_sgm
                })
                .count();
            assert_eq!(mask.iter().filter(|&&m| m).count(), brute, "{}", rule.name);
        }
    }

    #[test]
    fn region_masks_are_monotone_in_thresholds() {
        let (_, fr) = crate::phantom::gen_phantom([16, 16, 16], 8).unwrap();
        let loose = RegionRule::new("L", 0.3, 0.0, 0.0).unwrap();
        let tight = RegionRule::new("T", 0.8, 0.0, 0.0).unwrap();
        let ml = region_mask(&fr, &loose);
        let mt = region_mask(&fr, &tight);
        for i in 0..ml.len() {
            assert!(!mt[i] || ml[i], "tightening added voxel {i}");
        }
    }

    #[test]
    fn stats_constant_map() {
        let map = map_from([2, 2, 1], vec![1.0; 4]);
        let st = acc_stats(&map, &vec![true; 4]).unwrap();
        assert_eq!(
            (st.min, st.max, st.mean, st.std, st.lower_quartile, st.upper_quartile),
            (1.0, 1.0, 1.0, 0.0, 1.0, 1.0)
        );
        assert_eq!((st.n_voxels, st.n_undefined), (4, 0));
    }

    #[test]
    fn stats_three_values() {
        let map = map_from([3, 1, 1], vec![-1.0, 0.0, 1.0]);
        let st = acc_stats(&map, &vec![true; 3]).unwrap();
        assert_eq!((st.min, st.max), (-1.0, 1.0));
        assert!(st.mean.abs() < 1e-12);
        assert_eq!(st.lower_quartile, -0.5);
        assert_eq!(st.upper_quartile, 0.5);
    }

    #[test]
    fn stats_match_frozen_reference_quantiles() {
        // v_i = sin((i+1)·0.7919), i = 0..10000; expected values computed
        // with an independent type-7 quantile implementation.
        let values: Vec<f64> = (0..10_000).map(|i| ((i as f64 + 1.0) * 0.7919).sin()).collect();
        let st = stats_from_values(&values, 0).unwrap();
        assert!((st.min - (-0.9999999292601488)).abs() < 1e-9);
        assert!((st.max - 0.99999999521504301).abs() < 1e-9);
        assert!((st.mean - 0.00022950701947849569).abs() < 1e-9);
        assert!((st.std - 0.70714675922873216).abs() < 1e-9);
        assert!((st.lower_quartile - (-0.70732351599757681)).abs() < 1e-9);
        assert!((st.upper_quartile - 0.70711676699135384).abs() < 1e-9);
    }

    #[test]
    fn stats_ordering_invariant() {
        let values: Vec<f64> = (0..500).map(|i| ((i as f64) * 1.37).sin()).collect();
        let st = stats_from_values(&values, 3).unwrap();
        assert!(st.min <= st.lower_quartile);
        assert!(st.lower_quartile <= st.upper_quartile);
        assert!(st.upper_quartile <= st.max);
        assert_eq!(st.n_undefined, 3);
    }

    #[test]
    fn stats_distinguish_empty_from_undefined() {
        let map = map_from([2, 1, 1], vec![f32::NAN, f32::NAN]);
        match acc_stats(&map, &vec![false, false]) {
            Err(FodError::EmptyMask) => {}
            other => panic!("expected EmptyMask, got {other:?}"),
        }
        match acc_stats(&map, &vec![true, true]) {
            Err(FodError::AllUndefined(2)) => {}
            other => panic!("expected AllUndefined(2), got {other:?}"),
        }
    }

    #[test]
    fn heatmap_extremes_and_roundtrip() {
        let dir = TempDir::new().unwrap();
        let n = 4 * 3 * 2;
        let mut values: Vec<f32> = (0..n).map(|i| (i as f32 / n as f32) * 2.0 - 1.0).collect();
        values[5] = f32::NAN;
        let map = map_from([4, 3, 2], values);

        // constant slices for extremes
        let ones = map_from([4, 3, 2], vec![1.0; n]);
        let paths = export_heatmap_slice(&ones, Axis::Z, 0, &dir.path().join("ones.pgm")).unwrap();
        let bytes = std::fs::read(&paths.image).unwrap();
        let header_end = bytes.len() - 12; // 4×3 pixels
        assert!(bytes[header_end..].iter().all(|&b| b == 255));

        let negs = map_from([4, 3, 2], vec![-1.0; n]);
        let paths = export_heatmap_slice(&negs, Axis::Z, 0, &dir.path().join("negs.pgm")).unwrap();
        let bytes = std::fs::read(&paths.image).unwrap();
        assert!(bytes[bytes.len() - 12..].iter().all(|&b| b == 0));

        // CSV roundtrip with an undefined cell
        let paths = export_heatmap_slice(&map, Axis::Z, 0, &dir.path().join("m.pgm")).unwrap();
        let parsed = read_slice_csv(&paths.csv).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[0].len(), 4);
        for row in 0..3 {
            for col in 0..4 {
                let i = col + 4 * row;
                let orig = map.values[i];
                let got = parsed[row][col];
                if orig.is_nan() {
                    assert!(got.is_nan());
                } else {
                    assert_eq!(orig.to_bits(), got.to_bits(), "cell ({row},{col})");
                }
            }
        }
        // mask sidecar marks the NaN
        let mask_bytes = std::fs::read(&paths.mask).unwrap();
        let px = &mask_bytes[mask_bytes.len() - 12..];
        assert_eq!(px.iter().filter(|&&b| b == 0).count(), 1);
    }

    #[test]
    fn heatmap_out_of_range_index_errors() {
        let map = map_from([4, 3, 2], vec![0.0; 24]);
        let dir = TempDir::new().unwrap();
        assert!(export_heatmap_slice(&map, Axis::Z, 2, &dir.path().join("x.pgm")).is_err());
        assert!(export_heatmap_slice(&map, Axis::X, 4, &dir.path().join("x.pgm")).is_err());
    }

    #[test]
    fn compare_methods_rows_and_schema() {
        let (vol, fr) = crate::phantom::gen_phantom([16, 16, 16], 1).unwrap();
        let mask = vec![true; fr.n_voxels()];
        let map = acc_volume(&vol, &vol, &mask).unwrap();
        let report = compare_methods(&[("self".into(), &map)], &fr, &standard_rules()).unwrap();
        assert_eq!(report.rows.len(), 3);
        let csv = report.to_csv();
        assert!(csv.starts_with("Method,Region,Min,Max,Mean,STD,LQ,UQ,N,Undefined\n"));
        // self-comparison: every defined voxel has ACC 1
        for row in &report.rows {
            assert!(row.stats.n_voxels > 0, "{} empty", row.region);
            assert!((row.stats.mean - 1.0).abs() < 1e-6);
        }
        let table = report.to_table();
        assert!(table.contains("Method") && table.contains("WM_CGM"));
    }

    #[test]
    fn compare_methods_rejects_geometry_mismatch() {
        let (vol, fr) = crate::phantom::gen_phantom([16, 16, 16], 1).unwrap();
        let mask = vec![true; fr.n_voxels()];
        let map = acc_volume(&vol, &vol, &mask).unwrap();
        let (_, fr_other) = crate::phantom::gen_phantom([12, 12, 12], 1).unwrap();
        assert!(compare_methods(&[("a".into(), &map)], &fr_other, &standard_rules()).is_err());
    }
}
