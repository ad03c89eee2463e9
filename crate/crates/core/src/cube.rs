//! Space-time precipitation cubes: storage, file formats, preprocessing and
//! the intensity/occurrence split.

use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Calendar tag for one stored hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeStamp {
    /// Strictly increasing hour counter.
    pub hour: u64,
    /// Day index used by the temporal marginal model.
    pub day: u32,
    /// Month number 1-12.
    pub month: u8,
}

/// Hourly precipitation on a grid, time-major, NaN = missing value.
///
/// Immutable after construction; all operations return new cubes.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecipCube {
    geometry: GridGeometry,
    times: Vec<TimeStamp>,
    values: Vec<f64>,
    site_mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeFormat {
    ColumnarText,
    BinaryGrid,
}

impl PrecipCube {
    pub fn new(
        geometry: GridGeometry,
        times: Vec<TimeStamp>,
        values: Vec<f64>,
        site_mask: Vec<bool>,
    ) -> Result<Self> {
        let s = geometry.n_sites();
        if site_mask.len() != s {
            return Err(Error::InvalidInput(format!(
                "site mask length {} does not match {} sites",
                site_mask.len(),
                s
            )));
        }
        if values.len() != s * times.len() {
            return Err(Error::InvalidInput(format!(
                "value count {} does not match {} times x {} sites",
                values.len(),
                times.len(),
                s
            )));
        }
        for w in times.windows(2) {
            if w[1].hour <= w[0].hour {
                return Err(Error::InvalidInput(format!(
                    "time axis not strictly increasing at hour {}",
                    w[1].hour
                )));
            }
        }
        for (idx, &v) in values.iter().enumerate() {
            let site = idx % s;
            if site_mask[site] && !v.is_nan() && !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "value {} at time index {} site {} is negative or non-finite",
                    v,
                    idx / s,
                    site
                )));
            }
        }
        Ok(PrecipCube {
            geometry,
            times,
            values,
            site_mask,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn times(&self) -> &[TimeStamp] {
        &self.times
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_sites(&self) -> usize {
        self.geometry.n_sites()
    }

    pub fn site_mask(&self) -> &[bool] {
        &self.site_mask
    }

    pub fn raw_values(&self) -> &[f64] {
        &self.values
    }

    /// Raw stored value; NaN encodes missing.
    pub fn raw(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.n_sites() + s]
    }

    /// Value at (t, s) if the site is unmasked and the value present.
    pub fn value(&self, t: usize, s: usize) -> Option<f64> {
        if !self.site_mask[s] {
            return None;
        }
        let v = self.raw(t, s);
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    /// One time slice of raw values.
    pub fn field(&self, t: usize) -> &[f64] {
        let s = self.n_sites();
        &self.values[t * s..(t + 1) * s]
    }

    /// Keep only times whose month is listed (summer filtering is the usual case).
    pub fn retain_months(&self, months: &[u8]) -> PrecipCube {
        let s = self.n_sites();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (t, stamp) in self.times.iter().enumerate() {
            if months.contains(&stamp.month) {
                times.push(*stamp);
                values.extend_from_slice(self.field(t));
            }
        }
        let _ = s;
        PrecipCube {
            geometry: self.geometry.clone(),
            times,
            values,
            site_mask: self.site_mask.clone(),
        }
    }

    /// Zero-rounding plus radar exclusion masking; the input is untouched.
    ///
    /// Every value strictly below `zero_floor` becomes 0; every site strictly
    /// within `exclusion_radius` km of `exclusion_center` is masked.
    pub fn preprocess(
        &self,
        zero_floor: f64,
        exclusion_center: (f64, f64),
        exclusion_radius: f64,
    ) -> Result<PrecipCube> {
        if zero_floor < 0.0 {
            return Err(Error::InvalidParameter(
                "zero_floor must be nonnegative".into(),
            ));
        }
        if exclusion_radius < 0.0 {
            return Err(Error::InvalidParameter(
                "exclusion_radius must be nonnegative".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .map(|&v| if v < zero_floor { 0.0 } else { v })
            .collect();
        let site_mask = (0..self.n_sites())
            .map(|s| {
                let (x, y) = self.geometry.site_coords(s);
                let d = ((x - exclusion_center.0).powi(2) + (y - exclusion_center.1).powi(2))
                    .sqrt();
                self.site_mask[s] && d >= exclusion_radius
            })
            .collect();
        Ok(PrecipCube {
            geometry: self.geometry.clone(),
            times: self.times.clone(),
            values,
            site_mask,
        })
    }

    /// Split into intensity (zeros become missing) and occurrence ({0,1}).
    pub fn split_intensity_occurrence(&self) -> (PrecipCube, PrecipCube) {
        let intensity = self
            .values
            .iter()
            .map(|&v| if v == 0.0 { f64::NAN } else { v })
            .collect();
        let occurrence = self
            .values
            .iter()
            .map(|&v| {
                if v.is_nan() {
                    f64::NAN
                } else if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        (
            PrecipCube {
                geometry: self.geometry.clone(),
                times: self.times.clone(),
                values: intensity,
                site_mask: self.site_mask.clone(),
            },
            PrecipCube {
                geometry: self.geometry.clone(),
                times: self.times.clone(),
                values: occurrence,
                site_mask: self.site_mask.clone(),
            },
        )
    }

    /// Inverse of [`split_intensity_occurrence`]: X = X+ * I.
    pub fn recombine(intensity: &PrecipCube, occurrence: &PrecipCube) -> Result<PrecipCube> {
        if intensity.geometry != occurrence.geometry
            || intensity.times != occurrence.times
            || intensity.site_mask != occurrence.site_mask
        {
            return Err(Error::InvalidInput(
                "intensity and occurrence cubes do not align".into(),
            ));
        }
        let values = intensity
            .values
            .iter()
            .zip(&occurrence.values)
            .map(|(&x, &i)| {
                if i.is_nan() {
                    f64::NAN
                } else if i == 0.0 {
                    0.0
                } else {
                    x
                }
            })
            .collect();
        Ok(PrecipCube {
            geometry: intensity.geometry.clone(),
            times: intensity.times.clone(),
            values,
            site_mask: intensity.site_mask.clone(),
        })
    }

    /// Proportion of unmasked observations <= threshold, per time and threshold.
    ///
    /// `thresholds` must be sorted ascending. A time with no usable data
    /// reports `None` for every threshold.
    pub fn zero_proportion_table(&self, thresholds: &[f64]) -> Result<Vec<Vec<Option<f64>>>> {
        if thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter(
                "thresholds must be sorted ascending".into(),
            ));
        }
        let mut table = Vec::with_capacity(self.n_times());
        for t in 0..self.n_times() {
            let mut counts = vec![0usize; thresholds.len()];
            let mut total = 0usize;
            for s in 0..self.n_sites() {
                if let Some(v) = self.value(t, s) {
                    total += 1;
                    for (k, &tau) in thresholds.iter().enumerate() {
                        if v <= tau {
                            counts[k] += 1;
                        }
                    }
                }
            }
            if total == 0 {
                table.push(vec![None; thresholds.len()]);
            } else {
                table.push(
                    counts
                        .into_iter()
                        .map(|c| Some(c as f64 / total as f64))
                        .collect(),
                );
            }
        }
        Ok(table)
    }

    /// Pooled proportion of unmasked observations <= threshold over all times.
    pub fn pooled_proportion_below(&self, threshold: f64) -> Option<f64> {
        let mut count = 0usize;
        let mut total = 0usize;
        for t in 0..self.n_times() {
            for s in 0..self.n_sites() {
                if let Some(v) = self.value(t, s) {
                    total += 1;
                    if v <= threshold {
                        count += 1;
                    }
                }
            }
        }
        if total == 0 {
            None
        } else {
            Some(count as f64 / total as f64)
        }
    }

    pub fn write(&self, path: &Path, format: CubeFormat) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        match format {
            CubeFormat::ColumnarText => self.write_text(&mut w),
            CubeFormat::BinaryGrid => self.write_binary(&mut w),
        }
    }

    pub fn load(path: &Path, format: CubeFormat) -> Result<PrecipCube> {
        let file = std::fs::File::open(path)?;
        match format {
            CubeFormat::ColumnarText => Self::read_text(BufReader::new(file)),
            CubeFormat::BinaryGrid => Self::read_binary(BufReader::new(file)),
        }
    }

    fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "precipcube text 1")?;
        writeln!(w, "nx {}", self.geometry.nx)?;
        writeln!(w, "ny {}", self.geometry.ny)?;
        writeln!(w, "cell_size {}", self.geometry.cell_size)?;
        writeln!(w, "origin {} {}", self.geometry.origin.0, self.geometry.origin.1)?;
        let mask: Vec<&str> = self
            .site_mask
            .iter()
            .map(|&m| if m { "1" } else { "0" })
            .collect();
        writeln!(w, "mask {}", mask.join(" "))?;
        writeln!(w, "ntimes {}", self.n_times())?;
        for ts in &self.times {
            writeln!(w, "time {} {} {}", ts.hour, ts.day, ts.month)?;
        }
        writeln!(w, "values")?;
        let s = self.n_sites();
        for t in 0..self.n_times() {
            for site in 0..s {
                let v = self.raw(t, site);
                if v.is_nan() {
                    writeln!(w, "{t} {site} NA")?;
                } else {
                    writeln!(w, "{t} {site} {v}")?;
                }
            }
        }
        Ok(())
    }

    fn read_text<R: BufRead>(r: R) -> Result<PrecipCube> {
        let mut lines = r.lines().enumerate();
        let mut next_line = || -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                }),
                None => Err(Error::Parse {
                    line: 0,
                    message: "unexpected end of file".into(),
                }),
            }
        };
        let parse_err = |line: usize, message: &str| Error::Parse {
            line,
            message: message.into(),
        };

        let (l, header) = next_line()?;
        if header.trim() != "precipcube text 1" {
            return Err(parse_err(l, "missing 'precipcube text 1' header"));
        }
        let mut field = |key: &str| -> Result<(usize, Vec<String>)> {
            let (l, line) = next_line()?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(parse_err(l, &format!("expected '{key}' line")));
            }
            Ok((l, parts.map(|s| s.to_string()).collect()))
        };

        let (l, nx) = field("nx")?;
        let nx: usize = nx
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(l, "bad nx"))?;
        let (l, ny) = field("ny")?;
        let ny: usize = ny
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(l, "bad ny"))?;
        let (l, cs) = field("cell_size")?;
        let cell_size: f64 = cs
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(l, "bad cell_size"))?;
        let (l, or) = field("origin")?;
        if or.len() != 2 {
            return Err(parse_err(l, "origin needs two coordinates"));
        }
        let origin = (
            or[0].parse().map_err(|_| parse_err(l, "bad origin x"))?,
            or[1].parse().map_err(|_| parse_err(l, "bad origin y"))?,
        );
        let geometry = GridGeometry::new(nx, ny, cell_size, origin)
            .map_err(|e| parse_err(l, &e.to_string()))?;
        let n_sites = geometry.n_sites();

        let (l, mask_tokens) = field("mask")?;
        if mask_tokens.len() != n_sites {
            return Err(parse_err(
                l,
                &format!("mask has {} entries, expected {}", mask_tokens.len(), n_sites),
            ));
        }
        let site_mask: Vec<bool> = mask_tokens.iter().map(|t| t == "1").collect();

        let (l, nt) = field("ntimes")?;
        let ntimes: usize = nt
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(l, "bad ntimes"))?;
        let mut times = Vec::with_capacity(ntimes);
        for _ in 0..ntimes {
            let (l, tok) = field("time")?;
            if tok.len() != 3 {
                return Err(parse_err(l, "time line needs hour day month"));
            }
            times.push(TimeStamp {
                hour: tok[0].parse().map_err(|_| parse_err(l, "bad hour"))?,
                day: tok[1].parse().map_err(|_| parse_err(l, "bad day"))?,
                month: tok[2].parse().map_err(|_| parse_err(l, "bad month"))?,
            });
        }
        let (l, rest) = field("values")?;
        if !rest.is_empty() {
            return Err(parse_err(l, "'values' line takes no arguments"));
        }

        let mut values = vec![f64::NAN; ntimes * n_sites];
        let mut filled = vec![false; ntimes * n_sites];
        for _ in 0..ntimes * n_sites {
            let (l, line) = next_line()?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(parse_err(l, "value record needs 'time site value'"));
            }
            let t: usize = parts[0].parse().map_err(|_| parse_err(l, "bad time index"))?;
            let s: usize = parts[1].parse().map_err(|_| parse_err(l, "bad site index"))?;
            if t >= ntimes || s >= n_sites {
                return Err(parse_err(l, "record indices out of range"));
            }
            let v = if parts[2] == "NA" {
                f64::NAN
            } else {
                let v: f64 = parts[2].parse().map_err(|_| parse_err(l, "bad value"))?;
                if site_mask[s] && v < 0.0 {
                    return Err(parse_err(
                        l,
                        &format!("negative value {v} at time {t} site {s}"),
                    ));
                }
                v
            };
            values[t * n_sites + s] = v;
            filled[t * n_sites + s] = true;
        }
        if !filled.iter().all(|&f| f) {
            return Err(parse_err(0, "duplicate records left some cells unset"));
        }
        PrecipCube::new(geometry, times, values, site_mask)
    }

    fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"PCUBE1\n")?;
        w.write_all(&(self.geometry.nx as u64).to_le_bytes())?;
        w.write_all(&(self.geometry.ny as u64).to_le_bytes())?;
        w.write_all(&self.geometry.cell_size.to_le_bytes())?;
        w.write_all(&self.geometry.origin.0.to_le_bytes())?;
        w.write_all(&self.geometry.origin.1.to_le_bytes())?;
        for &m in &self.site_mask {
            w.write_all(&[u8::from(m)])?;
        }
        w.write_all(&(self.n_times() as u64).to_le_bytes())?;
        for ts in &self.times {
            w.write_all(&ts.hour.to_le_bytes())?;
            w.write_all(&u64::from(ts.day).to_le_bytes())?;
            w.write_all(&u64::from(ts.month).to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn read_binary<R: Read>(mut r: R) -> Result<PrecipCube> {
        let bad = |message: &str| Error::Parse {
            line: 0,
            message: message.into(),
        };
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != b"PCUBE1\n" {
            return Err(bad("bad magic; not a binary cube"));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let nx = read_u64(&mut r)? as usize;
        let ny = read_u64(&mut r)? as usize;
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let cell_size = read_f64(&mut r)?;
        let ox = read_f64(&mut r)?;
        let oy = read_f64(&mut r)?;
        let geometry = GridGeometry::new(nx, ny, cell_size, (ox, oy))
            .map_err(|e| bad(&e.to_string()))?;
        let n_sites = geometry.n_sites();
        let mut mask_bytes = vec![0u8; n_sites];
        r.read_exact(&mut mask_bytes)?;
        let site_mask: Vec<bool> = mask_bytes.iter().map(|&b| b != 0).collect();
        let mut u64buf2 = [0u8; 8];
        r.read_exact(&mut u64buf2)?;
        let ntimes = u64::from_le_bytes(u64buf2) as usize;
        let mut times = Vec::with_capacity(ntimes);
        for _ in 0..ntimes {
            let mut b = [0u8; 24];
            r.read_exact(&mut b)?;
            times.push(TimeStamp {
                hour: u64::from_le_bytes(b[0..8].try_into().unwrap()),
                day: u64::from_le_bytes(b[8..16].try_into().unwrap()) as u32,
                month: u64::from_le_bytes(b[16..24].try_into().unwrap()) as u8,
            });
        }
        let mut values = vec![0.0f64; ntimes * n_sites];
        let mut buf = vec![0u8; ntimes * n_sites * 8];
        r.read_exact(&mut buf)?;
        for (i, chunk) in buf.chunks_exact(8).enumerate() {
            values[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        for (idx, &v) in values.iter().enumerate() {
            let site = idx % n_sites;
            if site_mask[site] && !v.is_nan() && v < 0.0 {
                return Err(bad(&format!(
                    "negative value {} at time {} site {}",
                    v,
                    idx / n_sites,
                    site
                )));
            }
        }
        PrecipCube::new(geometry, times, values, site_mask)
    }
}

/// Convenience constructor for evenly spaced hourly stamps.
pub fn hourly_times(n: usize, start_month: u8) -> Vec<TimeStamp> {
    (0..n)
        .map(|h| TimeStamp {
            hour: h as u64,
            day: (h / 24) as u32,
            month: start_month,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_cube() -> PrecipCube {
        let g = GridGeometry::new(2, 2, 1.0, (0.0, 0.0)).unwrap();
        let times = hourly_times(3, 6);
        let values = vec![1.0; 12];
        PrecipCube::new(g, times, values, vec![true; 4]).unwrap()
    }

    #[test]
    fn identity_round_trip_counts_unmasked() {
        let cube = small_cube();
        let mut count = 0;
        for t in 0..3 {
            for s in 0..4 {
                if cube.value(t, s).is_some() {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 12);
    }

    #[test]
    fn negative_value_rejected_with_location() {
        let g = GridGeometry::new(2, 2, 1.0, (0.0, 0.0)).unwrap();
        let times = hourly_times(1, 6);
        let mut values = vec![1.0; 4];
        values[2] = -0.1;
        let err = PrecipCube::new(g, times, values, vec![true; 4]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("site 2"), "message: {msg}");
    }

    #[test]
    fn text_round_trip_bit_identical() {
        let g = GridGeometry::new(3, 2, 0.5, (1.25, -2.5)).unwrap();
        let times = hourly_times(2, 7);
        let mut values: Vec<f64> = (0..12).map(|i| 0.1 * i as f64 + 0.01).collect();
        values[5] = f64::NAN;
        let mask = vec![true, true, false, true, true, true];
        let cube = PrecipCube::new(g, times, values, mask).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("cube.txt");
        cube.write(&path, CubeFormat::ColumnarText).unwrap();
        let back = PrecipCube::load(&path, CubeFormat::ColumnarText).unwrap();
        assert_eq!(cube.n_times(), back.n_times());
        for (a, b) in cube.raw_values().iter().zip(back.raw_values()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn binary_round_trip_bit_identical() {
        let g = GridGeometry::new(2, 2, 1.0, (0.0, 0.0)).unwrap();
        let times = hourly_times(3, 8);
        let mut values: Vec<f64> = (0..12).map(|i| (i as f64).exp() * 1e-3).collect();
        values[7] = f64::NAN;
        let cube = PrecipCube::new(g, times, values, vec![true; 4]).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("cube.bin");
        cube.write(&path, CubeFormat::BinaryGrid).unwrap();
        let back = PrecipCube::load(&path, CubeFormat::BinaryGrid).unwrap();
        for (a, b) in cube.raw_values().iter().zip(back.raw_values()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
        assert_eq!(cube.times(), back.times());
    }

    #[test]
    fn load_rejects_negative_record() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        let text = "precipcube text 1\nnx 1\nny 1\ncell_size 1\norigin 0 0\nmask 1\nntimes 1\ntime 0 0 6\nvalues\n0 0 -0.1\n";
        std::fs::write(&path, text).unwrap();
        let err = PrecipCube::load(&path, CubeFormat::ColumnarText).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 10") && msg.contains("-0.1"), "msg {msg}");
    }

    #[test]
    fn load_rejects_non_monotone_times() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad2.txt");
        let text = "precipcube text 1\nnx 1\nny 1\ncell_size 1\norigin 0 0\nmask 1\nntimes 2\ntime 3 0 6\ntime 3 0 6\nvalues\n0 0 1\n1 0 1\n";
        std::fs::write(&path, text).unwrap();
        assert!(PrecipCube::load(&path, CubeFormat::ColumnarText).is_err());
    }

    #[test]
    fn preprocess_zero_floor_strictly_less_than() {
        let g = GridGeometry::new(2, 1, 1.0, (0.0, 0.0)).unwrap();
        let times = hourly_times(1, 6);
        let cube = PrecipCube::new(g, times, vec![0.09, 0.1], vec![true; 2]).unwrap();
        let out = cube.preprocess(0.1, (1000.0, 1000.0), 0.0).unwrap();
        assert_eq!(out.raw(0, 0), 0.0);
        assert_eq!(out.raw(0, 1), 0.1);
        // original untouched
        assert_eq!(cube.raw(0, 0), 0.09);
    }

    #[test]
    fn preprocess_masks_by_distance() {
        // Sites at x = 0.5, 1.5, ..., 9.5; center at 0.5 -> distances 0..9.
        let g = GridGeometry::new(10, 1, 1.0, (0.0, 0.0)).unwrap();
        let times = hourly_times(1, 6);
        let cube = PrecipCube::new(g, times, vec![1.0; 10], vec![true; 10]).unwrap();
        let out = cube.preprocess(0.0, (0.6, 0.5), 5.0).unwrap();
        // distance from center x=0.6: site 5 center 5.5 -> 4.9 (masked), site 6 center 6.5 -> 5.9 (kept)
        assert!(!out.site_mask()[5]);
        assert!(out.site_mask()[6]);
    }

    #[test]
    fn preprocess_is_idempotent() {
        let g = GridGeometry::new(3, 3, 1.0, (0.0, 0.0)).unwrap();
        let times = hourly_times(2, 6);
        let values: Vec<f64> = (0..18).map(|i| 0.03 * i as f64).collect();
        let cube = PrecipCube::new(g, times, values, vec![true; 9]).unwrap();
        let once = cube.preprocess(0.1, (1.5, 1.5), 1.2).unwrap();
        let twice = once.preprocess(0.1, (1.5, 1.5), 1.2).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn split_and_recombine_identity() {
        let g = GridGeometry::new(3, 1, 1.0, (0.0, 0.0)).unwrap();
        let times = hourly_times(1, 6);
        let cube = PrecipCube::new(g, times, vec![0.0, 0.5, 2.0], vec![true; 3]).unwrap();
        let (intensity, occurrence) = cube.split_intensity_occurrence();
        assert!(intensity.raw(0, 0).is_nan());
        assert_eq!(occurrence.raw(0, 0), 0.0);
        assert_eq!(occurrence.raw(0, 1), 1.0);
        assert_eq!(intensity.raw(0, 2), 2.0);
        let back = PrecipCube::recombine(&intensity, &occurrence).unwrap();
        assert_eq!(back, cube);
    }

    #[test]
    fn split_all_zero_cube() {
        let g = GridGeometry::new(2, 1, 1.0, (0.0, 0.0)).unwrap();
        let cube =
            PrecipCube::new(g, hourly_times(1, 6), vec![0.0, 0.0], vec![true; 2]).unwrap();
        let (intensity, occurrence) = cube.split_intensity_occurrence();
        assert!(occurrence.raw_values().iter().all(|&v| v == 0.0));
        assert!(intensity.raw_values().iter().all(|v| v.is_nan()));
    }

    #[test]
    fn zero_proportion_basics() {
        let g = GridGeometry::new(4, 1, 1.0, (0.0, 0.0)).unwrap();
        let cube = PrecipCube::new(
            g,
            hourly_times(1, 6),
            vec![0.0, 0.0, 1.0, 2.0],
            vec![true; 4],
        )
        .unwrap();
        let table = cube.zero_proportion_table(&[0.0]).unwrap();
        assert_eq!(table[0][0], Some(0.5));
    }

    #[test]
    fn zero_proportion_monotone_in_threshold() {
        let g = GridGeometry::new(5, 1, 1.0, (0.0, 0.0)).unwrap();
        let cube = PrecipCube::new(
            g,
            hourly_times(2, 6),
            vec![0.0, 0.05, 0.5, 1.5, 3.0, 0.0, 0.0, 0.09, 2.0, 5.0],
            vec![true; 5],
        )
        .unwrap();
        let table = cube.zero_proportion_table(&[0.0, 0.1, 1.0]).unwrap();
        for row in &table {
            for w in row.windows(2) {
                let (a, b) = (w[0].unwrap(), w[1].unwrap());
                assert!(b >= a);
                assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
            }
        }
    }

    #[test]
    fn empty_time_reports_missing() {
        let g = GridGeometry::new(1, 1, 1.0, (0.0, 0.0)).unwrap();
        let cube =
            PrecipCube::new(g, hourly_times(1, 6), vec![f64::NAN], vec![true; 1]).unwrap();
        let table = cube.zero_proportion_table(&[0.0]).unwrap();
        assert_eq!(table[0][0], None);
    }

    #[test]
    fn retain_months_filters_time_axis() {
        let g = GridGeometry::new(1, 1, 1.0, (0.0, 0.0)).unwrap();
        let times = vec![
            TimeStamp { hour: 0, day: 0, month: 5 },
            TimeStamp { hour: 1, day: 0, month: 6 },
            TimeStamp { hour: 2, day: 0, month: 9 },
        ];
        let cube = PrecipCube::new(g, times, vec![0.1, 0.2, 0.3], vec![true]).unwrap();
        let summer = cube.retain_months(&[6, 7, 8]);
        assert_eq!(summer.n_times(), 1);
        assert_eq!(summer.raw(0, 0), 0.2);
    }
}
