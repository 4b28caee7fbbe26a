//! Binary pixel masks with run-length string serialization.
//!
//! Serialized form: `"{size}:{c0},{c1},…"` where counts alternate runs of
//! unset and set pixels over the row-major flattening, starting with unset.

use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub size: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> bool) -> Mask {
        let mut bits = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                bits.push(f(x, y));
            }
        }
        Mask { size, bits }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.size + x]
    }

    /// Whether the pixel containing the normalized point is set. Points on
    /// the far edge fall into the last pixel.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return false;
        }
        let px = ((x * self.size as f64).floor() as usize).min(self.size - 1);
        let py = ((y * self.size as f64).floor() as usize).min(self.size - 1);
        self.get(px, py)
    }

    /// A normalized point guaranteed to lie inside the mask: the centroid of
    /// set pixel centers if it lands on a set pixel, otherwise the set pixel
    /// center nearest the centroid.
    pub fn representative_point(&self) -> Option<(f64, f64)> {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut n = 0usize;
        for y in 0..self.size {
            for x in 0..self.size {
                if self.get(x, y) {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return None;
        }
        let cx = sx / n as f64;
        let cy = sy / n as f64;
        let norm = |v: f64| v / self.size as f64;
        if self.contains_point(norm(cx), norm(cy)) {
            return Some((norm(cx), norm(cy)));
        }
        let mut best = None::<(f64, f64, f64)>;
        for y in 0..self.size {
            for x in 0..self.size {
                if self.get(x, y) {
                    let px = x as f64 + 0.5;
                    let py = y as f64 + 0.5;
                    let d = (px - cx).powi(2) + (py - cy).powi(2);
                    if best.map_or(true, |(bd, _, _)| d < bd) {
                        best = Some((d, px, py));
                    }
                }
            }
        }
        best.map(|(_, px, py)| (norm(px), norm(py)))
    }

    pub fn to_rle(&self) -> String {
        let mut counts: Vec<usize> = Vec::new();
        let mut current = false;
        let mut run = 0usize;
        for &b in &self.bits {
            if b == current {
                run += 1;
            } else {
                counts.push(run);
                current = b;
                run = 1;
            }
        }
        counts.push(run);
        let joined: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
        format!("{}:{}", self.size, joined.join(","))
    }

    pub fn from_rle(s: &str) -> Result<Mask, String> {
        let (size_s, counts_s) = s.split_once(':').ok_or("missing size prefix")?;
        let size: usize = size_s.parse().map_err(|_| "bad size")?;
        let mut bits = Vec::with_capacity(size * size);
        let mut current = false;
        for c in counts_s.split(',') {
            let run: usize = c.parse().map_err(|_| format!("bad count {c}"))?;
            bits.extend(std::iter::repeat(current).take(run));
            current = !current;
        }
        if bits.len() != size * size {
            return Err(format!(
                "rle covers {} pixels, expected {}",
                bits.len(),
                size * size
            ));
        }
        Ok(Mask { size, bits })
    }
}

impl Serialize for Mask {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_rle())
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Mask, D::Error> {
        let s = String::deserialize(d)?;
        Mask::from_rle(&s).map_err(DeError::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_round_trip() {
        let m = Mask::from_fn(8, |x, y| (x + y) % 3 == 0);
        let back = Mask::from_rle(&m.to_rle()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn representative_point_lands_inside() {
        // A ring: the centroid falls in the hole, so the fallback kicks in.
        let m = Mask::from_fn(16, |x, y| {
            let dx = x as f64 - 7.5;
            let dy = y as f64 - 7.5;
            let d = (dx * dx + dy * dy).sqrt();
            (5.0..7.0).contains(&d)
        });
        let (x, y) = m.representative_point().unwrap();
        assert!(m.contains_point(x, y));
    }

    #[test]
    fn contains_point_uses_pixel_floor() {
        let m = Mask::from_fn(4, |x, y| x == 2 && y == 1);
        assert!(m.contains_point(0.6, 0.3));
        assert!(!m.contains_point(0.4, 0.3));
        assert!(!m.contains_point(1.2, 0.3));
    }

    #[test]
    fn edge_point_clamps_to_last_pixel() {
        let m = Mask::from_fn(4, |x, y| x == 3 && y == 3);
        assert!(m.contains_point(1.0, 1.0));
    }
}
