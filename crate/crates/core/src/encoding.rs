//! Port-major real encoding of snapshots, coordinate bookkeeping and
//! observation masks.
//!
//! A snapshot over `K` ports becomes a `2 × T` real array with `T = 3K`:
//! row 0 holds real parts, row 1 imaginary parts, and time step `t = 3k + f`
//! carries field `f ∈ {r, h, I}` of port `k`. The array is flattened as
//! `i = d·T + t`, giving `D = 6K` coordinates.

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::Snapshot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("series length {0} is not a multiple of 6 (2 rows × 3 fields)")]
    BadLength(usize),
    #[error("mask range [{min}, {max}] invalid for {ports} ports")]
    BadRange { min: usize, max: usize, ports: usize },
    #[error("port {port} out of range for {ports} ports")]
    PortOutOfRange { port: usize, ports: usize },
    #[error("coordinate flags do not describe observed (r, h) port pairs")]
    NotPortMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    R,
    H,
    I,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::R, Field::H, Field::I];

    pub fn index(self) -> usize {
        match self {
            Field::R => 0,
            Field::H => 1,
            Field::I => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::R => "r",
            Field::H => "h",
            Field::I => "I",
        }
    }
}

/// Flat coordinate of `(row, port, field)`.
pub fn coord(ports: usize, row: usize, port: usize, field: Field) -> usize {
    row * 3 * ports + 3 * port + field.index()
}

/// Inverse of [`coord`]: `(row, port, field)`.
pub fn coord_parts(ports: usize, i: usize) -> (usize, usize, Field) {
    let t_len = 3 * ports;
    let (row, t) = (i / t_len, i % t_len);
    (row, t / 3, Field::ALL[t % 3])
}

/// Real-valued port-major series, flattened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortMajorSeries {
    ports: usize,
    values: Vec<f64>,
}

impl PortMajorSeries {
    pub fn zeros(ports: usize) -> Self {
        PortMajorSeries {
            ports,
            values: vec![0.0; 6 * ports],
        }
    }

    pub fn from_flat(values: Vec<f64>) -> Result<Self, EncodingError> {
        if !values.len().is_multiple_of(6) {
            return Err(EncodingError::BadLength(values.len()));
        }
        Ok(PortMajorSeries {
            ports: values.len() / 6,
            values,
        })
    }

    pub fn from_fields(r: &[Complex64], h: &[Complex64], interference: &[Complex64]) -> Self {
        let k = h.len();
        let mut s = Self::zeros(k);
        for p in 0..k {
            for (f, v) in [(Field::R, r[p]), (Field::H, h[p]), (Field::I, interference[p])] {
                s.set(p, f, v);
            }
        }
        s
    }

    pub fn encode(snapshot: &Snapshot) -> Self {
        Self::from_fields(&snapshot.r, &snapshot.h, &snapshot.interference)
    }

    pub fn ports(&self) -> usize {
        self.ports
    }

    pub fn steps(&self) -> usize {
        3 * self.ports
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Entry of the `2 × T` view.
    pub fn at(&self, row: usize, t: usize) -> f64 {
        self.values[row * self.steps() + t]
    }

    pub fn get(&self, port: usize, field: Field) -> Complex64 {
        Complex64::new(
            self.values[coord(self.ports, 0, port, field)],
            self.values[coord(self.ports, 1, port, field)],
        )
    }

    pub fn set(&mut self, port: usize, field: Field, v: Complex64) {
        let k = self.ports;
        self.values[coord(k, 0, port, field)] = v.re;
        self.values[coord(k, 1, port, field)] = v.im;
    }

    pub fn field(&self, field: Field) -> Vec<Complex64> {
        (0..self.ports).map(|p| self.get(p, field)).collect()
    }

    /// `(r, h, I)`.
    pub fn decode(&self) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
        (self.field(Field::R), self.field(Field::H), self.field(Field::I))
    }
}

/// Per-coordinate tags used to build embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordLayout {
    pub n_series: usize,
    pub n_steps: usize,
    pub n_kinds: usize,
    pub series: Vec<usize>,
    pub step: Vec<usize>,
    pub kind: Vec<usize>,
    /// Scalar position in `[0, 1]` per coordinate.
    pub position: Vec<f64>,
    /// Kinds that are never observed (interference for port-major data).
    pub hidden_kinds: Vec<usize>,
}

impl CoordLayout {
    /// Layout of the port-major process over `ports` ports.
    pub fn port_major(ports: usize) -> Self {
        let d = 6 * ports;
        let mut l = CoordLayout {
            n_series: 2,
            n_steps: 3 * ports,
            n_kinds: 3,
            series: Vec::with_capacity(d),
            step: Vec::with_capacity(d),
            kind: Vec::with_capacity(d),
            position: Vec::with_capacity(d),
            hidden_kinds: vec![Field::I.index()],
        };
        let denom = ports.saturating_sub(1).max(1) as f64;
        for i in 0..d {
            let (row, port, field) = coord_parts(ports, i);
            l.series.push(row);
            l.step.push(3 * port + field.index());
            l.kind.push(field.index());
            l.position.push(port as f64 / denom);
        }
        l
    }

    /// One series, one kind, `n` steps.
    pub fn plain(n: usize) -> Self {
        let denom = n.saturating_sub(1).max(1) as f64;
        CoordLayout {
            n_series: 1,
            n_steps: n,
            n_kinds: 1,
            series: vec![0; n],
            step: (0..n).collect(),
            kind: vec![0; n],
            position: (0..n).map(|i| i as f64 / denom).collect(),
            hidden_kinds: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Random,
    EquallySpaced,
}

/// Observation mask: the `(r, h)` pair is seen at each observed port and
/// interference is never seen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    ports: usize,
    observed_ports: Vec<usize>,
    #[serde(skip)]
    observed: Vec<bool>,
}

impl Mask {
    pub fn from_ports(ports: usize, mut observed_ports: Vec<usize>) -> Result<Self, EncodingError> {
        observed_ports.sort_unstable();
        observed_ports.dedup();
        if let Some(&p) = observed_ports.iter().find(|&&p| p >= ports) {
            return Err(EncodingError::PortOutOfRange { port: p, ports });
        }
        let mut observed = vec![false; 6 * ports];
        for &p in &observed_ports {
            for row in 0..2 {
                observed[coord(ports, row, p, Field::R)] = true;
                observed[coord(ports, row, p, Field::H)] = true;
            }
        }
        Ok(Mask {
            ports,
            observed_ports,
            observed,
        })
    }

    /// Port mask whose coordinate flags equal `flags`.
    pub fn from_flags(ports: usize, flags: &[bool]) -> Result<Self, EncodingError> {
        if flags.len() != 6 * ports {
            return Err(EncodingError::NotPortMask);
        }
        let observed = (0..ports).filter(|&k| flags[coord(ports, 0, k, Field::R)]).collect();
        let m = Mask::from_ports(ports, observed)?;
        if m.observed != flags {
            return Err(EncodingError::NotPortMask);
        }
        Ok(m)
    }

    /// Generic mask over arbitrary coordinates (used by toy layouts).
    pub fn from_coords(observed: Vec<bool>) -> Self {
        Mask {
            ports: 0,
            observed_ports: Vec::new(),
            observed,
        }
    }

    pub fn ports(&self) -> usize {
        self.ports
    }

    pub fn observed_ports(&self) -> &[usize] {
        &self.observed_ports
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.observed[i]
    }

    pub fn flags(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.observed.len()).filter(|&i| self.observed[i]).collect()
    }

    pub fn missing_indices(&self) -> Vec<usize> {
        (0..self.observed.len()).filter(|&i| !self.observed[i]).collect()
    }

    /// Rebuild the coordinate flags after deserializing.
    pub fn restore(self) -> Result<Self, EncodingError> {
        Mask::from_ports(self.ports, self.observed_ports)
    }
}

/// `{round((m − ½)K/M)}` for `m = 1..M`, as 0-based port indices.
pub fn equally_spaced_ports(ports: usize, count: usize) -> Vec<usize> {
    let step = ports as f64 / count as f64;
    (1..=count)
        .map(|m| ((m as f64 - 0.5) * step).round() as usize - 1)
        .collect()
}

/// Observed-port count range used for training masks.
pub fn training_mask_range(ports: usize) -> (usize, usize) {
    let lo = ports.div_ceil(20).max(1);
    let hi = (3 * ports).div_ceil(10).clamp(lo, ports);
    (lo, hi)
}

pub fn sample_mask<R: Rng + ?Sized>(
    ports: usize,
    min: usize,
    max: usize,
    placement: Placement,
    rng: &mut R,
) -> Result<Mask, EncodingError> {
    if min < 1 || min > max || max > ports {
        return Err(EncodingError::BadRange { min, max, ports });
    }
    let m = rng.random_range(min..=max);
    let chosen = match placement {
        Placement::Random => index::sample(rng, ports, m).into_vec(),
        Placement::EquallySpaced => equally_spaced_ports(ports, m),
    };
    Mask::from_ports(ports, chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn single_port_placement() {
        let c = |a, b| Complex64::new(a, b);
        let s = PortMajorSeries::from_fields(&[c(1.0, 2.0)], &[c(3.0, 4.0)], &[c(5.0, 6.0)]);
        assert_eq!(s.values(), &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        assert_eq!(s.at(1, 2), 6.0);
    }

    #[test]
    fn sizes() {
        let s = PortMajorSeries::zeros(200);
        assert_eq!(s.steps(), 600);
        assert_eq!(s.values().len(), 1200);
        assert!(PortMajorSeries::from_flat(vec![0.0; 8]).is_err());
        let (r, h, i) = PortMajorSeries::from_flat(vec![0.0; 12]).unwrap().decode();
        assert!(r.iter().chain(&h).chain(&i).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn perturbation_is_local() {
        let mut s = PortMajorSeries::zeros(4);
        s.values_mut()[coord(4, 0, 2, Field::I)] = 1.0;
        let (r, h, i) = s.decode();
        assert!(r.iter().chain(&h).all(|v| v.norm() == 0.0));
        for (p, v) in i.iter().enumerate() {
            assert_eq!(*v, Complex64::new(if p == 2 { 1.0 } else { 0.0 }, 0.0));
        }
    }

    #[test]
    fn coord_round_trip_and_partition() {
        let k = 7;
        let layout = CoordLayout::port_major(k);
        let mut per_kind = [0; 3];
        for i in 0..6 * k {
            let (row, port, f) = coord_parts(k, i);
            assert_eq!(coord(k, row, port, f), i);
            if row == 0 {
                per_kind[layout.kind[i]] += 1;
            }
        }
        assert_eq!(per_kind, [k, k, k]);
    }

    #[test]
    fn full_mask_never_reveals_interference() {
        let m = sample_mask(10, 10, 10, Placement::Random, &mut substream(0, "m", 0)).unwrap();
        assert_eq!(m.observed_indices().len(), 40);
        for i in m.observed_indices() {
            assert_ne!(coord_parts(10, i).2, Field::I);
        }
    }

    #[test]
    fn equally_spaced_is_arithmetic() {
        let p = equally_spaced_ports(200, 25);
        assert_eq!(p.len(), 25);
        let d = p[1] - p[0];
        assert!(p.windows(2).all(|w| w[1] - w[0] == d));
        assert!(p[0] < d && 199 - p[24] < d);
    }

    #[test]
    fn seeded_random_mask_repeats() {
        let a = sample_mask(50, 3, 15, Placement::Random, &mut substream(1, "m", 2)).unwrap();
        let b = sample_mask(50, 3, 15, Placement::Random, &mut substream(1, "m", 2)).unwrap();
        assert_eq!(a, b);
        assert!(sample_mask(5, 0, 3, Placement::Random, &mut substream(1, "m", 2)).is_err());
        assert!(sample_mask(5, 4, 6, Placement::Random, &mut substream(1, "m", 2)).is_err());
    }

    #[test]
    fn training_range_scales_with_ports() {
        assert_eq!(training_mask_range(200), (10, 60));
        assert_eq!(training_mask_range(32), (2, 10));
        assert_eq!(training_mask_range(2), (1, 1));
    }

    #[test]
    fn mask_json_round_trip() {
        let m = Mask::from_ports(8, vec![5, 1]).unwrap();
        let j = serde_json::to_string(&m).unwrap();
        assert_eq!(j, r#"{"ports":8,"observed_ports":[1,5]}"#);
        let back: Mask = serde_json::from_str(&j).unwrap();
        assert_eq!(back.restore().unwrap(), m);
    }
}
