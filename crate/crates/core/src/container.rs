//! Versioned binary container for port-major series and their masks.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then `count · 6K` little-endian `f64` values and, when present,
//! `count · 6K` mask bytes (1 = observed).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::Scenario;
use crate::encoding::{coord, EncodingError, Field, Mask, PortMajorSeries};

pub const MAGIC: &[u8; 8] = b"FAMASNAP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a snapshot container")]
    BadMagic,
    #[error("container format version {found} is newer than supported version {supported}")]
    NewerVersion { found: u32, supported: u32 },
    #[error("container payload is truncated")]
    Truncated,
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("series {index} has {got} ports, header says {expected}")]
    Ports {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("mask byte {0} is neither 0 nor 1")]
    MaskByte(u8),
    #[error("{0} masks for {1} series")]
    MaskCount(usize, usize),
    #[error(transparent)]
    Mask(#[from] EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerHeader {
    pub ports: usize,
    pub count: usize,
    pub seed: u64,
    pub config_hash: String,
    pub scenario: Option<Scenario>,
    pub has_masks: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: ContainerHeader,
    pub series: Vec<PortMajorSeries>,
    pub masks: Option<Vec<Mask>>,
}

impl Container {
    pub fn new(
        ports: usize,
        seed: u64,
        config_hash: String,
        scenario: Option<Scenario>,
        series: Vec<PortMajorSeries>,
        masks: Option<Vec<Mask>>,
    ) -> Result<Self, ContainerError> {
        for (index, s) in series.iter().enumerate() {
            if s.ports() != ports {
                return Err(ContainerError::Ports {
                    index,
                    expected: ports,
                    got: s.ports(),
                });
            }
        }
        if let Some(m) = &masks {
            if m.len() != series.len() {
                return Err(ContainerError::MaskCount(m.len(), series.len()));
            }
        }
        Ok(Container {
            header: ContainerHeader {
                ports,
                count: series.len(),
                seed,
                config_hash,
                scenario,
                has_masks: masks.is_some(),
            },
            series,
            masks,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ContainerError> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(self.series.len() * 6 * self.header.ports * 8);
        for s in &self.series {
            for v in s.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(masks) = &self.masks {
            for m in masks {
                buf.extend(m.flags().iter().map(|&f| f as u8));
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ContainerError> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let mut word = [0u8; 4];
        read_exact(&mut r, &mut word)?;
        let version = u32::from_le_bytes(word);
        if version > FORMAT_VERSION {
            return Err(ContainerError::NewerVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let mut len = [0u8; 8];
        read_exact(&mut r, &mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        read_exact(&mut r, &mut header)?;
        let header: ContainerHeader = serde_json::from_slice(&header)?;
        let d = 6 * header.ports;
        let mut series = Vec::with_capacity(header.count);
        let mut raw = vec![0u8; d * 8];
        for _ in 0..header.count {
            read_exact(&mut r, &mut raw)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            series.push(PortMajorSeries::from_flat(values).map_err(|_| ContainerError::Truncated)?);
        }
        let masks = if header.has_masks {
            let mut bytes = vec![0u8; d];
            let mut masks = Vec::with_capacity(header.count);
            for _ in 0..header.count {
                read_exact(&mut r, &mut bytes)?;
                let flags = bytes
                    .iter()
                    .map(|&b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        b => Err(ContainerError::MaskByte(b)),
                    })
                    .collect::<Result<Vec<bool>, _>>()?;
                masks.push(Mask::from_flags(header.ports, &flags)?);
            }
            Some(masks)
        } else {
            None
        };
        Ok(Container {
            header,
            series,
            masks,
        })
    }

    /// Long-format debug table: `snapshot,port,field,re,im`.
    pub fn to_csv(&self) -> String {
        let k = self.header.ports;
        let mut s = String::from("snapshot,port,field,re,im\n");
        for (n, x) in self.series.iter().enumerate() {
            for port in 0..k {
                for f in Field::ALL {
                    let v = x.values();
                    s.push_str(&format!(
                        "{n},{port},{},{},{}\n",
                        f.name(),
                        v[coord(k, 0, port, f)],
                        v[coord(k, 1, port, f)]
                    ));
                }
            }
        }
        s
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), ContainerError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ContainerError::Truncated,
        _ => ContainerError::Io(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn sample() -> Container {
        let c = |a: f64| Complex64::new(a, -a);
        let s = PortMajorSeries::from_fields(&[c(1.0), c(2.0)], &[c(3.0), c(4.0)], &[c(5.0), c(6.0)]);
        let m = Mask::from_ports(2, vec![1]).unwrap();
        Container::new(2, 7, "abc".into(), None, vec![s.clone(), s], Some(vec![m.clone(), m])).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Container::read_from(&c.to_bytes()[..]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn empty_container_round_trips() {
        let c = Container::new(3, 0, "h".into(), None, vec![], None).unwrap();
        let back = Container::read_from(&c.to_bytes()[..]).unwrap();
        assert_eq!(back.series.len(), 0);
        assert_eq!(back.header.ports, 3);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes();
        assert!(matches!(
            Container::read_from(&bytes[..bytes.len() - 1]),
            Err(ContainerError::Truncated)
        ));
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            Container::read_from(&bytes[..]),
            Err(ContainerError::NewerVersion { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(Container::read_from(&bytes[..]), Err(ContainerError::BadMagic)));
    }

    #[test]
    fn csv_lists_every_field() {
        let csv = sample().to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
        assert!(csv.contains("0,1,I,6,-6"));
    }
}
