//! Parameter checkpoints: a plain-text shape header (one line per layer,
//! `in out activation`, terminated by a blank line) followed by the flat
//! little-endian f64 stream, per layer weights row-major then bias.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::mlp::{Activation, Layer, MlpParams};
use crate::{Error, Result};

pub fn save_params(params: &MlpParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in &params.layers {
        writeln!(w, "{} {} {}", l.in_dim, l.out_dim, l.activation.name())?;
    }
    writeln!(w)?;
    for l in &params.layers {
        for v in l.w.iter().chain(l.b.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<MlpParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut shapes: Vec<(usize, usize, Activation)> = Vec::new();
    loop {
        let mut line = String::new();
        let n = r.read_line(&mut line)?;
        if n == 0 {
            return Err(Error::Config(format!(
                "checkpoint {}: header not terminated by blank line",
                path.display()
            )));
        }
        let line = line.trim_end_matches(['\n', '\r']);
        if line.is_empty() {
            break;
        }
        let mut parts = line.split_whitespace();
        let (a, b, c) = (parts.next(), parts.next(), parts.next());
        match (a, b, c) {
            (Some(i), Some(o), Some(act)) => {
                let in_dim = i
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad header line `{line}`")))?;
                let out_dim = o
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad header line `{line}`")))?;
                shapes.push((in_dim, out_dim, Activation::parse(act)?));
            }
            _ => return Err(Error::Config(format!("bad header line `{line}`"))),
        }
    }
    if shapes.is_empty() {
        return Err(Error::Config(format!(
            "checkpoint {}: empty header",
            path.display()
        )));
    }
    for win in shapes.windows(2) {
        if win[0].1 != win[1].0 {
            return Err(Error::Shape {
                what: "checkpoint layer chain",
                expected: win[0].1,
                got: win[1].0,
            });
        }
    }

    let mut layers = Vec::with_capacity(shapes.len());
    let mut buf8 = [0u8; 8];
    for (in_dim, out_dim, activation) in shapes {
        let mut w = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            r.read_exact(&mut buf8)?;
            w.push(f64::from_le_bytes(buf8));
        }
        let mut b = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            r.read_exact(&mut buf8)?;
            b.push(f64::from_le_bytes(buf8));
        }
        if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::NumericHealth(format!(
                "checkpoint {} contains non-finite parameters",
                path.display()
            )));
        }
        layers.push(Layer {
            in_dim,
            out_dim,
            w,
            b,
            activation,
        });
    }
    Ok(MlpParams { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = MlpParams::new(&[5, 7, 3], Activation::Tanh, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        save_params(&p, &path).unwrap();
        let q = load_params(&path).unwrap();
        assert_eq!(p.flatten(), q.flatten());
        assert_eq!(q.layers.len(), 2);
        assert_eq!(q.layers[0].activation, Activation::Relu);
        assert_eq!(q.layers[1].activation, Activation::Tanh);
    }

    #[test]
    fn rejects_truncated_file() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MlpParams::new(&[3, 2], Activation::Linear, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        save_params(&p, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_params(&path).is_err());
    }
}
