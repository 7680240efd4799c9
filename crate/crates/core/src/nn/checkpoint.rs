//! Parameter checkpoints.
//!
//! Layout: one ASCII manifest line `natspace-params <shape>;<shape>;...\n`
//! where each shape is its extents joined by `x`, followed by every value as
//! a little-endian `f64` in tensor order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::network::Parameters;
use crate::error::{Error, Result};
use crate::tensor::TensorBuffer;

const MAGIC: &str = "natspace-params";

pub fn write_parameters<W: Write>(params: &Parameters, mut out: W) -> Result<()> {
    let manifest: Vec<String> = params
        .shapes()
        .iter()
        .map(|s| s.iter().map(usize::to_string).collect::<Vec<_>>().join("x"))
        .collect();
    writeln!(out, "{MAGIC} {}", manifest.join(";"))?;
    for t in params.tensors() {
        for v in t.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_parameters<R: Read>(input: R) -> Result<Parameters> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let body = line
        .strip_suffix('\n')
        .and_then(|l| l.strip_prefix(MAGIC))
        .and_then(|l| l.strip_prefix(' '))
        .ok_or_else(|| Error::config("checkpoint manifest line missing"))?;
    let mut tensors = Vec::new();
    for part in body.split(';').filter(|p| !p.is_empty()) {
        let shape = part
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::config(format!("bad checkpoint shape {part:?}: {e}")))?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        reader.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(TensorBuffer::new(shape, values)?);
    }
    if reader.read(&mut [0u8; 1])? != 0 {
        return Err(Error::config("trailing bytes after checkpoint values"));
    }
    Ok(Parameters::new(tensors))
}

pub fn save(params: &Parameters, path: &Path) -> Result<()> {
    write_parameters(params, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load(path: &Path) -> Result<Parameters> {
    read_parameters(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_and_values() {
        let p = Parameters::new(vec![
            TensorBuffer::new(vec![2, 1], vec![1.5, -2.0]).unwrap(),
            TensorBuffer::new(vec![2], vec![0.25, 1e-300]).unwrap(),
        ]);
        let mut buf = Vec::new();
        write_parameters(&p, &mut buf).unwrap();
        assert!(buf.starts_with(b"natspace-params 2x1;2\n"));
        assert_eq!(buf.len(), "natspace-params 2x1;2\n".len() + 4 * 8);
        assert_eq!(read_parameters(buf.as_slice()).unwrap(), p);
        buf.push(0);
        assert!(read_parameters(buf.as_slice()).is_err());
        assert!(read_parameters(&buf[..buf.len() - 3]).is_err());
    }
}
