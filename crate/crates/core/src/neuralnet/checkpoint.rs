//! Plain-text network checkpoints.
//!
//! ```text
//! mlp <name> <num_layers>
//! layer <in_dim> <out_dim> <tanh|identity>
//! w <out_dim*in_dim row-major floats>
//! b <out_dim floats>
//! ...
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a write/read cycle
//! reproduces every parameter bit for bit. Optimizer state is not stored.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::{Activation, LayerSpec, Mlp};

pub fn write_mlp<W: Write>(net: &Mlp, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "mlp {} {}", net.name(), net.layers().len())?;
    for layer in net.layers() {
        let s = layer.spec();
        writeln!(out, "layer {} {} {}", s.in_dim, s.out_dim, s.activation.name())?;
        write_floats(out, "w", layer.weight.as_slice())?;
        write_floats(out, "b", &layer.bias)?;
    }
    Ok(())
}

fn write_floats<W: Write>(out: &mut W, tag: &str, values: &[f64]) -> std::io::Result<()> {
    write!(out, "{tag}")?;
    for v in values {
        write!(out, " {v:?}")?;
    }
    writeln!(out)
}

/// Line source with position tracking for error messages.
pub struct Lines<R> {
    inner: std::io::Lines<R>,
    source: String,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    pub fn new(reader: R, source: impl Into<String>) -> Self {
        Lines {
            inner: reader.lines(),
            source: source.into(),
            line_no: 0,
        }
    }

    pub fn next_line(&mut self) -> Result<String> {
        match self.inner.next() {
            Some(Ok(l)) => {
                self.line_no += 1;
                Ok(l)
            }
            Some(Err(e)) => Err(self.err(format!("read failed: {e}"))),
            None => Err(self.err("unexpected end of file".into())),
        }
    }

    /// Next line, split into a leading tag (checked) and the remaining fields.
    pub fn expect(&mut self, tag: &str) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(t) if t == tag => Ok(parts.map(str::to_string).collect()),
            other => Err(self.err(format!("expected `{tag}`, found `{}`", other.unwrap_or("")))),
        }
    }

    pub fn err(&self, msg: String) -> Error {
        Error::Format {
            path: format!("{}:{}", self.source, self.line_no),
            msg,
        }
    }

    pub fn parse<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.parse()
            .map_err(|_| self.err(format!("cannot parse {what} from `{s}`")))
    }
}

pub fn read_mlp<R: BufRead>(lines: &mut Lines<R>) -> Result<Mlp> {
    let head = lines.expect("mlp")?;
    if head.len() != 2 {
        return Err(lines.err("expected `mlp <name> <num_layers>`".into()));
    }
    let name = head[0].clone();
    let n_layers: usize = lines.parse(&head[1], "layer count")?;
    let mut specs = Vec::with_capacity(n_layers);
    let mut params = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let f = lines.expect("layer")?;
        if f.len() != 3 {
            return Err(lines.err("expected `layer <in> <out> <activation>`".into()));
        }
        let in_dim: usize = lines.parse(&f[0], "in_dim")?;
        let out_dim: usize = lines.parse(&f[1], "out_dim")?;
        let act = Activation::parse(&f[2])
            .ok_or_else(|| lines.err(format!("unknown activation `{}`", f[2])))?;
        let w = read_floats(lines, "w", in_dim * out_dim)?;
        let b = read_floats(lines, "b", out_dim)?;
        specs.push(LayerSpec::new(in_dim, out_dim, act));
        params.push((w, b));
    }
    let mut net = Mlp::new(name, &specs)?;
    for (layer, (w, b)) in net.layers_mut().iter_mut().zip(params) {
        layer.weight.as_mut_slice().copy_from_slice(&w);
        layer.bias.copy_from_slice(&b);
    }
    Ok(net)
}

fn read_floats<R: BufRead>(lines: &mut Lines<R>, tag: &str, expected: usize) -> Result<Vec<f64>> {
    let fields = lines.expect(tag)?;
    if fields.len() != expected {
        return Err(lines.err(format!(
            "`{tag}` row has {} values, expected {expected}",
            fields.len()
        )));
    }
    fields.iter().map(|s| lines.parse(s, "float")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::Rng;
    use crate::neuralnet::flat_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut net = Mlp::with_hidden("enc_img.0", 5, &[7, 3], 4).unwrap();
        let mut rng = Rng::new(99);
        net.xavier_init(&mut rng);
        net.layers_mut()[1].bias[2] = 1e-300;
        net.layers_mut()[0].bias[0] = -0.1 + 0.2;
        let mut buf = Vec::new();
        write_mlp(&net, &mut buf).unwrap();
        let back = read_mlp(&mut Lines::new(&buf[..], "mem")).unwrap();
        assert_eq!(back.specs(), net.specs());
        assert_eq!(back.name(), net.name());
        let a: Vec<u64> = flat_params(&net).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = flat_params(&back).iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_checkpoint_names_line() {
        let mut net = Mlp::with_hidden("n", 2, &[2], 1).unwrap();
        net.xavier_init(&mut Rng::new(1));
        let mut buf = Vec::new();
        write_mlp(&net, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: Vec<&str> = text.lines().take(4).collect();
        let err = read_mlp(&mut Lines::new(cut.join("\n").as_bytes(), "ckpt")).unwrap_err();
        assert!(err.to_string().contains("ckpt:4"), "{err}");
    }
}
