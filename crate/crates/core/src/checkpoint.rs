//! Plain-text, versioned parameter checkpoints.
//!
//! ```text
//! uivi-checkpoint 1
//! eps_dim 3
//! z_dim 2
//! layers 3
//! layer 3 50 relu
//! weight <out*in values, row-major>
//! bias <out values>
//! ...
//! scale_raw <z_dim values>
//! ```
//!
//! Values are written in Rust's shortest round-trip form, so save/load is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::family::SemiImplicitQ;
use crate::tensor::{Activation, Layer, MlpParams, Tensor};

const MAGIC: &str = "uivi-checkpoint";
const VERSION: u32 = 1;

pub fn to_string(q: &SemiImplicitQ) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "eps_dim {}", q.eps_dim());
    let _ = writeln!(s, "z_dim {}", q.z_dim());
    let layers = q.cond_net().layers();
    let _ = writeln!(s, "layers {}", layers.len());
    for l in layers {
        let _ = writeln!(s, "layer {} {} {}", l.in_dim(), l.out_dim(), l.activation.name());
        write_values(&mut s, "weight", l.weight.data());
        write_values(&mut s, "bias", l.bias.data());
    }
    write_values(&mut s, "scale_raw", q.scale_raw());
    s
}

fn write_values(s: &mut String, key: &str, values: &[f64]) {
    s.push_str(key);
    for v in values {
        let _ = write!(s, " {v}");
    }
    s.push('\n');
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    /// Next non-empty line, split into its key and the remaining fields.
    fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        loop {
            let Some((i, raw)) = self.inner.next() else {
                self.line += 1;
                return Err(self.err(format!("unexpected end of checkpoint, expected `{key}`")));
            };
            self.line = i + 1;
            let mut fields = raw.split_whitespace();
            match fields.next() {
                None => continue,
                Some(k) if k == key => return Ok(fields.collect()),
                Some(k) => return Err(self.err(format!("expected `{key}`, found `{k}`"))),
            }
        }
    }

    fn usize_field(&mut self, key: &str) -> Result<usize> {
        let f = self.expect(key)?;
        match f.as_slice() {
            [v] => v.parse().map_err(|_| self.err(format!("bad integer `{v}`"))),
            _ => Err(self.err(format!("`{key}` takes one integer"))),
        }
    }

    fn values(&mut self, key: &str, n: usize) -> Result<Vec<f64>> {
        let f = self.expect(key)?;
        if f.len() != n {
            return Err(self.err(format!("`{key}` expects {n} values, found {}", f.len())));
        }
        f.iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| self.err(format!("bad value `{v}`")))
            })
            .collect()
    }
}

pub fn from_str(text: &str) -> Result<SemiImplicitQ> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let header = lines.expect(MAGIC)?;
    match header.as_slice() {
        [v] if v.parse::<u32>().ok() == Some(VERSION) => {}
        _ => return Err(lines.err(format!("unsupported checkpoint version {header:?}"))),
    }
    let eps_dim = lines.usize_field("eps_dim")?;
    let z_dim = lines.usize_field("z_dim")?;
    let n_layers = lines.usize_field("layers")?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let f = lines.expect("layer")?;
        let (in_dim, out_dim, act) = match f.as_slice() {
            [i, o, a] => (
                i.parse::<usize>().map_err(|_| lines.err("bad layer input width"))?,
                o.parse::<usize>().map_err(|_| lines.err("bad layer output width"))?,
                Activation::from_name(a)
                    .ok_or_else(|| lines.err(format!("unknown activation `{a}`")))?,
            ),
            _ => return Err(lines.err("`layer` takes: in out activation")),
        };
        let w = lines.values("weight", in_dim * out_dim)?;
        let b = lines.values("bias", out_dim)?;
        layers.push(Layer::new(
            Tensor::matrix(out_dim, in_dim, w)?,
            Tensor::vector(b)?,
            act,
        )?);
    }
    let scale_raw = lines.values("scale_raw", z_dim)?;
    let q = SemiImplicitQ::new(MlpParams::new(layers)?, scale_raw)?;
    if q.eps_dim() != eps_dim || q.z_dim() != z_dim {
        return Err(Error::Parse {
            line: 0,
            message: "declared dimensions disagree with the layer shapes".into(),
        });
    }
    Ok(q)
}

pub fn save(q: &SemiImplicitQ, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(q)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SemiImplicitQ> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}
