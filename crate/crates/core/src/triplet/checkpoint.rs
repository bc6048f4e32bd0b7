//! `TPL1` checkpoint format.
//!
//! Layout (little-endian): magic `TPL1`; config block of
//! `u32 image_dim, u32 text_dim, u32 hidden_dim, u32 output_dim, f64 margin,
//! f64 dropout_rate, f64 learning_rate, u32 batch_size, u32 epochs, u64 seed,
//! u8 alternating, u8 text_anchor, u32 trained_epochs`; then the image tower
//! and the text tower, each as eight arrays in the order
//! `w1, b1, bn_gamma, bn_beta, bn_running_mean, bn_running_var, w2, b2`,
//! every array written as `u32 rows, u32 cols` followed by `rows*cols` f32.
//! Vectors are stored with `cols = 1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{TowerParams, TripletConfig, TripletModel};
use crate::{Error, Result};

pub const TPL1_MAGIC: &[u8; 4] = b"TPL1";

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::ShapeMismatch(format!("{what} {v} does not fit in u32")))
}

fn write_array<W: Write>(w: &mut W, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    w.write_all(&dim_u32(rows, "rows")?.to_le_bytes())?;
    w.write_all(&dim_u32(cols, "cols")?.to_le_bytes())?;
    for &v in data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn write_tower<W: Write>(w: &mut W, t: &TowerParams) -> Result<()> {
    let shapes = tower_shapes(t.input_dim(), t.hidden_dim(), t.output_dim());
    for ((rows, cols), data) in shapes.into_iter().zip(t.arrays()) {
        write_array(w, rows, cols, data)?;
    }
    Ok(())
}

fn tower_shapes(input: usize, hidden: usize, output: usize) -> [(usize, usize); 8] {
    [
        (hidden, input),
        (hidden, 1),
        (hidden, 1),
        (hidden, 1),
        (hidden, 1),
        (hidden, 1),
        (output, hidden),
        (output, 1),
    ]
}

pub fn write_checkpoint<W: Write>(model: &TripletModel, w: &mut W) -> Result<()> {
    let c = &model.config;
    w.write_all(TPL1_MAGIC)?;
    for v in [
        model.image_tower.input_dim(),
        model.text_tower.input_dim(),
        c.hidden_dim,
        c.output_dim,
    ] {
        w.write_all(&dim_u32(v, "dimension")?.to_le_bytes())?;
    }
    for v in [c.margin, c.dropout_rate, c.learning_rate] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&dim_u32(c.batch_size, "batch size")?.to_le_bytes())?;
    w.write_all(&dim_u32(c.epochs, "epochs")?.to_le_bytes())?;
    w.write_all(&c.seed.to_le_bytes())?;
    w.write_all(&[c.alternating as u8, c.text_anchor as u8])?;
    w.write_all(&dim_u32(model.trained_epochs, "trained epochs")?.to_le_bytes())?;
    write_tower(w, &model.image_tower)?;
    write_tower(w, &model.text_tower)?;
    Ok(())
}

pub fn save_checkpoint(model: &TripletModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                Error::MalformedHeader(format!("checkpoint truncated while reading {what}"))
            }
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes(what)?) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.bytes::<1>(what)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::MalformedHeader(format!("{what} flag has value {b}"))),
        }
    }

    fn array(&mut self, rows: usize, cols: usize, what: &str) -> Result<Vec<f64>> {
        let (r, c) = (self.u32(what)?, self.u32(what)?);
        if (r, c) != (rows, cols) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: expected {rows}x{cols}, found {r}x{c}"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let v = f32::from_le_bytes(self.bytes(what)?);
            if !v.is_finite() {
                return Err(Error::ShapeMismatch(format!("{what} contains a non-finite value")));
            }
            data.push(v as f64);
        }
        Ok(data)
    }

    fn tower(&mut self, name: &str, input: usize, hidden: usize, output: usize) -> Result<TowerParams> {
        const NAMES: [&str; 8] =
            ["w1", "b1", "bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var", "w2", "b2"];
        let mut arrays = Vec::with_capacity(8);
        for ((rows, cols), field) in tower_shapes(input, hidden, output).into_iter().zip(NAMES) {
            arrays.push(self.array(rows, cols, &format!("{name}.{field}"))?);
        }
        let mut it = arrays.into_iter();
        let mut next = || it.next().expect("eight arrays");
        let w1 = Array2::from_shape_vec((hidden, input), next()).expect("shape checked");
        let b1 = Array1::from_vec(next());
        let bn_gamma = Array1::from_vec(next());
        let bn_beta = Array1::from_vec(next());
        let bn_running_mean = Array1::from_vec(next());
        let bn_running_var = Array1::from_vec(next());
        let w2 = Array2::from_shape_vec((output, hidden), next()).expect("shape checked");
        let b2 = Array1::from_vec(next());
        let t = TowerParams { w1, b1, bn_gamma, bn_beta, bn_running_mean, bn_running_var, w2, b2 };
        t.validate()?;
        Ok(t)
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<TripletModel> {
    let mut r = Reader { inner: r };
    let magic: [u8; 4] = r.bytes("magic")?;
    if &magic != TPL1_MAGIC {
        return Err(Error::MalformedHeader(format!("bad checkpoint magic {magic:?}")));
    }
    let image_dim = r.u32("image dim")?;
    let text_dim = r.u32("text dim")?;
    let hidden_dim = r.u32("hidden dim")?;
    let output_dim = r.u32("output dim")?;
    let margin = r.f64("margin")?;
    let dropout_rate = r.f64("dropout rate")?;
    let learning_rate = r.f64("learning rate")?;
    let batch_size = r.u32("batch size")?;
    let epochs = r.u32("epochs")?;
    let seed = u64::from_le_bytes(r.bytes("seed")?);
    let alternating = r.flag("alternating")?;
    let text_anchor = r.flag("text anchor")?;
    let trained_epochs = r.u32("trained epochs")?;
    let config = TripletConfig {
        margin,
        output_dim,
        hidden_dim,
        dropout_rate,
        batch_size,
        learning_rate,
        epochs,
        seed,
        alternating,
        text_anchor,
    };
    config.validate()?;
    if image_dim == 0 || text_dim == 0 {
        return Err(Error::ShapeMismatch("input dimensions must be positive".into()));
    }
    let image_tower = r.tower("image", image_dim, hidden_dim, output_dim)?;
    let text_tower = r.tower("text", text_dim, hidden_dim, output_dim)?;
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::MalformedHeader("trailing bytes after checkpoint".into()));
    }
    Ok(TripletModel { image_tower, text_tower, config, trained_epochs })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TripletModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
