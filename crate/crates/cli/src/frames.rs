//! Frame I/O and the frame-level worker pool.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use surgiatm::image::{load_image, quantize, resize_bilinear};
use surgiatm::{Error, ImageBuffer};

/// Worker pool whose results come back in input order.
pub struct Pool {
    inner: rayon::ThreadPool,
}

impl Pool {
    pub fn new(workers: usize) -> anyhow::Result<Self> {
        if workers == 0 {
            return Err(Error::Argument("worker count must be positive".into()).into());
        }
        let inner = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        Ok(Self { inner })
    }

    /// Applies `f` to every item. On failure the error of the earliest failing
    /// item is returned, so the reported error does not depend on scheduling.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> anyhow::Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> anyhow::Result<R> + Sync + Send,
    {
        let results: Vec<anyhow::Result<R>> = self.inner.install(|| items.par_iter().map(f).collect());
        results.into_iter().collect()
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads a frame, optionally resizing it.
pub fn load(path: &Path, resize: Option<(usize, usize)>) -> surgiatm::Result<ImageBuffer> {
    let img = load_image(path)?;
    match resize {
        Some((w, h)) => resize_bilinear(&img, w, h),
        None => Ok(img),
    }
}

/// Loads an RGB frame; grayscale frames are rejected.
pub fn load_rgb(path: &Path, resize: Option<(usize, usize)>) -> surgiatm::Result<ImageBuffer> {
    let img = load(path, resize)?;
    if img.channels() != 3 {
        return Err(Error::Shape(format!("{}: expected an RGB frame", path.display())));
    }
    Ok(img)
}

/// The values a frame takes after being written as 8 bits and read back.
pub fn quantized(img: &ImageBuffer) -> ImageBuffer {
    let data = img.data().iter().map(|&v| quantize(v) as f64 / 255.0).collect();
    ImageBuffer::new(img.width(), img.height(), img.channels(), data).expect("same shape")
}

/// Creates `output` and checks that it is none of `inputs`.
pub fn prepare_output(output: &Path, inputs: &[&Path]) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(output).map_err(|e| Error::Io { path: output.into(), source: e })?;
    let out = canonical(output)?;
    for dir in inputs {
        if canonical(dir)? == out {
            return Err(Error::Argument(format!(
                "output directory {} is also an input",
                output.display()
            ))
            .into());
        }
    }
    Ok(out)
}

fn canonical(path: &Path) -> surgiatm::Result<PathBuf> {
    path.canonicalize().map_err(|e| Error::Io { path: path.into(), source: e })
}

pub fn create_dir(dir: &Path) -> surgiatm::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Argument(format!("{}: {e}", path.display())).into())
}

pub fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_keeps_order_for_any_worker_count() {
        let items: Vec<u64> = (0..100).collect();
        let one = Pool::new(1).unwrap().map(&items, |&x| Ok(x * x)).unwrap();
        let four = Pool::new(4).unwrap().map(&items, |&x| Ok(x * x)).unwrap();
        assert_eq!(one, four);
        assert_eq!(one[7], 49);
    }

    #[test]
    fn pool_reports_earliest_failure() {
        let items: Vec<u64> = (0..50).collect();
        let err = Pool::new(3)
            .unwrap()
            .map(&items, |&x| if x % 10 == 9 { Err(anyhow::anyhow!("bad {x}")) } else { Ok(x) })
            .unwrap_err();
        assert_eq!(err.to_string(), "bad 9");
        assert!(Pool::new(0).is_err());
    }

    #[test]
    fn output_must_differ_from_inputs() {
        let tmp = tempfile::tempdir().unwrap();
        let input = tmp.path().join("in");
        create_dir(&input).unwrap();
        assert!(prepare_output(&input, &[&input]).is_err());
        assert!(prepare_output(&tmp.path().join("out"), &[&input]).is_ok());
    }

    #[test]
    fn quantized_is_a_fixed_point_of_saving() {
        let img = ImageBuffer::new(2, 1, 3, vec![0.1, 0.5, 0.9, 0.0, 1.0, 0.33333]).unwrap();
        let q = quantized(&img);
        assert_eq!(quantized(&q), q);
        assert!(q.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0));
    }
}
