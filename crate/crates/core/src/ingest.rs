//! Paired PNG frame sequences read from two directories.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::ImageSize;
use crate::image::Image;

/// PNG files of `dir` ordered by the number in their stem, then by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(Option<u64>, String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png || !path.is_file() {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        let digits: String = stem.chars().filter(|c| c.is_ascii_digit()).collect();
        files.push((digits.parse().ok(), stem, path));
    }
    files.sort_by(|a, b| (a.0.is_none(), a.0, &a.1).cmp(&(b.0.is_none(), b.0, &b.1)));
    Ok(files.into_iter().map(|f| f.2).collect())
}

fn dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Two equally long frame sequences, decoded on demand.
#[derive(Debug, Clone)]
pub struct FramePairs {
    reference: Vec<PathBuf>,
    target: Vec<PathBuf>,
    size: ImageSize,
    resize: bool,
}

impl FramePairs {
    /// Lists both directories and checks counts and, without `resize_to`,
    /// that every frame has the size of the first one.
    pub fn open(ref_dir: &Path, tgt_dir: &Path, resize_to: Option<ImageSize>) -> Result<Self> {
        let reference = list_frames(ref_dir)?;
        let target = list_frames(tgt_dir)?;
        if reference.len() != target.len() {
            return Err(Error::CountMismatch {
                reference: reference.len(),
                target: target.len(),
            });
        }
        if reference.is_empty() {
            return Err(Error::InvalidConfig(format!("no PNG frames in {}", ref_dir.display())));
        }
        let size = match resize_to {
            Some(s) => s,
            None => {
                let (w, h) = dimensions(&reference[0])?;
                for p in reference.iter().chain(&target) {
                    let found = dimensions(p)?;
                    if found != (w, h) {
                        return Err(Error::SizeMismatch {
                            path: p.clone(),
                            expected: (w, h),
                            found,
                        });
                    }
                }
                ImageSize::new(w, h)
            }
        };
        Ok(Self {
            reference,
            target,
            size,
            resize: resize_to.is_some(),
        })
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    /// Working frame size.
    pub fn size(&self) -> ImageSize {
        self.size
    }

    fn load(&self, path: &Path) -> Result<Image> {
        let img = Image::load_png(path)?;
        let (w, h) = (self.size.width as usize, self.size.height as usize);
        if img.width() == w && img.height() == h {
            Ok(img)
        } else if self.resize {
            Ok(img.resize(w, h))
        } else {
            Err(Error::SizeMismatch {
                path: path.to_path_buf(),
                expected: (self.size.width, self.size.height),
                found: (img.width() as u32, img.height() as u32),
            })
        }
    }

    /// Decoded pair `i` (0-based), both with three channels if either has.
    pub fn get(&self, i: usize) -> Result<(Image, Image)> {
        let a = self.load(&self.reference[i])?;
        let b = self.load(&self.target[i])?;
        Ok(match (a.channels(), b.channels()) {
            (1, 3) => (to_rgb(&a), b),
            (3, 1) => (a, to_rgb(&b)),
            _ => (a, b),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<(Image, Image)>> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

fn to_rgb(gray: &Image) -> Image {
    Image::from_fn(gray.width(), gray.height(), 3, |x, y, _| gray.at(x, y, 0))
}
