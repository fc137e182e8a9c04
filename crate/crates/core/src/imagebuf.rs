//! In-memory image containers shared by the dataset, preprocessing and
//! augmentation stages.

/// 8-bit RGB image, row-major interleaved (`y * width + x`, 3 bytes each).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbU8 {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl RgbU8 {
    pub fn new(width: usize, height: usize) -> Self {
        RgbU8 { width, height, data: vec![0; width * height * 3] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * 3, "rgb buffer size");
        RgbU8 { width, height, data }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, p: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&p);
    }

    /// Convert to float planes on the 0–255 scale.
    pub fn to_f32(&self) -> ImageF32 {
        let mut out = ImageF32::new(self.width, self.height, 3);
        for c in 0..3 {
            let plane = out.plane_mut(c);
            for (i, px) in self.data.chunks_exact(3).enumerate() {
                plane[i] = px[c] as f32;
            }
        }
        out
    }
}

/// Binary mask with values in {0, 1}, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskU8 {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl MaskU8 {
    pub fn new(width: usize, height: usize) -> Self {
        MaskU8 { width, height, data: vec![0; width * height] }
    }

    /// Binarize arbitrary 8-bit data: any nonzero source value maps to 1.
    pub fn from_raw_binarized(width: usize, height: usize, data: &[u8]) -> Self {
        assert_eq!(data.len(), width * height, "mask buffer size");
        MaskU8 { width, height, data: data.iter().map(|&v| (v > 0) as u8).collect() }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "mask buffer size");
        debug_assert!(data.iter().all(|&v| v <= 1), "mask must be binary");
        MaskU8 { width, height, data }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }
}

/// Float image stored as C planar row-major planes (`plane(c)[y * w + x]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageF32 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    data: Vec<f32>,
}

impl ImageF32 {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        ImageF32 { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * channels, "image buffer size");
        ImageF32 { width, height, channels, data }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let sz = self.width * self.height;
        &self.data[c * sz..(c + 1) * sz]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let sz = self.width * self.height;
        &mut self.data[c * sz..(c + 1) * sz]
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}
