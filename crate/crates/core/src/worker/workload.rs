//! Registered workloads.
//!
//! A workload is a pair of plain functions: one computing the unit's result
//! from its parameters, and optionally one estimating its cost in compute
//! units so clients can size units before submission.

use crate::work::{Params, ResultData};
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

pub const MANDELBROT_TILE: &str = "mandelbrot_tile";
pub const SPIN: &str = "spin";

#[derive(Clone, Copy)]
pub struct Workload {
    pub run: fn(&Params) -> ResultData,
    pub cost: Option<fn(&Params) -> u64>,
}

#[derive(Clone, Default)]
pub struct WorkloadRegistry {
    map: BTreeMap<String, Workload>,
}

impl WorkloadRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry with `mandelbrot_tile` and `spin`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(MANDELBROT_TILE, Workload { run: mandelbrot_run, cost: Some(mandelbrot_cost) });
        r.register(SPIN, Workload { run: spin_run, cost: Some(spin_cost) });
        r
    }

    pub fn register(&mut self, name: impl Into<String>, workload: Workload) {
        self.map.insert(name.into(), workload);
    }

    pub fn get(&self, name: &str) -> Option<&Workload> {
        self.map.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn cost_of(&self, name: &str, params: &Params) -> Option<u64> {
        self.map.get(name)?.cost.map(|f| f(params))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

// --- spin -------------------------------------------------------------------

/// Does nothing but take time; the result echoes the declared cost.
fn spin_run(p: &Params) -> ResultData {
    ResultData(vec![spin_cost(p)])
}

fn spin_cost(p: &Params) -> u64 {
    p.get("cost").copied().unwrap_or(0.0) as u64
}

pub fn spin_params(cost: u64) -> Params {
    let mut p = Params::new();
    p.insert("cost".to_string(), cost as f64);
    p
}

// --- mandelbrot -------------------------------------------------------------

/// A rectangular region of the complex plane sampled on a pixel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileWindow {
    pub cx0: f64,
    pub cy0: f64,
    pub cx1: f64,
    pub cy1: f64,
    pub width: u32,
    pub height: u32,
    pub max_iter: u32,
}

impl TileWindow {
    pub fn pixels(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn to_params(&self) -> Params {
        let mut p = Params::new();
        for (k, v) in [
            ("cx0", self.cx0),
            ("cy0", self.cy0),
            ("cx1", self.cx1),
            ("cy1", self.cy1),
            ("max_iter", self.max_iter as f64),
            ("width", self.width as f64),
            ("height", self.height as f64),
            ("pixels", self.pixels() as f64),
        ] {
            p.insert(k.to_string(), v);
        }
        p
    }

    pub fn from_params(p: &Params) -> Option<Self> {
        let g = |k: &str| p.get(k).copied();
        Some(Self {
            cx0: g("cx0")?,
            cy0: g("cy0")?,
            cx1: g("cx1")?,
            cy1: g("cy1")?,
            width: g("width")? as u32,
            height: g("height")? as u32,
            max_iter: g("max_iter")? as u32,
        })
    }
}

/// Iterations of `z <- z^2 + c` from `z = 0` until `|z| > 2` or `max_iter`.
pub fn escape_iterations(cr: f64, ci: f64, max_iter: u32) -> u32 {
    let (mut zr, mut zi) = (0.0f64, 0.0f64);
    let mut n = 0;
    while n < max_iter {
        let zr2 = zr * zr;
        let zi2 = zi * zi;
        if zr2 + zi2 > 4.0 {
            break;
        }
        zi = 2.0 * zr * zi + ci;
        zr = zr2 - zi2 + cr;
        n += 1;
    }
    n
}

/// Escape counts for every pixel, row-major, sampled at pixel centres.
pub fn render_tile(w: &TileWindow) -> Vec<u32> {
    let dx = (w.cx1 - w.cx0) / w.width as f64;
    let dy = (w.cy1 - w.cy0) / w.height as f64;
    let mut out = Vec::with_capacity(w.pixels() as usize);
    for py in 0..w.height {
        let ci = w.cy0 + (py as f64 + 0.5) * dy;
        for px in 0..w.width {
            let cr = w.cx0 + (px as f64 + 0.5) * dx;
            out.push(escape_iterations(cr, ci, w.max_iter));
        }
    }
    out
}

/// Pixels times mean escape iterations, i.e. total iterations.
pub fn tile_cost(w: &TileWindow) -> u64 {
    render_tile(w).iter().map(|&n| n as u64).sum()
}

pub fn histogram(counts: &[u32], max_iter: u32) -> Vec<u64> {
    let mut h = vec![0u64; max_iter as usize + 1];
    for &c in counts {
        h[c as usize] += 1;
    }
    h
}

/// Tile output: the iteration histogram, plus per-pixel counts for rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileResult {
    pub histogram: Vec<u64>,
    pub pixels: Vec<u32>,
}

impl TileResult {
    /// Layout: `[max_iter, histogram[0..=max_iter], pixels...]`.
    pub fn encode(&self) -> ResultData {
        let mut v = Vec::with_capacity(1 + self.histogram.len() + self.pixels.len());
        v.push(self.histogram.len() as u64 - 1);
        v.extend_from_slice(&self.histogram);
        v.extend(self.pixels.iter().map(|&p| p as u64));
        ResultData(v)
    }

    pub fn decode(data: &ResultData) -> Option<Self> {
        let (&max_iter, rest) = data.0.split_first()?;
        let hlen = usize::try_from(max_iter).ok()?.checked_add(1)?;
        if rest.len() < hlen {
            return None;
        }
        let (h, p) = rest.split_at(hlen);
        Some(Self { histogram: h.to_vec(), pixels: p.iter().map(|&x| x as u32).collect() })
    }
}

fn mandelbrot_run(p: &Params) -> ResultData {
    match TileWindow::from_params(p) {
        Some(w) => {
            let pixels = render_tile(&w);
            TileResult { histogram: histogram(&pixels, w.max_iter), pixels }.encode()
        }
        None => ResultData::default(),
    }
}

fn mandelbrot_cost(p: &Params) -> u64 {
    TileWindow::from_params(p).map(|w| tile_cost(&w)).unwrap_or(0)
}
