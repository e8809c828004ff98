//! Naive feature definitions evaluated step by step on an occupancy grid.
#![allow(clippy::needless_range_loop)]

use melody_transfer::corpus::NotePhrase;

const UNITS: [u32; 12] = [96, 48, 24, 12, 6, 72, 36, 18, 9, 32, 16, 8];

pub struct Naive {
    pub pc: u32,
    pub pc_per_bar: f64,
    pub pr: u32,
    pub pch: Vec<f64>,
    pub pctm: Vec<f64>,
    pub nc: u32,
    pub nc_per_bar: f64,
    pub nlh: Vec<f64>,
    pub nltm: Vec<f64>,
}

pub fn length_class(steps: u32) -> usize {
    let units = steps * 6;
    let mut best = 0;
    for k in 1..12 {
        let d = units.abs_diff(UNITS[k]);
        let b = units.abs_diff(UNITS[best]);
        if d < b || (d == b && UNITS[k] < UNITS[best]) {
            best = k;
        }
    }
    best
}

pub fn naive(p: &NotePhrase, rests: bool) -> Naive {
    let notes = p.notes();
    // occupancy grid: index of the note sounding at each step
    let mut grid: [Option<usize>; 64] = [None; 64];
    for (i, n) in notes.iter().enumerate() {
        for t in n.start..n.start + n.duration {
            grid[t as usize] = Some(i);
        }
    }
    let mut pc = 0;
    for pitch in 48..=95u8 {
        if notes.iter().any(|n| n.pitch == pitch) {
            pc += 1;
        }
    }
    let mut per_bar_pitches = 0u32;
    for bar in 0..4 {
        let mut seen = [false; 128];
        for t in bar * 16..bar * 16 + 16 {
            if let Some(i) = grid[t] {
                seen[notes[i].pitch as usize] = true;
            }
        }
        per_bar_pitches += seen.iter().filter(|s| **s).count() as u32;
    }
    let mut lo = 255u8;
    let mut hi = 0u8;
    for n in notes {
        lo = lo.min(n.pitch);
        hi = hi.max(n.pitch);
    }
    let pr = if notes.is_empty() { 0 } else { (hi - lo) as u32 };
    let mut pch = vec![0.0; 12];
    for k in 0..12 {
        pch[k] = notes.iter().filter(|n| n.pitch as usize % 12 == k).count() as f64;
    }
    // events in time order, read off the grid
    let mut onsets: Vec<usize> = Vec::new();
    let mut events: Vec<usize> = Vec::new();
    let mut t = 0usize;
    while t < 64 {
        match grid[t] {
            Some(i) => {
                onsets.push(i);
                events.push(length_class(notes[i].duration as u32));
                t += notes[i].duration as usize;
            }
            None => {
                let mut run = 0;
                while t < 64 && grid[t].is_none() {
                    run += 1;
                    t += 1;
                }
                if rests {
                    events.push(12 + length_class(run));
                }
            }
        }
    }
    let mut pctm = vec![0.0; 144];
    for w in onsets.windows(2) {
        pctm[(notes[w[0]].pitch % 12) as usize * 12 + (notes[w[1]].pitch % 12) as usize] += 1.0;
    }
    let mut nc_bars = 0u32;
    for bar in 0..4u8 {
        nc_bars += notes.iter().filter(|n| n.start >= bar * 16 && n.start < bar * 16 + 16).count() as u32;
    }
    let dim = if rests { 24 } else { 12 };
    let mut nlh = vec![0.0; dim];
    for e in &events {
        nlh[*e] += 1.0;
    }
    let mut nltm = vec![0.0; dim * dim];
    for w in events.windows(2) {
        nltm[w[0] * dim + w[1]] += 1.0;
    }
    Naive {
        pc,
        pc_per_bar: per_bar_pitches as f64 / 4.0,
        pr,
        pch,
        pctm,
        nc: notes.len() as u32,
        nc_per_bar: nc_bars as f64 / 4.0,
        nlh,
        nltm,
    }
}

/// First mismatch between production features and the oracle, if any.
pub fn compare(p: &NotePhrase, rests: bool) -> Option<String> {
    use melody_transfer::features::{extract, FeatureOptions};
    let f = extract(p, FeatureOptions { rests });
    let o = naive(p, rests);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let vec_eq = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x == y);
    let checks = [
        ("PC", f.pc == o.pc),
        ("PC/bar", close(f.pc_per_bar, o.pc_per_bar)),
        ("PR", f.pr == o.pr),
        ("PCH", vec_eq(&f.pch, &o.pch)),
        ("PCTM", vec_eq(&f.pctm, &o.pctm)),
        ("NC", f.nc == o.nc),
        ("NC/bar", close(f.nc_per_bar, o.nc_per_bar)),
        ("NLH", vec_eq(&f.nlh, &o.nlh)),
        ("NLTM", vec_eq(&f.nltm, &o.nltm)),
    ];
    checks.iter().find(|c| !c.1).map(|c| format!("{} differs on {} (rests={rests})", c.0, p.id()))
}
