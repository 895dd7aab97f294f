//! Extended-XYZ reading and writing.
//!
//! Layout per frame: a count line, a comment line of key=value properties
//! (Lattice, Properties, energy, pbc, total_charge, total_spin), then one row
//! per atom following the declared Properties columns.

use super::LabeledFrame;
use crate::elements;
use crate::error::{Error, Result};
use crate::geometry::AtomicSystem;

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line: line + 1, msg: msg.into() }
}

/// Split a comment line into key=value pairs, honoring double quotes.
fn split_keyvals(line: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while matches!(chars.peek(), Some(c) if c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let mut key = String::new();
        for c in chars.by_ref() {
            if c == '=' {
                break;
            }
            key.push(c);
        }
        let mut value = String::new();
        if matches!(chars.peek(), Some('"')) {
            chars.next();
            for c in chars.by_ref() {
                if c == '"' {
                    break;
                }
                value.push(c);
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                value.push(c);
                chars.next();
            }
        }
        if !key.is_empty() {
            out.push((key.trim().to_string(), value));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    Species,
    Pos,
    Forces,
    Skip(usize),
}

fn parse_properties(spec: &str, line: usize) -> Result<Vec<Column>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() % 3 != 0 || parts.is_empty() {
        return Err(perr(line, format!("malformed Properties spec `{spec}`")));
    }
    let mut cols = Vec::new();
    for triple in parts.chunks(3) {
        let width: usize = triple[2]
            .parse()
            .map_err(|_| perr(line, format!("bad column width `{}`", triple[2])))?;
        match (triple[0], triple[1]) {
            ("species", "S") => cols.push(Column::Species),
            ("pos", "R") if width == 3 => cols.push(Column::Pos),
            ("forces" | "force", "R") if width == 3 => cols.push(Column::Forces),
            _ => cols.push(Column::Skip(width)),
        }
    }
    if !cols.contains(&Column::Species) || !cols.contains(&Column::Pos) {
        return Err(perr(line, "Properties must include species:S:1 and pos:R:3"));
    }
    Ok(cols)
}

/// Parse every frame in an extended-XYZ text stream.
pub fn parse_extxyz(text: &str) -> Result<Vec<LabeledFrame>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut ln = 0;
    while ln < lines.len() {
        if lines[ln].trim().is_empty() {
            ln += 1;
            continue;
        }
        let count: usize = lines[ln]
            .trim()
            .parse()
            .map_err(|_| perr(ln, format!("expected atom count, got `{}`", lines[ln].trim())))?;
        if count == 0 {
            return Err(perr(ln, "frame must have at least one atom"));
        }
        if ln + 1 >= lines.len() {
            return Err(perr(ln, "missing comment line"));
        }
        let kvs = split_keyvals(lines[ln + 1]);
        let get = |key: &str| kvs.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, v)| v.as_str());

        let cols = match get("Properties") {
            Some(spec) => parse_properties(spec, ln + 1)?,
            None => vec![Column::Species, Column::Pos],
        };
        let cell = match get("Lattice") {
            Some(lat) => {
                let vals: Vec<f64> = lat
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| perr(ln + 1, format!("bad Lattice `{lat}`")))?;
                if vals.len() != 9 {
                    return Err(perr(ln + 1, format!("Lattice needs 9 numbers, got {}", vals.len())));
                }
                Some([
                    [vals[0], vals[1], vals[2]],
                    [vals[3], vals[4], vals[5]],
                    [vals[6], vals[7], vals[8]],
                ])
            }
            None => None,
        };
        let pbc = match get("pbc") {
            Some(p) => {
                let flags: Vec<bool> = p
                    .split_whitespace()
                    .map(|t| matches!(t, "T" | "t" | "true" | "True" | "1"))
                    .collect();
                if flags.len() != 3 {
                    return Err(perr(ln + 1, "pbc needs 3 flags"));
                }
                [flags[0], flags[1], flags[2]]
            }
            None => [cell.is_some(); 3],
        };
        let energy = get("energy")
            .map(|e| e.parse::<f64>().map_err(|_| perr(ln + 1, format!("bad energy `{e}`"))))
            .transpose()?;
        let total_charge = get("total_charge")
            .map(|v| v.parse::<i32>().map_err(|_| perr(ln + 1, "bad total_charge")))
            .transpose()?
            .unwrap_or(0);
        let total_spin = get("total_spin")
            .map(|v| v.parse::<i32>().map_err(|_| perr(ln + 1, "bad total_spin")))
            .transpose()?
            .unwrap_or(0);

        let has_forces = cols.contains(&Column::Forces);
        let mut positions = Vec::with_capacity(count);
        let mut species = Vec::with_capacity(count);
        let mut forces = Vec::with_capacity(count);
        for a in 0..count {
            let row_ln = ln + 2 + a;
            let row = lines
                .get(row_ln)
                .ok_or_else(|| perr(row_ln, "unexpected end of file inside frame"))?;
            let tokens: Vec<&str> = row.split_whitespace().collect();
            let mut cursor = 0;
            let mut take = |w: usize| -> Result<&[&str]> {
                if cursor + w > tokens.len() {
                    return Err(perr(row_ln, format!("expected {} columns, got {}", cursor + w, tokens.len())));
                }
                let s = &tokens[cursor..cursor + w];
                cursor += w;
                Ok(s)
            };
            for col in &cols {
                match col {
                    Column::Species => {
                        let sym = take(1)?[0];
                        let z = elements::atomic_number(sym)
                            .or_else(|| sym.parse::<u8>().ok().filter(|&z| z >= 1))
                            .ok_or_else(|| perr(row_ln, format!("unknown species `{sym}`")))?;
                        species.push(z);
                    }
                    Column::Pos => {
                        let t = take(3)?;
                        let mut p = [0.0; 3];
                        for (d, tok) in t.iter().enumerate() {
                            p[d] = tok
                                .parse()
                                .map_err(|_| perr(row_ln, format!("bad coordinate `{tok}`")))?;
                        }
                        positions.push(p);
                    }
                    Column::Forces => {
                        let t = take(3)?;
                        let mut f = [0.0; 3];
                        for (d, tok) in t.iter().enumerate() {
                            f[d] = tok
                                .parse()
                                .map_err(|_| perr(row_ln, format!("bad force `{tok}`")))?;
                        }
                        forces.push(f);
                    }
                    Column::Skip(w) => {
                        take(*w)?;
                    }
                }
            }
        }
        let mut system = AtomicSystem::new(positions, species).map_err(|e| perr(ln, e.to_string()))?;
        if let Some(c) = cell {
            system = system.with_cell(c, pbc).map_err(|e| perr(ln + 1, e.to_string()))?;
        }
        system.total_charge = total_charge;
        system.total_spin = total_spin;
        let frame = LabeledFrame {
            system,
            energy,
            forces: has_forces.then_some(forces),
            stress: None,
        };
        frame.validate().map_err(|e| perr(ln, e.to_string()))?;
        frames.push(frame);
        ln += 2 + count;
    }
    Ok(frames)
}

fn fmt(v: f64) -> String {
    // 12 significant digits
    format!("{v:.11e}")
}

/// Write frames as extended-XYZ text (canonical field order).
pub fn write_extxyz(frames: &[LabeledFrame]) -> Result<String> {
    let mut out = String::new();
    for frame in frames {
        frame.validate()?;
        let sys = &frame.system;
        out.push_str(&format!("{}\n", sys.len()));
        let mut comment = String::new();
        if let Some(cell) = sys.cell {
            let flat: Vec<String> = cell.iter().flatten().map(|&v| fmt(v)).collect();
            comment.push_str(&format!("Lattice=\"{}\" ", flat.join(" ")));
        }
        let props = if frame.forces.is_some() {
            "species:S:1:pos:R:3:forces:R:3"
        } else {
            "species:S:1:pos:R:3"
        };
        comment.push_str(&format!("Properties={props}"));
        if let Some(e) = frame.energy {
            comment.push_str(&format!(" energy={}", fmt(e)));
        }
        if sys.cell.is_some() {
            let flags: Vec<&str> = sys.pbc.iter().map(|&b| if b { "T" } else { "F" }).collect();
            comment.push_str(&format!(" pbc=\"{}\"", flags.join(" ")));
        }
        if sys.total_charge != 0 {
            comment.push_str(&format!(" total_charge={}", sys.total_charge));
        }
        if sys.total_spin != 0 {
            comment.push_str(&format!(" total_spin={}", sys.total_spin));
        }
        out.push_str(&comment);
        out.push('\n');
        for (a, (&z, p)) in sys.species.iter().zip(&sys.positions).enumerate() {
            let sym = elements::symbol(z)
                .ok_or_else(|| Error::invalid("write_extxyz", format!("species {z}")))?;
            out.push_str(&format!("{sym} {} {} {}", fmt(p[0]), fmt(p[1]), fmt(p[2])));
            if let Some(forces) = &frame.forces {
                let f = forces[a];
                out.push_str(&format!(" {} {} {}", fmt(f[0]), fmt(f[1]), fmt(f[2])));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_atom_frame_with_energy() {
        let text = "1\nProperties=species:S:1:pos:R:3 energy=0.0\nH 0.0 0.0 0.0\n";
        let frames = parse_extxyz(text).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].energy, Some(0.0));
        assert_eq!(frames[0].system.species, vec![1]);
        assert!(frames[0].forces.is_none());
    }

    #[test]
    fn missing_forces_accepted_as_absent() {
        let text = "2\nProperties=species:S:1:pos:R:3 energy=-1.5\nAr 0 0 0\nAr 1 1 1\n";
        let frames = parse_extxyz(text).unwrap();
        assert!(frames[0].forces.is_none());
        assert_eq!(frames[0].energy, Some(-1.5));
    }

    #[test]
    fn malformed_inputs_name_the_line() {
        let text = "x\ncomment\n";
        let err = parse_extxyz(text).err().expect("count line error");
        assert!(err.to_string().contains("line 1"), "{err}");

        let text = "1\nProperties=species:S:1 energy=0\nH 0 0 0\n";
        let err = parse_extxyz(text).err().expect("properties error");
        assert!(err.to_string().contains("line 2"), "{err}");

        let text = "2\nLattice=\"1 0 0 0 1 0 0 0\" Properties=species:S:1:pos:R:3\nH 0 0 0\nH 1 0 0\n";
        let err = parse_extxyz(text).err().expect("lattice error");
        assert!(err.to_string().contains("line 2"), "{err}");

        let text = "1\nProperties=species:S:1:pos:R:3\nH 0 0\n";
        let err = parse_extxyz(text).err().expect("row width error");
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn periodic_frame_emits_lattice_key() {
        let sys = AtomicSystem::new(vec![[0.5, 0.5, 0.5]], vec![18])
            .unwrap()
            .with_cell([[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 4.0]], [true; 3])
            .unwrap();
        let frame = LabeledFrame { system: sys, energy: Some(1.0), forces: None, stress: None };
        let text = write_extxyz(&[frame]).unwrap();
        assert!(text.contains("Lattice=\""));
        assert!(text.contains("pbc=\"T T T\""));
    }

    #[test]
    fn empty_list_empty_output() {
        assert_eq!(write_extxyz(&[]).unwrap(), "");
    }

    #[test]
    fn fuzz_roundtrip_many_random_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(313);
        let mut frames = Vec::new();
        for _ in 0..1000 {
            let n = rng.gen_range(1..6);
            let positions: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-20.0..20.0),
                        rng.gen_range(-20.0..20.0),
                        rng.gen_range(-20.0..20.0),
                    ]
                })
                .collect();
            let species: Vec<u8> = (0..n).map(|_| rng.gen_range(1..=110)).collect();
            let mut system = AtomicSystem::new(positions, species).unwrap();
            if rng.gen_bool(0.4) {
                let a = rng.gen_range(5.0..15.0);
                system = system
                    .with_cell([[a, 0.1, 0.0], [0.0, a, 0.2], [0.3, 0.0, a]], [true; 3])
                    .unwrap();
            }
            system.total_charge = rng.gen_range(-2..=2);
            system.total_spin = rng.gen_range(0..=2);
            let forces = rng.gen_bool(0.6).then(|| {
                (0..n)
                    .map(|_| {
                        [
                            rng.gen_range(-3.0..3.0),
                            rng.gen_range(-3.0..3.0),
                            rng.gen_range(-3.0..3.0),
                        ]
                    })
                    .collect()
            });
            frames.push(LabeledFrame {
                system,
                energy: rng.gen_bool(0.8).then(|| rng.gen_range(-50.0..10.0)),
                forces,
                stress: None,
            });
        }
        let text = write_extxyz(&frames).unwrap();
        let back = parse_extxyz(&text).unwrap();
        assert_eq!(back.len(), frames.len());
        for (a, b) in frames.iter().zip(back.iter()) {
            assert_eq!(a.system.species, b.system.species);
            assert_eq!(a.system.total_charge, b.system.total_charge);
            assert_eq!(a.system.total_spin, b.system.total_spin);
            assert_eq!(a.system.pbc, b.system.pbc);
            for (p, q) in a.system.positions.iter().zip(&b.system.positions) {
                for d in 0..3 {
                    assert!((p[d] - q[d]).abs() < 1e-10);
                }
            }
            match (&a.energy, &b.energy) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-10),
                (None, None) => {}
                _ => panic!("energy presence mismatch"),
            }
            match (&a.forces, &b.forces) {
                (Some(x), Some(y)) => {
                    for (p, q) in x.iter().zip(y) {
                        for d in 0..3 {
                            assert!((p[d] - q[d]).abs() < 1e-10);
                        }
                    }
                }
                (None, None) => {}
                _ => panic!("forces presence mismatch"),
            }
            if let (Some(ca), Some(cb)) = (a.system.cell, b.system.cell) {
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((ca[i][j] - cb[i][j]).abs() < 1e-10);
                    }
                }
            }
        }
    }
}
