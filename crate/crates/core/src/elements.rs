//! Chemical element data for species 1..=110.

/// Highest atomic number the species embedding tables cover.
pub const MAX_ELEMENTS: usize = 110;

pub const SYMBOLS: [&str; 110] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
    "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
];

pub const MASSES_AMU: [f64; 110] = [
    1.008, 4.002602, 6.94, 9.0121831, 10.81,
    12.011, 14.007, 15.999, 18.998403163, 20.1797,
    22.98976928, 24.305, 26.9815385, 28.085, 30.973761998,
    32.06, 35.45, 39.948, 39.0983, 40.078,
    44.955908, 47.867, 50.9415, 51.9961, 54.938044,
    55.845, 58.933194, 58.6934, 63.546, 65.38,
    69.723, 72.63, 74.921595, 78.971, 79.904,
    83.798, 85.4678, 87.62, 88.90584, 91.224,
    92.90637, 95.95, 97.0, 101.07, 102.9055,
    106.42, 107.8682, 112.414, 114.818, 118.71,
    121.76, 127.6, 126.90447, 131.293, 132.90545196,
    137.327, 138.90547, 140.116, 140.90766, 144.242,
    145.0, 150.36, 151.964, 157.25, 158.92535,
    162.5, 164.93033, 167.259, 168.93422, 173.045,
    174.9668, 178.49, 180.94788, 183.84, 186.207,
    190.23, 192.217, 195.084, 196.966569, 200.592,
    204.38, 207.2, 208.9804, 209.0, 210.0,
    222.0, 223.0, 226.0, 227.0, 232.0377,
    231.03588, 238.02891, 237.0, 244.0, 243.0,
    247.0, 247.0, 251.0, 252.0, 257.0,
    258.0, 259.0, 262.0, 267.0, 270.0,
    271.0, 270.0, 277.0, 276.0, 281.0,
];

/// Symbol for an atomic number (1-based).
pub fn symbol(z: u8) -> Option<&'static str> {
    let z = z as usize;
    (1..=MAX_ELEMENTS).contains(&z).then(|| SYMBOLS[z - 1])
}

/// Atomic number (1-based) for a symbol.
pub fn atomic_number(sym: &str) -> Option<u8> {
    SYMBOLS.iter().position(|&s| s == sym).map(|i| (i + 1) as u8)
}

/// Standard atomic mass in amu.
pub fn mass_amu(z: u8) -> Option<f64> {
    let z = z as usize;
    (1..=MAX_ELEMENTS).contains(&z).then(|| MASSES_AMU[z - 1])
}
