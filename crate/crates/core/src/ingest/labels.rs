//! Beat class mapping.

use super::annotation::code_for_mnemonic;

pub const N_CLASSES: usize = 5;

/// Class symbols in label order. Case matters: `f` (paced fusion) and `F`
/// (ventricular fusion) are different classes.
pub const CLASS_NAMES: [&str; N_CLASSES] = ["N", "A", "V", "f", "F"];

/// Maps a WFDB annotation code to a class id, or `None` for excluded beats.
pub fn map_code_to_label(code: u8) -> Option<usize> {
    match code {
        1..=3 => Some(0), // N, L, R
        8 => Some(1),     // A
        5 => Some(2),     // V
        38 => Some(3),    // f
        6 => Some(4),     // F
        _ => None,
    }
}

pub fn map_symbol_to_label(symbol: char) -> Option<usize> {
    code_for_mnemonic(symbol).and_then(map_code_to_label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_groups() {
        assert_eq!(map_symbol_to_label('N'), Some(0));
        assert_eq!(map_symbol_to_label('L'), Some(0));
        assert_eq!(map_symbol_to_label('R'), Some(0));
        assert_eq!(map_symbol_to_label('A'), Some(1));
        assert_eq!(map_symbol_to_label('V'), Some(2));
    }

    #[test]
    fn fusion_classes_are_case_sensitive() {
        assert_eq!(map_symbol_to_label('f'), Some(3));
        assert_eq!(map_symbol_to_label('F'), Some(4));
    }

    #[test]
    fn unlisted_codes_excluded() {
        assert_eq!(map_symbol_to_label('/'), None);
        assert_eq!(map_symbol_to_label('a'), None);
        assert_eq!(map_symbol_to_label('+'), None);
        assert_eq!(map_code_to_label(0), None);
        for code in 0..=63u8 {
            if let Some(l) = map_code_to_label(code) {
                assert!(l < N_CLASSES);
            }
        }
    }
}
