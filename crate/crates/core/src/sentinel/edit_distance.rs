//! Optimal-string-alignment Damerau-Levenshtein distance.

/// Insertions, deletions, substitutions and transpositions of adjacent
/// symbols, each substring edited at most once.
pub fn damerau_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    let mut d = vec![0usize; (n + 1) * width];
    for i in 0..=n {
        d[i * width] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut best = (d[(i - 1) * width + j] + 1)
                .min(d[i * width + j - 1] + 1)
                .min(d[(i - 1) * width + j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                best = best.min(d[(i - 2) * width + j - 2] + 1);
            }
            d[i * width + j] = best;
        }
    }
    d[n * width + m]
}

/// Distance divided by the longer length; 0 for two empty sequences.
pub fn normalized_distance<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        0.0
    } else {
        damerau_levenshtein(a, b) as f64 / longest as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basics() {
        assert_eq!(damerau_levenshtein(b"abc", b"abc"), 0);
        assert_eq!(damerau_levenshtein(b"AB", b"BA"), 1);
        assert_eq!(damerau_levenshtein(b"", b"abc"), 3);
        assert_eq!(damerau_levenshtein(b"kitten", b"sitting"), 3);
        // OSA, not unrestricted: "CA" -> "ABC" needs 3 here.
        assert_eq!(damerau_levenshtein(b"CA", b"ABC"), 3);
        assert_eq!(normalized_distance::<u8>(&[], &[]), 0.0);
        assert_eq!(normalized_distance(b"ab", b"ba"), 0.5);
    }
}
