//! Lexicographic order on objective vectors.
//!
//! Two values closer than [`LEX_TOL`] are equal at that level. The optimum of
//! a finite set is defined by sequential pinning: keep the candidates whose
//! first objective is within tolerance of the best first objective, then
//! repeat on the second objective among the survivors, and so on. Among the
//! final survivors the lowest enumeration index wins. This is the same rule
//! the branch-and-bound solver applies level by level, and unlike a pairwise
//! scan with a tolerant comparator it does not depend on visiting order.

use std::cmp::Ordering;

use rayon::prelude::*;

/// Absolute tolerance for "equal" at one lexicographic level.
pub const LEX_TOL: f64 = 1e-9;

/// Tolerant lexicographic comparison (maximization order: `Greater` is better).
pub fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > LEX_TOL {
            return x.partial_cmp(y).unwrap_or(Ordering::Equal);
        }
    }
    a.len().cmp(&b.len())
}

/// True when `values` meets every pinned level.
pub fn meets_pins(values: &[f64], pins: &[f64]) -> bool {
    values.iter().zip(pins).all(|(v, p)| *v >= p - LEX_TOL)
}

/// Lexicographic argmax over indices `0..count` under sequential pinning.
///
/// `eval(i)` returns `None` for infeasible candidates and the objective
/// vector (length `levels`) otherwise. Returns the winning index and its
/// objective vector, or `None` if nothing is feasible.
pub fn lex_argmax<E, F>(count: u64, levels: usize, eval: F) -> Result<Option<(u64, Vec<f64>)>, E>
where
    F: Fn(u64) -> Result<Option<Vec<f64>>, E> + Sync,
    E: Send,
{
    let mut pins: Vec<f64> = Vec::with_capacity(levels);
    for level in 0..levels {
        let best = (0..count)
            .into_par_iter()
            .try_fold(
                || None::<f64>,
                |acc, i| {
                    Ok(match eval(i)? {
                        Some(v) if meets_pins(&v, &pins) => Some(acc.map_or(v[level], |a: f64| a.max(v[level]))),
                        _ => acc,
                    })
                },
            )
            .try_reduce(
                || None,
                |a, b| {
                    Ok(match (a, b) {
                        (Some(x), Some(y)) => Some(x.max(y)),
                        (x, None) => x,
                        (None, y) => y,
                    })
                },
            )?;
        match best {
            Some(b) => pins.push(b),
            None => return Ok(None),
        }
    }
    let winner = (0..count)
        .into_par_iter()
        .try_fold(
            || None::<(u64, Vec<f64>)>,
            |acc, i| {
                if acc.is_some() {
                    return Ok(acc);
                }
                Ok(match eval(i)? {
                    Some(v) if meets_pins(&v, &pins) => Some((i, v)),
                    _ => None,
                })
            },
        )
        .try_reduce(
            || None,
            |a, b| {
                Ok(match (a, b) {
                    (Some(x), Some(y)) => Some(if x.0 <= y.0 { x } else { y }),
                    (x, None) => x,
                    (None, y) => y,
                })
            },
        )?;
    Ok(winner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparator_uses_tolerance() {
        assert_eq!(lex_cmp(&[1.0, 2.0], &[1.0 + 1e-12, 1.0]), Ordering::Greater);
        assert_eq!(lex_cmp(&[1.0, 2.0], &[1.1, 1.0]), Ordering::Less);
        assert_eq!(lex_cmp(&[1.0, 2.0], &[1.0, 2.0 + 5e-10]), Ordering::Equal);
    }

    #[test]
    fn minimize_cost_then_size() {
        // Objectives are maximized, so cost and size enter negated.
        let designs = [(-5.0, -3.0), (-4.0, -9.0), (-4.0, -2.0), (-6.0, -1.0)];
        let best = lex_argmax::<(), _>(4, 2, |i| {
            let (c, s) = designs[i as usize];
            Ok(Some(vec![c, s]))
        })
        .unwrap();
        assert_eq!(best, Some((2, vec![-4.0, -2.0])));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let best = lex_argmax::<(), _>(10, 1, |i| Ok((i % 3 == 2).then(|| vec![1.0]))).unwrap();
        assert_eq!(best.unwrap().0, 2);
        let none = lex_argmax::<(), _>(10, 1, |_| Ok(None)).unwrap();
        assert!(none.is_none());
        let first = lex_argmax::<(), _>(10, 0, |i| Ok((i > 4).then(Vec::new))).unwrap();
        assert_eq!(first.unwrap().0, 5);
    }
}
