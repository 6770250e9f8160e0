//! Minimum-cost linear assignment (Hungarian algorithm with potentials).

/// Solve the rectangular assignment problem for a row-major `rows x cols`
/// cost matrix with `rows <= cols`. Returns `assigned[r] = c` and the total
/// cost of the optimal assignment.
pub fn hungarian(cost: &[f64], rows: usize, cols: usize) -> (Vec<usize>, f64) {
    assert!(rows <= cols, "hungarian expects rows <= cols");
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 {
        return (Vec::new(), 0.0);
    }
    // Potentials over rows and columns; job[c] = row assigned to column c.
    // Column index `cols` is the virtual free column.
    let mut job: Vec<Option<usize>> = vec![None; cols + 1];
    let mut ys = vec![0.0f64; rows];
    let mut yt = vec![0.0f64; cols + 1];

    for r in 0..rows {
        let mut w_cur = cols;
        job[w_cur] = Some(r);
        let mut min_to = vec![f64::INFINITY; cols + 1];
        let mut prv: Vec<Option<usize>> = vec![None; cols + 1];
        let mut in_z = vec![false; cols + 1];

        while let Some(j) = job[w_cur] {
            in_z[w_cur] = true;
            let mut delta = f64::INFINITY;
            let mut w_next = cols;
            for w in 0..cols {
                if in_z[w] {
                    continue;
                }
                let diff = cost[j * cols + w] - ys[j] - yt[w];
                if diff < min_to[w] {
                    min_to[w] = diff;
                    prv[w] = Some(w_cur);
                }
                if min_to[w] < delta {
                    delta = min_to[w];
                    w_next = w;
                }
            }
            for w in 0..=cols {
                if in_z[w] {
                    if let Some(jw) = job[w] {
                        ys[jw] += delta;
                    }
                    yt[w] -= delta;
                } else {
                    min_to[w] -= delta;
                }
            }
            w_cur = w_next;
        }
        // Walk the augmenting path back.
        while w_cur != cols {
            let w_prev = prv[w_cur].expect("augmenting path");
            job[w_cur] = job[w_prev];
            w_cur = w_prev;
        }
    }

    let mut assigned = vec![usize::MAX; rows];
    let mut total = 0.0;
    for c in 0..cols {
        if let Some(r) = job[c] {
            assigned[r] = c;
            total += cost[r * cols + c];
        }
    }
    (assigned, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute_force(cost: &[f64], rows: usize, cols: usize) -> f64 {
        // Enumerate all injections rows -> cols (cols <= 8 in tests).
        fn rec(cost: &[f64], rows: usize, cols: usize, r: usize, used: &mut [bool]) -> f64 {
            if r == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..cols {
                if !used[c] {
                    used[c] = true;
                    let v = cost[r * cols + c] + rec(cost, rows, cols, r + 1, used);
                    used[c] = false;
                    best = best.min(v);
                }
            }
            best
        }
        rec(cost, rows, cols, 0, &mut vec![false; cols])
    }

    #[test]
    fn matches_known_square_answer() {
        let cost = vec![8.0, 5.0, 9.0, 4.0, 2.0, 4.0, 7.0, 3.0, 8.0];
        let (assigned, total) = hungarian(&cost, 3, 3);
        assert_eq!(total, 15.0);
        assert_eq!(assigned, vec![0, 2, 1]);
    }

    #[test]
    fn matches_factorial_enumeration_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let rows = rng.random_range(1..=6usize);
            let cols = rng.random_range(rows..=7usize);
            let cost: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(0.0..10.0))
                .collect();
            let (assigned, total) = hungarian(&cost, rows, cols);
            let expect = brute_force(&cost, rows, cols);
            assert!(
                (total - expect).abs() < 1e-9,
                "hungarian {total} vs brute force {expect}"
            );
            // Assignment must be injective.
            let mut seen = vec![false; cols];
            for &c in &assigned {
                assert!(!seen[c]);
                seen[c] = true;
            }
        }
    }
}
