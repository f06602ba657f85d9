//! Combinatorial indexing of the directed level sets.
//!
//! For the directed walk the level-j set is the discrete simplex
//! {x ∈ Z_+^d : Σ x_i = j}. Compositions are ranked by the combinatorial
//! number system of their stars-and-bars encoding, which makes rank
//! arithmetic for x → x + e_k an O(d) table lookup.

/// Binomial table: `binom[n][k]` = C(n, k) for k < width.
pub struct Binom {
    table: Vec<u64>,
    width: usize,
}

impl Binom {
    pub fn new(max_n: usize, width: usize) -> Binom {
        let mut table = vec![0u64; (max_n + 1) * width];
        for n in 0..=max_n {
            for k in 0..width.min(n + 1) {
                let v = if k == 0 {
                    1
                } else if k > n {
                    0
                } else {
                    table[(n - 1) * width + k - 1]
                        .checked_add(table[(n - 1) * width + k])
                        .expect("binomial overflow: level set too large")
                };
                table[n * width + k] = v;
            }
        }
        Binom { table, width }
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> u64 {
        debug_assert!(k < self.width);
        self.table[n * self.width + k]
    }
}

/// Number of compositions of j into d nonnegative parts: C(j + d - 1, d - 1).
pub fn level_size(binom: &Binom, j: usize, d: usize) -> u64 {
    binom.get(j + d - 1, d - 1)
}

/// Rank of a composition within its level. Bars sit at
/// b_i = x_0 + ... + x_{i-1} + (i - 1) for i = 1..d-1 and the rank is
/// Σ C(b_i, i).
pub fn rank(binom: &Binom, coords: &[i64]) -> u64 {
    let d = coords.len();
    let mut prefix = 0i64;
    let mut r = 0u64;
    for i in 1..d {
        prefix += coords[i - 1];
        let b = prefix as usize + i - 1;
        r += binom.get(b, i);
    }
    r
}

/// Largest dimension the dense level indexing supports.
pub const MAX_D: usize = 16;

/// Ranks of the d targets x + e_k at the next level. `out[k]` receives the
/// rank of the composition with coordinate k incremented. Allocation-free
/// for use in the recursion inner loop; d must not exceed [`MAX_D`].
#[inline]
pub fn target_ranks(binom: &Binom, coords: &[i64], out: &mut [u64]) {
    let d = coords.len();
    debug_assert!(d <= MAX_D);
    if d == 1 {
        out[0] = 0;
        return;
    }
    // Incrementing coordinate k leaves bars i <= k in place and shifts
    // bars i > k right by one:
    //   rank(x + e_k) = Σ_{i<=k} C(b_i, i) + Σ_{i>k} C(b_i + 1, i)
    let mut lo_at = [0u64; MAX_D];
    let mut terms_hi = [0u64; MAX_D];
    let mut prefix = 0i64;
    let mut lo = 0u64;
    for i in 1..d {
        prefix += coords[i - 1];
        let b = prefix as usize + i - 1;
        lo_at[i - 1] = lo;
        lo += binom.get(b, i);
        terms_hi[i] = binom.get(b + 1, i);
    }
    lo_at[d - 1] = lo;
    let mut hi = 0u64;
    out[d - 1] = lo_at[d - 1];
    for i in (1..d).rev() {
        hi += terms_hi[i];
        out[i - 1] = lo_at[i - 1] + hi;
    }
}

/// Visit every composition of `j` into `d` parts in rank order, passing
/// (rank, coords) to `f`. Iteration recurses on the last coordinate in
/// descending order, which matches the combinatorial-number-system rank.
pub fn for_each_composition<F: FnMut(u64, &[i64])>(j: usize, d: usize, f: &mut F) {
    let mut coords = vec![0i64; d];
    let mut counter = 0u64;
    fn rec<F: FnMut(u64, &[i64])>(j: usize, pos: usize, coords: &mut [i64], n: &mut u64, f: &mut F) {
        if pos == 0 {
            coords[0] = j as i64;
            f(*n, coords);
            *n += 1;
            return;
        }
        for last in (0..=j).rev() {
            coords[pos] = last as i64;
            rec(j - last, pos - 1, coords, n, f);
        }
    }
    rec(j, d - 1, &mut coords, &mut counter, f);
}
