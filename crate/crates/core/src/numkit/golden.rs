use crate::error::{Error, Result};

/// `1/φ`, the fraction of the bracket kept by each reduction.
pub const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenResult {
    pub argmin: f64,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub bracket: (f64, f64),
}

/// Golden-section bracket that is driven one evaluation at a time.
///
/// [`GoldenBracket::next_point`] returns the abscissa that needs a value
/// (performing any pending reduction first); the caller evaluates it whenever
/// convenient, e.g. once per training epoch, and hands the value back through
/// [`GoldenBracket::report`].
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenBracket {
    lo: f64,
    hi: f64,
    inner_lo: f64,
    inner_hi: f64,
    f_inner_lo: Option<f64>,
    f_inner_hi: Option<f64>,
    reductions: usize,
}

impl GoldenBracket {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("golden section needs lo < hi, got [{lo}, {hi}]")));
        }
        let w = hi - lo;
        Ok(Self {
            lo,
            hi,
            inner_lo: hi - INV_PHI * w,
            inner_hi: lo + INV_PHI * w,
            f_inner_lo: None,
            f_inner_hi: None,
            reductions: 0,
        })
    }

    /// Rebuilds a bracket from its serialized state.
    pub fn from_parts(
        outer: (f64, f64),
        inner: (f64, f64),
        values: (Option<f64>, Option<f64>),
        reductions: usize,
    ) -> Result<Self> {
        let ok = outer.0 <= inner.0 && inner.0 <= inner.1 && inner.1 <= outer.1;
        if !ok {
            return Err(Error::invalid("golden bracket points are out of order"));
        }
        Ok(Self {
            lo: outer.0,
            hi: outer.1,
            inner_lo: inner.0,
            inner_hi: inner.1,
            f_inner_lo: values.0,
            f_inner_hi: values.1,
            reductions,
        })
    }

    fn reduce(&mut self) {
        let (Some(fl), Some(fh)) = (self.f_inner_lo, self.f_inner_hi) else {
            return;
        };
        if fl < fh {
            self.hi = self.inner_hi;
            self.inner_hi = self.inner_lo;
            self.f_inner_hi = Some(fl);
            self.inner_lo = self.hi - INV_PHI * (self.hi - self.lo);
            self.f_inner_lo = None;
        } else {
            self.lo = self.inner_lo;
            self.inner_lo = self.inner_hi;
            self.f_inner_lo = Some(fh);
            self.inner_hi = self.lo + INV_PHI * (self.hi - self.lo);
            self.f_inner_hi = None;
        }
        self.reductions += 1;
    }

    /// The point whose value is needed next.
    pub fn next_point(&mut self) -> f64 {
        self.reduce();
        if self.f_inner_lo.is_none() {
            self.inner_lo
        } else {
            self.inner_hi
        }
    }

    /// Records `f(next_point())`.
    pub fn report(&mut self, value: f64) {
        if self.f_inner_lo.is_none() {
            self.f_inner_lo = Some(value);
        } else if self.f_inner_hi.is_none() {
            self.f_inner_hi = Some(value);
        }
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }

    pub fn is_settled(&self) -> bool {
        self.f_inner_lo.is_some() && self.f_inner_hi.is_some()
    }

    pub fn outer(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn inner(&self) -> (f64, f64) {
        (self.inner_lo, self.inner_hi)
    }

    pub fn inner_values(&self) -> (Option<f64>, Option<f64>) {
        (self.f_inner_lo, self.f_inner_hi)
    }

    /// Best evaluated point so far, if any.
    pub fn best(&self) -> Option<(f64, f64)> {
        match (self.f_inner_lo, self.f_inner_hi) {
            (Some(a), Some(b)) if b < a => Some((self.inner_hi, b)),
            (Some(a), _) => Some((self.inner_lo, a)),
            (None, Some(b)) => Some((self.inner_hi, b)),
            (None, None) => None,
        }
    }

    /// Smallest interval certified to hold the minimiser of a unimodal
    /// function. Once both interior values are known after `n` reductions,
    /// its width is `(hi - lo) * 0.618^(n+1)`.
    pub fn bracket(&self) -> (f64, f64) {
        match (self.f_inner_lo, self.f_inner_hi) {
            (Some(a), Some(b)) if a < b => (self.lo, self.inner_hi),
            (Some(_), Some(_)) => (self.inner_lo, self.hi),
            _ => (self.lo, self.hi),
        }
    }
}

/// Minimises `f` on `[lo, hi]`. Stops once the certified bracket is no wider
/// than `tol`; after `max_iters` reductions the bracket midpoint is returned
/// with `converged = false`.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iters: usize,
) -> Result<GoldenResult> {
    if !(tol > 0.0) {
        return Err(Error::invalid("golden section tolerance must be positive"));
    }
    let mut br = GoldenBracket::new(lo, hi)?;
    loop {
        if br.is_settled() {
            let (a, b) = br.bracket();
            if b - a <= tol {
                let (x, v) = br.best().expect("both interior points evaluated");
                return Ok(GoldenResult {
                    argmin: x,
                    value: v,
                    iterations: br.reductions(),
                    converged: true,
                    bracket: (a, b),
                });
            }
            if br.reductions() >= max_iters {
                let mid = 0.5 * (a + b);
                return Ok(GoldenResult {
                    argmin: mid,
                    value: f(mid),
                    iterations: br.reductions(),
                    converged: false,
                    bracket: (a, b),
                });
            }
        }
        let x = br.next_point();
        br.report(f(x));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_vertex() {
        let r = golden_section(|b| (b - 2.0) * (b - 2.0), 0.0, 50.0, 1e-4, 200).unwrap();
        assert!(r.converged);
        assert!((r.argmin - 2.0).abs() <= 1e-4, "{r:?}");
    }

    #[test]
    fn constant_function() {
        let r = golden_section(|_| 3.5, -1.0, 1.0, 1e-6, 100).unwrap();
        assert_eq!(r.value, 3.5);
        assert!((-1.0..=1.0).contains(&r.argmin));
    }

    #[test]
    fn exhausting_iterations_is_flagged() {
        let r = golden_section(|b| (b - 7.0).abs(), 0.0, 50.0, 1e-12, 3).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
        assert!(r.bracket.0 <= r.argmin && r.argmin <= r.bracket.1);
    }

    #[test]
    fn bracket_shrinks_geometrically() {
        let mut br = GoldenBracket::new(0.0, 50.0).unwrap();
        let f = |x: f64| (x - 13.3).powi(2);
        for _ in 0..40 {
            let x = br.next_point();
            br.report(f(x));
            if br.is_settled() {
                let n = br.reductions();
                let (a, b) = br.bracket();
                assert!(b - a <= 50.0 * INV_PHI.powi(n as i32 + 1) * 1.01);
                assert!(a <= 13.3 && 13.3 <= b);
            }
        }
    }

    #[test]
    fn rejects_empty_interval() {
        assert!(GoldenBracket::new(1.0, 1.0).is_err());
    }
}
