//! Adaptive explicit integration with continuous output.
//!
//! The stepper is the Dormand–Prince 8(5,3) pair (Hairer's DOP853) with its
//! seventh-order dense output. Every accepted step keeps its interpolation
//! coefficients, so a [`Trajectory`] can be evaluated anywhere in its span and
//! searched for the crossing of a monotone observable.

use nalgebra::SVector;

use crate::error::{Error, Result};

pub type State<const N: usize> = SVector<f64, N>;

/// Right-hand side of `dy/dx = f(x, y)`.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, x: f64, y: &State<N>) -> Result<State<N>>;

    /// Number of leading components that enter step-size control; the rest
    /// are carried along on the same steps.
    fn controlled(&self) -> usize {
        N
    }
}

impl<F, const N: usize> OdeSystem<N> for F
where
    F: Fn(f64, &State<N>) -> Result<State<N>>,
{
    fn rhs(&self, x: f64, y: &State<N>) -> Result<State<N>> {
        self(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on |h|; `f64::INFINITY` means the span length.
    pub max_step: f64,
    /// Steps smaller than this (in magnitude) abort with [`Error::StepUnderflow`].
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            min_step: 0.0,
            max_steps: 200_000,
        }
    }
}

impl IntegratorSettings {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            rel_tol: tol,
            abs_tol: tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, tol) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(tol > 0.0 && tol <= 1e-3) {
                return Err(Error::InvalidSettings(format!(
                    "{name} = {tol:e} must lie in (0, 1e-3]"
                )));
            }
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidSettings("max_step must be positive".into()));
        }
        if !(self.min_step >= 0.0) || self.min_step > self.max_step {
            return Err(Error::InvalidSettings(
                "min_step must be non-negative and not exceed max_step".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidSettings("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// One accepted step and its dense-output polynomial.
#[derive(Debug, Clone)]
pub struct DenseStep<const N: usize> {
    pub x0: f64,
    pub h: f64,
    cont: [State<N>; 8],
}

impl<const N: usize> DenseStep<N> {
    pub fn x1(&self) -> f64 {
        self.x0 + self.h
    }

    pub fn start(&self) -> State<N> {
        self.cont[0]
    }

    pub fn end(&self) -> State<N> {
        self.cont[0] + self.cont[1]
    }

    fn theta(&self, x: f64) -> f64 {
        (x - self.x0) / self.h
    }

    pub fn eval(&self, x: f64) -> State<N> {
        self.eval_theta(self.theta(x))
    }

    fn eval_theta(&self, s: f64) -> State<N> {
        let c = &self.cont;
        let s1 = 1.0 - s;
        let conpar = c[4] + (c[5] + (c[6] + c[7] * s) * s1) * s;
        c[0] + (c[1] + (c[2] + (c[3] + conpar * s1) * s) * s1) * s
    }

    /// Derivative of the interpolant with respect to the independent variable.
    pub fn derivative(&self, x: f64) -> State<N> {
        self.derivative_theta(self.theta(x)) / self.h
    }

    fn derivative_theta(&self, s: f64) -> State<N> {
        let c = &self.cont;
        let s1 = 1.0 - s;
        let p1 = c[6] + c[7] * s;
        let p2 = c[5] + p1 * s1;
        let dp2 = -p1 + c[7] * s1;
        let p = c[4] + p2 * s;
        let dp = p2 + dp2 * s;
        let a = c[3] + p * s1;
        let da = -p + dp * s1;
        let b = c[2] + a * s;
        let db = a + da * s;
        let cc = c[1] + b * s1;
        let dc = -b + db * s1;
        cc + dc * s
    }
}

/// Solution segment with continuous output over `[start, end]`.
#[derive(Debug, Clone)]
pub struct Trajectory<const N: usize> {
    x_start: f64,
    y_start: State<N>,
    x_end: f64,
    y_end: State<N>,
    steps: Vec<DenseStep<N>>,
    pub stats: StepStats,
}

impl<const N: usize> Trajectory<N> {
    pub fn start(&self) -> (f64, State<N>) {
        (self.x_start, self.y_start)
    }

    pub fn terminal(&self) -> (f64, State<N>) {
        (self.x_end, self.y_end)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.x_start, self.x_end)
    }

    pub fn steps(&self) -> &[DenseStep<N>] {
        &self.steps
    }

    fn direction(&self) -> f64 {
        if self.x_end >= self.x_start {
            1.0
        } else {
            -1.0
        }
    }

    fn contains(&self, x: f64) -> bool {
        let (lo, hi) = if self.x_end >= self.x_start {
            (self.x_start, self.x_end)
        } else {
            (self.x_end, self.x_start)
        };
        let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        x >= lo - slack && x <= hi + slack
    }

    fn step_index(&self, x: f64) -> usize {
        let dir = self.direction();
        // first step whose end lies beyond x
        let idx = self.steps.partition_point(|st| (st.x1() - x) * dir < 0.0);
        idx.min(self.steps.len().saturating_sub(1))
    }

    pub fn eval(&self, x: f64) -> Result<State<N>> {
        if !self.contains(x) {
            return Err(Error::NotBracketed {
                target: x,
                lo: self.x_start.min(self.x_end),
                hi: self.x_start.max(self.x_end),
            });
        }
        if self.steps.is_empty() {
            return Ok(self.y_start);
        }
        if x == self.x_end {
            return Ok(self.y_end);
        }
        Ok(self.steps[self.step_index(x)].eval(x))
    }

    pub fn eval_derivative(&self, x: f64) -> Result<State<N>> {
        if !self.contains(x) || self.steps.is_empty() {
            return Err(Error::NotBracketed {
                target: x,
                lo: self.x_start.min(self.x_end),
                hi: self.x_start.max(self.x_end),
            });
        }
        Ok(self.steps[self.step_index(x)].derivative(x))
    }

    /// `n` uniformly spaced samples including both ends (`n >= 2`), or just the
    /// start for a zero-length span.
    pub fn sample(&self, n: usize) -> Result<Vec<(f64, State<N>)>> {
        if self.steps.is_empty() || n < 2 {
            return Ok(vec![(self.x_start, self.y_start)]);
        }
        (0..n)
            .map(|i| {
                let x = if i + 1 == n {
                    self.x_end
                } else {
                    self.x_start + (self.x_end - self.x_start) * i as f64 / (n - 1) as f64
                };
                self.eval(x).map(|y| (x, y))
            })
            .collect()
    }

    /// Locates where `component` reaches `target`, assuming the component is
    /// nondecreasing along the direction of integration.
    pub fn locate_monotone(&self, component: usize, target: f64) -> Result<f64> {
        let v0 = self.y_start[component];
        let v1 = self.y_end[component];
        if target == v0 {
            return Ok(self.x_start);
        }
        if target == v1 {
            return Ok(self.x_end);
        }
        if !(target > v0 && target < v1) {
            return Err(Error::NotBracketed {
                target,
                lo: v0,
                hi: v1,
            });
        }
        let k = self
            .steps
            .partition_point(|st| st.end()[component] < target)
            .min(self.steps.len() - 1);
        let st = &self.steps[k];
        Ok(st.x0 + st.h * root_in_step(st, component, target))
    }

    /// Locates a crossing of `component` through `target` between `a` and `b`
    /// (both inside the span), where the component minus target changes sign.
    pub fn locate_crossing(&self, component: usize, target: f64, a: f64, b: f64) -> Result<f64> {
        let fa = self.eval(a)?[component] - target;
        let fb = self.eval(b)?[component] - target;
        if fa == 0.0 {
            return Ok(a);
        }
        if fb == 0.0 {
            return Ok(b);
        }
        if fa.signum() == fb.signum() {
            return Err(Error::NotBracketed {
                target,
                lo: fa.min(fb) + target,
                hi: fa.max(fb) + target,
            });
        }
        // orient so that f(lo) < 0 < f(hi)
        let (mut lo, mut hi) = if fa < 0.0 { (a, b) } else { (b, a) };
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let fx = self.eval(x)?[component] - target;
            if fx == 0.0 {
                return Ok(x);
            }
            if fx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.eval_derivative(x)?[component];
            let newton = x - fx / d;
            let inside = (newton - lo) * (newton - hi) < 0.0;
            let next = if d != 0.0 && inside {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - x).abs() <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }
}

/// Root of `component(s) = target` for s in [0, 1] on a single step whose
/// component increases across it.
fn root_in_step<const N: usize>(st: &DenseStep<N>, component: usize, target: f64) -> f64 {
    let f = |s: f64| st.eval_theta(s)[component] - target;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let (flo, fhi) = (f(lo), f(hi));
    let mut s = if fhi > flo {
        (-flo / (fhi - flo)).clamp(0.0, 1.0)
    } else {
        0.5
    };
    for _ in 0..100 {
        let fs = f(s);
        if fs == 0.0 {
            break;
        }
        if fs < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let d = st.derivative_theta(s)[component];
        let newton = if d > 0.0 { s - fs / d } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - s).abs() <= 4.0 * f64::EPSILON || hi - lo <= 4.0 * f64::EPSILON {
            s = next;
            break;
        }
        s = next;
    }
    s
}

/// Integrates over `span` keeping the dense output of every step.
pub fn propagate<S, const N: usize>(
    system: &S,
    y0: State<N>,
    span: (f64, f64),
    cfg: &IntegratorSettings,
) -> Result<Trajectory<N>>
where
    S: OdeSystem<N> + ?Sized,
{
    run(system, y0, span, cfg, true, |_, _| false)
}

/// Like [`propagate`] but returns only the terminal state.
pub fn propagate_final<S, const N: usize>(
    system: &S,
    y0: State<N>,
    span: (f64, f64),
    cfg: &IntegratorSettings,
) -> Result<State<N>>
where
    S: OdeSystem<N> + ?Sized,
{
    run(system, y0, span, cfg, false, |_, _| false).map(|tr| tr.y_end)
}

/// Integrates from `span.0` towards `span.1`, stopping after the first
/// accepted step whose end state satisfies `stop`.
pub fn propagate_until<S, F, const N: usize>(
    system: &S,
    y0: State<N>,
    span: (f64, f64),
    cfg: &IntegratorSettings,
    stop: F,
) -> Result<Trajectory<N>>
where
    S: OdeSystem<N> + ?Sized,
    F: Fn(f64, &State<N>) -> bool,
{
    run(system, y0, span, cfg, true, stop)
}

fn error_scale(cfg: &IntegratorSettings, a: f64, b: f64) -> f64 {
    cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs())
}

fn initial_step<S, const N: usize>(
    system: &S,
    x: f64,
    y: &State<N>,
    f0: &State<N>,
    dir: f64,
    hmax: f64,
    cfg: &IntegratorSettings,
) -> Result<f64>
where
    S: OdeSystem<N> + ?Sized,
{
    let nc = system.controlled().clamp(1, N);
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..nc {
        let sk = cfg.abs_tol + cfg.rel_tol * y[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(hmax) * dir;
    let y1 = y + f0 * h;
    let f1 = system.rhs(x + h, &y1)?;
    let mut der2 = 0.0;
    for i in 0..nc {
        let sk = cfg.abs_tol + cfg.rel_tol * y[i].abs();
        der2 += ((f1[i] - f0[i]) / sk).powi(2);
    }
    let der2 = der2.sqrt() / h.abs();
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        1e-6_f64.max(h.abs() * 1e-3)
    } else {
        (0.01 / der12).powf(1.0 / 8.0)
    };
    Ok((100.0 * h.abs()).min(h1).min(hmax) * dir)
}

fn run<S, F, const N: usize>(
    system: &S,
    y0: State<N>,
    span: (f64, f64),
    cfg: &IntegratorSettings,
    dense: bool,
    stop: F,
) -> Result<Trajectory<N>>
where
    S: OdeSystem<N> + ?Sized,
    F: Fn(f64, &State<N>) -> bool,
{
    let nc = system.controlled().clamp(1, N);
    cfg.validate()?;
    let (a, b) = span;
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!(
            "integration span [{a}, {b}] is not finite"
        )));
    }
    let mut traj = Trajectory {
        x_start: a,
        y_start: y0,
        x_end: a,
        y_end: y0,
        steps: Vec::new(),
        stats: StepStats::default(),
    };
    if a == b {
        return Ok(traj);
    }
    let dir = (b - a).signum();
    let hmax = cfg.max_step.min((b - a).abs());
    let safe = 0.9;
    let facc1: f64 = 1.0 / 0.333;
    let facc2: f64 = 1.0 / 6.0;
    let expo1 = 1.0 / 8.0;

    let mut x = a;
    let mut y = y0;
    let mut k1 = system.rhs(x, &y)?;
    let mut stats = StepStats {
        evaluations: 1,
        ..StepStats::default()
    };
    let mut h = initial_step(system, x, &y, &k1, dir, hmax, cfg)?;
    stats.evaluations += 1;
    let mut last_rejected = false;
    let mut done = false;

    while !done {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(Error::StepBudget {
                max_steps: cfg.max_steps,
                at: x,
            });
        }
        let floor = cfg.min_step.max(10.0 * f64::EPSILON * x.abs().max(1e-300));
        if h.abs() < floor {
            return Err(Error::StepUnderflow {
                at: x,
                step: h.abs(),
            });
        }
        let mut last = false;
        if (x + 1.01 * h - b) * dir >= 0.0 {
            h = b - x;
            last = true;
        }

        let k2 = system.rhs(x + C2 * h, &(y + k1 * (h * A21)))?;
        let k3 = system.rhs(x + C3 * h, &(y + (k1 * A31 + k2 * A32) * h))?;
        let k4 = system.rhs(x + C4 * h, &(y + (k1 * A41 + k3 * A43) * h))?;
        let k5 = system.rhs(x + C5 * h, &(y + (k1 * A51 + k3 * A53 + k4 * A54) * h))?;
        let k6 = system.rhs(x + C6 * h, &(y + (k1 * A61 + k4 * A64 + k5 * A65) * h))?;
        let k7 = system.rhs(
            x + C7 * h,
            &(y + (k1 * A71 + k4 * A74 + k5 * A75 + k6 * A76) * h),
        )?;
        let k8 = system.rhs(
            x + C8 * h,
            &(y + (k1 * A81 + k4 * A84 + k5 * A85 + k6 * A86 + k7 * A87) * h),
        )?;
        let k9 = system.rhs(
            x + C9 * h,
            &(y + (k1 * A91 + k4 * A94 + k5 * A95 + k6 * A96 + k7 * A97 + k8 * A98) * h),
        )?;
        let k10 = system.rhs(
            x + C10 * h,
            &(y + (k1 * A101
                + k4 * A104
                + k5 * A105
                + k6 * A106
                + k7 * A107
                + k8 * A108
                + k9 * A109)
                * h),
        )?;
        let k11 = system.rhs(
            x + C11 * h,
            &(y + (k1 * A111
                + k4 * A114
                + k5 * A115
                + k6 * A116
                + k7 * A117
                + k8 * A118
                + k9 * A119
                + k10 * A1110)
                * h),
        )?;
        let x_new = x + h;
        let k12 = system.rhs(
            x_new,
            &(y + (k1 * A121
                + k4 * A124
                + k5 * A125
                + k6 * A126
                + k7 * A127
                + k8 * A128
                + k9 * A129
                + k10 * A1210
                + k11 * A1211)
                * h),
        )?;
        stats.evaluations += 11;
        let sum =
            k1 * B1 + k6 * B6 + k7 * B7 + k8 * B8 + k9 * B9 + k10 * B10 + k11 * B11 + k12 * B12;
        let y_new = y + sum * h;

        let mut err = 0.0;
        let mut err2 = 0.0;
        for i in 0..nc {
            let sk = error_scale(cfg, y[i], y_new[i]);
            let e2 = sum[i] - BHH1 * k1[i] - BHH2 * k9[i] - BHH3 * k12[i];
            err2 += (e2 / sk).powi(2);
            let e = ER1 * k1[i]
                + ER6 * k6[i]
                + ER7 * k7[i]
                + ER8 * k8[i]
                + ER9 * k9[i]
                + ER10 * k10[i]
                + ER11 * k11[i]
                + ER12 * k12[i];
            err += (e / sk).powi(2);
        }
        let mut deno = err + 0.01 * err2;
        if deno <= 0.0 {
            deno = 1.0;
        }
        let err = h.abs() * err * (1.0 / (deno * nc as f64)).sqrt();
        if !err.is_finite() {
            stats.rejected += 1;
            h *= 0.1;
            last_rejected = true;
            continue;
        }

        let fac11 = err.powf(expo1);
        let fac = facc2.max(facc1.min(fac11 / safe));
        let mut h_new = h / fac;

        if err <= 1.0 {
            stats.accepted += 1;
            let k13 = system.rhs(x_new, &y_new)?;
            stats.evaluations += 1;

            if dense {
                let ydiff = y_new - y;
                let bspl = k1 * h - ydiff;
                let mut c5 = k1 * D41
                    + k6 * D46
                    + k7 * D47
                    + k8 * D48
                    + k9 * D49
                    + k10 * D410
                    + k11 * D411
                    + k12 * D412;
                let mut c6 = k1 * D51
                    + k6 * D56
                    + k7 * D57
                    + k8 * D58
                    + k9 * D59
                    + k10 * D510
                    + k11 * D511
                    + k12 * D512;
                let mut c7 = k1 * D61
                    + k6 * D66
                    + k7 * D67
                    + k8 * D68
                    + k9 * D69
                    + k10 * D610
                    + k11 * D611
                    + k12 * D612;
                let mut c8 = k1 * D71
                    + k6 * D76
                    + k7 * D77
                    + k8 * D78
                    + k9 * D79
                    + k10 * D710
                    + k11 * D711
                    + k12 * D712;
                let k14 = system.rhs(
                    x + C14 * h,
                    &(y + (k1 * A141
                        + k7 * A147
                        + k8 * A148
                        + k9 * A149
                        + k10 * A1410
                        + k11 * A1411
                        + k12 * A1412
                        + k13 * A1413)
                        * h),
                )?;
                let k15 = system.rhs(
                    x + C15 * h,
                    &(y + (k1 * A151
                        + k6 * A156
                        + k7 * A157
                        + k8 * A158
                        + k11 * A1511
                        + k12 * A1512
                        + k13 * A1513
                        + k14 * A1514)
                        * h),
                )?;
                let k16 = system.rhs(
                    x + C16 * h,
                    &(y + (k1 * A161
                        + k6 * A166
                        + k7 * A167
                        + k8 * A168
                        + k9 * A169
                        + k13 * A1613
                        + k14 * A1614
                        + k15 * A1615)
                        * h),
                )?;
                stats.evaluations += 3;
                c5 = (c5 + k13 * D413 + k14 * D414 + k15 * D415 + k16 * D416) * h;
                c6 = (c6 + k13 * D513 + k14 * D514 + k15 * D515 + k16 * D516) * h;
                c7 = (c7 + k13 * D613 + k14 * D614 + k15 * D615 + k16 * D616) * h;
                c8 = (c8 + k13 * D713 + k14 * D714 + k15 * D715 + k16 * D716) * h;
                traj.steps.push(DenseStep {
                    x0: x,
                    h,
                    cont: [y, ydiff, bspl, ydiff - k13 * h - bspl, c5, c6, c7, c8],
                });
            }

            k1 = k13;
            y = y_new;
            x = if last { b } else { x_new };
            if h_new.abs() > hmax {
                h_new = hmax * dir;
            }
            if last_rejected {
                h_new = dir * h_new.abs().min(h.abs());
            }
            last_rejected = false;
            h = h_new;
            done = last || stop(x, &y);
        } else {
            h_new = h / facc1.min(fac11 / safe);
            last_rejected = true;
            stats.rejected += 1;
            h = h_new;
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("non-finite state at x = {x}")));
        }
    }

    traj.x_end = x;
    traj.y_end = y;
    traj.stats = stats;
    Ok(traj)
}

// Dormand–Prince 8(5,3) coefficients (Hairer, Nørsett & Wanner).
const C2: f64 = 0.526001519587677318785587544488E-01;
const C3: f64 = 0.789002279381515978178381316732E-01;
const C4: f64 = 0.118350341907227396726757197510E+00;
const C5: f64 = 0.281649658092772603273242802490E+00;
const C6: f64 = 0.333333333333333333333333333333E+00;
const C7: f64 = 0.25E+00;
const C8: f64 = 0.307692307692307692307692307692E+00;
const C9: f64 = 0.651282051282051282051282051282E+00;
const C10: f64 = 0.6E+00;
const C11: f64 = 0.857142857142857142857142857142E+00;
const C14: f64 = 0.1E+00;
const C15: f64 = 0.2E+00;
const C16: f64 = 0.777777777777777777777777777778E+00;

const A21: f64 = 5.26001519587677318785587544488E-2;
const A31: f64 = 1.97250569845378994544595329183E-2;
const A32: f64 = 5.91751709536136983633785987549E-2;
const A41: f64 = 2.95875854768068491816892993775E-2;
const A43: f64 = 8.87627564304205475450678981324E-2;
const A51: f64 = 2.41365134159266685502369798665E-1;
const A53: f64 = -8.84549479328286085344864962717E-1;
const A54: f64 = 9.24834003261792003115737966543E-1;
const A61: f64 = 3.7037037037037037037037037037E-2;
const A64: f64 = 1.70828608729473871279604482173E-1;
const A65: f64 = 1.25467687566822425016691814123E-1;
const A71: f64 = 3.7109375E-2;
const A74: f64 = 1.70252211019544039314978060272E-1;
const A75: f64 = 6.02165389804559606850219397283E-2;
const A76: f64 = -1.7578125E-2;
const A81: f64 = 3.70920001185047927108779319836E-2;
const A84: f64 = 1.70383925712239993810214054705E-1;
const A85: f64 = 1.07262030446373284651809199168E-1;
const A86: f64 = -1.53194377486244017527936158236E-2;
const A87: f64 = 8.27378916381402288758473766002E-3;
const A91: f64 = 6.24110958716075717114429577812E-1;
const A94: f64 = -3.36089262944694129406857109825E0;
const A95: f64 = -8.68219346841726006818189891453E-1;
const A96: f64 = 2.75920996994467083049415600797E1;
const A97: f64 = 2.01540675504778934086186788979E1;
const A98: f64 = -4.34898841810699588477366255144E1;
const A101: f64 = 4.77662536438264365890433908527E-1;
const A104: f64 = -2.48811461997166764192642586468E0;
const A105: f64 = -5.90290826836842996371446475743E-1;
const A106: f64 = 2.12300514481811942347288949897E1;
const A107: f64 = 1.52792336328824235832596922938E1;
const A108: f64 = -3.32882109689848629194453265587E1;
const A109: f64 = -2.03312017085086261358222928593E-2;
const A111: f64 = -9.3714243008598732571704021658E-1;
const A114: f64 = 5.18637242884406370830023853209E0;
const A115: f64 = 1.09143734899672957818500254654E0;
const A116: f64 = -8.14978701074692612513997267357E0;
const A117: f64 = -1.85200656599969598641566180701E1;
const A118: f64 = 2.27394870993505042818970056734E1;
const A119: f64 = 2.49360555267965238987089396762E0;
const A1110: f64 = -3.0467644718982195003823669022E0;
const A121: f64 = 2.27331014751653820792359768449E0;
const A124: f64 = -1.05344954667372501984066689879E1;
const A125: f64 = -2.00087205822486249909675718444E0;
const A126: f64 = -1.79589318631187989172765950534E1;
const A127: f64 = 2.79488845294199600508499808837E1;
const A128: f64 = -2.85899827713502369474065508674E0;
const A129: f64 = -8.87285693353062954433549289258E0;
const A1210: f64 = 1.23605671757943030647266201528E1;
const A1211: f64 = 6.43392746015763530355970484046E-1;
const A141: f64 = 5.61675022830479523392909219681E-2;
const A147: f64 = 2.53500210216624811088794765333E-1;
const A148: f64 = -2.46239037470802489917441475441E-1;
const A149: f64 = -1.24191423263816360469010140626E-1;
const A1410: f64 = 1.5329179827876569731206322685E-1;
const A1411: f64 = 8.20105229563468988491666602057E-3;
const A1412: f64 = 7.56789766054569976138603589584E-3;
const A1413: f64 = -8.298E-3;
const A151: f64 = 3.18346481635021405060768473261E-2;
const A156: f64 = 2.83009096723667755288322961402E-2;
const A157: f64 = 5.35419883074385676223797384372E-2;
const A158: f64 = -5.49237485713909884646569340306E-2;
const A1511: f64 = -1.08347328697249322858509316994E-4;
const A1512: f64 = 3.82571090835658412954920192323E-4;
const A1513: f64 = -3.40465008687404560802977114492E-4;
const A1514: f64 = 1.41312443674632500278074618366E-1;
const A161: f64 = -4.28896301583791923408573538692E-1;
const A166: f64 = -4.69762141536116384314449447206E0;
const A167: f64 = 7.68342119606259904184240953878E0;
const A168: f64 = 4.06898981839711007970213554331E0;
const A169: f64 = 3.56727187455281109270669543021E-1;
const A1613: f64 = -1.39902416515901462129418009734E-3;
const A1614: f64 = 2.9475147891527723389556272149E0;
const A1615: f64 = -9.15095847217987001081870187138E0;

const B1: f64 = 5.42937341165687622380535766363E-2;
const B6: f64 = 4.45031289275240888144113950566E0;
const B7: f64 = 1.89151789931450038304281599044E0;
const B8: f64 = -5.8012039600105847814672114227E0;
const B9: f64 = 3.1116436695781989440891606237E-1;
const B10: f64 = -1.52160949662516078556178806805E-1;
const B11: f64 = 2.01365400804030348374776537501E-1;
const B12: f64 = 4.47106157277725905176885569043E-2;

const BHH1: f64 = 0.244094488188976377952755905512E+00;
const BHH2: f64 = 0.733846688281611857341361741547E+00;
const BHH3: f64 = 0.220588235294117647058823529412E-01;

const ER1: f64 = 0.1312004499419488073250102996E-01;
const ER6: f64 = -0.1225156446376204440720569753E+01;
const ER7: f64 = -0.4957589496572501915214079952E+00;
const ER8: f64 = 0.1664377182454986536961530415E+01;
const ER9: f64 = -0.3503288487499736816886487290E+00;
const ER10: f64 = 0.3341791187130174790297318841E+00;
const ER11: f64 = 0.8192320648511571246570742613E-01;
const ER12: f64 = -0.2235530786388629525884427845E-01;

const D41: f64 = -0.84289382761090128651353491142E+01;
const D46: f64 = 0.56671495351937776962531783590E+00;
const D47: f64 = -0.30689499459498916912797304727E+01;
const D48: f64 = 0.23846676565120698287728149680E+01;
const D49: f64 = 0.21170345824450282767155149946E+01;
const D410: f64 = -0.87139158377797299206789907490E+00;
const D411: f64 = 0.22404374302607882758541771650E+01;
const D412: f64 = 0.63157877876946881815570249290E+00;
const D413: f64 = -0.88990336451333310820698117400E-01;
const D414: f64 = 0.18148505520854727256656404962E+02;
const D415: f64 = -0.91946323924783554000451984436E+01;
const D416: f64 = -0.44360363875948939664310572000E+01;

const D51: f64 = 0.10427508642579134603413151009E+02;
const D56: f64 = 0.24228349177525818288430175319E+03;
const D57: f64 = 0.16520045171727028198505394887E+03;
const D58: f64 = -0.37454675472269020279518312152E+03;
const D59: f64 = -0.22113666853125306036270938578E+02;
const D510: f64 = 0.77334326684722638389603898808E+01;
const D511: f64 = -0.30674084731089398182061213626E+02;
const D512: f64 = -0.93321305264302278729567221706E+01;
const D513: f64 = 0.15697238121770843886131091075E+02;
const D514: f64 = -0.31139403219565177677282850411E+02;
const D515: f64 = -0.93529243588444783865713862664E+01;
const D516: f64 = 0.35816841486394083752465898540E+02;

const D61: f64 = 0.19985053242002433820987653617E+02;
const D66: f64 = -0.38703730874935176555105901742E+03;
const D67: f64 = -0.18917813819516756882830838328E+03;
const D68: f64 = 0.52780815920542364900561016686E+03;
const D69: f64 = -0.11573902539959630126141871134E+02;
const D610: f64 = 0.68812326946963000169666922661E+01;
const D611: f64 = -0.10006050966910838403183860980E+01;
const D612: f64 = 0.77771377980534432092869265740E+00;
const D613: f64 = -0.27782057523535084065932004339E+01;
const D614: f64 = -0.60196695231264120758267380846E+02;
const D615: f64 = 0.84320405506677161018159903784E+02;
const D616: f64 = 0.11992291136182789328035130030E+02;

const D71: f64 = -0.25693933462703749003312586129E+02;
const D76: f64 = -0.15418974869023643374053993627E+03;
const D77: f64 = -0.23152937917604549567536039109E+03;
const D78: f64 = 0.35763911791061412378285349910E+03;
const D79: f64 = 0.93405324183624310003907691704E+02;
const D710: f64 = -0.37458323136451633156875139351E+02;
const D711: f64 = 0.10409964950896230045147246184E+03;
const D712: f64 = 0.29840293426660503123344363579E+02;
const D713: f64 = -0.43533456590011143754432175058E+02;
const D714: f64 = 0.96324553959188282948394950600E+02;
const D715: f64 = -0.39177261675615439165231486172E+02;
const D716: f64 = -0.14972683625798562581422125276E+03;

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn kepler(_x: f64, y: &State<4>) -> Result<State<4>> {
        let r3 = (y[0] * y[0] + y[1] * y[1]).powf(1.5);
        Ok(State::<4>::new(y[2], y[3], -y[0] / r3, -y[1] / r3))
    }

    #[test]
    fn circular_kepler_orbit_closes() {
        let y0 = State::<4>::new(1.0, 0.0, 0.0, 1.0);
        let y1 =
            propagate_final(&kepler, y0, (0.0, 2.0 * PI), &IntegratorSettings::default()).unwrap();
        assert!((y1 - y0).amax() < 1e-9, "{:e}", (y1 - y0).amax());
    }

    #[test]
    fn oscillator_matches_sinusoid_and_dense_output() {
        // u'' = -k^2 u, the form of the regularized Kepler pair at fixed h < 0
        let k = (10.0_f64 / 2.0).sqrt();
        let sys = move |_x: f64, y: &State<2>| Ok(State::<2>::new(y[1], -k * k * y[0]));
        let y0 = State::<2>::new(0.3, 0.0);
        let tr = propagate(&sys, y0, (0.0, 20.0), &IntegratorSettings::default()).unwrap();
        for i in 0..=400 {
            let x = 20.0 * i as f64 / 400.0;
            let y = tr.eval(x).unwrap();
            assert!((y[0] - 0.3 * (k * x).cos()).abs() < 1e-9);
            assert!((y[1] + 0.3 * k * (k * x).sin()).abs() < 1e-9);
            let d = tr.eval_derivative(x).unwrap();
            assert!((d[0] - y[1]).abs() < 1e-8, "{x} {:e}", d[0] - y[1]);
        }
    }

    #[test]
    fn backward_integration_retraces() {
        let y0 = State::<4>::new(1.0, 0.0, 0.0, 1.1);
        let cfg = IntegratorSettings::default();
        let y1 = propagate_final(&kepler, y0, (0.0, 3.0), &cfg).unwrap();
        let y2 = propagate_final(&kepler, y1, (3.0, 0.0), &cfg).unwrap();
        assert!((y2 - y0).amax() < 1e-10);
    }

    #[test]
    fn order_is_high() {
        // error ratio on a fixed-step-like sweep: halving tolerance by 2^8 drops error a lot
        let y0 = State::<4>::new(1.0, 0.0, 0.0, 1.2);
        let reference = propagate_final(
            &kepler,
            y0,
            (0.0, 5.0),
            &IntegratorSettings::with_tolerance(1e-14),
        )
        .unwrap();
        let coarse = propagate_final(
            &kepler,
            y0,
            (0.0, 5.0),
            &IntegratorSettings::with_tolerance(1e-7),
        )
        .unwrap();
        let fine = propagate_final(
            &kepler,
            y0,
            (0.0, 5.0),
            &IntegratorSettings::with_tolerance(1e-10),
        )
        .unwrap();
        let e_coarse = (coarse - reference).amax();
        let e_fine = (fine - reference).amax();
        assert!(e_fine * 100.0 < e_coarse, "{e_coarse:e} {e_fine:e}");
    }

    #[test]
    fn locate_linear_component() {
        // y' = (r, ...) with constant r: the locate target is target / r
        let r = 0.05;
        let sys = move |_x: f64, _y: &State<1>| Ok(State::<1>::new(r));
        let tr = propagate(
            &sys,
            State::<1>::new(0.0),
            (0.0, 100.0),
            &IntegratorSettings::default(),
        )
        .unwrap();
        let tau = tr.locate_monotone(0, 3.0).unwrap();
        assert!((tau - 60.0).abs() < 1e-10);
        assert_eq!(tr.locate_monotone(0, 0.0).unwrap(), 0.0);
        assert!(matches!(
            tr.locate_monotone(0, 6.0),
            Err(Error::NotBracketed { .. })
        ));
    }

    #[test]
    fn zero_span_and_settings_validation() {
        let tr = propagate(
            &kepler,
            State::<4>::new(1.0, 0.0, 0.0, 1.0),
            (1.0, 1.0),
            &IntegratorSettings::default(),
        )
        .unwrap();
        assert!(tr.steps().is_empty());
        assert_eq!(tr.sample(10).unwrap().len(), 1);
        let bad = IntegratorSettings::with_tolerance(1e-2);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn budget_error() {
        let cfg = IntegratorSettings {
            max_steps: 3,
            ..IntegratorSettings::default()
        };
        let r = propagate_final(
            &kepler,
            State::<4>::new(1.0, 0.0, 0.0, 1.0),
            (0.0, 100.0),
            &cfg,
        );
        assert!(matches!(r, Err(Error::StepBudget { .. })));
    }

    #[test]
    fn deterministic() {
        let y0 = State::<4>::new(1.0, 0.0, 0.0, 1.3);
        let cfg = IntegratorSettings::default();
        let a = propagate(&kepler, y0, (0.0, 7.0), &cfg).unwrap();
        let b = propagate(&kepler, y0, (0.0, 7.0), &cfg).unwrap();
        assert_eq!(a.terminal().1, b.terminal().1);
        assert_eq!(a.steps().len(), b.steps().len());
    }
}
