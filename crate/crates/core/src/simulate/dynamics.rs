use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::autodiff::Val;

use super::{DroneParams, TankParams};

/// Arithmetic shared by the plain-`f64` simulators and the tape-recorded
/// model variants. Instantiating the same derivative and integrator code for
/// both keeps them bit-identical, operation for operation.
pub trait SimScalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Constant with the same recording context as `self`.
    fn lift(&self, v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt_guarded(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
}

impl SimScalar for f64 {
    fn lift(&self, v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sqrt_guarded(&self) -> Self {
        self.max(0.0).sqrt()
    }
    fn sin(&self) -> Self {
        (*self).sin()
    }
    fn cos(&self) -> Self {
        (*self).cos()
    }
}

impl SimScalar for Val {
    fn lift(&self, v: f64) -> Self {
        Val::lift(self, v)
    }
    fn value(&self) -> f64 {
        Val::value(self)
    }
    fn sqrt_guarded(&self) -> Self {
        Val::sqrt_guarded(self)
    }
    fn sin(&self) -> Self {
        Val::sin(self)
    }
    fn cos(&self) -> Self {
        Val::cos(self)
    }
}

/// Core right-hand side of the two-tank ODE with scalar-typed coefficients
/// `k = [k1, k2, k3, k4]`, so the coefficients themselves may be recorded
/// (learnable) quantities.
pub fn tank_rates_core<S: SimScalar>(x: &[S; 2], u: &S, k: [&S; 4]) -> [S; 2] {
    let s1 = x[0].sqrt_guarded();
    let s2 = x[1].sqrt_guarded();
    let dx1 = -(k[0].clone() * s1.clone()) + k[3].clone() * u.clone();
    let dx2 = k[1].clone() * s1 - k[2].clone() * s2;
    [dx1, dx2]
}

/// Right-hand side of the two-tank ODE.
///
/// `x = [upper level, lower level]`, `u` the pump command. Square roots are
/// clamped at zero. When overflow coupling is enabled and the upper tank sits
/// at its ceiling with positive net inflow, the excess flow spills into the
/// lower tank instead.
pub fn tank_rates<S: SimScalar>(x: &[S; 2], u: &S, p: &TankParams) -> [S; 2] {
    let k1 = x[0].lift(p.k1);
    let k2 = x[0].lift(p.k2);
    let k3 = x[0].lift(p.k3);
    let k4 = x[0].lift(p.k4);
    let [dx1, mut dx2] = tank_rates_core(x, u, [&k1, &k2, &k3, &k4]);
    let mut dx1_eff = dx1.clone();
    if p.overflow_coupling && x[0].value() >= p.level_max && dx1.value() > 0.0 {
        dx2 = dx2 + dx1;
        dx1_eff = x[0].lift(0.0);
    }
    [dx1_eff, dx2]
}

/// Body-to-inertial rotation matrix for ZYX (yaw-pitch-roll) Euler angles,
/// row-major.
pub fn rotation_matrix<S: SimScalar>(angles: &[S; 3]) -> [S; 9] {
    let (sr, cr) = (angles[0].sin(), angles[0].cos());
    let (sp, cp) = (angles[1].sin(), angles[1].cos());
    let (sy, cy) = (angles[2].sin(), angles[2].cos());
    [
        cy.clone() * cp.clone(),
        cy.clone() * sp.clone() * sr.clone() - sy.clone() * cr.clone(),
        cy.clone() * sp.clone() * cr.clone() + sy.clone() * sr.clone(),
        sy.clone() * cp.clone(),
        sy.clone() * sp.clone() * sr.clone() + cy.clone() * cr.clone(),
        sy * sp.clone() * cr.clone() - cy * sr.clone(),
        -sp,
        cp.clone() * sr,
        cp * cr,
    ]
}

/// Euler-rate kinematic matrix mapping body angular velocity to Euler-angle
/// rates, row-major. Undefined at pitch ±π/2; callers guard for that.
pub fn euler_rate_matrix_generic<S: SimScalar>(angles: &[S; 3]) -> [S; 9] {
    let (sr, cr) = (angles[0].sin(), angles[0].cos());
    let (sp, cp) = (angles[1].sin(), angles[1].cos());
    let tp = sp / cp.clone();
    let one = cr.lift(1.0);
    let zero = cr.lift(0.0);
    [
        one,
        sr.clone() * tp.clone(),
        cr.clone() * tp,
        zero.clone(),
        cr.clone(),
        -sr.clone(),
        zero.clone(),
        sr / cp.clone(),
        cr / cp,
    ]
}

fn mat3_vec<S: SimScalar>(m: &[S; 9], v: &[S; 3]) -> [S; 3] {
    std::array::from_fn(|i| {
        m[3 * i].clone() * v[0].clone()
            + m[3 * i + 1].clone() * v[1].clone()
            + m[3 * i + 2].clone() * v[2].clone()
    })
}

/// Generalised torque from the X-configuration motor mixing: roll and pitch
/// from thrust differences over the arm length, yaw from the drag-to-thrust
/// ratio, all on squared motor speeds.
pub fn motor_torque<S: SimScalar>(u: &[S; 4], p: &DroneParams) -> [S; 3] {
    let sq: [S; 4] = std::array::from_fn(|i| u[i].clone() * u[i].clone());
    let lever = p.arm_length * p.thrust_coeff / std::f64::consts::SQRT_2;
    let roll = (-sq[0].clone() - sq[1].clone() + sq[2].clone() + sq[3].clone())
        * sq[0].lift(lever);
    let pitch = (-sq[0].clone() + sq[1].clone() + sq[2].clone() - sq[3].clone())
        * sq[0].lift(lever);
    let yaw = (-sq[0].clone() + sq[1].clone() - sq[2].clone() + sq[3].clone())
        * sq[0].lift(p.drag_to_thrust * p.thrust_coeff);
    [roll, pitch, yaw]
}

/// Right-hand side of the rigid-body quadrotor ODE.
///
/// State layout: `[p(3), v(3), Φ(3), ω(3)]`; inputs are the four rotor
/// speeds. Thrust acts along the body z-axis, gravity along inertial -z, and
/// angular acceleration follows Euler's equation with a diagonal inertia.
pub fn drone_rates<S: SimScalar>(x: &[S; 12], u: &[S; 4], p: &DroneParams) -> [S; 12] {
    let angles: [S; 3] = [x[6].clone(), x[7].clone(), x[8].clone()];
    let omega: [S; 3] = [x[9].clone(), x[10].clone(), x[11].clone()];

    let thrust = {
        let sq_sum = u[0].clone() * u[0].clone()
            + u[1].clone() * u[1].clone()
            + u[2].clone() * u[2].clone()
            + u[3].clone() * u[3].clone();
        sq_sum * u[0].lift(p.thrust_coeff)
    };
    let rot = rotation_matrix(&angles);
    // R · [0, 0, T]: only the third column contributes
    let accel: [S; 3] = std::array::from_fn(|i| {
        let body_z = rot[3 * i + 2].clone();
        let f = body_z * thrust.clone();
        let grav = if i == 2 { p.gravity } else { 0.0 };
        f * thrust.lift(1.0 / p.mass) - thrust.lift(grav)
    });

    let euler_rates = mat3_vec(&euler_rate_matrix_generic(&angles), &omega);

    let torque = motor_torque(u, p);
    // J ω̇ = τ - ω × Jω with diagonal J
    let jw: [S; 3] = std::array::from_fn(|i| omega[i].clone() * omega[i].lift(p.inertia[i]));
    let cross = [
        omega[1].clone() * jw[2].clone() - omega[2].clone() * jw[1].clone(),
        omega[2].clone() * jw[0].clone() - omega[0].clone() * jw[2].clone(),
        omega[0].clone() * jw[1].clone() - omega[1].clone() * jw[0].clone(),
    ];
    let omega_dot: [S; 3] = std::array::from_fn(|i| {
        (torque[i].clone() - cross[i].clone()) * torque[i].lift(1.0 / p.inertia[i])
    });

    [
        x[3].clone(),
        x[4].clone(),
        x[5].clone(),
        accel[0].clone(),
        accel[1].clone(),
        accel[2].clone(),
        euler_rates[0].clone(),
        euler_rates[1].clone(),
        euler_rates[2].clone(),
        omega_dot[0].clone(),
        omega_dot[1].clone(),
        omega_dot[2].clone(),
    ]
}

/// One classic fixed-step RK4 step `x(t) -> x(t + dt)` under a held input.
pub fn rk4_step<S: SimScalar, const N: usize>(
    x: &[S; N],
    dt: f64,
    deriv: impl Fn(&[S; N]) -> [S; N],
) -> [S; N] {
    let half = dt / 2.0;
    let k1 = deriv(x);
    let x2: [S; N] = std::array::from_fn(|i| x[i].clone() + k1[i].clone() * x[i].lift(half));
    let k2 = deriv(&x2);
    let x3: [S; N] = std::array::from_fn(|i| x[i].clone() + k2[i].clone() * x[i].lift(half));
    let k3 = deriv(&x3);
    let x4: [S; N] = std::array::from_fn(|i| x[i].clone() + k3[i].clone() * x[i].lift(dt));
    let k4 = deriv(&x4);
    std::array::from_fn(|i| {
        let slope = k1[i].clone()
            + k2[i].clone() * x[i].lift(2.0)
            + k3[i].clone() * x[i].lift(2.0)
            + k4[i].clone();
        x[i].clone() + slope * x[i].lift(dt / 6.0)
    })
}
